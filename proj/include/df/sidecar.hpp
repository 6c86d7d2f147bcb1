#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "df/column.hpp"
#include "df/error.hpp"
#include "df/value.hpp"

namespace df {

struct SidecarRow {
    std::string key;
    json attrs;  // object, `key` field removed
};

namespace sidecar_detail {

inline std::string key_from_json(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer() || j.is_number_unsigned()) return std::to_string(j.get<int64_t>());
    raise(Errc::join_key_missing, "sidecar key is not a string: " + j.dump());
}

// Minimal CSV: comma separated, double-quote quoting with "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline json csv_cell_to_json(const std::string& cell) {
    if (cell.empty()) return nullptr;
    if (cell == "true") return true;
    if (cell == "false") return false;
    // integer?
    {
        size_t i = (cell[0] == '-' || cell[0] == '+') ? 1 : 0;
        bool all_digits = i < cell.size();
        for (size_t k = i; k < cell.size(); ++k)
            if (!std::isdigit(static_cast<unsigned char>(cell[k]))) all_digits = false;
        if (all_digits) {
            try {
                return std::stoll(cell);
            } catch (...) {
                return cell;  // out of int64 range, keep the text
            }
        }
    }
    // float?
    {
        char* end = nullptr;
        double d = std::strtod(cell.c_str(), &end);
        if (end && *end == '\0' && end != cell.c_str()) return d;
    }
    return cell;
}

}  // namespace sidecar_detail

// JSONL: one object per line; `key` names the sample it attaches to.
inline std::vector<SidecarRow> parse_jsonl_sidecar(const std::string& text) {
    std::vector<SidecarRow> rows;
    size_t pos = 0, lineno = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() : nl + 1;
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            raise(Errc::corrupt, "sidecar line " + std::to_string(lineno) + " is not a JSON object");
        if (!j.contains("key"))
            raise(Errc::join_key_missing,
                  "sidecar line " + std::to_string(lineno) + " has no 'key' field");
        SidecarRow row;
        row.key = sidecar_detail::key_from_json(j["key"]);
        j.erase("key");
        row.attrs = std::move(j);
        rows.push_back(std::move(row));
    }
    return rows;
}

// CSV with a header row; cells are typed by the same inference rules as JSONL.
inline std::vector<SidecarRow> parse_csv_sidecar(const std::string& text) {
    using namespace sidecar_detail;
    std::vector<SidecarRow> rows;
    size_t pos = 0;
    std::vector<std::string> header;
    size_t lineno = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() : nl + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (header.empty()) {
            header = cells;
            continue;
        }
        if (cells.size() != header.size())
            raise(Errc::corrupt, "CSV line " + std::to_string(lineno) + " has " +
                                     std::to_string(cells.size()) + " cells, header has " +
                                     std::to_string(header.size()));
        SidecarRow row;
        json attrs = json::object();
        bool has_key = false;
        for (size_t i = 0; i < header.size(); ++i) {
            if (header[i] == "key") {
                row.key = cells[i];
                has_key = true;
            } else {
                attrs[header[i]] = csv_cell_to_json(cells[i]);
            }
        }
        if (!has_key || row.key.empty())
            raise(Errc::join_key_missing, "CSV line " + std::to_string(lineno) + " has no key");
        row.attrs = std::move(attrs);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<SidecarRow> parse_sidecar(const std::string& text, const std::string& format) {
    if (format == "jsonl") return parse_jsonl_sidecar(text);
    if (format == "csv") return parse_csv_sidecar(text);
    raise(Errc::bad_args, "unknown sidecar format '" + format + "' (expected jsonl or csv)");
}

// Infers a column type from every non-null occurrence of one field.
//   all ints -> int64; any float among numbers -> float64; all bools -> bool;
//   all strings -> utf8; equal-length numeric arrays -> fvec(dim).
// Anything else conflicts unless coerce_text stringifies it.
inline ColumnType infer_type(const std::vector<const json*>& values, const std::string& field,
                             bool coerce_text) {
    bool has_int = false, has_float = false, has_bool = false, has_text = false, has_list = false,
         has_other = false;
    uint32_t dim = 0;
    bool dim_set = false, ragged = false, bad_list = false;
    for (const json* v : values) {
        if (v->is_null()) continue;
        if (v->is_number_float()) {
            has_float = true;
        } else if (v->is_number_integer() || v->is_number_unsigned()) {
            has_int = true;
        } else if (v->is_boolean()) {
            has_bool = true;
        } else if (v->is_string()) {
            has_text = true;
        } else if (v->is_array()) {
            has_list = true;
            for (const auto& e : *v)
                if (!e.is_number()) bad_list = true;
            if (!dim_set) {
                dim = static_cast<uint32_t>(v->size());
                dim_set = true;
            } else if (v->size() != dim) {
                ragged = true;
            }
        } else {
            has_other = true;
        }
    }

    bool numeric = has_int || has_float;
    int classes = (numeric ? 1 : 0) + (has_bool ? 1 : 0) + (has_text ? 1 : 0) +
                  (has_list ? 1 : 0) + (has_other ? 1 : 0);
    if (classes == 0) return utf8_type();  // field never set; decode as nullable text
    if (classes > 1 || has_other || (has_list && bad_list)) {
        if (coerce_text) return utf8_type();
        raise(Errc::schema_conflict, "field '" + field + "' mixes irreconcilable types");
    }
    if (has_list) {
        if (ragged) raise(Errc::ragged_vector, "field '" + field + "' has unequal vector lengths");
        if (dim == 0) {
            if (coerce_text) return utf8_type();
            raise(Errc::schema_conflict, "field '" + field + "' is an empty vector");
        }
        return fvec_type(dim);
    }
    if (has_bool) return bool_type();
    if (has_text) return utf8_type();
    return has_float ? float64_type() : int64_type();
}

// Converts one sidecar attribute to a Value of the inferred column type.
inline Value sidecar_value(const json& j, const ColumnType& type, bool coerce_text) {
    if (j.is_null()) return Value::null();
    if (type.tag == TypeTag::utf8 && coerce_text && !j.is_string())
        return Value::of_text(j.dump());
    return value_from_json(j, type);
}

}  // namespace df
