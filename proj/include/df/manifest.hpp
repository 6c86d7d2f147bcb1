#pragma once

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "df/column.hpp"
#include "df/error.hpp"
#include "df/sha256.hpp"

namespace df {

using json = nlohmann::json;

// nlohmann::json keeps object keys sorted, so a compact dump is already the
// canonical form: sorted keys, UTF-8, no insignificant whitespace.
inline std::string canonical_dump(const json& j) { return j.dump(); }

// Manifests and descriptors must stay float-free so their bytes (and hence
// fingerprints) are stable across implementations.
inline void check_no_floats(const json& j, const char* what) {
    if (j.is_number_float()) raise(Errc::invariant_violation, std::string(what) + " contains a float");
    if (j.is_object())
        for (const auto& [k, v] : j.items()) check_no_floats(v, what);
    if (j.is_array())
        for (const auto& v : j) check_no_floats(v, what);
}

inline json schema_to_json(const Schema& schema) {
    json arr = json::array();
    for (const auto& f : schema.fields) {
        arr.push_back(json{{"dim", f.type.dim},
                           {"name", f.name},
                           {"nullable", f.nullable},
                           {"type", f.type.tag == TypeTag::fvec ? "fvec" : f.type.to_string()}});
    }
    return arr;
}

inline Schema schema_from_json(const json& arr) {
    Schema s;
    for (const auto& f : arr) {
        ColumnType t;
        std::string type = f.at("type").get<std::string>();
        uint32_t dim = f.at("dim").get<uint32_t>();
        t = (type == "fvec") ? fvec_type(dim) : parse_column_type(type);
        s.fields.push_back(Field{f.at("name").get<std::string>(), t, f.at("nullable").get<bool>()});
    }
    return s;
}

enum class OpKind { etl, filter, mutate, add_signals, order_limit, union_ };

inline std::string op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::etl: return "etl";
        case OpKind::filter: return "filter";
        case OpKind::mutate: return "mutate";
        case OpKind::add_signals: return "add_signals";
        case OpKind::order_limit: return "order_limit";
        case OpKind::union_: return "union";
    }
    return "?";
}

inline OpKind op_kind_from_name(const std::string& s) {
    if (s == "etl") return OpKind::etl;
    if (s == "filter") return OpKind::filter;
    if (s == "mutate") return OpKind::mutate;
    if (s == "add_signals") return OpKind::add_signals;
    if (s == "order_limit") return OpKind::order_limit;
    if (s == "union") return OpKind::union_;
    raise(Errc::corrupt, "unknown operation kind '" + s + "'");
}

// Canonical serialized stage definition; equal logical operations serialize
// to identical bytes. Only the fields relevant to the kind are present, and
// parameter values are carried as canonical JSON text.
struct OperationDescriptor {
    json doc;

    OpKind kind() const { return op_kind_from_name(doc.at("kind").get<std::string>()); }
    std::string kind_name() const { return doc.at("kind").get<std::string>(); }

    bool row_local() const {
        auto k = kind();
        return k == OpKind::filter || k == OpKind::mutate || k == OpKind::add_signals;
    }

    std::string canonical() const {
        check_no_floats(doc, "operation descriptor");
        return canonical_dump(doc);
    }

    bool operator==(const OperationDescriptor& other) const { return doc == other.doc; }

    static OperationDescriptor etl(const json& sources, bool coerce_text) {
        return {json{{"kind", "etl"}, {"sources", sources}, {"coerce_text", coerce_text}}};
    }

    static OperationDescriptor filter(const std::string& expr_canonical,
                                      const std::map<std::string, std::string>& params) {
        return {json{{"kind", "filter"}, {"expression", expr_canonical}, {"params", params}}};
    }

    static OperationDescriptor mutate(const std::string& new_column,
                                      const std::string& expr_canonical,
                                      const std::map<std::string, std::string>& params) {
        return {json{{"kind", "mutate"},
                     {"new_column", new_column},
                     {"expression", expr_canonical},
                     {"params", params}}};
    }

    static OperationDescriptor add_signals(const std::string& udf_id,
                                           const std::string& udf_version,
                                           const std::string& command_sha256,
                                           const json& output_columns,
                                           const std::vector<std::string>& input_columns,
                                           bool needs_sample_bytes) {
        return {json{{"kind", "add_signals"},
                     {"udf_id", udf_id},
                     {"udf_version", udf_version},
                     {"command_sha256", command_sha256},
                     {"outputs", output_columns},
                     {"inputs", input_columns},
                     {"needs_sample_bytes", needs_sample_bytes}}};
    }

    static OperationDescriptor order_limit(const std::string& key, bool descending,
                                           uint64_t limit) {
        return {json{{"kind", "order_limit"},
                     {"order_key", key},
                     {"descending", descending},
                     {"limit", limit}}};
    }

    static OperationDescriptor union_() { return {json{{"kind", "union"}}}; }
};

// SHA-256 over the canonical {descriptor, parents, schema} document; parents
// are sorted so the digest does not depend on argument order.
inline std::string fingerprint(std::vector<std::string> parents, const OperationDescriptor& op,
                               const Schema& schema) {
    std::sort(parents.begin(), parents.end());
    json j{{"descriptor", op.doc}, {"parents", parents}, {"schema", schema_to_json(schema)}};
    check_no_floats(j, "fingerprint input");
    return sha256_hex(canonical_dump(j));
}

inline std::string rfc3339_utc(std::time_t t) {
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Wall clock, unless SOURCE_DATE_EPOCH pins it for reproducible runs.
inline std::string now_rfc3339() {
    if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) {
        return rfc3339_utc(static_cast<std::time_t>(std::strtoll(e, nullptr, 10)));
    }
    return rfc3339_utc(std::time(nullptr));
}

struct DatasetManifest {
    std::string name;
    uint32_t version = 1;
    std::string fingerprint;
    Schema schema;
    uint64_t row_count = 0;
    std::map<std::string, std::string> column_files;  // column -> catalog-root relative path
    std::vector<std::string> parents;                 // fingerprints, in operation order
    OperationDescriptor operation;
    std::string created_at;

    json to_json() const {
        return json{{"column_files", column_files},
                    {"created_at", created_at},
                    {"fingerprint", fingerprint},
                    {"name", name},
                    {"operation", operation.doc},
                    {"parents", parents},
                    {"row_count", row_count},
                    {"schema", schema_to_json(schema)},
                    {"version", version}};
    }

    static DatasetManifest from_json(const json& j) {
        DatasetManifest m;
        try {
            m.name = j.at("name").get<std::string>();
            m.version = j.at("version").get<uint32_t>();
            m.fingerprint = j.at("fingerprint").get<std::string>();
            m.schema = schema_from_json(j.at("schema"));
            m.row_count = j.at("row_count").get<uint64_t>();
            m.column_files = j.at("column_files").get<std::map<std::string, std::string>>();
            m.parents = j.at("parents").get<std::vector<std::string>>();
            m.operation.doc = j.at("operation");
            m.created_at = j.at("created_at").get<std::string>();
        } catch (const json::exception& e) {
            raise(Errc::corrupt, std::string("manifest: ") + e.what());
        }
        if (m.version < 1) raise(Errc::corrupt, "manifest version < 1");
        return m;
    }
};

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
    json j = m.to_json();
    check_no_floats(j, "manifest");
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) raise(Errc::io_failure, "cannot write manifest in " + dir.string());
    out << canonical_dump(j);
    out.close();
    if (!out) raise(Errc::io_failure, "short write of manifest in " + dir.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) raise(Errc::missing, "no manifest in " + dir.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) raise(Errc::corrupt, "unparseable manifest in " + dir.string());
    return DatasetManifest::from_json(j);
}

}  // namespace df
