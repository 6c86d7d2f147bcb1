#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "df/column.hpp"
#include "df/error.hpp"

namespace df {

// ---------------------------------------------------------------------------
// base64 (for sample payloads and bytes attributes on the UDF wire)
// ---------------------------------------------------------------------------

inline std::string base64_encode(const uint8_t* data, size_t len) {
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= len; i += 3) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
    }
    if (i + 1 == len) {
        uint32_t v = data[i] << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == len) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::string base64_encode(const std::vector<uint8_t>& data) {
    return base64_encode(data.data(), data.size());
}

inline std::string base64_encode(const std::string& data) {
    return base64_encode(reinterpret_cast<const uint8_t*>(data.data()), data.size());
}

inline std::vector<uint8_t> base64_decode(const std::string& s) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<uint8_t> out;
    uint32_t acc = 0;
    int bits = 0;
    for (char c : s) {
        if (c == '=') break;
        int v = val(c);
        if (v < 0) raise(Errc::protocol_violation, "bad base64 input");
        acc = (acc << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((acc >> bits) & 0xff));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Value: one cell of a row, or a bound query parameter
// ---------------------------------------------------------------------------

struct Value {
    enum class K { null, i64, f64, boolean, text, bytes, vec };

    K k = K::null;
    int64_t i = 0;
    double f = 0.0;
    bool b = false;
    std::string s;            // text or bytes payload
    std::vector<double> v;    // vector math runs in binary64

    bool is_null() const { return k == K::null; }

    static Value null() { return {}; }
    static Value of_int(int64_t x) { Value r; r.k = K::i64; r.i = x; return r; }
    static Value of_float(double x) { Value r; r.k = K::f64; r.f = x; return r; }
    static Value of_bool(bool x) { Value r; r.k = K::boolean; r.b = x; return r; }
    static Value of_text(std::string x) { Value r; r.k = K::text; r.s = std::move(x); return r; }
    static Value of_bytes(std::string x) { Value r; r.k = K::bytes; r.s = std::move(x); return r; }
    static Value of_vec(std::vector<double> x) { Value r; r.k = K::vec; r.v = std::move(x); return r; }

    double as_f64() const { return k == K::i64 ? static_cast<double>(i) : f; }

    bool operator==(const Value& other) const {
        if (k != other.k) return false;
        switch (k) {
            case K::null: return true;
            case K::i64: return i == other.i;
            case K::f64: return f == other.f;
            case K::boolean: return b == other.b;
            case K::text:
            case K::bytes: return s == other.s;
            case K::vec: return v == other.v;
        }
        return false;
    }
};

inline const char* value_kind_name(Value::K k) {
    switch (k) {
        case Value::K::null: return "null";
        case Value::K::i64: return "int64";
        case Value::K::f64: return "float64";
        case Value::K::boolean: return "bool";
        case Value::K::text: return "utf8";
        case Value::K::bytes: return "bytes";
        case Value::K::vec: return "fvec";
    }
    return "?";
}

inline Value column_value(const ColumnVector& col, uint64_t row) {
    if (!col.valid(row)) return Value::null();
    switch (col.type().tag) {
        case TypeTag::int64: return Value::of_int(col.int_at(row));
        case TypeTag::float64: return Value::of_float(col.float_at(row));
        case TypeTag::boolean: return Value::of_bool(col.bool_at(row));
        case TypeTag::utf8: return Value::of_text(col.string_at(row));
        case TypeTag::bytes: return Value::of_bytes(col.string_at(row));
        case TypeTag::fvec: {
            auto raw = col.vec_at(row);
            return Value::of_vec(std::vector<double>(raw.begin(), raw.end()));
        }
    }
    return Value::null();
}

inline void append_value(ColumnVector& col, const Value& val) {
    if (val.is_null()) {
        col.append_null();
        return;
    }
    switch (col.type().tag) {
        case TypeTag::int64:
            if (val.k != Value::K::i64) raise(Errc::type_mismatch, "expected int64 value");
            col.append_int(val.i);
            return;
        case TypeTag::float64:
            if (val.k == Value::K::i64) {
                col.append_float(static_cast<double>(val.i));
            } else if (val.k == Value::K::f64) {
                col.append_float(val.f);
            } else {
                raise(Errc::type_mismatch, "expected float64 value");
            }
            return;
        case TypeTag::boolean:
            if (val.k != Value::K::boolean) raise(Errc::type_mismatch, "expected bool value");
            col.append_bool(val.b);
            return;
        case TypeTag::utf8:
            if (val.k != Value::K::text) raise(Errc::type_mismatch, "expected utf8 value");
            col.append_string(val.s);
            return;
        case TypeTag::bytes:
            if (val.k != Value::K::bytes) raise(Errc::type_mismatch, "expected bytes value");
            col.append_string(val.s);
            return;
        case TypeTag::fvec: {
            if (val.k != Value::K::vec) raise(Errc::type_mismatch, "expected vector value");
            std::vector<float> narrow(val.v.begin(), val.v.end());
            col.append_vec(narrow);
            return;
        }
    }
}

// JSON form used on the UDF wire, in export manifests and for parameters.
// bytes travel base64-encoded; vectors as plain number arrays.
inline json value_to_json(const Value& val) {
    switch (val.k) {
        case Value::K::null: return nullptr;
        case Value::K::i64: return val.i;
        case Value::K::f64: return val.f;
        case Value::K::boolean: return val.b;
        case Value::K::text: return val.s;
        case Value::K::bytes: return base64_encode(val.s);
        case Value::K::vec: return val.v;
    }
    return nullptr;
}

// Parses a JSON value against an expected column type.
inline Value value_from_json(const json& j, const ColumnType& type) {
    if (j.is_null()) return Value::null();
    switch (type.tag) {
        case TypeTag::int64:
            if (!j.is_number_integer() && !j.is_number_unsigned())
                raise(Errc::type_mismatch, "expected integer, got " + j.dump());
            return Value::of_int(j.get<int64_t>());
        case TypeTag::float64:
            if (!j.is_number()) raise(Errc::type_mismatch, "expected number, got " + j.dump());
            return Value::of_float(j.get<double>());
        case TypeTag::boolean:
            if (!j.is_boolean()) raise(Errc::type_mismatch, "expected bool, got " + j.dump());
            return Value::of_bool(j.get<bool>());
        case TypeTag::utf8:
            if (!j.is_string()) raise(Errc::type_mismatch, "expected string, got " + j.dump());
            return Value::of_text(j.get<std::string>());
        case TypeTag::bytes: {
            if (!j.is_string()) raise(Errc::type_mismatch, "expected base64 string");
            auto raw = base64_decode(j.get<std::string>());
            return Value::of_bytes(std::string(raw.begin(), raw.end()));
        }
        case TypeTag::fvec: {
            if (!j.is_array() || j.size() != type.dim)
                raise(Errc::dim_mismatch, "expected array of " + std::to_string(type.dim));
            std::vector<double> v;
            v.reserve(j.size());
            for (const auto& e : j) {
                if (!e.is_number()) raise(Errc::type_mismatch, "vector element not a number");
                v.push_back(e.get<double>());
            }
            return Value::of_vec(std::move(v));
        }
    }
    return Value::null();
}

// Untyped parse for CLI parameters: JSON if it parses, bare text otherwise.
inline Value value_from_param_text(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) return Value::of_text(text);
    if (j.is_null()) return Value::null();
    if (j.is_boolean()) return Value::of_bool(j.get<bool>());
    if (j.is_number_integer() || j.is_number_unsigned()) return Value::of_int(j.get<int64_t>());
    if (j.is_number_float()) return Value::of_float(j.get<double>());
    if (j.is_string()) return Value::of_text(j.get<std::string>());
    if (j.is_array()) {
        std::vector<double> v;
        for (const auto& e : j) {
            if (!e.is_number()) raise(Errc::bad_args, "parameter arrays must be numeric");
            v.push_back(e.get<double>());
        }
        return Value::of_vec(std::move(v));
    }
    raise(Errc::bad_args, "unsupported parameter value: " + text);
}

// Canonical parameter text recorded in operation descriptors.
inline std::string value_to_canonical_text(const Value& val) {
    return value_to_json(val).dump();
}

}  // namespace df
