#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_set>
#include <vector>

#include "df/error.hpp"
#include "df/sha256.hpp"

namespace df {

enum class TypeTag : uint8_t { int64 = 0, float64 = 1, boolean = 2, utf8 = 3, bytes = 4, fvec = 5 };

struct ColumnType {
    TypeTag tag = TypeTag::int64;
    uint32_t dim = 0;  // >= 1 iff fvec

    bool operator==(const ColumnType&) const = default;

    bool is_numeric() const { return tag == TypeTag::int64 || tag == TypeTag::float64; }

    std::string to_string() const {
        switch (tag) {
            case TypeTag::int64: return "int64";
            case TypeTag::float64: return "float64";
            case TypeTag::boolean: return "bool";
            case TypeTag::utf8: return "utf8";
            case TypeTag::bytes: return "bytes";
            case TypeTag::fvec: return "fvec(" + std::to_string(dim) + ")";
        }
        return "?";
    }
};

inline ColumnType int64_type() { return {TypeTag::int64, 0}; }
inline ColumnType float64_type() { return {TypeTag::float64, 0}; }
inline ColumnType bool_type() { return {TypeTag::boolean, 0}; }
inline ColumnType utf8_type() { return {TypeTag::utf8, 0}; }
inline ColumnType bytes_type() { return {TypeTag::bytes, 0}; }
inline ColumnType fvec_type(uint32_t dim) { return {TypeTag::fvec, dim}; }

// Parses "int64", "fvec(64)", ... (the inverse of ColumnType::to_string).
inline ColumnType parse_column_type(const std::string& s) {
    if (s == "int64") return int64_type();
    if (s == "float64") return float64_type();
    if (s == "bool") return bool_type();
    if (s == "utf8") return utf8_type();
    if (s == "bytes") return bytes_type();
    if (s.rfind("fvec(", 0) == 0 && s.back() == ')') {
        auto inner = s.substr(5, s.size() - 6);
        uint64_t d = 0;
        for (char c : inner) {
            if (c < '0' || c > '9') raise(Errc::bad_args, "bad column type: " + s);
            d = d * 10 + static_cast<uint64_t>(c - '0');
        }
        if (d == 0 || d > UINT32_MAX) raise(Errc::bad_args, "bad fvec dim: " + s);
        return fvec_type(static_cast<uint32_t>(d));
    }
    raise(Errc::bad_args, "unknown column type: " + s);
}

// Reserved physical columns; `_ref` is split into four parallel columns so the
// codec stays monomorphic.
inline constexpr const char* kUidColumn = "_uid";
inline constexpr const char* kRefSourceUri = "_ref.source_uri";
inline constexpr const char* kRefMemberPath = "_ref.member_path";
inline constexpr const char* kRefOffset = "_ref.offset";
inline constexpr const char* kRefLength = "_ref.length";

inline bool is_reserved_column(const std::string& name) {
    return name == kUidColumn || name == kRefSourceUri || name == kRefMemberPath ||
           name == kRefOffset || name == kRefLength;
}

inline bool valid_column_name(const std::string& name) {
    if (name.empty()) return false;
    if (!(std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_')) return false;
    for (char c : name)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
    return true;
}

struct Field {
    std::string name;
    ColumnType type;
    bool nullable = true;

    bool operator==(const Field&) const = default;
};

struct Schema {
    std::vector<Field> fields;

    bool operator==(const Schema&) const = default;

    size_t size() const { return fields.size(); }

    int find(const std::string& name) const {
        for (size_t i = 0; i < fields.size(); ++i)
            if (fields[i].name == name) return static_cast<int>(i);
        return -1;
    }

    bool has(const std::string& name) const { return find(name) >= 0; }

    const Field& at(const std::string& name) const {
        int i = find(name);
        if (i < 0) raise(Errc::unknown_column, name);
        return fields[static_cast<size_t>(i)];
    }

    void validate() const {
        std::unordered_set<std::string> seen;
        for (const auto& f : fields) {
            if (!is_reserved_column(f.name) && !valid_column_name(f.name))
                raise(Errc::invariant_violation, "bad column name '" + f.name + "'");
            if (!seen.insert(f.name).second)
                raise(Errc::invariant_violation, "duplicate column name '" + f.name + "'");
            if ((f.type.tag == TypeTag::fvec) != (f.type.dim >= 1))
                raise(Errc::invariant_violation, "bad dim for column '" + f.name + "'");
        }
        if (!seen.count(kUidColumn) || !seen.count(kRefSourceUri))
            raise(Errc::invariant_violation, "schema lacks reserved _uid/_ref columns");
    }

    // User-visible columns, i.e. everything except the _ref pointer parts.
    std::vector<std::string> user_columns() const {
        std::vector<std::string> out;
        for (const auto& f : fields)
            if (f.name.rfind("_ref.", 0) != 0) out.push_back(f.name);
        return out;
    }
};

struct SampleRef {
    std::string source_uri;
    std::string member_path;
    uint64_t offset = 0;
    uint64_t length = 0;

    bool operator==(const SampleRef&) const = default;
};

// Stable row identity: digest over the pointer fields with NUL separators.
inline std::string uid(const SampleRef& ref) {
    Sha256 h;
    h.update(ref.source_uri);
    h.update("\0", 1);
    h.update(ref.member_path);
    h.update("\0", 1);
    h.update(std::to_string(ref.offset));
    h.update("\0", 1);
    h.update(std::to_string(ref.length));
    return h.hex_digest();
}

// One typed, optionally nullable column. Payload vectors are indexed by row;
// null rows keep zeroed slots (empty strings, zero vectors).
class ColumnVector {
  public:
    ColumnVector() = default;
    ColumnVector(ColumnType type, bool nullable) : type_(type), nullable_(nullable) {}

    ColumnType type() const { return type_; }
    bool nullable() const { return nullable_; }
    uint64_t rows() const { return rows_; }

    bool valid(uint64_t i) const { return (validity_[i / 8] >> (i % 8)) & 1; }

    const std::vector<uint8_t>& validity() const { return validity_; }
    const std::vector<int64_t>& ints() const { return ints_; }
    const std::vector<double>& floats() const { return floats_; }
    const std::vector<uint8_t>& bools() const { return bools_; }
    const std::vector<std::string>& strings() const { return strs_; }
    const std::vector<float>& vec_data() const { return vecs_; }

    void append_null() {
        if (!nullable_) raise(Errc::invariant_violation, "null in non-nullable column");
        push_validity(false);
        switch (type_.tag) {
            case TypeTag::int64: ints_.push_back(0); break;
            case TypeTag::float64: floats_.push_back(0.0); break;
            case TypeTag::boolean: bools_.push_back(0); break;
            case TypeTag::utf8:
            case TypeTag::bytes: strs_.emplace_back(); break;
            case TypeTag::fvec: vecs_.resize(vecs_.size() + type_.dim, 0.0f); break;
        }
        ++rows_;
    }

    void append_int(int64_t v) {
        expect(TypeTag::int64);
        push_validity(true);
        ints_.push_back(v);
        ++rows_;
    }

    void append_float(double v) {
        expect(TypeTag::float64);
        push_validity(true);
        floats_.push_back(v);
        ++rows_;
    }

    void append_bool(bool v) {
        expect(TypeTag::boolean);
        push_validity(true);
        bools_.push_back(v ? 1 : 0);
        ++rows_;
    }

    void append_string(std::string v) {
        if (type_.tag != TypeTag::utf8 && type_.tag != TypeTag::bytes)
            raise(Errc::invariant_violation, "string appended to " + type_.to_string());
        push_validity(true);
        strs_.push_back(std::move(v));
        ++rows_;
    }

    void append_vec(const std::vector<float>& v) {
        expect(TypeTag::fvec);
        if (v.size() != type_.dim)
            raise(Errc::dim_mismatch, "vector of dim " + std::to_string(v.size()) +
                                          " appended to " + type_.to_string());
        push_validity(true);
        vecs_.insert(vecs_.end(), v.begin(), v.end());
        ++rows_;
    }

    int64_t int_at(uint64_t i) const { return ints_[i]; }
    double float_at(uint64_t i) const { return floats_[i]; }
    bool bool_at(uint64_t i) const { return bools_[i] != 0; }
    const std::string& string_at(uint64_t i) const { return strs_[i]; }

    std::vector<float> vec_at(uint64_t i) const {
        auto begin = vecs_.begin() + static_cast<ptrdiff_t>(i * type_.dim);
        return {begin, begin + type_.dim};
    }

    // Copies row i of `src` (same type) onto the end of this column.
    void append_from(const ColumnVector& src, uint64_t i) {
        if (src.type_ != type_) raise(Errc::invariant_violation, "column type mismatch in copy");
        if (!src.valid(i)) {
            append_null();
            return;
        }
        switch (type_.tag) {
            case TypeTag::int64: append_int(src.ints_[i]); break;
            case TypeTag::float64: append_float(src.floats_[i]); break;
            case TypeTag::boolean: append_bool(src.bools_[i] != 0); break;
            case TypeTag::utf8:
            case TypeTag::bytes: append_string(src.strs_[i]); break;
            case TypeTag::fvec: append_vec(src.vec_at(i)); break;
        }
    }

    bool operator==(const ColumnVector& other) const {
        if (type_ != other.type_ || nullable_ != other.nullable_ || rows_ != other.rows_)
            return false;
        if (validity_ != other.validity_) return false;
        switch (type_.tag) {
            case TypeTag::int64: return ints_ == other.ints_;
            case TypeTag::float64:
                // bit-exact comparison, NaN-safe
                return floats_.size() == other.floats_.size() &&
                       std::memcmp(floats_.data(), other.floats_.data(),
                                   floats_.size() * sizeof(double)) == 0;
            case TypeTag::boolean: return bools_ == other.bools_;
            case TypeTag::utf8:
            case TypeTag::bytes: return strs_ == other.strs_;
            case TypeTag::fvec:
                return vecs_.size() == other.vecs_.size() &&
                       std::memcmp(vecs_.data(), other.vecs_.data(),
                                   vecs_.size() * sizeof(float)) == 0;
        }
        return false;
    }

    void check_invariants() const {
        if (validity_.size() != (rows_ + 7) / 8)
            raise(Errc::invariant_violation, "validity bitmap length mismatch");
        if (!nullable_)
            for (uint64_t i = 0; i < rows_; ++i)
                if (!valid(i)) raise(Errc::invariant_violation, "null in non-nullable column");
        size_t expected = 0;
        switch (type_.tag) {
            case TypeTag::int64: expected = ints_.size(); break;
            case TypeTag::float64: expected = floats_.size(); break;
            case TypeTag::boolean: expected = bools_.size(); break;
            case TypeTag::utf8:
            case TypeTag::bytes: expected = strs_.size(); break;
            case TypeTag::fvec: expected = type_.dim ? vecs_.size() / type_.dim : 0; break;
        }
        if (expected != rows_) raise(Errc::invariant_violation, "payload length mismatch");
    }

  private:
    void expect(TypeTag tag) const {
        if (type_.tag != tag)
            raise(Errc::invariant_violation, "value type does not match " + type_.to_string());
    }

    void push_validity(bool v) {
        if (rows_ % 8 == 0) validity_.push_back(0);
        if (v) validity_.back() |= static_cast<uint8_t>(1u << (rows_ % 8));
    }

    ColumnType type_;
    bool nullable_ = true;
    uint64_t rows_ = 0;
    std::vector<uint8_t> validity_;
    std::vector<int64_t> ints_;
    std::vector<double> floats_;
    std::vector<uint8_t> bools_;
    std::vector<std::string> strs_;
    std::vector<float> vecs_;
};

// ---------------------------------------------------------------------------
// Column file codec ("DFC1"): fixed little-endian layout, bit-exact.
// ---------------------------------------------------------------------------

namespace codec_detail {

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class Reader {
  public:
    Reader(const uint8_t* p, size_t n) : p_(p), n_(n) {}

    const uint8_t* take(size_t n) {
        if (pos_ + n > n_) raise(Errc::truncated, "column file ends early");
        const uint8_t* q = p_ + pos_;
        pos_ += n;
        return q;
    }

    uint8_t u8() { return *take(1); }

    uint16_t u16() {
        const uint8_t* q = take(2);
        return static_cast<uint16_t>(q[0] | (q[1] << 8));
    }

    uint32_t u32() {
        const uint8_t* q = take(4);
        return static_cast<uint32_t>(q[0]) | (static_cast<uint32_t>(q[1]) << 8) |
               (static_cast<uint32_t>(q[2]) << 16) | (static_cast<uint32_t>(q[3]) << 24);
    }

    uint64_t u64() {
        const uint8_t* q = take(8);
        uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | q[i];
        return v;
    }

    size_t remaining() const { return n_ - pos_; }

  private:
    const uint8_t* p_;
    size_t n_;
    size_t pos_ = 0;
};

}  // namespace codec_detail

inline std::vector<uint8_t> encode_column(const ColumnVector& col) {
    using namespace codec_detail;
    col.check_invariants();
    std::vector<uint8_t> out;
    out.insert(out.end(), {'D', 'F', 'C', '1'});
    put_u16(out, 1);
    out.push_back(static_cast<uint8_t>(col.type().tag));
    out.push_back(col.nullable() ? 1 : 0);
    put_u32(out, col.type().dim);
    put_u64(out, col.rows());
    if (col.nullable())
        out.insert(out.end(), col.validity().begin(), col.validity().end());

    const uint64_t n = col.rows();
    switch (col.type().tag) {
        case TypeTag::int64:
            for (uint64_t i = 0; i < n; ++i)
                put_u64(out, col.valid(i) ? static_cast<uint64_t>(col.int_at(i)) : 0);
            break;
        case TypeTag::float64:
            for (uint64_t i = 0; i < n; ++i) {
                uint64_t bits = 0;
                if (col.valid(i)) {
                    double d = col.float_at(i);
                    std::memcpy(&bits, &d, 8);
                }
                put_u64(out, bits);
            }
            break;
        case TypeTag::boolean:
            for (uint64_t i = 0; i < n; ++i)
                out.push_back(col.valid(i) && col.bool_at(i) ? 1 : 0);
            break;
        case TypeTag::utf8:
        case TypeTag::bytes: {
            uint64_t off = 0;
            put_u64(out, 0);
            for (uint64_t i = 0; i < n; ++i) {
                if (col.valid(i)) off += col.string_at(i).size();
                put_u64(out, off);
            }
            for (uint64_t i = 0; i < n; ++i)
                if (col.valid(i)) {
                    const auto& s = col.string_at(i);
                    out.insert(out.end(), s.begin(), s.end());
                }
            break;
        }
        case TypeTag::fvec:
            for (uint64_t i = 0; i < n; ++i) {
                if (col.valid(i)) {
                    for (float f : col.vec_at(i)) {
                        uint32_t bits;
                        std::memcpy(&bits, &f, 4);
                        put_u32(out, bits);
                    }
                } else {
                    for (uint32_t d = 0; d < col.type().dim; ++d) put_u32(out, 0);
                }
            }
            break;
    }
    return out;
}

inline ColumnVector decode_column(const std::vector<uint8_t>& data) {
    using namespace codec_detail;
    Reader r(data.data(), data.size());
    const uint8_t* magic = r.take(4);
    if (std::memcmp(magic, "DFC1", 4) != 0) raise(Errc::bad_magic, "not a DFC1 column file");
    uint16_t version = r.u16();
    if (version != 1) raise(Errc::bad_version, "column format version " + std::to_string(version));
    uint8_t tag = r.u8();
    if (tag > 5) raise(Errc::invariant_violation, "unknown type tag " + std::to_string(tag));
    uint8_t flags = r.u8();
    if (flags > 1) raise(Errc::invariant_violation, "unknown flags " + std::to_string(flags));
    bool nullable = flags & 1;
    uint32_t dim = r.u32();
    ColumnType type{static_cast<TypeTag>(tag), dim};
    if ((type.tag == TypeTag::fvec) != (dim >= 1))
        raise(Errc::invariant_violation, "bad dim " + std::to_string(dim));
    uint64_t n = r.u64();

    std::vector<uint8_t> validity;
    if (nullable) {
        const uint8_t* v = r.take((n + 7) / 8);
        validity.assign(v, v + (n + 7) / 8);
    } else {
        validity.assign((n + 7) / 8, 0xff);
        if (n % 8) validity.back() = static_cast<uint8_t>((1u << (n % 8)) - 1);
    }
    auto valid = [&](uint64_t i) { return (validity[i / 8] >> (i % 8)) & 1; };

    ColumnVector col(type, nullable);
    switch (type.tag) {
        case TypeTag::int64:
            for (uint64_t i = 0; i < n; ++i) {
                int64_t v = static_cast<int64_t>(r.u64());
                valid(i) ? col.append_int(v) : col.append_null();
            }
            break;
        case TypeTag::float64:
            for (uint64_t i = 0; i < n; ++i) {
                uint64_t bits = r.u64();
                double d;
                std::memcpy(&d, &bits, 8);
                valid(i) ? col.append_float(d) : col.append_null();
            }
            break;
        case TypeTag::boolean:
            for (uint64_t i = 0; i < n; ++i) {
                uint8_t b = r.u8();
                if (b > 1) raise(Errc::invariant_violation, "bool byte out of range");
                valid(i) ? col.append_bool(b != 0) : col.append_null();
            }
            break;
        case TypeTag::utf8:
        case TypeTag::bytes: {
            std::vector<uint64_t> offsets(n + 1);
            for (uint64_t i = 0; i <= n; ++i) offsets[i] = r.u64();
            if (offsets[0] != 0) raise(Errc::invariant_violation, "first blob offset not zero");
            for (uint64_t i = 0; i < n; ++i)
                if (offsets[i + 1] < offsets[i])
                    raise(Errc::invariant_violation, "blob offsets decrease");
            if (offsets[n] != r.remaining()) raise(Errc::truncated, "blob length mismatch");
            const uint8_t* blob = r.take(offsets[n]);
            for (uint64_t i = 0; i < n; ++i) {
                if (!valid(i)) {
                    if (offsets[i + 1] != offsets[i])
                        raise(Errc::invariant_violation, "null row with blob bytes");
                    col.append_null();
                } else {
                    col.append_string(std::string(reinterpret_cast<const char*>(blob + offsets[i]),
                                                  offsets[i + 1] - offsets[i]));
                }
            }
            break;
        }
        case TypeTag::fvec:
            for (uint64_t i = 0; i < n; ++i) {
                std::vector<float> v(dim);
                for (uint32_t d = 0; d < dim; ++d) {
                    uint32_t bits = r.u32();
                    std::memcpy(&v[d], &bits, 4);
                }
                valid(i) ? col.append_vec(v) : col.append_null();
            }
            break;
    }
    if (r.remaining() != 0) raise(Errc::invariant_violation, "trailing bytes in column file");

    // Re-check the stored bitmap byte-for-byte: unused trailing bits must be zero.
    if (nullable && col.validity() != validity)
        raise(Errc::invariant_violation, "validity bitmap has stray bits");
    return col;
}

inline constexpr size_t kColumnHeaderBytes = 4 + 2 + 1 + 1 + 4 + 8;

}  // namespace df
