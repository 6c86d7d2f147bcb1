#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "df/error.hpp"
#include "df/storage.hpp"

namespace df {

struct TarMember {
    std::string member_path;
    uint64_t data_offset = 0;
    uint64_t data_length = 0;
    char typeflag = '0';
};

namespace tar_detail {

constexpr size_t kBlock = 512;

inline bool all_zero(const uint8_t* p, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (p[i] != 0) return false;
    return true;
}

inline std::string field_str(const uint8_t* p, size_t n) {
    size_t len = 0;
    while (len < n && p[len] != 0) ++len;
    return std::string(reinterpret_cast<const char*>(p), len);
}

inline uint64_t parse_octal(const uint8_t* p, size_t n, const char* what) {
    size_t i = 0;
    while (i < n && (p[i] == ' ' || p[i] == 0)) ++i;
    uint64_t v = 0;
    bool any = false;
    for (; i < n && p[i] != 0 && p[i] != ' '; ++i) {
        if (p[i] < '0' || p[i] > '7')
            raise(Errc::unsupported_header, std::string("bad octal in ") + what);
        v = v * 8 + static_cast<uint64_t>(p[i] - '0');
        any = true;
    }
    if (!any) return 0;
    return v;
}

// GNU base-256: high bit of the first byte set, remainder big-endian binary.
inline uint64_t parse_size(const uint8_t* p, size_t n) {
    if (p[0] & 0x80) {
        uint64_t v = p[0] & 0x7f;
        for (size_t i = 1; i < n; ++i) v = (v << 8) | p[i];
        return v;
    }
    return parse_octal(p, n, "size");
}

inline uint32_t header_checksum(const uint8_t* hdr) {
    uint32_t sum = 0;
    for (size_t i = 0; i < kBlock; ++i) sum += (i >= 148 && i < 156) ? ' ' : hdr[i];
    return sum;
}

inline bool looks_compressed(const uint8_t* p, size_t n) {
    if (n >= 2 && p[0] == 0x1f && p[1] == 0x8b) return true;                               // gzip
    if (n >= 4 && p[0] == 0x28 && p[1] == 0xb5 && p[2] == 0x2f && p[3] == 0xfd) return true;  // zstd
    if (n >= 3 && p[0] == 'B' && p[1] == 'Z' && p[2] == 'h') return true;                  // bzip2
    if (n >= 6 && p[0] == 0xfd && std::memcmp(p + 1, "7zXZ", 4) == 0) return true;         // xz
    return false;
}

inline std::optional<std::string> pax_path(const std::vector<uint8_t>& data) {
    std::optional<std::string> path;
    size_t pos = 0;
    while (pos < data.size()) {
        size_t sp = pos;
        while (sp < data.size() && data[sp] != ' ') ++sp;
        if (sp == data.size()) raise(Errc::unsupported_header, "malformed pax record");
        uint64_t rec_len = 0;
        for (size_t i = pos; i < sp; ++i) {
            if (data[i] < '0' || data[i] > '9')
                raise(Errc::unsupported_header, "malformed pax record length");
            rec_len = rec_len * 10 + (data[i] - '0');
        }
        if (rec_len == 0 || pos + rec_len > data.size() || data[pos + rec_len - 1] != '\n')
            raise(Errc::unsupported_header, "malformed pax record");
        std::string rec(reinterpret_cast<const char*>(data.data() + sp + 1),
                        rec_len - (sp - pos) - 2);
        auto eq = rec.find('=');
        if (eq == std::string::npos) raise(Errc::unsupported_header, "pax record without '='");
        if (rec.substr(0, eq) == "path") path = rec.substr(eq + 1);
        pos += rec_len;
    }
    return path;
}

}  // namespace tar_detail

// Walks ustar headers via ranged reads (data blocks are skipped, never
// fetched) and returns one entry per regular-file member in archive order.
inline std::vector<TarMember> index_tar(Storage& storage, const SourceUri& uri) {
    using namespace tar_detail;
    const uint64_t total = storage.stat(uri);
    std::vector<TarMember> members;
    std::unordered_set<std::string> seen;
    std::optional<std::string> long_name;
    std::optional<std::string> pax_name;

    uint64_t offset = 0;
    int zero_blocks = 0;
    while (true) {
        if (offset + kBlock > total) {
            if (zero_blocks >= 1 && offset == total) break;  // single trailing zero block
            raise(Errc::truncated_archive,
                  uri.raw + ": ran past end of archive at offset " + std::to_string(offset));
        }
        auto hdr = storage.read_range(uri, ByteRange{offset, kBlock});
        if (all_zero(hdr.data(), kBlock)) {
            if (++zero_blocks == 2) break;
            offset += kBlock;
            continue;
        }
        if (zero_blocks > 0)
            raise(Errc::truncated_archive, uri.raw + ": lone zero block inside archive");
        if (offset == 0 && looks_compressed(hdr.data(), hdr.size()))
            raise(Errc::bad_magic, uri.raw + ": compressed archive, random access needs plain tar");

        std::string magic = field_str(hdr.data() + 257, 6);
        bool ustar = magic == "ustar" || magic == "ustar ";
        bool pre_posix = all_zero(hdr.data() + 257, 6);
        if (!ustar && !pre_posix)
            raise(Errc::bad_magic, uri.raw + ": not a tar header at offset " + std::to_string(offset));

        uint32_t stored = static_cast<uint32_t>(parse_octal(hdr.data() + 148, 8, "checksum"));
        if (stored != header_checksum(hdr.data()))
            raise(Errc::bad_checksum,
                  uri.raw + ": header checksum mismatch at offset " + std::to_string(offset));

        uint64_t size = parse_size(hdr.data() + 124, 12);
        char typeflag = static_cast<char>(hdr[156]);
        std::string name = field_str(hdr.data(), 100);
        std::string prefix = ustar ? field_str(hdr.data() + 345, 155) : std::string();
        if (!prefix.empty()) name = prefix + "/" + name;

        uint64_t data_offset = offset + kBlock;
        uint64_t padded = (size + kBlock - 1) / kBlock * kBlock;
        if (data_offset + padded > total)
            raise(Errc::truncated_archive, uri.raw + ": member data exceeds archive size");

        switch (typeflag) {
            case '0':
            case '\0': {
                std::string path = pax_name                ? *pax_name
                                   : long_name             ? *long_name
                                                           : name;
                pax_name.reset();
                long_name.reset();
                if (path.empty())
                    raise(Errc::unsupported_header, uri.raw + ": regular member with empty name");
                if (!seen.insert(path).second)
                    raise(Errc::duplicate_key, uri.raw + ": duplicate member path '" + path + "'");
                members.push_back(TarMember{path, data_offset, size, typeflag});
                break;
            }
            case '5':
                break;  // directory
            case 'L': {
                if (size == 0) raise(Errc::unsupported_header, "empty GNU long-name entry");
                auto data = storage.read_range(uri, ByteRange{data_offset, size});
                long_name = field_str(data.data(), data.size());
                break;
            }
            case 'x': {
                if (size > 0) {
                    auto data = storage.read_range(uri, ByteRange{data_offset, size});
                    if (auto p = pax_path(data)) pax_name = *p;
                }
                break;
            }
            default:
                raise(Errc::unsupported_header,
                      uri.raw + ": unsupported typeflag '" + std::string(1, typeflag) + "' for '" +
                          name + "'");
        }
        offset = data_offset + padded;
    }
    return members;
}

inline std::vector<TarMember> index_tar(Storage& storage, std::string_view uri) {
    return index_tar(storage, SourceUri::parse(uri));
}

inline std::vector<uint8_t> read_member(Storage& storage, const SourceUri& uri,
                                        const TarMember& member) {
    if (member.data_length == 0) return {};
    return storage.read_range(uri, ByteRange{member.data_offset, member.data_length});
}

// Minimal ustar writer used by tests and fixture generation: plain headers,
// two trailing zero blocks, no blocking-factor padding. Member mtimes are
// fixed so archives are byte-stable.
class TarWriter {
  public:
    explicit TarWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) raise(Errc::io_failure, "cannot create " + path);
    }

    ~TarWriter() {
        if (!finished_) finish();
    }

    void add(const std::string& name, const std::vector<uint8_t>& payload, char typeflag = '0') {
        if (name.size() > 100) {
            // GNU long-name entry carrying the real path, then a truncated header.
            std::vector<uint8_t> data(name.begin(), name.end());
            data.push_back(0);
            write_header("././@LongLink", data.size(), 'L');
            write_data(data);
            write_header(name.substr(0, 100), payload.size(), typeflag);
        } else {
            write_header(name, payload.size(), typeflag);
        }
        if (typeflag == '0' || typeflag == '\0') write_data(payload);
    }

    void add(const std::string& name, std::string_view payload) {
        add(name, std::vector<uint8_t>(payload.begin(), payload.end()));
    }

    void add_dir(const std::string& name) { add(name, std::vector<uint8_t>{}, '5'); }

    void finish() {
        uint8_t zeros[tar_detail::kBlock] = {};
        out_.write(reinterpret_cast<const char*>(zeros), sizeof(zeros));
        out_.write(reinterpret_cast<const char*>(zeros), sizeof(zeros));
        out_.flush();
        finished_ = true;
    }

  private:
    void write_header(const std::string& name, uint64_t size, char typeflag) {
        uint8_t hdr[tar_detail::kBlock] = {};
        std::memcpy(hdr, name.data(), std::min<size_t>(name.size(), 100));
        write_octal(hdr + 100, 8, 0644);
        write_octal(hdr + 108, 8, 0);
        write_octal(hdr + 116, 8, 0);
        write_octal(hdr + 124, 12, size);
        write_octal(hdr + 136, 12, 0);  // mtime
        hdr[156] = static_cast<uint8_t>(typeflag);
        std::memcpy(hdr + 257, "ustar", 6);  // trailing NUL from the array init
        std::memcpy(hdr + 263, "00", 2);
        std::memset(hdr + 148, ' ', 8);
        uint32_t sum = tar_detail::header_checksum(hdr);
        char chk[9];
        std::snprintf(chk, sizeof(chk), "%06o", sum);
        std::memcpy(hdr + 148, chk, 6);
        hdr[154] = 0;
        hdr[155] = ' ';
        out_.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    }

    void write_data(const std::vector<uint8_t>& payload) {
        out_.write(reinterpret_cast<const char*>(payload.data()),
                   static_cast<std::streamsize>(payload.size()));
        size_t pad = (tar_detail::kBlock - payload.size() % tar_detail::kBlock) % tar_detail::kBlock;
        static const uint8_t zeros[tar_detail::kBlock] = {};
        out_.write(reinterpret_cast<const char*>(zeros), static_cast<std::streamsize>(pad));
    }

    static void write_octal(uint8_t* field, size_t n, uint64_t value) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%0*llo", static_cast<int>(n - 1),
                      static_cast<unsigned long long>(value));
        std::memcpy(field, buf, n - 1);
        field[n - 1] = 0;
    }

    std::ofstream out_;
    bool finished_ = false;
};

}  // namespace df
