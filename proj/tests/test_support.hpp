#pragma once

// Shared fixtures and independent oracles for the test suites. Oracles here
// are deliberately written from scratch so they do not share code with the
// library paths they check.

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "df/tar.hpp"

namespace dft {

namespace fs = std::filesystem;

class TempDir {
  public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "dftest-XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
        path_ = buf.data();
    }

    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& p) const { return path_ / p; }

  private:
    fs::path path_;
};

inline std::string file_uri(const fs::path& p) {
    return "file://" + fs::absolute(p).lexically_normal().generic_string();
}

// ---------------------------------------------------------------------------
// Independent SHA-256 oracle (straight off the FIPS 180-4 pseudocode, one
// whole-message pass; no shared code with df::Sha256).
// ---------------------------------------------------------------------------

inline std::string oracle_sha256_hex(const std::string& msg) {
    static const uint32_t K[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
        0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
        0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
        0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
        0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
        0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2};
    auto rotr = [](uint32_t x, int n) { return (x >> n) | (x << (32 - n)); };

    std::vector<uint8_t> m(msg.begin(), msg.end());
    uint64_t bits = uint64_t(m.size()) * 8;
    m.push_back(0x80);
    while (m.size() % 64 != 56) m.push_back(0);
    for (int s = 56; s >= 0; s -= 8) m.push_back(uint8_t(bits >> s));

    uint32_t H[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                     0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    for (size_t blk = 0; blk < m.size(); blk += 64) {
        uint32_t w[64];
        for (int t = 0; t < 16; ++t)
            w[t] = (uint32_t(m[blk + 4 * t]) << 24) | (uint32_t(m[blk + 4 * t + 1]) << 16) |
                   (uint32_t(m[blk + 4 * t + 2]) << 8) | uint32_t(m[blk + 4 * t + 3]);
        for (int t = 16; t < 64; ++t) {
            uint32_t s0 = rotr(w[t - 15], 7) ^ rotr(w[t - 15], 18) ^ (w[t - 15] >> 3);
            uint32_t s1 = rotr(w[t - 2], 17) ^ rotr(w[t - 2], 19) ^ (w[t - 2] >> 10);
            w[t] = w[t - 16] + s0 + w[t - 7] + s1;
        }
        uint32_t a = H[0], b = H[1], c = H[2], d = H[3], e = H[4], f = H[5], g = H[6], h = H[7];
        for (int t = 0; t < 64; ++t) {
            uint32_t t1 = h + (rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25)) + ((e & f) ^ (~e & g)) +
                          K[t] + w[t];
            uint32_t t2 = (rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c));
            h = g; g = f; f = e; e = d + t1; d = c; c = b; b = a; a = t1 + t2;
        }
        H[0] += a; H[1] += b; H[2] += c; H[3] += d;
        H[4] += e; H[5] += f; H[6] += g; H[7] += h;
    }
    std::string hex;
    for (uint32_t x : H) {
        char buf[9];
        std::snprintf(buf, sizeof(buf), "%08x", x);
        hex += buf;
    }
    return hex;
}

// ---------------------------------------------------------------------------
// Archive / sidecar fixtures
// ---------------------------------------------------------------------------

struct FixtureMember {
    std::string name;
    std::vector<uint8_t> payload;
};

inline std::vector<uint8_t> random_payload(std::mt19937_64& rng, size_t min_len, size_t max_len) {
    std::uniform_int_distribution<size_t> len_dist(min_len, max_len);
    std::uniform_int_distribution<int> byte_dist(0, 255);
    std::vector<uint8_t> payload(len_dist(rng));
    for (auto& b : payload) b = static_cast<uint8_t>(byte_dist(rng));
    return payload;
}

inline void write_tar(const fs::path& path, const std::vector<FixtureMember>& members) {
    df::TarWriter w(path.string());
    for (const auto& m : members) w.add(m.name, m.payload);
    w.finish();
}

// One shard of the desk-scale fixture: members img_<shard>_<j>.jpg plus a
// JSONL sidecar with {key, size, width, height, caption, nsfw_score}.
// Member (0, 0) carries a cycling 0..255 payload (uniform byte histogram) so
// similarity tests have a known exemplar.
struct FixtureShard {
    fs::path archive;
    fs::path sidecar;
    std::vector<FixtureMember> members;
};

inline FixtureShard make_fixture_shard(const fs::path& dir, size_t shard, size_t member_count,
                                       uint64_t seed, size_t min_len = 64, size_t max_len = 4096) {
    std::mt19937_64 rng(seed * 1000003 + shard);
    std::uniform_int_distribution<int> px(16, 4096);
    FixtureShard out;
    out.archive = dir / ("shard" + std::to_string(shard) + ".tar");
    out.sidecar = dir / ("shard" + std::to_string(shard) + ".jsonl");

    std::ofstream side(out.sidecar);
    for (size_t j = 0; j < member_count; ++j) {
        FixtureMember m;
        m.name = "img_" + std::to_string(shard) + "_" + std::to_string(j) + ".jpg";
        if (shard == 0 && j == 0) {
            m.payload.resize(2048);
            for (size_t b = 0; b < m.payload.size(); ++b)
                m.payload[b] = static_cast<uint8_t>(b % 256);
        } else {
            m.payload = random_payload(rng, min_len, max_len);
        }
        side << "{\"key\":\"img_" << shard << "_" << j << "\",\"size\":" << m.payload.size()
             << ",\"width\":" << px(rng) << ",\"height\":" << px(rng) << ",\"caption\":\"sample "
             << shard << "/" << j << "\",\"nsfw_score\":" << (px(rng) % 1000) / 1000.0 << "}\n";
        out.members.push_back(std::move(m));
    }
    side.close();
    write_tar(out.archive, out.members);
    return out;
}

// Runs a command, captures stdout; returns the exit code.
inline int run_cmd(const std::string& cmd, std::string& out) {
    out.clear();
    FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
    if (!pipe) return -1;
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, n);
    int status = pclose(pipe);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace dft
