#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"

#include "df/error.hpp"

namespace df {

struct SourceUri {
    std::string scheme;     // file | http | https
    std::string authority;  // host[:port], empty for file
    std::string path;       // /path (plus query for http schemes)
    std::string raw;        // original absolute URI text

    bool is_file() const { return scheme == "file"; }
    bool is_http() const { return scheme == "http" || scheme == "https"; }

    static SourceUri parse(std::string_view text) {
        auto sep = text.find("://");
        if (sep == std::string_view::npos)
            raise(Errc::scheme_unsupported, "not an absolute URI: " + std::string(text));
        SourceUri u;
        u.raw = std::string(text);
        u.scheme = std::string(text.substr(0, sep));
        std::string_view rest = text.substr(sep + 3);
        if (u.scheme == "file") {
            if (rest.find('?') != std::string_view::npos || rest.find('#') != std::string_view::npos)
                raise(Errc::scheme_unsupported, "file URI may not carry query or fragment: " + u.raw);
            // file:///abs/path or file://localhost/abs/path
            auto slash = rest.find('/');
            if (slash == std::string_view::npos)
                raise(Errc::scheme_unsupported, "file URI has no path: " + u.raw);
            u.authority = std::string(rest.substr(0, slash));
            if (!u.authority.empty() && u.authority != "localhost")
                raise(Errc::scheme_unsupported, "file URI with remote authority: " + u.raw);
            u.path = std::string(rest.substr(slash));
        } else if (u.scheme == "http" || u.scheme == "https") {
            if (rest.find('#') != std::string_view::npos)
                raise(Errc::scheme_unsupported, "fragment not allowed in source URI: " + u.raw);
            auto slash = rest.find('/');
            if (slash == std::string_view::npos) {
                u.authority = std::string(rest);
                u.path = "/";
            } else {
                u.authority = std::string(rest.substr(0, slash));
                u.path = std::string(rest.substr(slash));
            }
            if (u.authority.empty())
                raise(Errc::scheme_unsupported, "http URI has no host: " + u.raw);
        } else {
            raise(Errc::scheme_unsupported, "unrecognized scheme '" + u.scheme + "' in " + u.raw);
        }
        return u;
    }
};

// Turns user input into an absolute URI; bare paths become file:// URIs.
inline std::string normalize_uri(std::string_view text) {
    if (text.find("://") != std::string_view::npos) return std::string(text);
    auto abs = std::filesystem::absolute(std::filesystem::path(text)).lexically_normal();
    return "file://" + abs.generic_string();
}

struct ByteRange {
    uint64_t offset = 0;
    uint64_t length = 0;
};

inline void check_range(const ByteRange& r) {
    if (r.length == 0) raise(Errc::invariant_violation, "byte range with zero length");
    if (r.offset + r.length < r.offset)
        raise(Errc::invariant_violation, "byte range offset+length overflows");
}

struct RequestStats {
    std::atomic<uint64_t> get_count{0};
    std::atomic<uint64_t> bytes_fetched{0};

    void record(uint64_t bytes) {
        get_count.fetch_add(1, std::memory_order_relaxed);
        bytes_fetched.fetch_add(bytes, std::memory_order_relaxed);
    }
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{100};
};

class StorageAdapter {
  public:
    virtual ~StorageAdapter() = default;
    virtual uint64_t stat(const SourceUri& uri) = 0;
    virtual std::vector<uint8_t> read_range(const SourceUri& uri, ByteRange range) = 0;
};

class LocalFileAdapter final : public StorageAdapter {
  public:
    uint64_t stat(const SourceUri& uri) override {
        std::error_code ec;
        auto size = std::filesystem::file_size(uri.path, ec);
        if (ec) {
            if (!std::filesystem::exists(uri.path)) raise(Errc::not_found, uri.raw);
            raise(Errc::io_failure, uri.raw + ": " + ec.message());
        }
        return size;
    }

    std::vector<uint8_t> read_range(const SourceUri& uri, ByteRange range) override {
        check_range(range);
        std::error_code ec;
        auto size = std::filesystem::file_size(uri.path, ec);
        if (ec) raise(Errc::not_found, uri.raw);
        if (range.offset + range.length > size)
            raise(Errc::range_out_of_bounds,
                  uri.raw + ": [" + std::to_string(range.offset) + ", +" +
                      std::to_string(range.length) + ") exceeds size " + std::to_string(size));
        std::ifstream in(uri.path, std::ios::binary);
        if (!in) raise(Errc::io_failure, "cannot open " + uri.raw);
        in.seekg(static_cast<std::streamoff>(range.offset));
        std::vector<uint8_t> buf(range.length);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(range.length));
        if (static_cast<uint64_t>(in.gcount()) != range.length)
            raise(Errc::io_failure, "short read from " + uri.raw);
        return buf;
    }
};

// Requires the server to honor Range requests; a 200 answer to a ranged GET is
// treated as an error so request accounting stays predictable.
class HttpAdapter final : public StorageAdapter {
  public:
    explicit HttpAdapter(RetryPolicy retry = {}) : retry_(retry) {}

    uint64_t stat(const SourceUri& uri) override {
        auto res = with_retries([&](httplib::Client& cli) { return cli.Head(uri.path); }, uri);
        if (res->status == 404) raise(Errc::not_found, uri.raw);
        if (res->status >= 400)
            raise(Errc::io_failure, uri.raw + ": HTTP " + std::to_string(res->status));
        if (!res->has_header("Content-Length"))
            raise(Errc::io_failure, uri.raw + ": no Content-Length in HEAD response");
        return std::stoull(res->get_header_value("Content-Length"));
    }

    std::vector<uint8_t> read_range(const SourceUri& uri, ByteRange range) override {
        check_range(range);
        httplib::Headers headers = {
            httplib::make_range_header({{static_cast<ssize_t>(range.offset),
                                         static_cast<ssize_t>(range.offset + range.length - 1)}})};
        auto res = with_retries([&](httplib::Client& cli) { return cli.Get(uri.path, headers); }, uri);
        if (res->status == 404) raise(Errc::not_found, uri.raw);
        if (res->status == 416) raise(Errc::range_out_of_bounds, uri.raw);
        if (res->status == 200)
            raise(Errc::http_range_unsupported, uri.raw + ": server ignored Range header");
        if (res->status != 206)
            raise(Errc::io_failure, uri.raw + ": HTTP " + std::to_string(res->status));
        if (res->body.size() != range.length)
            raise(Errc::io_failure, uri.raw + ": ranged GET returned " +
                                        std::to_string(res->body.size()) + " bytes, expected " +
                                        std::to_string(range.length));
        return {res->body.begin(), res->body.end()};
    }

  private:
    template <class F>
    httplib::Result with_retries(F&& req, const SourceUri& uri) {
        auto delay = retry_.base_delay;
        for (int attempt = 1;; ++attempt) {
            httplib::Client cli(uri.scheme + "://" + uri.authority);
            cli.set_connection_timeout(10, 0);
            cli.set_read_timeout(30, 0);
            auto res = req(cli);
            bool transient = !res || res->status >= 500;
            if (!transient) return res;
            if (attempt >= retry_.attempts) {
                if (!res) raise(Errc::io_failure, uri.raw + ": " + httplib::to_string(res.error()));
                raise(Errc::io_failure, uri.raw + ": HTTP " + std::to_string(res->status) +
                                            " after " + std::to_string(attempt) + " attempts");
            }
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }

    RetryPolicy retry_;
};

constexpr uint64_t kDefaultCoalesceGap = 1024 * 1024;

// Accounting front end over the scheme adapters. All reads, including local
// files, go through here so request counts can be asserted uniformly.
class Storage {
  public:
    explicit Storage(RetryPolicy http_retry = {})
        : local_(std::make_unique<LocalFileAdapter>()),
          http_(std::make_unique<HttpAdapter>(http_retry)) {}

    RequestStats& stats() { return stats_; }
    const RequestStats& stats() const { return stats_; }

    uint64_t stat(const SourceUri& uri) { return adapter(uri).stat(uri); }
    uint64_t stat(std::string_view uri) { return stat(SourceUri::parse(uri)); }

    std::vector<uint8_t> read_range(const SourceUri& uri, ByteRange range) {
        auto buf = adapter(uri).read_range(uri, range);
        stats_.record(buf.size());
        return buf;
    }

    std::vector<uint8_t> read_range(std::string_view uri, ByteRange range) {
        return read_range(SourceUri::parse(uri), range);
    }

    // Merges ranges whose gap is at most `gap` bytes into single GETs and
    // slices the payloads back out; results come back in input order.
    std::vector<std::vector<uint8_t>> read_ranges_coalesced(const SourceUri& uri,
                                                            const std::vector<ByteRange>& ranges,
                                                            uint64_t gap) {
        for (const auto& r : ranges) check_range(r);
        std::vector<size_t> order(ranges.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return std::tie(ranges[a].offset, ranges[a].length) <
                   std::tie(ranges[b].offset, ranges[b].length);
        });

        std::vector<std::vector<uint8_t>> out(ranges.size());
        size_t i = 0;
        while (i < order.size()) {
            uint64_t begin = ranges[order[i]].offset;
            uint64_t end = begin + ranges[order[i]].length;
            size_t j = i + 1;
            while (j < order.size() && ranges[order[j]].offset <= end + gap) {
                end = std::max(end, ranges[order[j]].offset + ranges[order[j]].length);
                ++j;
            }
            auto buf = read_range(uri, ByteRange{begin, end - begin});
            for (size_t k = i; k < j; ++k) {
                const auto& r = ranges[order[k]];
                auto first = buf.begin() + static_cast<ptrdiff_t>(r.offset - begin);
                out[order[k]].assign(first, first + static_cast<ptrdiff_t>(r.length));
            }
            i = j;
        }
        return out;
    }

    std::vector<std::vector<uint8_t>> read_ranges_coalesced(std::string_view uri,
                                                            const std::vector<ByteRange>& ranges,
                                                            uint64_t gap) {
        return read_ranges_coalesced(SourceUri::parse(uri), ranges, gap);
    }

    // One GET per range, in input order.
    std::vector<std::vector<uint8_t>> read_ranges_naive(const SourceUri& uri,
                                                        const std::vector<ByteRange>& ranges) {
        std::vector<std::vector<uint8_t>> out;
        out.reserve(ranges.size());
        for (const auto& r : ranges) out.push_back(read_range(uri, r));
        return out;
    }

  private:
    StorageAdapter& adapter(const SourceUri& uri) {
        if (uri.is_file()) return *local_;
        if (uri.is_http()) return *http_;
        raise(Errc::scheme_unsupported, uri.raw);
    }

    RequestStats stats_;
    std::unique_ptr<LocalFileAdapter> local_;
    std::unique_ptr<HttpAdapter> http_;
};

}  // namespace df
