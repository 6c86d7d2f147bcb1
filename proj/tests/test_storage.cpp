#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "httplib.h"

#include "df/storage.hpp"
#include "test_support.hpp"

using namespace df;

namespace {

void write_file(const std::filesystem::path& p, const std::string& data) {
    std::ofstream out(p, std::ios::binary);
    out << data;
}

// Independent account of how many GETs coalescing should issue.
size_t oracle_group_count(std::vector<ByteRange> rs, uint64_t gap) {
    std::sort(rs.begin(), rs.end(), [](const ByteRange& a, const ByteRange& b) {
        return std::tie(a.offset, a.length) < std::tie(b.offset, b.length);
    });
    size_t groups = 0;
    uint64_t end = 0;
    bool open = false;
    for (const auto& r : rs) {
        if (!open || r.offset > end + gap) {
            ++groups;
            open = true;
            end = r.offset + r.length;
        } else {
            end = std::max(end, r.offset + r.length);
        }
    }
    return groups;
}

}  // namespace

TEST_CASE("source uri parsing") {
    auto u = SourceUri::parse("file:///data/a.tar");
    CHECK(u.scheme == "file");
    CHECK(u.path == "/data/a.tar");

    auto h = SourceUri::parse("http://host:8080/obj/a.tar");
    CHECK(h.scheme == "http");
    CHECK(h.authority == "host:8080");
    CHECK(h.path == "/obj/a.tar");

    CHECK_THROWS_AS(SourceUri::parse("s3://bucket/key"), Error);
    CHECK_THROWS_AS(SourceUri::parse("not-a-uri"), Error);
    CHECK_THROWS_AS(SourceUri::parse("file:///a?x=1"), Error);
    CHECK_THROWS_MATCHES(SourceUri::parse("ftp://x/y"), Error, Catch::Matchers::MessageMatches(
        Catch::Matchers::ContainsSubstring("SchemeUnsupported")));
}

TEST_CASE("local stat and ranged reads") {
    dft::TempDir dir;
    write_file(dir / "obj", "abcdef");
    Storage storage;
    std::string uri = dft::file_uri(dir / "obj");

    CHECK(storage.stat(uri) == 6);

    auto mid = storage.read_range(uri, ByteRange{2, 3});
    CHECK(std::string(mid.begin(), mid.end()) == "cde");

    auto whole = storage.read_range(uri, ByteRange{0, 6});
    CHECK(std::string(whole.begin(), whole.end()) == "abcdef");

    CHECK_THROWS_AS(storage.read_range(uri, ByteRange{6, 1}), Error);

    write_file(dir / "empty", "");
    CHECK(storage.stat(dft::file_uri(dir / "empty")) == 0);

    try {
        storage.stat(dft::file_uri(dir / "missing"));
        FAIL("expected NotFound");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::not_found);
    }

    // accounting covers file reads too
    CHECK(storage.stats().get_count.load() == 2);
    CHECK(storage.stats().bytes_fetched.load() == 9);
}

TEST_CASE("coalescing merges ranges within the gap") {
    dft::TempDir dir;
    std::string blob(256 * 1024, '\0');
    std::mt19937_64 rng(7);
    for (auto& c : blob) c = static_cast<char>(rng());
    write_file(dir / "obj", blob);
    Storage storage;
    std::string uri = dft::file_uri(dir / "obj");

    SECTION("gap below threshold forces one GET") {
        std::vector<ByteRange> ranges{{0, 10}, {12, 10}};
        auto out = storage.read_ranges_coalesced(uri, ranges, 4);
        CHECK(storage.stats().get_count.load() == 1);
        CHECK(storage.stats().bytes_fetched.load() == 22);
        CHECK(std::string(out[0].begin(), out[0].end()) == blob.substr(0, 10));
        CHECK(std::string(out[1].begin(), out[1].end()) == blob.substr(12, 10));
    }

    SECTION("distant ranges stay separate") {
        std::vector<ByteRange> ranges{{0, 10}, {1000, 10}};
        storage.read_ranges_coalesced(uri, ranges, 4);
        CHECK(storage.stats().get_count.load() == 2);
    }

    SECTION("stride-1024 ranges with a 1 MiB gap fuse into one GET") {
        std::vector<ByteRange> ranges;
        for (int i = 0; i < 100; ++i) ranges.push_back({uint64_t(i) * 1024, 512});
        CHECK(oracle_group_count(ranges, kDefaultCoalesceGap) == 1);
        storage.read_ranges_coalesced(uri, ranges, kDefaultCoalesceGap);
        CHECK(storage.stats().get_count.load() == 1);
    }
}

TEST_CASE("coalesced reads equal per-range reads on random inputs") {
    dft::TempDir dir;
    std::string blob(64 * 1024, '\0');
    std::mt19937_64 rng(42);
    for (auto& c : blob) c = static_cast<char>(rng());
    write_file(dir / "obj", blob);
    std::string uri = dft::file_uri(dir / "obj");

    for (int round = 0; round < 25; ++round) {
        std::uniform_int_distribution<uint64_t> off_dist(0, blob.size() - 600);
        std::uniform_int_distribution<uint64_t> len_dist(1, 512);
        std::uniform_int_distribution<int> count_dist(1, 20);
        std::uniform_int_distribution<uint64_t> gap_dist(0, 2048);
        std::vector<ByteRange> ranges;
        int n = count_dist(rng);
        for (int i = 0; i < n; ++i) ranges.push_back({off_dist(rng), len_dist(rng)});
        uint64_t gap = gap_dist(rng);

        Storage coalesced_storage, naive_storage;
        auto merged = coalesced_storage.read_ranges_coalesced(uri, ranges, gap);
        auto naive = naive_storage.read_ranges_naive(uri, ranges);

        REQUIRE(merged.size() == naive.size());
        for (size_t i = 0; i < merged.size(); ++i) CHECK(merged[i] == naive[i]);
        CHECK(coalesced_storage.stats().get_count.load() == oracle_group_count(ranges, gap));
        CHECK(coalesced_storage.stats().get_count.load() <=
              naive_storage.stats().get_count.load());
        uint64_t sum = 0;
        for (const auto& r : ranges) sum += r.length;
        CHECK(coalesced_storage.stats().bytes_fetched.load() >= sum);
    }
}

TEST_CASE("http adapter") {
    std::string blob(10000, '\0');
    for (size_t i = 0; i < blob.size(); ++i) blob[i] = static_cast<char>('a' + i % 26);

    httplib::Server server;
    std::atomic<int> flaky_hits{0};
    server.Get("/obj", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(blob, "application/octet-stream");  // httplib slices ranges itself
    });
    server.Get("/ignores-range", [&](const httplib::Request&, httplib::Response& res) {
        res.status = 200;  // explicit 200 suppresses the framework's range handling
        res.set_content(blob, "application/octet-stream");
    });
    server.Get("/flaky", [&](const httplib::Request&, httplib::Response& res) {
        if (flaky_hits.fetch_add(1) < 2) {
            res.status = 503;
            return;
        }
        res.set_content(blob, "application/octet-stream");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    std::string base = "http://127.0.0.1:" + std::to_string(port);

    {
        Storage storage(RetryPolicy{3, std::chrono::milliseconds(1)});
        CHECK(storage.stat(base + "/obj") == blob.size());
        auto part = storage.read_range(base + "/obj", ByteRange{100, 26});
        CHECK(std::string(part.begin(), part.end()) == blob.substr(100, 26));
        CHECK(storage.stats().get_count.load() == 1);  // stat is a HEAD, not a GET
        CHECK(storage.stats().bytes_fetched.load() == 26);

        try {
            storage.read_range(base + "/obj", ByteRange{blob.size(), 5});
            FAIL("expected RangeOutOfBounds");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::range_out_of_bounds);
        }

        try {
            storage.read_range(base + "/ignores-range", ByteRange{0, 10});
            FAIL("expected HttpRangeUnsupported");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::http_range_unsupported);
        }

        try {
            storage.stat(base + "/nope");
            FAIL("expected NotFound");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::not_found);
        }
    }

    {
        // two 503s, then success: retries cover it
        Storage storage(RetryPolicy{3, std::chrono::milliseconds(1)});
        auto part = storage.read_range(base + "/flaky", ByteRange{0, 3});
        CHECK(std::string(part.begin(), part.end()) == "abc");
        CHECK(flaky_hits.load() == 3);
    }

    {
        // persistent 5xx exhausts the attempts
        flaky_hits.store(-100);
        Storage storage(RetryPolicy{2, std::chrono::milliseconds(1)});
        try {
            storage.read_range(base + "/flaky", ByteRange{0, 3});
            FAIL("expected IoFailure");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::io_failure);
        }
    }

    server.stop();
    server_thread.join();
}
