#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <random>

#include "df/storage.hpp"
#include "df/tar.hpp"
#include "test_support.hpp"

using namespace df;

TEST_CASE("single member offsets follow the 512-byte blocking") {
    dft::TempDir dir;
    dft::write_tar(dir / "a.tar", {{"a.jpg", std::vector<uint8_t>(100, 0xAB)}});

    // minimal writer: header + padded data + two end blocks
    CHECK(std::filesystem::file_size(dir / "a.tar") == 512 + 512 + 1024);

    Storage storage;
    auto index = index_tar(storage, dft::file_uri(dir / "a.tar"));
    REQUIRE(index.size() == 1);
    CHECK(index[0].member_path == "a.jpg");
    CHECK(index[0].data_offset == 512);
    CHECK(index[0].data_length == 100);

    auto payload = read_member(storage, SourceUri::parse(dft::file_uri(dir / "a.tar")), index[0]);
    CHECK(payload == std::vector<uint8_t>(100, 0xAB));
}

TEST_CASE("second member lands after padded first member") {
    dft::TempDir dir;
    dft::write_tar(dir / "b.tar", {{"a.jpg", std::vector<uint8_t>(100, 1)},
                                   {"b.jpg", std::vector<uint8_t>(600, 2)}});
    Storage storage;
    auto index = index_tar(storage, dft::file_uri(dir / "b.tar"));
    REQUIRE(index.size() == 2);
    CHECK(index[1].member_path == "b.jpg");
    CHECK(index[1].data_offset == 1536);  // 512 hdr + 512 padded data + 512 hdr
    CHECK(index[1].data_length == 600);
}

TEST_CASE("zero-length member round-trips as empty payload") {
    dft::TempDir dir;
    dft::write_tar(dir / "z.tar", {{"empty.bin", {}}});
    Storage storage;
    auto index = index_tar(storage, dft::file_uri(dir / "z.tar"));
    REQUIRE(index.size() == 1);
    CHECK(index[0].data_length == 0);
    CHECK(read_member(storage, SourceUri::parse(dft::file_uri(dir / "z.tar")), index[0]).empty());
}

TEST_CASE("random archives round-trip names, lengths and payloads") {
    dft::TempDir dir;
    std::mt19937_64 rng(11);
    std::vector<dft::FixtureMember> members;
    for (int i = 0; i < 50; ++i)
        members.push_back({"m" + std::to_string(i) + ".bin", dft::random_payload(rng, 0, 3000)});
    dft::write_tar(dir / "r.tar", members);

    Storage storage;
    auto uri = SourceUri::parse(dft::file_uri(dir / "r.tar"));
    auto index = index_tar(storage, uri);
    REQUIRE(index.size() == members.size());
    for (size_t i = 0; i < members.size(); ++i) {
        CHECK(index[i].member_path == members[i].name);
        CHECK(index[i].data_length == members[i].payload.size());
        CHECK(read_member(storage, uri, index[i]) == members[i].payload);
    }
}

TEST_CASE("index agrees with the system tar listing") {
    dft::TempDir dir;
    std::mt19937_64 rng(1234);
    std::vector<dft::FixtureMember> members;
    for (int i = 0; i < 1000; ++i)
        members.push_back(
            {"f" + std::to_string(i) + ".dat", dft::random_payload(rng, 1, 2048)});
    dft::write_tar(dir / "big.tar", members);

    std::string listing;
    int rc = dft::run_cmd("tar -tvf " + (dir / "big.tar").string(), listing);
    if (rc != 0) {
        WARN("system tar unavailable; skipping reference comparison");
        return;
    }

    // name -> size according to GNU tar
    std::vector<std::pair<std::string, uint64_t>> reference;
    size_t pos = 0;
    while (pos < listing.size()) {
        size_t nl = listing.find('\n', pos);
        std::string line = listing.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? listing.size() : nl + 1;
        if (line.empty()) continue;
        // "-rw-r--r-- 0/0  1234 1970-01-01 00:00 f0.dat"
        std::vector<std::string> fields;
        std::string cur;
        for (char c : line) {
            if (c == ' ') {
                if (!cur.empty()) fields.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) fields.push_back(cur);
        REQUIRE(fields.size() >= 6);
        reference.emplace_back(fields.back(), std::stoull(fields[2]));
    }

    Storage storage;
    auto index = index_tar(storage, dft::file_uri(dir / "big.tar"));
    REQUIRE(index.size() == reference.size());
    for (size_t i = 0; i < index.size(); ++i) {
        CHECK(index[i].member_path == reference[i].first);
        CHECK(index[i].data_length == reference[i].second);
    }
}

TEST_CASE("indexing touches headers only") {
    dft::TempDir dir;
    std::vector<dft::FixtureMember> members;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 40; ++i)
        members.push_back({"p" + std::to_string(i) + ".bin", dft::random_payload(rng, 1500, 4000)});
    dft::write_tar(dir / "h.tar", members);

    Storage storage;
    auto index = index_tar(storage, dft::file_uri(dir / "h.tar"));
    CHECK(index.size() == members.size());
    uint64_t archive_size = std::filesystem::file_size(dir / "h.tar");
    // one 512-byte read per header plus the two terminator blocks
    CHECK(storage.stats().bytes_fetched.load() == (members.size() + 2) * 512);
    CHECK(storage.stats().bytes_fetched.load() * 4 < archive_size);
}

TEST_CASE("reads archives produced by GNU tar") {
    dft::TempDir dir;
    std::filesystem::create_directories(dir / "src" / "sub");
    std::ofstream(dir / "src" / "one.bin") << std::string(700, 'x');
    std::ofstream(dir / "src" / "sub" / "two.bin") << std::string(10, 'y');
    std::string out;
    int rc = dft::run_cmd("tar -C " + (dir / "src").string() + " -cf " +
                              (dir / "gnu.tar").string() + " one.bin sub",
                          out);
    if (rc != 0) {
        WARN("system tar unavailable; skipping");
        return;
    }
    Storage storage;
    auto index = index_tar(storage, dft::file_uri(dir / "gnu.tar"));
    REQUIRE(index.size() == 2);  // directory entries are skipped
    CHECK(index[0].member_path == "one.bin");
    CHECK(index[0].data_length == 700);
    CHECK(index[1].member_path == "sub/two.bin");
    CHECK(index[1].data_length == 10);
}

TEST_CASE("long member names survive via GNU long-name entries") {
    dft::TempDir dir;
    std::string long_name(150, 'n');
    long_name += ".bin";
    dft::write_tar(dir / "l.tar", {{long_name, std::vector<uint8_t>(10, 7)}});
    Storage storage;
    auto index = index_tar(storage, dft::file_uri(dir / "l.tar"));
    REQUIRE(index.size() == 1);
    CHECK(index[0].member_path == long_name);
}

TEST_CASE("header checksum corruption is caught") {
    dft::TempDir dir;
    dft::write_tar(dir / "c.tar", {{"a.bin", std::vector<uint8_t>(100, 3)}});
    // flip a byte inside the mode field of the first header
    std::fstream f(dir / "c.tar", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(101);
    f.put('9');
    f.close();

    Storage storage;
    try {
        index_tar(storage, dft::file_uri(dir / "c.tar"));
        FAIL("expected BadChecksum");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::bad_checksum);
    }
}

TEST_CASE("non-tar and compressed inputs are rejected") {
    dft::TempDir dir;
    {
        std::ofstream out(dir / "junk", std::ios::binary);
        std::string junk(2048, 'Q');
        out << junk;
    }
    {
        std::ofstream out(dir / "gz", std::ios::binary);
        const unsigned char gz[] = {0x1f, 0x8b, 0x08, 0x00};
        out.write(reinterpret_cast<const char*>(gz), sizeof(gz));
        out << std::string(1020, '\0');
    }
    Storage storage;
    try {
        index_tar(storage, dft::file_uri(dir / "junk"));
        FAIL("expected BadMagic");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::bad_magic);
    }
    try {
        index_tar(storage, dft::file_uri(dir / "gz"));
        FAIL("expected BadMagic for compressed input");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::bad_magic);
        CHECK(std::string(e.what()).find("compressed") != std::string::npos);
    }
}

TEST_CASE("truncated archives are reported") {
    dft::TempDir dir;
    dft::write_tar(dir / "t.tar", {{"a.bin", std::vector<uint8_t>(600, 1)}});
    auto size = std::filesystem::file_size(dir / "t.tar");
    std::filesystem::resize_file(dir / "t.tar", size - 1500);

    Storage storage;
    try {
        index_tar(storage, dft::file_uri(dir / "t.tar"));
        FAIL("expected TruncatedArchive");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::truncated_archive);
    }
}

TEST_CASE("duplicate member paths are ambiguous") {
    dft::TempDir dir;
    df::TarWriter w((dir / "d.tar").string());
    w.add("same.bin", std::vector<uint8_t>(10, 1));
    w.add("same.bin", std::vector<uint8_t>(20, 2));
    w.finish();

    Storage storage;
    try {
        index_tar(storage, dft::file_uri(dir / "d.tar"));
        FAIL("expected DuplicateKey");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::duplicate_key);
    }
}

TEST_CASE("unsupported typeflags fail loudly") {
    dft::TempDir dir;
    df::TarWriter w((dir / "s.tar").string());
    w.add("link", std::vector<uint8_t>{}, '2');  // symlink
    w.finish();

    Storage storage;
    try {
        index_tar(storage, dft::file_uri(dir / "s.tar"));
        FAIL("expected UnsupportedHeader");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::unsupported_header);
    }
}

TEST_CASE("member read past the end of the archive is out of bounds") {
    dft::TempDir dir;
    dft::write_tar(dir / "o.tar", {{"a.bin", std::vector<uint8_t>(100, 1)}});
    Storage storage;
    TarMember bogus{"a.bin", 1 << 20, 100, '0'};
    try {
        read_member(storage, SourceUri::parse(dft::file_uri(dir / "o.tar")), bogus);
        FAIL("expected RangeOutOfBounds");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::range_out_of_bounds);
    }
}
