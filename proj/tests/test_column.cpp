#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "df/column.hpp"
#include "df/manifest.hpp"
#include "df/sha256.hpp"
#include "test_support.hpp"

using namespace df;

namespace {

ColumnVector random_column(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> tag_dist(0, 5);
    std::uniform_int_distribution<int> rows_dist(0, 40);
    std::uniform_int_distribution<int> dim_dist(1, 8);
    std::uniform_int_distribution<int> coin(0, 1);
    ColumnType type{static_cast<TypeTag>(tag_dist(rng)), 0};
    if (type.tag == TypeTag::fvec) type.dim = static_cast<uint32_t>(dim_dist(rng));
    bool nullable = coin(rng) == 1;
    ColumnVector col(type, nullable);

    int rows = rows_dist(rng);
    std::uniform_int_distribution<int64_t> int_dist(-1'000'000, 1'000'000);
    std::uniform_real_distribution<double> f_dist(-10.0, 10.0);
    std::uniform_int_distribution<int> len_dist(0, 12);
    for (int i = 0; i < rows; ++i) {
        if (nullable && coin(rng) == 1) {
            col.append_null();
            continue;
        }
        switch (type.tag) {
            case TypeTag::int64: col.append_int(int_dist(rng)); break;
            case TypeTag::float64: col.append_float(f_dist(rng)); break;
            case TypeTag::boolean: col.append_bool(coin(rng) == 1); break;
            case TypeTag::utf8:
            case TypeTag::bytes: {
                std::string s;
                int len = len_dist(rng);
                for (int k = 0; k < len; ++k) s.push_back(static_cast<char>(rng() % 256));
                col.append_string(s);
                break;
            }
            case TypeTag::fvec: {
                std::vector<float> v(type.dim);
                for (auto& x : v) x = static_cast<float>(f_dist(rng));
                col.append_vec(v);
                break;
            }
        }
    }
    return col;
}

}  // namespace

TEST_CASE("uid is the digest of the pointer fields") {
    SampleRef ref{"file:///d/a.tar", "x.jpg", 512, 100};
    // sha256 of "file:///d/a.tar\0x.jpg\0512\0100", frozen from an external tool
    CHECK(uid(ref) == "5c1b4727714d279fc9daa4f867cf552566a1c222fbc2179482ed440012230380");

    CHECK(uid(ref) == uid(SampleRef{"file:///d/a.tar", "x.jpg", 512, 100}));
    CHECK(uid(ref) != uid(SampleRef{"file:///d/a.tar", "x.jpg", 513, 100}));

    // cross-check the library hash against the test-local implementation
    std::string raw = std::string("file:///d/a.tar") + '\0' + "x.jpg" + '\0' + "512" + '\0' + "100";
    CHECK(uid(ref) == dft::oracle_sha256_hex(raw));
}

TEST_CASE("sha256 matches the reference vectors") {
    CHECK(sha256_hex(std::string_view{""}) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex(std::string_view{"abc"}) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        std::string s;
        int len = static_cast<int>(rng() % 300);
        for (int k = 0; k < len; ++k) s.push_back(static_cast<char>(rng() % 256));
        CHECK(sha256_hex(s) == dft::oracle_sha256_hex(s));
    }
}

TEST_CASE("int64 column encodes to the fixed layout") {
    ColumnVector col(int64_type(), false);
    col.append_int(7);
    auto bytes = encode_column(col);
    REQUIRE(bytes.size() == kColumnHeaderBytes + 8);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DFC1");
    CHECK(bytes[4] == 1);   // version u16 LE
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 0);   // tag int64
    CHECK(bytes[7] == 0);   // flags: not nullable
    for (int i = 8; i < 12; ++i) CHECK(bytes[i] == 0);  // dim
    CHECK(bytes[12] == 1);  // row_count LE
    CHECK(bytes[20] == 7);  // payload little-endian
    for (int i = 21; i < 28; ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("nullable utf8 column layout: offsets, blob, validity") {
    ColumnVector col(utf8_type(), true);
    col.append_string("ab");
    col.append_null();
    auto bytes = encode_column(col);
    // header, validity byte 0b0000_0001, offsets [0,2,2], blob "ab"
    REQUIRE(bytes.size() == kColumnHeaderBytes + 1 + 3 * 8 + 2);
    CHECK(bytes[7] == 1);                         // nullable flag
    CHECK(bytes[kColumnHeaderBytes] == 0b0000'0001);
    size_t off = kColumnHeaderBytes + 1;
    CHECK(bytes[off] == 0);        // offset[0] = 0
    CHECK(bytes[off + 8] == 2);    // offset[1] = 2
    CHECK(bytes[off + 16] == 2);   // offset[2] = 2 (null row adds no bytes)
    CHECK(bytes[off + 24] == 'a');
    CHECK(bytes[off + 25] == 'b');
}

TEST_CASE("codec round-trips randomized columns bit-exactly") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 300; ++i) {
        ColumnVector col = random_column(rng);
        auto bytes = encode_column(col);
        ColumnVector back = decode_column(bytes);
        CHECK(back == col);
        CHECK(encode_column(back) == bytes);
    }
}

TEST_CASE("codec round-trips empty and all-null columns") {
    ColumnVector empty(float64_type(), true);
    CHECK(decode_column(encode_column(empty)) == empty);

    ColumnVector nulls(fvec_type(4), true);
    nulls.append_null();
    nulls.append_null();
    CHECK(decode_column(encode_column(nulls)) == nulls);
}

TEST_CASE("decoder rejects malformed input") {
    ColumnVector col(int64_type(), false);
    col.append_int(1);
    auto good = encode_column(col);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_column(bad_magic), Error);

    auto bad_version = good;
    bad_version[4] = 9;
    try {
        decode_column(bad_version);
        FAIL("expected BadVersion");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::bad_version);
    }

    auto truncated = good;
    truncated.resize(truncated.size() - 3);
    try {
        decode_column(truncated);
        FAIL("expected Truncated");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::truncated);
    }

    auto trailing = good;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_column(trailing), Error);
}

TEST_CASE("fvec columns reject rows of the wrong dimension") {
    ColumnVector col(fvec_type(3), true);
    col.append_vec({1.f, 2.f, 3.f});
    CHECK_THROWS_AS(col.append_vec({1.f, 2.f}), Error);
}

TEST_CASE("manifests round-trip through canonical JSON") {
    dft::TempDir dir;
    DatasetManifest m;
    m.name = "demo";
    m.version = 2;
    m.schema.fields = {Field{kUidColumn, utf8_type(), false},
                       Field{kRefSourceUri, utf8_type(), false},
                       Field{kRefMemberPath, utf8_type(), false},
                       Field{kRefOffset, int64_type(), false},
                       Field{kRefLength, int64_type(), false},
                       Field{"size", int64_type(), true},
                       Field{"embed", fvec_type(64), true}};
    m.row_count = 10;
    m.column_files = {{"_uid", "datasets/demo/v2/columns/_uid.col"},
                      {"size", "datasets/demo/v1/columns/size.col"}};
    m.parents = {"aa", "bb"};
    m.operation = OperationDescriptor::union_();
    m.created_at = "2026-01-02T03:04:05Z";
    m.fingerprint = fingerprint(m.parents, m.operation, m.schema);

    write_manifest(m, dir.path());
    auto back = read_manifest(dir.path());
    CHECK(back.to_json() == m.to_json());

    // canonical form: equal manifests serialize identically
    CHECK(canonical_dump(back.to_json()) == canonical_dump(m.to_json()));

    // liberal-in: shuffled keys and extra whitespace still parse, and the
    // next write re-canonicalizes
    std::string pretty = m.to_json().dump(2);
    std::ofstream(dir / "manifest.json") << pretty;
    auto reread = read_manifest(dir.path());
    CHECK(reread.to_json() == m.to_json());
}

TEST_CASE("fingerprints are canonical-JSON digests") {
    Schema schema;
    schema.fields = {Field{kUidColumn, utf8_type(), false}};
    auto op = OperationDescriptor::filter("size > 1000", {});
    std::vector<std::string> parents{"bb", "aa"};  // unsorted on purpose

    std::string fp = fingerprint(parents, op, schema);

    json expected{{"descriptor", op.doc},
                  {"parents", json::array({"aa", "bb"})},
                  {"schema", schema_to_json(schema)}};
    CHECK(fp == dft::oracle_sha256_hex(canonical_dump(expected)));

    // same inputs, same digest; any parameter change shifts it
    CHECK(fp == fingerprint({"aa", "bb"}, op, schema));
    auto op2 = OperationDescriptor::filter("size > 1000", {{"t", "1"}});
    CHECK(fp != fingerprint(parents, op2, schema));
}

TEST_CASE("manifest JSON must stay float-free") {
    json bad{{"x", 1.5}};
    CHECK_THROWS_AS(check_no_floats(bad, "test"), Error);
}
