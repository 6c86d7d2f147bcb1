// Reference subprocess UDF speaking the framed stdin/stdout protocol:
// 4-byte big-endian length, then a UTF-8 JSON body. By default it declares a
// single int64 column `echo_len` holding the decoded sample size per row.
//
// Flags exercising failure paths:
//   --name N --type T --dim D   declare a different output column
//   --crash-after K             exit(3) after answering K batches
//   --bad-arity                 reply with one value too few per batch
//   --sleep-ms M                stall M milliseconds before each reply

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

using json = nlohmann::json;

namespace {

size_t base64_decoded_len(const std::string& b64) {
    size_t chars = 0, pad = 0;
    for (char c : b64) {
        if (c == '=') ++pad;
        else ++chars;
    }
    return (chars + pad) / 4 * 3 - pad;
}

bool read_frame(json& out) {
    unsigned char header[4];
    if (std::fread(header, 1, 4, stdin) != 4) return false;
    size_t len = (size_t(header[0]) << 24) | (size_t(header[1]) << 16) |
                 (size_t(header[2]) << 8) | size_t(header[3]);
    std::string body(len, '\0');
    if (std::fread(body.data(), 1, len, stdin) != len) return false;
    out = json::parse(body, nullptr, false);
    return !out.is_discarded();
}

void write_frame(const json& body) {
    std::string payload = body.dump();
    unsigned char header[4] = {static_cast<unsigned char>(payload.size() >> 24),
                               static_cast<unsigned char>(payload.size() >> 16),
                               static_cast<unsigned char>(payload.size() >> 8),
                               static_cast<unsigned char>(payload.size())};
    std::fwrite(header, 1, 4, stdout);
    std::fwrite(payload.data(), 1, payload.size(), stdout);
    std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
    std::string name = "echo_len";
    std::string type = "int64";
    int dim = 0;
    long crash_after = -1;
    bool bad_arity = false;
    long sleep_ms = 0;

    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        auto next = [&]() -> std::string {
            if (i + 1 >= argc) {
                std::fprintf(stderr, "missing value for %s\n", arg.c_str());
                std::exit(2);
            }
            return argv[++i];
        };
        if (arg == "--name") name = next();
        else if (arg == "--type") type = next();
        else if (arg == "--dim") dim = std::stoi(next());
        else if (arg == "--crash-after") crash_after = std::stol(next());
        else if (arg == "--bad-arity") bad_arity = true;
        else if (arg == "--sleep-ms") sleep_ms = std::stol(next());
        else {
            std::fprintf(stderr, "unknown flag %s\n", arg.c_str());
            return 2;
        }
    }

    json hello;
    if (!read_frame(hello) || hello.value("type", "") != "hello") {
        std::fprintf(stderr, "expected hello frame\n");
        return 1;
    }
    write_frame(json{{"type", "schema"},
                     {"columns", json::array({json{{"name", name}, {"type", type}, {"dim", dim}}})}});

    long answered = 0;
    json frame;
    while (read_frame(frame)) {
        std::string t = frame.value("type", "");
        if (t == "end") return 0;
        if (t != "batch") {
            std::fprintf(stderr, "unexpected frame type '%s'\n", t.c_str());
            return 1;
        }
        if (sleep_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
        if (crash_after >= 0 && answered >= crash_after) {
            std::fprintf(stderr, "simulated crash after %ld batches\n", answered);
            return 3;
        }
        json values = json::array();
        for (const auto& row : frame["rows"]) {
            size_t len = 0;
            if (row.contains("sample_b64"))
                len = base64_decoded_len(row["sample_b64"].get<std::string>());
            if (type == "fvec") {
                json vec = json::array();
                for (int d = 0; d < dim; ++d) vec.push_back(d == 0 ? double(len) : 0.0);
                values.push_back(vec);
            } else if (type == "utf8") {
                values.push_back(std::to_string(len));
            } else if (type == "float64") {
                values.push_back(double(len));
            } else {
                values.push_back(int64_t(len));
            }
        }
        if (bad_arity && !values.empty()) values.erase(values.size() - 1);
        write_frame(json{{"type", "result"}, {"values", json::array({values})}});
        ++answered;
    }
    std::fprintf(stderr, "input closed before end frame\n");
    return 1;
}
