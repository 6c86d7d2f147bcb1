#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "df/column.hpp"
#include "df/error.hpp"
#include "df/sha256.hpp"
#include "df/value.hpp"

namespace df {

struct UdfOutput {
    std::string name;
    ColumnType type;
};

struct UdfSpec {
    std::string udf_id;
    std::string udf_version;
    enum class Mode { builtin, subprocess } mode = Mode::builtin;
    std::vector<std::string> command;  // argv, subprocess mode only
    std::vector<UdfOutput> outputs;
    bool needs_sample_bytes = true;
    std::vector<std::string> input_columns;
    uint32_t batch_size = 64;
    std::chrono::milliseconds batch_timeout{300'000};

    std::string command_sha256() const {
        Sha256 h;
        for (const auto& a : command) {
            h.update(a);
            h.update("\0", 1);
        }
        return h.hex_digest();
    }

    json outputs_json() const {
        json arr = json::array();
        for (const auto& o : outputs)
            arr.push_back(json{{"dim", o.type.dim},
                               {"name", o.name},
                               {"type", o.type.tag == TypeTag::fvec ? "fvec" : o.type.to_string()}});
        return arr;
    }
};

struct UdfBatchRow {
    std::string uid;
    const std::vector<uint8_t>* sample = nullptr;  // set when needs_sample_bytes
    std::map<std::string, Value> attrs;
};

class UdfRunner {
  public:
    virtual ~UdfRunner() = default;
    // Returns values[output_column][row], one value per input row.
    virtual std::vector<std::vector<Value>> run(const std::vector<UdfBatchRow>& rows) = 0;
    virtual void finish() {}
};

// ---------------------------------------------------------------------------
// Builtins: byte_len, sha256_hex, hist_embed
// ---------------------------------------------------------------------------

inline std::vector<double> byte_histogram(const std::vector<uint8_t>& payload) {
    std::vector<double> hist(256, 0.0);
    for (uint8_t b : payload) hist[b] += 1.0;
    if (!payload.empty())
        for (auto& h : hist) h /= static_cast<double>(payload.size());
    return hist;
}

inline UdfSpec builtin_udf_spec(const std::string& id) {
    UdfSpec spec;
    spec.udf_id = id;
    spec.udf_version = "1";
    spec.mode = UdfSpec::Mode::builtin;
    spec.needs_sample_bytes = true;
    if (id == "byte_len") {
        spec.outputs = {{"byte_len", int64_type()}};
    } else if (id == "sha256_hex") {
        spec.outputs = {{"sha256_hex", utf8_type()}};
    } else if (id == "hist_embed") {
        spec.outputs = {{"embed", fvec_type(256)}};
    } else {
        raise(Errc::bad_args, "unknown builtin UDF '" + id + "'");
    }
    return spec;
}

inline bool is_builtin_udf(const std::string& id) {
    return id == "byte_len" || id == "sha256_hex" || id == "hist_embed";
}

class BuiltinUdfRunner final : public UdfRunner {
  public:
    explicit BuiltinUdfRunner(const UdfSpec& spec) : spec_(spec) {}

    std::vector<std::vector<Value>> run(const std::vector<UdfBatchRow>& rows) override {
        std::vector<std::vector<Value>> out(1);
        out[0].reserve(rows.size());
        for (const auto& row : rows) {
            static const std::vector<uint8_t> empty;
            const auto& payload = row.sample ? *row.sample : empty;
            if (spec_.udf_id == "byte_len") {
                out[0].push_back(Value::of_int(static_cast<int64_t>(payload.size())));
            } else if (spec_.udf_id == "sha256_hex") {
                out[0].push_back(Value::of_text(sha256_hex(payload)));
            } else {  // hist_embed
                out[0].push_back(Value::of_vec(byte_histogram(payload)));
            }
        }
        return out;
    }

  private:
    UdfSpec spec_;
};

// ---------------------------------------------------------------------------
// Subprocess plugin protocol: every frame is a 4-byte big-endian length
// followed by a UTF-8 JSON body, over the child's stdin/stdout.
//
//   -> {"type":"hello","proto":1,"input_columns":[...],"needs_sample_bytes":b}
//   <- {"type":"schema","columns":[{"name":..,"type":..,"dim":..}]}
//   -> {"type":"batch","rows":[{"uid":..,"sample_b64":..,"attrs":{..}}]}
//   <- {"type":"result","values":[[col0...],[col1...]]}
//   -> {"type":"end"}            child exits 0
// ---------------------------------------------------------------------------

class SubprocessUdfRunner final : public UdfRunner {
  public:
    explicit SubprocessUdfRunner(const UdfSpec& spec) : spec_(spec) {}

    ~SubprocessUdfRunner() override {
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            int status = 0;
            ::waitpid(pid_, &status, 0);
            pid_ = -1;
        }
        close_fds();
    }

    std::vector<std::vector<Value>> run(const std::vector<UdfBatchRow>& rows) override {
        ensure_started();
        json batch{{"type", "batch"}, {"rows", json::array()}};
        for (const auto& row : rows) {
            json r{{"uid", row.uid}, {"attrs", json::object()}};
            if (spec_.needs_sample_bytes)
                r["sample_b64"] = row.sample ? base64_encode(*row.sample) : "";
            for (const auto& [k, v] : row.attrs) r["attrs"][k] = value_to_json(v);
            batch["rows"].push_back(std::move(r));
        }
        write_frame(batch);
        json reply = read_frame();
        if (reply.value("type", "") != "result" || !reply.contains("values") ||
            !reply["values"].is_array())
            violation("expected a result frame, got: " + reply.dump().substr(0, 200));
        const json& values = reply["values"];
        if (values.size() != spec_.outputs.size())
            raise(Errc::udf_bad_output, "result has " + std::to_string(values.size()) +
                                            " columns, expected " +
                                            std::to_string(spec_.outputs.size()));
        std::vector<std::vector<Value>> out(spec_.outputs.size());
        for (size_t c = 0; c < spec_.outputs.size(); ++c) {
            if (!values[c].is_array() || values[c].size() != rows.size())
                raise(Errc::udf_bad_output,
                      "output column '" + spec_.outputs[c].name + "' has wrong row count");
            out[c].reserve(rows.size());
            for (const auto& v : values[c]) {
                try {
                    out[c].push_back(value_from_json(v, spec_.outputs[c].type));
                } catch (const Error&) {
                    raise(Errc::udf_bad_output, "output column '" + spec_.outputs[c].name +
                                                    "' has a value of the wrong type: " + v.dump());
                }
            }
        }
        return out;
    }

    void finish() override {
        if (pid_ <= 0) return;
        write_frame(json{{"type", "end"}});
        ::close(in_fd_);
        in_fd_ = -1;
        int status = 0;
        if (::waitpid(pid_, &status, 0) < 0) raise(Errc::udf_crashed, "waitpid failed");
        pid_ = -1;
        drain_stderr(0);
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
            raise(Errc::udf_crashed, describe_exit(status) + stderr_tail());
    }

  private:
    void ensure_started() {
        if (pid_ > 0) return;
        spawn();
        json hello{{"type", "hello"},
                   {"proto", 1},
                   {"input_columns", spec_.input_columns},
                   {"needs_sample_bytes", spec_.needs_sample_bytes}};
        write_frame(hello);
        json schema = read_frame();
        if (schema.value("type", "") != "schema" || !schema.contains("columns") ||
            !schema["columns"].is_array())
            violation("expected a schema frame, got: " + schema.dump().substr(0, 200));
        const json& cols = schema["columns"];
        if (cols.size() != spec_.outputs.size())
            violation("UDF declared " + std::to_string(cols.size()) + " columns, spec has " +
                      std::to_string(spec_.outputs.size()));
        for (size_t i = 0; i < spec_.outputs.size(); ++i) {
            const auto& want = spec_.outputs[i];
            std::string name = cols[i].value("name", "");
            std::string type = cols[i].value("type", "");
            uint32_t dim = cols[i].value("dim", 0u);
            std::string want_type = want.type.tag == TypeTag::fvec ? "fvec" : want.type.to_string();
            if (name != want.name || type != want_type ||
                (want.type.tag == TypeTag::fvec && dim != want.type.dim))
                violation("UDF schema mismatch on column " + std::to_string(i) + ": declared " +
                          name + ":" + type + "(" + std::to_string(dim) + "), spec wants " +
                          want.name + ":" + want_type + "(" + std::to_string(want.type.dim) + ")");
        }
    }

    void spawn() {
        if (spec_.command.empty()) raise(Errc::bad_args, "subprocess UDF without a command");
        ::signal(SIGPIPE, SIG_IGN);
        int to_child[2], from_child[2], err[2];
        if (::pipe(to_child) || ::pipe(from_child) || ::pipe(err))
            raise(Errc::io_failure, "pipe() failed");
        pid_ = ::fork();
        if (pid_ < 0) raise(Errc::io_failure, "fork() failed");
        if (pid_ == 0) {
            ::dup2(to_child[0], 0);
            ::dup2(from_child[1], 1);
            ::dup2(err[1], 2);
            for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1], err[0], err[1]})
                ::close(fd);
            std::vector<char*> argv;
            for (const auto& a : spec_.command) argv.push_back(const_cast<char*>(a.c_str()));
            argv.push_back(nullptr);
            ::execvp(argv[0], argv.data());
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        ::close(err[1]);
        in_fd_ = to_child[1];
        out_fd_ = from_child[0];
        err_fd_ = err[0];
        ::fcntl(err_fd_, F_SETFL, O_NONBLOCK);
    }

    void write_frame(const json& body) {
        std::string payload = body.dump();
        uint8_t header[4] = {static_cast<uint8_t>(payload.size() >> 24),
                             static_cast<uint8_t>(payload.size() >> 16),
                             static_cast<uint8_t>(payload.size() >> 8),
                             static_cast<uint8_t>(payload.size())};
        write_all(header, 4);
        write_all(reinterpret_cast<const uint8_t*>(payload.data()), payload.size());
    }

    void write_all(const uint8_t* data, size_t len) {
        size_t off = 0;
        while (off < len) {
            drain_stderr(0);
            ssize_t n = ::write(in_fd_, data + off, len - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                crashed("write to UDF failed");
            }
            off += static_cast<size_t>(n);
        }
    }

    json read_frame() {
        uint8_t header[4];
        read_all(header, 4);
        uint64_t len = (uint64_t(header[0]) << 24) | (uint64_t(header[1]) << 16) |
                       (uint64_t(header[2]) << 8) | uint64_t(header[3]);
        if (len > (64ull << 20)) violation("oversized frame (" + std::to_string(len) + " bytes)");
        std::string body(len, '\0');
        read_all(reinterpret_cast<uint8_t*>(body.data()), len);
        json j = json::parse(body, nullptr, false);
        if (j.is_discarded()) violation("frame body is not valid JSON");
        return j;
    }

    void read_all(uint8_t* data, size_t len) {
        auto deadline = std::chrono::steady_clock::now() + spec_.batch_timeout;
        size_t off = 0;
        while (off < len) {
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) {
                ::kill(pid_, SIGKILL);
                raise(Errc::udf_timeout,
                      "UDF did not answer within " + std::to_string(spec_.batch_timeout.count()) +
                          " ms" + stderr_tail());
            }
            struct pollfd fds[2] = {{out_fd_, POLLIN, 0}, {err_fd_, POLLIN, 0}};
            int rc = ::poll(fds, 2, static_cast<int>(std::min<int64_t>(left.count(), 1000)));
            if (rc < 0 && errno != EINTR) crashed("poll failed");
            if (fds[1].revents & (POLLIN | POLLHUP)) drain_stderr(0);
            if (fds[0].revents & (POLLIN | POLLHUP)) {
                ssize_t n = ::read(out_fd_, data + off, len - off);
                if (n < 0) {
                    if (errno == EINTR) continue;
                    crashed("read from UDF failed");
                }
                if (n == 0) crashed("UDF closed its output mid-frame");
                off += static_cast<size_t>(n);
            }
        }
    }

    void drain_stderr(int timeout_ms) {
        if (err_fd_ < 0) return;
        struct pollfd fd = {err_fd_, POLLIN, 0};
        while (::poll(&fd, 1, timeout_ms) > 0 && (fd.revents & (POLLIN | POLLHUP))) {
            char buf[4096];
            ssize_t n = ::read(err_fd_, buf, sizeof(buf));
            if (n <= 0) break;
            stderr_.append(buf, static_cast<size_t>(n));
            if (stderr_.size() > 65536) stderr_.erase(0, stderr_.size() - 65536);
        }
    }

    std::string stderr_tail() const {
        if (stderr_.empty()) return "";
        std::string tail = stderr_.size() > 2048 ? stderr_.substr(stderr_.size() - 2048) : stderr_;
        return "; stderr: " + tail;
    }

    [[noreturn]] void crashed(const std::string& what) {
        int status = 0;
        std::string detail = what;
        if (pid_ > 0 && ::waitpid(pid_, &status, WNOHANG) == pid_) {
            detail += " (" + describe_exit(status) + ")";
            pid_ = -1;
        }
        drain_stderr(50);
        raise(Errc::udf_crashed, detail + stderr_tail());
    }

    [[noreturn]] void violation(const std::string& what) {
        raise(Errc::protocol_violation, what + stderr_tail());
    }

    static std::string describe_exit(int status) {
        if (WIFEXITED(status)) return "UDF exited with code " + std::to_string(WEXITSTATUS(status));
        if (WIFSIGNALED(status)) return "UDF killed by signal " + std::to_string(WTERMSIG(status));
        return "UDF ended abnormally";
    }

    void close_fds() {
        for (int* fd : {&in_fd_, &out_fd_, &err_fd_}) {
            if (*fd >= 0) ::close(*fd);
            *fd = -1;
        }
    }

    UdfSpec spec_;
    pid_t pid_ = -1;
    int in_fd_ = -1;
    int out_fd_ = -1;
    int err_fd_ = -1;
    std::string stderr_;
};

inline std::unique_ptr<UdfRunner> make_udf_runner(const UdfSpec& spec) {
    if (spec.mode == UdfSpec::Mode::builtin) return std::make_unique<BuiltinUdfRunner>(spec);
    return std::make_unique<SubprocessUdfRunner>(spec);
}

// Runs a UDF over a single standalone payload (no dataset involved) and
// returns one value per output column.
inline std::map<std::string, Value> run_udf_single(const UdfSpec& spec,
                                                   const std::vector<uint8_t>& payload) {
    auto runner = make_udf_runner(spec);
    UdfBatchRow row;
    row.uid = sha256_hex(payload);
    row.sample = &payload;
    auto values = runner->run({row});
    runner->finish();
    std::map<std::string, Value> out;
    for (size_t i = 0; i < spec.outputs.size(); ++i) out[spec.outputs[i].name] = values[i][0];
    return out;
}

}  // namespace df
