#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "df/dataset.hpp"
#include "df/error.hpp"
#include "df/manifest.hpp"

namespace df {

namespace fs = std::filesystem;

struct VersionRef {
    std::string name;
    std::optional<uint32_t> version;  // nullopt = latest

    // "name", "name@3" or "name@latest"
    static VersionRef parse(const std::string& text) {
        VersionRef r;
        auto at = text.find('@');
        if (at == std::string::npos) {
            r.name = text;
            return r;
        }
        r.name = text.substr(0, at);
        std::string v = text.substr(at + 1);
        if (v == "latest" || v.empty()) return r;
        uint32_t n = 0;
        for (char c : v) {
            if (c < '0' || c > '9') raise(Errc::bad_args, "bad version in ref '" + text + "'");
            n = n * 10 + static_cast<uint32_t>(c - '0');
        }
        r.version = n;
        return r;
    }

    std::string to_string() const {
        return version ? name + "@" + std::to_string(*version) : name;
    }
};

inline bool valid_dataset_name(const std::string& name) {
    if (name.empty()) return false;
    if (!(std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_')) return false;
    for (char c : name)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

struct CatalogOptions {
    std::chrono::milliseconds lock_timeout{30'000};
};

struct LogEntry {
    uint32_t version = 0;
    std::string fingerprint;
    std::string kind;
    uint64_t row_count = 0;
    std::string created_at;
    std::vector<std::string> parents;        // fingerprints
    std::vector<std::string> parent_names;   // resolved owners, "?" when unknown
};

// Immutable, named, versioned dataset registry rooted at one directory:
//   <root>/catalog.json
//   <root>/datasets/<name>/v<k>/{manifest.json, columns/*.col}
// Versions are published by atomic rename; a .lock file serializes writers.
class Catalog {
  public:
    explicit Catalog(fs::path root, CatalogOptions opts = {})
        : root_(std::move(root)), opts_(opts) {
        if (!fs::exists(index_path()))
            raise(Errc::missing, root_.string() + " is not a catalog root (missing catalog.json)");
    }

    static Catalog init(const fs::path& root, CatalogOptions opts = {}) {
        if (fs::exists(root) && !fs::is_directory(root))
            raise(Errc::non_empty_dir, root.string() + " exists and is not a directory");
        if (fs::is_directory(root) && !fs::is_empty(root))
            raise(Errc::non_empty_dir, root.string() + " is not empty");
        std::error_code ec;
        fs::create_directories(root / "datasets", ec);
        if (ec) raise(Errc::io_failure, "cannot create " + root.string() + ": " + ec.message());
        json idx{{"format", 1}, {"datasets", json::object()}};
        write_file(root / "catalog.json", canonical_dump(idx));
        return Catalog(root, opts);
    }

    const fs::path& root() const { return root_; }

    // -- save ----------------------------------------------------------------

    DatasetManifest save(const StageResult& result, const std::string& name) {
        if (!valid_dataset_name(name)) raise(Errc::bad_args, "invalid dataset name '" + name + "'");
        std::string fp = df::fingerprint(result.parents, result.descriptor, result.schema);

        WriterLock lock(root_ / ".lock", opts_.lock_timeout);
        json idx = read_index();
        json& entry = idx["datasets"][name];
        if (entry.is_null()) entry = json{{"max_version", 0}, {"versions", json::array()}};
        for (const auto& v : entry["versions"])
            if (v.at("fingerprint") == fp)
                return read_manifest(version_dir(name, v.at("version").get<uint32_t>()));

        uint32_t version = entry["max_version"].get<uint32_t>() + 1;
        std::string rel_dir = "datasets/" + name + "/v" + std::to_string(version);

        DatasetManifest m;
        m.name = name;
        m.version = version;
        m.fingerprint = fp;
        m.schema = result.schema;
        m.row_count = result.row_count;
        m.parents = result.parents;
        m.operation = result.descriptor;
        m.created_at = now_rfc3339();

        fs::path tmp = root_ / ("datasets/" + name + "/.tmp-v" + std::to_string(version) + "-" +
                                std::to_string(::getpid()));
        fs::create_directories(tmp / "columns");
        try {
            for (size_t i = 0; i < result.schema.fields.size(); ++i) {
                const auto& field = result.schema.fields[i];
                const auto& col = result.columns[i];
                if (!col.cow_path.empty()) {
                    if (!fs::exists(root_ / col.cow_path))
                        raise(Errc::invariant_violation,
                              "copy-on-write source missing: " + col.cow_path);
                    m.column_files[field.name] = col.cow_path;
                } else {
                    auto bytes = encode_column(col.data);
                    std::string rel = rel_dir + "/columns/" + field.name + ".col";
                    write_file(tmp / "columns" / (field.name + ".col"),
                               std::string(bytes.begin(), bytes.end()));
                    m.column_files[field.name] = rel;
                }
            }
            write_manifest(m, tmp);
            fs::rename(tmp, root_ / rel_dir);
        } catch (...) {
            std::error_code ec;
            fs::remove_all(tmp, ec);
            throw;
        }

        entry["max_version"] = version;
        entry["versions"].push_back(json{{"fingerprint", fp}, {"version", version}});
        write_index(idx);
        return m;
    }

    // -- lookup ----------------------------------------------------------------

    DatasetManifest resolve(const VersionRef& ref) const {
        json idx = read_index();
        auto it = idx["datasets"].find(ref.name);
        if (it == idx["datasets"].end() || it->at("versions").empty())
            raise(Errc::dataset_not_found, "no dataset named '" + ref.name + "'");
        uint32_t version;
        if (ref.version) {
            version = *ref.version;
            bool present = false;
            for (const auto& v : it->at("versions"))
                if (v.at("version").get<uint32_t>() == version) present = true;
            if (!present)
                raise(Errc::dataset_not_found, ref.name + "@" + std::to_string(version));
        } else {
            version = 0;
            for (const auto& v : it->at("versions"))
                version = std::max(version, v.at("version").get<uint32_t>());
        }
        return read_manifest(version_dir(ref.name, version));
    }

    DatasetManifest resolve(const std::string& ref_text) const {
        return resolve(VersionRef::parse(ref_text));
    }

    std::vector<std::string> names() const {
        json idx = read_index();
        std::vector<std::string> out;
        for (const auto& [name, entry] : idx["datasets"].items())
            if (!entry.at("versions").empty()) out.push_back(name);
        return out;
    }

    // Owner of a fingerprint, if some saved version produced it.
    std::optional<VersionRef> find_by_fingerprint(const std::string& fp) const {
        json idx = read_index();
        for (const auto& [name, entry] : idx["datasets"].items())
            for (const auto& v : entry.at("versions"))
                if (v.at("fingerprint") == fp)
                    return VersionRef{name, v.at("version").get<uint32_t>()};
        return std::nullopt;
    }

    std::vector<LogEntry> log(const std::string& name) const {
        json idx = read_index();
        auto it = idx["datasets"].find(name);
        if (it == idx["datasets"].end() || it->at("versions").empty())
            raise(Errc::dataset_not_found, "no dataset named '" + name + "'");
        std::vector<LogEntry> out;
        for (const auto& v : it->at("versions")) {
            auto m = read_manifest(version_dir(name, v.at("version").get<uint32_t>()));
            LogEntry e;
            e.version = m.version;
            e.fingerprint = m.fingerprint;
            e.kind = m.operation.kind_name();
            e.row_count = m.row_count;
            e.created_at = m.created_at;
            e.parents = m.parents;
            for (const auto& p : m.parents) {
                auto owner = find_by_fingerprint(p);
                e.parent_names.push_back(owner ? owner->to_string() : "?");
            }
            out.push_back(std::move(e));
        }
        std::sort(out.begin(), out.end(),
                  [](const LogEntry& a, const LogEntry& b) { return a.version > b.version; });
        return out;
    }

    // -- staleness ---------------------------------------------------------------

    // A named dataset is stale when recomputing its fingerprint against the
    // *latest* versions of its parents' names no longer matches what is
    // stored. Returns stale datasets downstream of `root` in dependency
    // order (root included if itself stale).
    std::vector<VersionRef> find_stale(const VersionRef& root) const {
        auto all = names();
        std::map<std::string, DatasetManifest> latest;
        std::map<std::string, std::string> owner_of;  // fingerprint -> name (any version)
        json idx = read_index();
        for (const auto& name : all) {
            latest.emplace(name, resolve(VersionRef{name, std::nullopt}));
            for (const auto& v : idx["datasets"][name]["versions"])
                owner_of[v.at("fingerprint").get<std::string>()] = name;
        }

        // parent edges between names, via fingerprint ownership
        std::map<std::string, std::vector<std::string>> parent_names;
        for (const auto& [name, m] : latest) {
            for (const auto& p : m.parents) {
                auto it = owner_of.find(p);
                if (it != owner_of.end()) parent_names[name].push_back(it->second);
            }
        }

        auto is_stale = [&](const std::string& name) {
            const auto& m = latest.at(name);
            std::vector<std::string> parents;
            for (const auto& p : m.parents) {
                auto it = owner_of.find(p);
                parents.push_back(it != owner_of.end() ? latest.at(it->second).fingerprint : p);
            }
            return df::fingerprint(parents, m.operation, m.schema) != m.fingerprint;
        };

        // descendants of root (root itself included)
        if (!latest.count(root.name))
            raise(Errc::dataset_not_found, "no dataset named '" + root.name + "'");
        std::set<std::string> descendants{root.name};
        bool grew = true;
        while (grew) {
            grew = false;
            for (const auto& [name, ps] : parent_names)
                if (!descendants.count(name))
                    for (const auto& p : ps)
                        if (descendants.count(p)) {
                            descendants.insert(name);
                            grew = true;
                        }
        }

        // topological order over names restricted to descendants
        std::vector<std::string> order;
        std::set<std::string> placed;
        while (placed.size() < descendants.size()) {
            bool progress = false;
            for (const auto& name : descendants) {
                if (placed.count(name)) continue;
                bool ready = true;
                for (const auto& p : parent_names[name])
                    if (descendants.count(p) && !placed.count(p)) ready = false;
                if (ready) {
                    order.push_back(name);
                    placed.insert(name);
                    progress = true;
                }
            }
            if (!progress) raise(Errc::invariant_violation, "provenance graph has a cycle");
        }

        std::vector<VersionRef> out;
        for (const auto& name : order)
            if (is_stale(name)) out.push_back(VersionRef{name, latest.at(name).version});
        return out;
    }

    // -- gc ---------------------------------------------------------------------

    uint64_t gc(const std::vector<VersionRef>& keep) {
        WriterLock lock(root_ / ".lock", opts_.lock_timeout);
        json idx = read_index();

        // fingerprint -> (name, version) across every recorded version
        std::map<std::string, std::pair<std::string, uint32_t>> by_fp;
        for (const auto& [name, entry] : idx["datasets"].items())
            for (const auto& v : entry.at("versions"))
                by_fp[v.at("fingerprint").get<std::string>()] = {name,
                                                                 v.at("version").get<uint32_t>()};

        // ancestor closure of the kept refs
        std::set<std::pair<std::string, uint32_t>> reachable;
        std::vector<DatasetManifest> frontier;
        for (const auto& ref : keep) frontier.push_back(resolve(ref));
        while (!frontier.empty()) {
            auto m = frontier.back();
            frontier.pop_back();
            if (!reachable.insert({m.name, m.version}).second) continue;
            for (const auto& p : m.parents) {
                auto it = by_fp.find(p);
                if (it != by_fp.end())
                    frontier.push_back(read_manifest(version_dir(it->second.first, it->second.second)));
            }
        }

        uint64_t freed = 0;
        for (auto& [name, entry] : idx["datasets"].items()) {
            json kept = json::array();
            for (const auto& v : entry.at("versions")) {
                uint32_t version = v.at("version").get<uint32_t>();
                if (reachable.count({name, version})) {
                    kept.push_back(v);
                    continue;
                }
                fs::path dir = version_dir(name, version);
                for (const auto& f : fs::recursive_directory_iterator(dir))
                    if (f.is_regular_file()) freed += f.file_size();
                fs::remove_all(dir);
            }
            entry["versions"] = kept;  // max_version keeps its high-water mark
        }
        write_index(idx);
        return freed;
    }

    Dataset load_dataset(const DatasetManifest& m) const {
        Dataset ds;
        ds.schema = m.schema;
        for (const auto& field : m.schema.fields) {
            auto it = m.column_files.find(field.name);
            if (it == m.column_files.end())
                raise(Errc::corrupt, "manifest lacks column file for '" + field.name + "'");
            auto bytes = read_file(root_ / it->second);
            ds.columns.push_back(decode_column(bytes));
        }
        if (ds.rows() != m.row_count) raise(Errc::corrupt, "row_count differs from column files");
        ds.check_invariants();
        return ds;
    }

    Dataset load_dataset(const VersionRef& ref) const { return load_dataset(resolve(ref)); }

  private:
    class WriterLock {
      public:
        WriterLock(fs::path path, std::chrono::milliseconds timeout) : path_(std::move(path)) {
            auto deadline = std::chrono::steady_clock::now() + timeout;
            while (true) {
                fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
                if (fd_ >= 0) break;
                if (std::chrono::steady_clock::now() >= deadline)
                    raise(Errc::catalog_locked, "another writer holds " + path_.string());
                std::this_thread::sleep_for(std::chrono::milliseconds(25));
            }
            std::string pid = std::to_string(::getpid()) + "\n";
            [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
        }

        ~WriterLock() {
            if (fd_ >= 0) {
                ::close(fd_);
                ::unlink(path_.c_str());
            }
        }

        WriterLock(const WriterLock&) = delete;
        WriterLock& operator=(const WriterLock&) = delete;

      private:
        fs::path path_;
        int fd_ = -1;
    };

    fs::path index_path() const { return root_ / "catalog.json"; }

    fs::path version_dir(const std::string& name, uint32_t version) const {
        return root_ / "datasets" / name / ("v" + std::to_string(version));
    }

    json read_index() const {
        auto text = read_file(index_path());
        json j = json::parse(text, nullptr, false);
        if (j.is_discarded()) raise(Errc::corrupt, "unparseable catalog.json");
        return j;
    }

    void write_index(const json& idx) const {
        fs::path tmp = index_path();
        tmp += ".tmp";
        write_file(tmp, canonical_dump(idx));
        fs::rename(tmp, index_path());
    }

    static void write_file(const fs::path& path, const std::string& data) {
        std::ofstream out(path, std::ios::binary);
        if (!out) raise(Errc::io_failure, "cannot write " + path.string());
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        out.close();
        if (!out) raise(Errc::io_failure, "short write to " + path.string());
    }

    static std::vector<uint8_t> read_file(const fs::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) raise(Errc::missing, "cannot read " + path.string());
        std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
        return data;
    }

    fs::path root_;
    CatalogOptions opts_;
};

}  // namespace df
