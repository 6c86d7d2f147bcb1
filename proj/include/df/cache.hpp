#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "df/column.hpp"
#include "df/error.hpp"
#include "df/storage.hpp"

namespace df {

namespace fs = std::filesystem;

struct CacheConfig {
    fs::path local_dir;
    std::optional<fs::path> shared_dir;
    uint64_t max_local_bytes = 1ull << 30;

    // DF_CACHE_DIR / DF_SHARED_CACHE_DIR / DF_CACHE_MAX_BYTES override the defaults.
    static CacheConfig from_env(const fs::path& default_local) {
        CacheConfig cfg;
        cfg.local_dir = default_local;
        if (const char* e = std::getenv("DF_CACHE_DIR")) cfg.local_dir = e;
        if (const char* e = std::getenv("DF_SHARED_CACHE_DIR")) {
            if (*e) cfg.shared_dir = fs::path(e);
        }
        if (const char* e = std::getenv("DF_CACHE_MAX_BYTES")) {
            uint64_t v = std::strtoull(e, nullptr, 10);
            if (v > 0) cfg.max_local_bytes = v;
        }
        return cfg;
    }
};

struct CacheTierStats {
    std::atomic<uint64_t> hits{0};
    std::atomic<uint64_t> misses{0};
};

// Two-tier content cache for sample payloads, keyed by the sample uid.
// Entries live at objects/<h[0:2]>/<h[2:4]>/<h>; publication is temp-file plus
// atomic rename so concurrent processes never observe partial entries. An
// append-only journal records access order for LRU eviction of the local
// tier; the shared tier is never auto-evicted.
class SampleCache {
  public:
    explicit SampleCache(CacheConfig cfg) : cfg_(std::move(cfg)) {
        fs::create_directories(cfg_.local_dir / "objects");
        if (cfg_.shared_dir) fs::create_directories(*cfg_.shared_dir / "objects");
    }

    const CacheConfig& config() const { return cfg_; }
    CacheTierStats& local_stats() { return local_; }
    CacheTierStats& shared_stats() { return shared_; }

    std::vector<uint8_t> get_or_fetch(const std::string& key, const SampleRef& ref,
                                      Storage& storage) {
        auto flight = lock_key(key);
        std::lock_guard<std::mutex> guard(*flight);
        if (auto hit = probe(key, ref.length)) return std::move(*hit);
        std::vector<uint8_t> payload;
        if (ref.length > 0)
            payload = storage.read_range(SourceUri::parse(ref.source_uri),
                                         ByteRange{ref.offset, ref.length});
        insert(key, payload);
        return payload;
    }

    // Local then shared lookup with promotion; nullopt means both tiers missed.
    // Entries whose size does not match are dropped and treated as misses so
    // the caller refetches.
    std::optional<std::vector<uint8_t>> probe(const std::string& key, uint64_t expected_len) {
        if (auto data = read_entry(local_path(key), expected_len)) {
            local_.hits.fetch_add(1);
            touch(key);
            return data;
        }
        local_.misses.fetch_add(1);
        if (cfg_.shared_dir) {
            if (auto data = read_entry(shared_path(key), expected_len)) {
                shared_.hits.fetch_add(1);
                publish(local_path(key), *data);
                touch(key);
                return data;
            }
            shared_.misses.fetch_add(1);
        }
        return std::nullopt;
    }

    void insert(const std::string& key, const std::vector<uint8_t>& payload) {
        if (cfg_.shared_dir) publish(shared_path(key), payload);
        publish(local_path(key), payload);
        touch(key);
    }

    // Removes least-recently-used local entries until the tier fits the cap.
    uint64_t evict_to_limit() {
        std::lock_guard<std::mutex> guard(journal_mu_);
        auto recency = replay_journal();

        struct Entry {
            std::string key;
            uint64_t size;
            uint64_t last_access;
        };
        std::vector<Entry> entries;
        uint64_t total = 0;
        fs::path objects = cfg_.local_dir / "objects";
        for (const auto& f : fs::recursive_directory_iterator(objects)) {
            if (!f.is_regular_file()) continue;
            std::string key = f.path().filename().string();
            uint64_t size = f.file_size();
            auto it = recency.find(key);
            entries.push_back({key, size, it == recency.end() ? 0 : it->second});
            total += size;
        }

        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return std::tie(a.last_access, a.key) < std::tie(b.last_access, b.key);
        });

        uint64_t freed = 0;
        size_t victim = 0;
        while (total > cfg_.max_local_bytes && victim < entries.size()) {
            fs::remove(local_path(entries[victim].key));
            total -= entries[victim].size;
            freed += entries[victim].size;
            ++victim;
        }

        // compact the journal to the survivors, oldest first
        std::vector<const Entry*> survivors;
        for (size_t i = victim; i < entries.size(); ++i) survivors.push_back(&entries[i]);
        std::ofstream out(journal_path(), std::ios::binary | std::ios::trunc);
        for (const auto* e : survivors) out << e->key << "\n";
        return freed;
    }

    uint64_t local_size_bytes() const {
        uint64_t total = 0;
        for (const auto& f : fs::recursive_directory_iterator(cfg_.local_dir / "objects"))
            if (f.is_regular_file()) total += f.file_size();
        return total;
    }

    fs::path local_path(const std::string& key) const { return entry_path(cfg_.local_dir, key); }

    fs::path shared_path(const std::string& key) const {
        return entry_path(*cfg_.shared_dir, key);
    }

  private:
    static fs::path entry_path(const fs::path& base, const std::string& key) {
        return base / "objects" / key.substr(0, 2) / key.substr(2, 2) / key;
    }

    static std::optional<std::vector<uint8_t>> read_entry(const fs::path& path,
                                                          uint64_t expected_len) {
        std::error_code ec;
        if (!fs::exists(path, ec)) return std::nullopt;
        auto size = fs::file_size(path, ec);
        if (ec) return std::nullopt;
        if (size != expected_len) {
            fs::remove(path, ec);  // corrupt entry: evict and let the caller refetch
            return std::nullopt;
        }
        std::ifstream in(path, std::ios::binary);
        if (!in) return std::nullopt;
        std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
        if (data.size() != expected_len) return std::nullopt;
        return data;
    }

    void publish(const fs::path& path, const std::vector<uint8_t>& payload) {
        fs::create_directories(path.parent_path());
        fs::path tmp = path;
        tmp += ".tmp." + std::to_string(::getpid()) + "." +
               std::to_string(tmp_counter_.fetch_add(1));
        {
            std::ofstream out(tmp, std::ios::binary);
            if (!out) raise(Errc::io_failure, "cannot write cache entry " + tmp.string());
            out.write(reinterpret_cast<const char*>(payload.data()),
                      static_cast<std::streamsize>(payload.size()));
        }
        std::error_code ec;
        fs::rename(tmp, path, ec);
        if (ec) {
            fs::remove(tmp, ec);
            raise(Errc::io_failure, "cannot publish cache entry " + path.string());
        }
    }

    void touch(const std::string& key) {
        std::lock_guard<std::mutex> guard(journal_mu_);
        std::ofstream out(journal_path(), std::ios::binary | std::ios::app);
        out << key << "\n";
    }

    fs::path journal_path() const { return cfg_.local_dir / "journal.log"; }

    // key -> last access sequence number
    std::map<std::string, uint64_t> replay_journal() const {
        std::map<std::string, uint64_t> recency;
        std::ifstream in(journal_path(), std::ios::binary);
        std::string line;
        uint64_t seq = 0;
        while (std::getline(in, line))
            if (!line.empty()) recency[line] = ++seq;
        return recency;
    }

    std::shared_ptr<std::mutex> lock_key(const std::string& key) {
        std::lock_guard<std::mutex> guard(flight_mu_);
        auto& slot = in_flight_[key];
        if (!slot) slot = std::make_shared<std::mutex>();
        return slot;
    }

    CacheConfig cfg_;
    CacheTierStats local_;
    CacheTierStats shared_;
    std::mutex journal_mu_;
    std::mutex flight_mu_;
    std::map<std::string, std::shared_ptr<std::mutex>> in_flight_;
    std::atomic<uint64_t> tmp_counter_{0};
};

}  // namespace df
