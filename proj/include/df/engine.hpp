#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "df/cache.hpp"
#include "df/column.hpp"
#include "df/dataset.hpp"
#include "df/error.hpp"
#include "df/expr.hpp"
#include "df/manifest.hpp"
#include "df/sidecar.hpp"
#include "df/storage.hpp"
#include "df/tar.hpp"
#include "df/udf.hpp"
#include "df/value.hpp"

namespace df {

struct EtlSource {
    std::string archive_uri;
    std::string sidecar_uri;  // empty: in-archive .json members only
    std::string format = "jsonl";
};

struct EngineOptions {
    uint64_t coalesce_gap = kDefaultCoalesceGap;
    bool coalesce = true;
    uint32_t workers = 1;
    uint32_t read_ahead_batches = 4;
    bool coerce_text = false;
};

// Cache-aware payload fetcher. Misses within one source are grouped and read
// with coalesced ranged GETs; every fetched member lands in the cache under
// its own key so later single-sample lookups hit.
class SampleFetcher {
  public:
    SampleFetcher(Storage& storage, SampleCache* cache, const EngineOptions& opts)
        : storage_(storage), cache_(cache), opts_(opts) {}

    // refs[i] -> payload[i]; uids must be the matching cache keys.
    std::vector<std::vector<uint8_t>> fetch(const std::vector<SampleRef>& refs,
                                            const std::vector<std::string>& uids) {
        std::vector<std::vector<uint8_t>> out(refs.size());
        std::map<std::string, std::vector<size_t>> misses_by_source;
        for (size_t i = 0; i < refs.size(); ++i) {
            if (refs[i].length == 0) continue;  // empty member, nothing to read
            if (cache_) {
                if (auto hit = cache_->probe(uids[i], refs[i].length)) {
                    out[i] = std::move(*hit);
                    continue;
                }
            }
            misses_by_source[refs[i].source_uri].push_back(i);
        }
        for (auto& [source, rows] : misses_by_source) {
            auto uri = SourceUri::parse(source);
            std::vector<ByteRange> ranges;
            ranges.reserve(rows.size());
            for (size_t i : rows) ranges.push_back(ByteRange{refs[i].offset, refs[i].length});
            auto payloads = opts_.coalesce
                                ? storage_.read_ranges_coalesced(uri, ranges, opts_.coalesce_gap)
                                : storage_.read_ranges_naive(uri, ranges);
            for (size_t k = 0; k < rows.size(); ++k) {
                if (cache_) cache_->insert(uids[rows[k]], payloads[k]);
                out[rows[k]] = std::move(payloads[k]);
            }
        }
        return out;
    }

  private:
    Storage& storage_;
    SampleCache* cache_;
    EngineOptions opts_;
};

namespace engine_detail {

inline std::string join_key_of(const std::string& member_path) {
    auto slash = member_path.find_last_of('/');
    std::string base =
        slash == std::string::npos ? member_path : member_path.substr(slash + 1);
    auto dot = base.find_last_of('.');
    return dot == std::string::npos || dot == 0 ? base : base.substr(0, dot);
}

inline bool is_json_member(const std::string& member_path) {
    return member_path.size() > 5 && member_path.compare(member_path.size() - 5, 5, ".json") == 0;
}

// Bounded FIFO used to pipeline payload fetching ahead of UDF execution.
template <class T>
class BoundedQueue {
  public:
    explicit BoundedQueue(size_t cap) : cap_(cap) {}

    void push(T item) {
        std::unique_lock<std::mutex> lk(mu_);
        cv_push_.wait(lk, [&] { return items_.size() < cap_ || closed_; });
        if (closed_) return;
        items_.push_back(std::move(item));
        cv_pop_.notify_one();
    }

    bool pop(T& out) {
        std::unique_lock<std::mutex> lk(mu_);
        cv_pop_.wait(lk, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return false;
        out = std::move(items_.front());
        items_.pop_front();
        cv_push_.notify_one();
        return true;
    }

    void close() {
        std::lock_guard<std::mutex> lk(mu_);
        closed_ = true;
        cv_pop_.notify_all();
        cv_push_.notify_all();
    }

  private:
    size_t cap_;
    std::mutex mu_;
    std::condition_variable cv_push_;
    std::condition_variable cv_pop_;
    std::deque<T> items_;
    bool closed_ = false;
};

}  // namespace engine_detail

// Everything a row-local stage needs to run (or re-run incrementally).
struct StageOp {
    OpKind kind = OpKind::filter;
    std::string expr_src;     // filter / mutate
    std::string new_column;   // mutate
    std::map<std::string, Value> params;
    UdfSpec udf;              // add_signals
};

class Engine {
  public:
    Engine(Storage& storage, SampleCache* cache = nullptr, EngineOptions opts = {})
        : storage_(storage), cache_(cache), opts_(opts) {}

    Storage& storage() { return storage_; }
    const EngineOptions& options() const { return opts_; }

    // -- ETL -------------------------------------------------------------------

    // One row per regular-file member; metadata comes from sidecar objects
    // and/or in-archive `<key>.json` members. Samples without metadata get
    // all-null attributes; metadata without a sample is an error.
    StageResult etl_build(const std::vector<EtlSource>& sources) {
        struct PendingRow {
            SampleRef ref;
            const json* attrs = nullptr;
        };
        std::vector<PendingRow> rows;
        std::deque<json> attr_storage;  // stable addresses for PendingRow::attrs

        // Collected per archive so joins are archive-scoped.
        for (const auto& source : sources) {
            auto uri = SourceUri::parse(source.archive_uri);
            auto index = index_tar(storage_, uri);

            std::vector<const TarMember*> samples;
            std::map<std::string, const TarMember*> json_members;  // key -> member
            std::map<std::string, size_t> key_to_sample;           // key -> index into samples
            for (const auto& m : index) {
                if (engine_detail::is_json_member(m.member_path)) {
                    std::string key = engine_detail::join_key_of(m.member_path);
                    if (!json_members.emplace(key, &m).second)
                        raise(Errc::duplicate_key,
                              "two in-archive metadata members for key '" + key + "'");
                } else {
                    std::string key = engine_detail::join_key_of(m.member_path);
                    auto [it, fresh] = key_to_sample.emplace(key, samples.size());
                    if (!fresh)
                        raise(Errc::duplicate_key, "members '" +
                                                       samples[it->second]->member_path + "' and '" +
                                                       m.member_path + "' share join key '" + key +
                                                       "'");
                    samples.push_back(&m);
                }
            }

            std::map<std::string, json> metadata;
            if (!source.sidecar_uri.empty()) {
                auto text = read_whole(source.sidecar_uri);
                for (auto& row : parse_sidecar(text, source.format)) {
                    if (!metadata.emplace(row.key, std::move(row.attrs)).second)
                        raise(Errc::duplicate_key,
                              "sidecar has two rows for key '" + row.key + "'");
                }
            }
            for (const auto& [key, member] : json_members) {
                auto payload = read_member(storage_, uri, *member);
                json j = json::parse(payload.begin(), payload.end(), nullptr, false);
                if (j.is_discarded() || !j.is_object())
                    raise(Errc::corrupt,
                          "in-archive metadata '" + member->member_path + "' is not a JSON object");
                if (!metadata.emplace(key, std::move(j)).second)
                    raise(Errc::duplicate_key, "metadata for key '" + key +
                                                   "' appears in both sidecar and archive");
            }
            for (const auto& [key, attrs] : metadata)
                if (!key_to_sample.count(key))
                    raise(Errc::join_key_missing,
                          "metadata key '" + key + "' has no sample member in " +
                              source.archive_uri);

            for (size_t i = 0; i < samples.size(); ++i) {
                const TarMember& m = *samples[i];
                PendingRow row;
                row.ref = SampleRef{source.archive_uri, m.member_path, m.data_offset,
                                    m.data_length};
                auto it = metadata.find(engine_detail::join_key_of(m.member_path));
                if (it != metadata.end()) {
                    attr_storage.push_back(it->second);
                    row.attrs = &attr_storage.back();
                }
                rows.push_back(std::move(row));
            }
        }

        // field inventory, alphabetical for a deterministic schema
        std::set<std::string> field_names;
        for (const auto& row : rows)
            if (row.attrs)
                for (const auto& [k, v] : row.attrs->items()) field_names.insert(k);

        static const json null_json = nullptr;
        std::map<std::string, ColumnType> field_types;
        for (const auto& field : field_names) {
            if (is_reserved_column(field) || !valid_column_name(field))
                raise(Errc::schema_conflict, "metadata field '" + field +
                                                 "' is not a usable column name");
            std::vector<const json*> values;
            values.reserve(rows.size());
            for (const auto& row : rows) {
                if (!row.attrs) continue;
                auto it = row.attrs->find(field);
                values.push_back(it == row.attrs->end() ? &null_json : &*it);
            }
            field_types[field] = infer_type(values, field, opts_.coerce_text);
        }

        StageResult result;
        result.schema.fields = {Field{kUidColumn, utf8_type(), false},
                                Field{kRefSourceUri, utf8_type(), false},
                                Field{kRefMemberPath, utf8_type(), false},
                                Field{kRefOffset, int64_type(), false},
                                Field{kRefLength, int64_type(), false}};
        for (const auto& field : field_names)
            result.schema.fields.push_back(Field{field, field_types[field], true});

        std::vector<ColumnVector> cols;
        for (const auto& f : result.schema.fields) cols.emplace_back(f.type, f.nullable);
        for (const auto& row : rows) {
            cols[0].append_string(uid(row.ref));
            cols[1].append_string(row.ref.source_uri);
            cols[2].append_string(row.ref.member_path);
            cols[3].append_int(static_cast<int64_t>(row.ref.offset));
            cols[4].append_int(static_cast<int64_t>(row.ref.length));
            size_t c = 5;
            for (const auto& field : field_names) {
                const json* v = &null_json;
                if (row.attrs) {
                    auto it = row.attrs->find(field);
                    if (it != row.attrs->end()) v = &*it;
                }
                append_value(cols[c], sidecar_value(*v, field_types[field], opts_.coerce_text));
                ++c;
            }
        }

        result.row_count = rows.size();
        for (auto& col : cols) result.columns.push_back(StageColumn{std::move(col), ""});
        json sources_json = json::array();
        for (const auto& s : sources)
            sources_json.push_back(json{{"archive", s.archive_uri},
                                        {"format", s.format},
                                        {"sidecar", s.sidecar_uri}});
        result.descriptor = OperationDescriptor::etl(sources_json, opts_.coerce_text);
        return result;
    }

    // -- row-local stages --------------------------------------------------------

    StageResult filter(const Dataset& parent, const std::string& parent_fp,
                       const std::string& expr_src, const std::map<std::string, Value>& params) {
        auto compiled = compile_expr(expr_src, parent.schema, params);
        if (compiled.type.tag != TypeTag::boolean)
            raise(Errc::type_mismatch,
                  "filter predicate must be bool, got " + compiled.type.to_string());

        StageResult result;
        result.schema = parent.schema;
        std::vector<ColumnVector> cols;
        for (const auto& f : parent.schema.fields) cols.emplace_back(f.type, f.nullable);
        DatasetRow row(parent, 0);
        for (uint64_t i = 0; i < parent.rows(); ++i) {
            row.set_row(i);
            Value keep = eval_expr(*compiled.ast, row);
            if (keep.k == Value::K::boolean && keep.b)  // null drops the row
                for (size_t c = 0; c < cols.size(); ++c) cols[c].append_from(parent.columns[c], i);
        }
        result.row_count = cols.empty() ? 0 : cols[0].rows();
        for (auto& col : cols) result.columns.push_back(StageColumn{std::move(col), ""});
        result.parents = {parent_fp};
        result.descriptor =
            OperationDescriptor::filter(compiled.canonical, descriptor_params(compiled, params));
        return result;
    }

    StageResult mutate(const Dataset& parent, const DatasetManifest& parent_manifest,
                       const std::string& new_column, const std::string& expr_src,
                       const std::map<std::string, Value>& params) {
        if (parent.schema.has(new_column))
            raise(Errc::column_exists, "column '" + new_column + "' already exists");
        if (!valid_column_name(new_column))
            raise(Errc::bad_args, "invalid column name '" + new_column + "'");
        auto compiled = compile_expr(expr_src, parent.schema, params);

        StageResult result;
        result.schema = parent.schema;
        result.schema.fields.push_back(Field{new_column, compiled.type, true});
        for (const auto& f : parent.schema.fields)
            result.columns.push_back(cow_column(parent_manifest, f.name));

        ColumnVector out(compiled.type, true);
        DatasetRow row(parent, 0);
        for (uint64_t i = 0; i < parent.rows(); ++i) {
            row.set_row(i);
            append_value(out, eval_expr(*compiled.ast, row));
        }
        result.columns.push_back(StageColumn{std::move(out), ""});
        result.row_count = parent.rows();
        result.parents = {parent_manifest.fingerprint};
        result.descriptor = OperationDescriptor::mutate(new_column, compiled.canonical,
                                                        descriptor_params(compiled, params));
        return result;
    }

    StageResult add_signals(const Dataset& parent, const DatasetManifest& parent_manifest,
                            const UdfSpec& udf) {
        check_udf_spec(parent.schema, udf);
        std::vector<uint64_t> all_rows(parent.rows());
        for (uint64_t i = 0; i < parent.rows(); ++i) all_rows[i] = i;
        uint64_t udf_rows = 0;
        auto outputs = run_udf_over_rows(parent, udf, all_rows, udf_rows);

        StageResult result;
        result.schema = parent.schema;
        for (const auto& f : parent.schema.fields)
            result.columns.push_back(cow_column(parent_manifest, f.name));
        for (size_t c = 0; c < udf.outputs.size(); ++c) {
            result.schema.fields.push_back(Field{udf.outputs[c].name, udf.outputs[c].type, true});
            ColumnVector col(udf.outputs[c].type, true);
            for (uint64_t i = 0; i < parent.rows(); ++i) append_value(col, outputs[c][i]);
            result.columns.push_back(StageColumn{std::move(col), ""});
        }
        result.row_count = parent.rows();
        result.parents = {parent_manifest.fingerprint};
        result.descriptor = descriptor_for(udf);
        result.udf_rows = udf_rows;
        return result;
    }

    // -- global stages -----------------------------------------------------------

    StageResult order_limit(const Dataset& parent, const std::string& parent_fp,
                            const std::string& key, bool descending, uint64_t limit) {
        int key_idx = parent.schema.find(key);
        if (key_idx < 0) raise(Errc::unknown_column, key);
        const auto& key_type = parent.schema.fields[static_cast<size_t>(key_idx)].type;
        if (!(key_type.is_numeric() || key_type.tag == TypeTag::utf8))
            raise(Errc::non_orderable_type,
                  "cannot order by " + key_type.to_string() + " column '" + key + "'");

        const auto& key_col = parent.columns[static_cast<size_t>(key_idx)];
        const auto& uid_col = parent.column(kUidColumn);
        std::vector<uint64_t> order(parent.rows());
        for (uint64_t i = 0; i < parent.rows(); ++i) order[i] = i;
        auto key_less = [&](uint64_t a, uint64_t b) {
            bool va = key_col.valid(a), vb = key_col.valid(b);
            if (va != vb) return va;  // nulls last either direction
            if (va) {
                int cmp = 0;
                switch (key_type.tag) {
                    case TypeTag::int64: {
                        auto x = key_col.int_at(a), y = key_col.int_at(b);
                        cmp = x < y ? -1 : (x == y ? 0 : 1);
                        break;
                    }
                    case TypeTag::float64: {
                        auto x = key_col.float_at(a), y = key_col.float_at(b);
                        cmp = x < y ? -1 : (x == y ? 0 : 1);
                        break;
                    }
                    default: {
                        cmp = key_col.string_at(a).compare(key_col.string_at(b));
                        cmp = cmp < 0 ? -1 : (cmp == 0 ? 0 : 1);
                        break;
                    }
                }
                if (descending) cmp = -cmp;
                if (cmp != 0) return cmp < 0;
            }
            return uid_col.string_at(a) < uid_col.string_at(b);
        };
        std::sort(order.begin(), order.end(), key_less);
        if (order.size() > limit) order.resize(limit);

        StageResult result;
        result.schema = parent.schema;
        std::vector<ColumnVector> cols;
        for (const auto& f : parent.schema.fields) cols.emplace_back(f.type, f.nullable);
        for (uint64_t i : order)
            for (size_t c = 0; c < cols.size(); ++c) cols[c].append_from(parent.columns[c], i);
        result.row_count = order.size();
        for (auto& col : cols) result.columns.push_back(StageColumn{std::move(col), ""});
        result.parents = {parent_fp};
        result.descriptor = OperationDescriptor::order_limit(key, descending, limit);
        return result;
    }

    StageResult union_(const Dataset& a, const std::string& a_fp, const Dataset& b,
                       const std::string& b_fp) {
        if (!(a.schema == b.schema))
            raise(Errc::schema_mismatch, "union inputs have different schemas");
        auto a_uids = a.uid_set();
        for (uint64_t i = 0; i < b.rows(); ++i)
            if (a_uids.count(b.uid_at(i)))
                raise(Errc::duplicate_uid, b.uid_at(i));

        StageResult result;
        result.schema = a.schema;
        std::vector<ColumnVector> cols;
        for (const auto& f : a.schema.fields) cols.emplace_back(f.type, f.nullable);
        for (uint64_t i = 0; i < a.rows(); ++i)
            for (size_t c = 0; c < cols.size(); ++c) cols[c].append_from(a.columns[c], i);
        for (uint64_t i = 0; i < b.rows(); ++i)
            for (size_t c = 0; c < cols.size(); ++c) cols[c].append_from(b.columns[c], i);
        result.row_count = a.rows() + b.rows();
        for (auto& col : cols) result.columns.push_back(StageColumn{std::move(col), ""});
        result.parents = {a_fp, b_fp};
        result.descriptor = OperationDescriptor::union_();
        return result;
    }

    // -- incremental application ---------------------------------------------------

    // Applies a row-local stage to only the rows of new_parent whose uid was
    // not in old_parent, reusing old_output for everything that survived.
    // The resulting row set is identical to a full recomputation.
    StageResult incremental_apply(const StageOp& op,
                                  const std::unordered_set<std::string>& old_parent_uids,
                                  const Dataset& old_output,
                                  const OperationDescriptor& old_output_descriptor,
                                  const Dataset& new_parent,
                                  const DatasetManifest& new_parent_manifest) {
        if (!(op.kind == OpKind::filter || op.kind == OpKind::mutate ||
              op.kind == OpKind::add_signals))
            raise(Errc::not_row_local,
                  op_kind_name(op.kind) + " is a global stage and must fully recompute");

        // delta: rows of new_parent unseen by the old run
        std::vector<uint64_t> delta;
        auto new_uids = new_parent.uid_set();
        for (uint64_t i = 0; i < new_parent.rows(); ++i)
            if (!old_parent_uids.count(new_parent.uid_at(i))) delta.push_back(i);

        switch (op.kind) {
            case OpKind::filter: {
                auto compiled = compile_expr(op.expr_src, new_parent.schema, op.params);
                if (compiled.type.tag != TypeTag::boolean)
                    raise(Errc::type_mismatch, "filter predicate must be bool");
                auto descriptor = OperationDescriptor::filter(
                    compiled.canonical, descriptor_params(compiled, op.params));
                require_descriptor_match(descriptor, old_output_descriptor);

                StageResult result;
                result.schema = new_parent.schema;
                std::vector<ColumnVector> cols;
                for (const auto& f : result.schema.fields) cols.emplace_back(f.type, f.nullable);
                for (uint64_t i = 0; i < old_output.rows(); ++i)
                    if (new_uids.count(old_output.uid_at(i)))
                        for (size_t c = 0; c < cols.size(); ++c)
                            cols[c].append_from(old_output.columns[c], i);
                DatasetRow row(new_parent, 0);
                for (uint64_t i : delta) {
                    row.set_row(i);
                    Value keep = eval_expr(*compiled.ast, row);
                    if (keep.k == Value::K::boolean && keep.b)
                        for (size_t c = 0; c < cols.size(); ++c)
                            cols[c].append_from(new_parent.columns[c], i);
                }
                result.row_count = cols.empty() ? 0 : cols[0].rows();
                for (auto& col : cols) result.columns.push_back(StageColumn{std::move(col), ""});
                result.parents = {new_parent_manifest.fingerprint};
                result.descriptor = descriptor;
                return result;
            }
            case OpKind::mutate: {
                auto compiled = compile_expr(op.expr_src, new_parent.schema, op.params);
                auto descriptor = OperationDescriptor::mutate(
                    op.new_column, compiled.canonical, descriptor_params(compiled, op.params));
                require_descriptor_match(descriptor, old_output_descriptor);
                check_old_output_schema(old_output, new_parent, {op.new_column});

                StageResult result;
                result.schema = new_parent.schema;
                result.schema.fields.push_back(Field{op.new_column, compiled.type, true});
                std::vector<ColumnVector> cols;
                for (const auto& f : result.schema.fields) cols.emplace_back(f.type, f.nullable);
                append_surviving_rows(cols, old_output, new_uids);
                DatasetRow row(new_parent, 0);
                for (uint64_t i : delta) {
                    row.set_row(i);
                    for (size_t c = 0; c + 1 < cols.size(); ++c)
                        cols[c].append_from(new_parent.columns[c], i);
                    append_value(cols.back(), eval_expr(*compiled.ast, row));
                }
                result.row_count = cols[0].rows();
                for (auto& col : cols) result.columns.push_back(StageColumn{std::move(col), ""});
                result.parents = {new_parent_manifest.fingerprint};
                result.descriptor = descriptor;
                return result;
            }
            default: {  // add_signals
                check_udf_spec(new_parent.schema, op.udf);
                auto descriptor = descriptor_for(op.udf);
                require_descriptor_match(descriptor, old_output_descriptor);
                std::vector<std::string> out_names;
                for (const auto& o : op.udf.outputs) out_names.push_back(o.name);
                check_old_output_schema(old_output, new_parent, out_names);

                uint64_t udf_rows = 0;
                auto outputs = run_udf_over_rows(new_parent, op.udf, delta, udf_rows);

                StageResult result;
                result.schema = new_parent.schema;
                for (size_t c = 0; c < op.udf.outputs.size(); ++c)
                    result.schema.fields.push_back(
                        Field{op.udf.outputs[c].name, op.udf.outputs[c].type, true});
                std::vector<ColumnVector> cols;
                for (const auto& f : result.schema.fields) cols.emplace_back(f.type, f.nullable);
                append_surviving_rows(cols, old_output, new_uids);
                size_t parent_width = new_parent.schema.fields.size();
                for (size_t k = 0; k < delta.size(); ++k) {
                    uint64_t i = delta[k];
                    for (size_t c = 0; c < parent_width; ++c)
                        cols[c].append_from(new_parent.columns[c], i);
                    for (size_t c = 0; c < op.udf.outputs.size(); ++c)
                        append_value(cols[parent_width + c], outputs[c][k]);
                }
                result.row_count = cols[0].rows();
                for (auto& col : cols) result.columns.push_back(StageColumn{std::move(col), ""});
                result.parents = {new_parent_manifest.fingerprint};
                result.descriptor = descriptor;
                result.udf_rows = udf_rows;
                return result;
            }
        }
    }

    // Descriptor a StageOp would produce against a given schema (used by the
    // pipeline runner for staleness checks without executing).
    OperationDescriptor plan_descriptor(const StageOp& op, const Schema& schema) {
        switch (op.kind) {
            case OpKind::filter: {
                auto compiled = compile_expr(op.expr_src, schema, op.params);
                return OperationDescriptor::filter(compiled.canonical,
                                                   descriptor_params(compiled, op.params));
            }
            case OpKind::mutate: {
                auto compiled = compile_expr(op.expr_src, schema, op.params);
                return OperationDescriptor::mutate(op.new_column, compiled.canonical,
                                                   descriptor_params(compiled, op.params));
            }
            case OpKind::add_signals:
                return descriptor_for(op.udf);
            default:
                raise(Errc::not_row_local, "plan_descriptor expects a row-local stage");
        }
    }

  private:
    std::string read_whole(const std::string& uri_text) {
        auto uri = SourceUri::parse(uri_text);
        uint64_t size = storage_.stat(uri);
        if (size == 0) return "";
        auto bytes = storage_.read_range(uri, ByteRange{0, size});
        return std::string(bytes.begin(), bytes.end());
    }

    static std::map<std::string, std::string> descriptor_params(
        const CompiledExpr& compiled, const std::map<std::string, Value>& params) {
        std::map<std::string, std::string> out;
        for (const auto& name : compiled.param_names)
            out[name] = value_to_canonical_text(params.at(name));
        return out;
    }

    OperationDescriptor descriptor_for(const UdfSpec& udf) {
        return OperationDescriptor::add_signals(udf.udf_id, udf.udf_version, udf.command_sha256(),
                                                udf.outputs_json(), udf.input_columns,
                                                udf.needs_sample_bytes);
    }

    static void require_descriptor_match(const OperationDescriptor& fresh,
                                         const OperationDescriptor& old) {
        if (!(fresh == old))
            raise(Errc::descriptor_mismatch,
                  "old output was produced by a different operation: " + old.canonical() +
                      " vs " + fresh.canonical());
    }

    static void check_old_output_schema(const Dataset& old_output, const Dataset& new_parent,
                                        const std::vector<std::string>& added) {
        Schema stripped = old_output.schema;
        for (auto it = added.rbegin(); it != added.rend(); ++it) {
            if (stripped.fields.empty() || stripped.fields.back().name != *it)
                raise(Errc::descriptor_mismatch, "old output lacks column '" + *it + "'");
            stripped.fields.pop_back();
        }
        if (!(stripped == new_parent.schema))
            raise(Errc::descriptor_mismatch, "parent schema changed; full recompute required");
    }

    static StageColumn cow_column(const DatasetManifest& parent, const std::string& name) {
        auto it = parent.column_files.find(name);
        if (it == parent.column_files.end())
            raise(Errc::corrupt, "parent manifest lacks column '" + name + "'");
        StageColumn col;
        col.cow_path = it->second;
        return col;
    }

    static void append_surviving_rows(std::vector<ColumnVector>& cols, const Dataset& old_output,
                                      const std::unordered_set<std::string>& new_uids) {
        for (uint64_t i = 0; i < old_output.rows(); ++i)
            if (new_uids.count(old_output.uid_at(i)))
                for (size_t c = 0; c < cols.size(); ++c)
                    cols[c].append_from(old_output.columns[c], i);
    }

    void check_udf_spec(const Schema& schema, const UdfSpec& udf) {
        if (udf.outputs.empty()) raise(Errc::bad_args, "UDF declares no output columns");
        if (udf.batch_size < 1) raise(Errc::bad_args, "UDF batch_size must be >= 1");
        for (const auto& o : udf.outputs) {
            if (schema.has(o.name))
                raise(Errc::column_exists, "UDF output column '" + o.name + "' already exists");
            if (!valid_column_name(o.name))
                raise(Errc::bad_args, "invalid UDF output column name '" + o.name + "'");
        }
        for (const auto& in : udf.input_columns)
            if (!schema.has(in)) raise(Errc::unknown_column, "UDF input column '" + in + "'");
    }

    // Runs the UDF over the given rows (absolute indices into `ds`), with
    // payload fetching pipelined ahead of execution and one runner per
    // worker. Returns values[output][k] aligned with `rows`.
    std::vector<std::vector<Value>> run_udf_over_rows(const Dataset& ds, const UdfSpec& udf,
                                                      const std::vector<uint64_t>& rows,
                                                      uint64_t& udf_rows_out) {
        struct FetchedBatch {
            size_t first = 0;  // index into `rows`
            std::vector<UdfBatchRow> batch;
            std::vector<std::vector<uint8_t>> payloads;
        };

        std::vector<std::vector<Value>> out(udf.outputs.size());
        for (auto& col : out) col.resize(rows.size());
        if (rows.empty()) {
            udf_rows_out = 0;
            return out;
        }

        SampleFetcher fetcher(storage_, cache_, opts_);
        const size_t batch_size = udf.batch_size;
        const size_t n_batches = (rows.size() + batch_size - 1) / batch_size;
        engine_detail::BoundedQueue<std::shared_ptr<FetchedBatch>> queue(
            std::max<uint32_t>(1, opts_.read_ahead_batches));

        std::mutex err_mu;
        std::exception_ptr first_error;
        auto note_error = [&](std::exception_ptr e) {
            std::lock_guard<std::mutex> lk(err_mu);
            if (!first_error) first_error = e;
        };

        std::thread producer([&] {
            try {
                for (size_t b = 0; b < n_batches; ++b) {
                    auto fetched = std::make_shared<FetchedBatch>();
                    fetched->first = b * batch_size;
                    size_t end = std::min(rows.size(), fetched->first + batch_size);
                    std::vector<SampleRef> refs;
                    std::vector<std::string> uids;
                    for (size_t k = fetched->first; k < end; ++k) {
                        uint64_t i = rows[k];
                        UdfBatchRow r;
                        r.uid = ds.uid_at(i);
                        for (const auto& in : udf.input_columns) r.attrs[in] = ds.value_at(i, in);
                        fetched->batch.push_back(std::move(r));
                        if (udf.needs_sample_bytes) {
                            refs.push_back(ds.ref_at(i));
                            uids.push_back(ds.uid_at(i));
                        }
                    }
                    if (udf.needs_sample_bytes) {
                        fetched->payloads = fetcher.fetch(refs, uids);
                        for (size_t k = 0; k < fetched->batch.size(); ++k)
                            fetched->batch[k].sample = &fetched->payloads[k];
                    }
                    queue.push(std::move(fetched));
                }
            } catch (...) {
                note_error(std::current_exception());
            }
            queue.close();
        });

        const uint32_t workers = std::max<uint32_t>(1, opts_.workers);
        std::atomic<uint64_t> udf_rows{0};
        std::vector<std::thread> pool;
        for (uint32_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                std::unique_ptr<UdfRunner> runner;
                try {
                    runner = make_udf_runner(udf);
                    std::shared_ptr<FetchedBatch> fetched;
                    while (queue.pop(fetched)) {
                        auto values = runner->run(fetched->batch);
                        udf_rows.fetch_add(fetched->batch.size());
                        for (size_t c = 0; c < out.size(); ++c)
                            for (size_t k = 0; k < fetched->batch.size(); ++k)
                                out[c][fetched->first + k] = std::move(values[c][k]);
                    }
                    runner->finish();
                } catch (...) {
                    note_error(std::current_exception());
                    queue.close();
                }
            });
        }
        producer.join();
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
        udf_rows_out = udf_rows.load();
        return out;
    }

    Storage& storage_;
    SampleCache* cache_;
    EngineOptions opts_;
};

}  // namespace df
