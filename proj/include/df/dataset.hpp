#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "df/column.hpp"
#include "df/error.hpp"
#include "df/expr.hpp"
#include "df/manifest.hpp"
#include "df/value.hpp"

namespace df {

// A fully materialized dataset version: schema plus parallel columns.
struct Dataset {
    Schema schema;
    std::vector<ColumnVector> columns;

    uint64_t rows() const { return columns.empty() ? 0 : columns.front().rows(); }

    const ColumnVector& column(const std::string& name) const {
        int i = schema.find(name);
        if (i < 0) raise(Errc::unknown_column, name);
        return columns[static_cast<size_t>(i)];
    }

    ColumnVector& column(const std::string& name) {
        int i = schema.find(name);
        if (i < 0) raise(Errc::unknown_column, name);
        return columns[static_cast<size_t>(i)];
    }

    const std::string& uid_at(uint64_t row) const { return column(kUidColumn).string_at(row); }

    SampleRef ref_at(uint64_t row) const {
        SampleRef r;
        r.source_uri = column(kRefSourceUri).string_at(row);
        r.member_path = column(kRefMemberPath).string_at(row);
        r.offset = static_cast<uint64_t>(column(kRefOffset).int_at(row));
        r.length = static_cast<uint64_t>(column(kRefLength).int_at(row));
        return r;
    }

    Value value_at(uint64_t row, const std::string& col) const {
        return df::column_value(column(col), row);
    }

    std::unordered_set<std::string> uid_set() const {
        std::unordered_set<std::string> s;
        const auto& col = column(kUidColumn);
        for (uint64_t i = 0; i < col.rows(); ++i) s.insert(col.string_at(i));
        return s;
    }

    void check_invariants() const {
        schema.validate();
        if (schema.fields.size() != columns.size())
            raise(Errc::invariant_violation, "schema/column count mismatch");
        uint64_t n = rows();
        for (size_t i = 0; i < columns.size(); ++i) {
            columns[i].check_invariants();
            if (columns[i].rows() != n)
                raise(Errc::invariant_violation,
                      "column '" + schema.fields[i].name + "' row count differs");
            if (columns[i].type() != schema.fields[i].type)
                raise(Errc::invariant_violation,
                      "column '" + schema.fields[i].name + "' type differs from schema");
        }
        const auto& uids = column(kUidColumn);
        std::unordered_set<std::string> seen;
        for (uint64_t i = 0; i < n; ++i) {
            if (!uids.valid(i)) raise(Errc::invariant_violation, "_uid has a null row");
            if (!seen.insert(uids.string_at(i)).second)
                raise(Errc::duplicate_uid, uids.string_at(i));
        }
    }
};

// Evaluates expressions against one dataset row.
class DatasetRow final : public RowSource {
  public:
    DatasetRow(const Dataset& ds, uint64_t row) : ds_(ds), row_(row) {}

    void set_row(uint64_t row) { row_ = row; }

    Value column_value(const std::string& name) const override {
        int i = ds_.schema.find(name);
        if (i < 0) return Value::null();
        return df::column_value(ds_.columns[static_cast<size_t>(i)], row_);
    }

  private:
    const Dataset& ds_;
    uint64_t row_;
};

// Output of one engine stage, before the catalog assigns it a name/version.
// A column either carries data or points at a parent's on-disk file
// (copy-on-write; `cow_path` is relative to the catalog root).
struct StageColumn {
    ColumnVector data;
    std::string cow_path;
};

struct StageResult {
    Schema schema;
    std::vector<StageColumn> columns;
    uint64_t row_count = 0;
    std::vector<std::string> parents;  // fingerprints, in operation order
    OperationDescriptor descriptor;
    uint64_t udf_rows = 0;  // rows handed to a UDF while producing this stage
};

}  // namespace df
