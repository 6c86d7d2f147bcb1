#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace df {

enum class Errc {
    // user errors: bad input on the command line or in an expression
    syntax_error,
    unknown_column,
    unknown_param,
    type_mismatch,
    dim_mismatch,
    column_exists,
    non_orderable_type,
    not_row_local,
    dataset_not_found,
    non_empty_dir,
    bad_shard,
    scheme_unsupported,
    bad_args,

    // data errors: sources, archives, sidecars or UDFs misbehaving
    bad_magic,
    bad_checksum,
    truncated_archive,
    unsupported_header,
    range_out_of_bounds,
    join_key_missing,
    duplicate_key,
    schema_conflict,
    ragged_vector,
    schema_mismatch,
    duplicate_uid,
    udf_crashed,
    udf_bad_output,
    protocol_violation,
    udf_timeout,
    descriptor_mismatch,
    corrupt,
    corrupt_entry,
    bad_version,
    truncated,
    invariant_violation,

    // I/O errors
    not_found,
    io_failure,
    http_range_unsupported,
    catalog_locked,
    missing,
};

// Process exit classes used by the CLI.
enum class ErrClass : int { user = 2, data = 3, io = 4 };

constexpr ErrClass error_class(Errc c) {
    switch (c) {
        case Errc::syntax_error:
        case Errc::unknown_column:
        case Errc::unknown_param:
        case Errc::type_mismatch:
        case Errc::dim_mismatch:
        case Errc::column_exists:
        case Errc::non_orderable_type:
        case Errc::not_row_local:
        case Errc::dataset_not_found:
        case Errc::non_empty_dir:
        case Errc::bad_shard:
        case Errc::scheme_unsupported:
        case Errc::bad_args:
            return ErrClass::user;
        case Errc::not_found:
        case Errc::io_failure:
        case Errc::http_range_unsupported:
        case Errc::catalog_locked:
        case Errc::missing:
            return ErrClass::io;
        default:
            return ErrClass::data;
    }
}

constexpr std::string_view errc_name(Errc c) {
    switch (c) {
        case Errc::syntax_error: return "SyntaxError";
        case Errc::unknown_column: return "UnknownColumn";
        case Errc::unknown_param: return "UnknownParam";
        case Errc::type_mismatch: return "TypeMismatch";
        case Errc::dim_mismatch: return "DimMismatch";
        case Errc::column_exists: return "ColumnExists";
        case Errc::non_orderable_type: return "NonOrderableType";
        case Errc::not_row_local: return "NotRowLocal";
        case Errc::dataset_not_found: return "NotFound";
        case Errc::non_empty_dir: return "NonEmptyDir";
        case Errc::bad_shard: return "BadShard";
        case Errc::scheme_unsupported: return "SchemeUnsupported";
        case Errc::bad_args: return "BadArgs";
        case Errc::bad_magic: return "BadMagic";
        case Errc::bad_checksum: return "BadChecksum";
        case Errc::truncated_archive: return "TruncatedArchive";
        case Errc::unsupported_header: return "UnsupportedHeader";
        case Errc::range_out_of_bounds: return "RangeOutOfBounds";
        case Errc::join_key_missing: return "JoinKeyMissing";
        case Errc::duplicate_key: return "DuplicateKey";
        case Errc::schema_conflict: return "SchemaConflict";
        case Errc::ragged_vector: return "RaggedVector";
        case Errc::schema_mismatch: return "SchemaMismatch";
        case Errc::duplicate_uid: return "DuplicateUid";
        case Errc::udf_crashed: return "UdfCrashed";
        case Errc::udf_bad_output: return "UdfBadOutput";
        case Errc::protocol_violation: return "ProtocolViolation";
        case Errc::udf_timeout: return "Timeout";
        case Errc::descriptor_mismatch: return "DescriptorMismatch";
        case Errc::corrupt: return "Corrupt";
        case Errc::corrupt_entry: return "CorruptEntry";
        case Errc::bad_version: return "BadVersion";
        case Errc::truncated: return "Truncated";
        case Errc::invariant_violation: return "InvariantViolation";
        case Errc::not_found: return "NotFound";
        case Errc::io_failure: return "IoFailure";
        case Errc::http_range_unsupported: return "HttpRangeUnsupported";
        case Errc::catalog_locked: return "CatalogLocked";
        case Errc::missing: return "Missing";
    }
    return "Error";
}

class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }
    ErrClass cls() const noexcept { return error_class(code_); }

  private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace df
