#pragma once

#include <amlora/config.hpp>
#include <amlora/errors.hpp>
#include <amlora/model.hpp>

#include <filesystem>
#include <memory>
#include <string>

namespace amlora {

inline constexpr int kCheckpointVersion = 1;

/// A file written by a different format version.
class IncompatibleCheckpoint : public FormatError {
public:
    using FormatError::FormatError;
};

struct LoadedCheckpoint {
    ExperimentConfig config;
    std::unique_ptr<Backbone> model;
    /// Adapter records per adapted site (task adapters only).
    std::size_t adapter_records = 0;
    /// Score-head records per adapted site (zero adapter included).
    std::size_t head_records = 0;
};

/// Layout: the line "AMLORA-CKPT 1", a u64-length-prefixed metadata block of
/// key=value lines, a u64 record count, then records of
/// (u32 name length, name, u32 rank, u64 dims[rank], f64 values). Integers and
/// floats are little-endian, values row-major.
///
/// Base weights are stored under their parameter names. Each task adapter is
/// one record "<site>/adapter/<task>" of shape r x (d_in + d_out) holding A
/// next to B^T; each score head is "<site>/head/<index>" of shape d_out x 1.
void save_checkpoint(Backbone &model, const ExperimentConfig &config, const std::filesystem::path &path);

/// Restores a frozen model. Truncated or malformed files throw FormatError and
/// leave nothing behind; other versions throw IncompatibleCheckpoint.
LoadedCheckpoint load_checkpoint(const std::filesystem::path &path);

} // namespace amlora
