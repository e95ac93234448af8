#pragma once

#include <filesystem>
#include <span>

#include "routelab/autodiff/tape.hpp"

namespace routelab::models {

// Flat little-endian binary: "RLCK", u32 version, u32 count, then per array
// u32 name length, name bytes, u32 rank, u64 dims[rank], f64 data. See
// docs/formats.md.
void save_checkpoint(const std::filesystem::path& path, std::span<ad::Parameter* const> params);

// Restores values in place. Names and shapes must match the file exactly.
void load_checkpoint(const std::filesystem::path& path, std::span<ad::Parameter* const> params);

} // namespace routelab::models
