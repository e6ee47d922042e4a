#pragma once

#include <filesystem>
#include <iosfwd>

#include "tabatt/nn.hpp"
#include "tabatt/tensor.hpp"

namespace tabatt {

// Tensor binary format: magic "NDT1", u8 rank, rank x u32 extents,
// row-major f64 payload. Little-endian throughout.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Checkpoint format: magic "TABCKPT1", u32 param count, then per param
// {u16 name length, name bytes, tensor}. Includes non-trainable state.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
// Loads values into an existing store laid out by the same init code.
void load_checkpoint(const std::filesystem::path& path, ParamStore& params);

}  // namespace tabatt
