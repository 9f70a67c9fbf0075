#pragma once

#include <string>

#include "sfcn/model.hpp"

namespace sfcn {

// Binary checkpoint: 8-byte magic "SFCNCKP1", u32 version, config echo
// (i32 height, width, base_channels, blocks_per_module, num_categories,
// u8 arch), u64 record count, then per-tensor records of
// (u32 name length, name bytes, u32 rank, u64 dims..., f64 payload...),
// all little-endian. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Parameters& params);
Parameters load_checkpoint(const std::string& path);

// Throws with both shapes spelled out when the checkpoint does not match the
// expected configuration.
void check_config_compatible(const ModelConfig& checkpoint, const ModelConfig& expected);

}  // namespace sfcn
