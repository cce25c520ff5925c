#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "exprfuse/model.hpp"

// Binary checkpoint container, all integers and floats little-endian:
//
//   magic          8 bytes  "EXFCKPT\0"
//   version        u32      (currently 1)
//   config length  u64, followed by that many bytes of key=value model config
//   block count    u32
//   per block:     u32 name length, name bytes,
//                  u32 rank, rank × u64 dims,
//                  product(dims) × f64 values
//   checksum       u32      CRC-32 of every preceding byte

namespace exprfuse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(FusionModel& model);
// Rebuilds a model from bytes. Throws CheckpointError on a bad magic,
// unsupported version, checksum mismatch, truncation, or parameter blocks
// that do not match the stored config.
FusionModel decode_checkpoint(const std::vector<unsigned char>& bytes);

// Writes through a temporary file and an atomic rename.
void save_checkpoint(const std::filesystem::path& path, FusionModel& model);
FusionModel load_checkpoint(const std::filesystem::path& path);

}  // namespace exprfuse
