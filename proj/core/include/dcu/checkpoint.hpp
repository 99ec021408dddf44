#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dcu {

/// Flat parameter container: 4-byte magic "DCKP", a version byte, a 32-bit
/// record count, then (name, shape, float32 little-endian payload) records.
/// Record layout: u16 name length, name bytes, u8 ndim, u32 dims[ndim],
/// float32 values[prod(dims)].
struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

inline constexpr char kCheckpointMagic[4] = {'D', 'C', 'K', 'P'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& file,
                      const std::vector<CheckpointRecord>& records);

std::vector<CheckpointRecord> read_checkpoint(
    const std::filesystem::path& file);

}  // namespace dcu
