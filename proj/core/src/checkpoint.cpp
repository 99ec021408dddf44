#include "dcu/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dcu/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace dcu {

namespace {

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& is, const std::filesystem::path& file) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError("checkpoint " + file.string() + ": truncated at offset " +
                    std::to_string(static_cast<long long>(is.tellg())));
  }
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& file,
                      const std::vector<CheckpointRecord>& records) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + file.string());
  os.write(kCheckpointMagic, 4);
  put<std::uint8_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const CheckpointRecord& r : records) {
    if (r.name.size() > 0xffff) {
      throw ValueError("checkpoint record name too long: " + r.name);
    }
    put<std::uint16_t>(os, static_cast<std::uint16_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(r.dims.size()));
    std::uint64_t count = 1;
    for (std::uint32_t d : r.dims) {
      put<std::uint32_t>(os, d);
      count *= d;
    }
    if (count != r.values.size()) {
      throw ValueError("checkpoint record " + r.name +
                       ": payload does not match shape");
    }
    os.write(reinterpret_cast<const char*>(r.values.data()),
             static_cast<std::streamsize>(r.values.size() * sizeof(float)));
  }
  if (!os) throw DataError("checkpoint write failed: " + file.string());
}

std::vector<CheckpointRecord> read_checkpoint(
    const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + file.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("checkpoint " + file.string() + ": bad magic");
  }
  const auto version = take<std::uint8_t>(is, file);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint " + file.string() + ": unsupported version " +
                    std::to_string(version));
  }
  const auto count = take<std::uint32_t>(is, file);
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto name_len = take<std::uint16_t>(is, file);
    r.name.resize(name_len);
    if (!is.read(r.name.data(), name_len)) {
      throw DataError("checkpoint " + file.string() + ": truncated name at offset " +
                      std::to_string(static_cast<long long>(is.tellg())));
    }
    const auto ndim = take<std::uint8_t>(is, file);
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      r.dims.push_back(take<std::uint32_t>(is, file));
      numel *= r.dims.back();
    }
    r.values.resize(numel);
    if (!is.read(reinterpret_cast<char*>(r.values.data()),
                 static_cast<std::streamsize>(numel * sizeof(float)))) {
      throw DataError("checkpoint " + file.string() +
                      ": truncated payload for record " + r.name);
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace dcu
