#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dsaf/tensor.hpp"

namespace dsaf {

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'A', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Generic container written to disk as
//   magic "DSAFCKPT" | u32 version | u64 payload length | payload | u64 FNV-1a(payload)
// where the payload holds sorted string metadata, sorted int64 counters and
// sorted float32 tensors. Keys are sorted so equal contents give equal bytes.
struct CheckpointData {
  std::map<std::string, std::string> meta;
  std::map<std::string, std::int64_t> integers;
  std::map<std::string, Tensor<float>> tensors;
};

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace dsaf
