#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mld/numerics/tensor.hpp"

namespace mld {

inline constexpr uint32_t kCheckpointVersion = 1;

/// "MLDC", u32 version, u32 config length, config bytes, u32 tensor count, then per tensor:
/// u16 name length, name, u8 rank, u32 dims[rank], f32 payload. All little-endian.
struct Checkpoint {
  std::string config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Written to a sibling temporary and renamed, so a crash never leaves a half-written file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws FormatError on bad magic, a newer version, or a table that disagrees with the
/// payload length. Nothing is returned unless the whole file parsed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mld
