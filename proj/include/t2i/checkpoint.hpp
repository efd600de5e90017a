#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "t2i/params.hpp"

namespace t2i {

// Versioned binary parameter container:
//   magic "T2ICKPT\0", u32 version, u64 step, u64 seed,
//   u32 #meta, {str key, i64 value}...,
//   u32 #groups, {str name, u8 frozen, u32 #tensors,
//                 {str name, u32 rank, i32 dims..., f32 data...}...}...
// Integers and floats are little-endian; strings are u32 length + bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointGroup {
  std::string name;
  ParamSet<float> params;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::int64_t>> meta;
  std::vector<CheckpointGroup> groups;

  std::int64_t meta_value(const std::string& key) const;
  const CheckpointGroup& group(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes `text` to path; JSON sidecars go through here.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace t2i
