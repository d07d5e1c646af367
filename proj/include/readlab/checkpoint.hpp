#pragma once

// Flat tensor dumps: `tensors.bin` (raw little-endian doubles, column-major)
// plus `manifest.json` listing name, shape and byte offset of every tensor and
// an FNV-1a checksum of the binary payload.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "readlab/nn.hpp"

namespace readlab::checkpoint {

inline constexpr int kFormatVersion = 1;

struct NamedTensor {
  std::string name;
  nn::Mat value;
};

void save_tensors(const std::filesystem::path& dir, std::span<const NamedTensor> tensors);
/// Throws on checksum mismatch or malformed manifest.
std::vector<NamedTensor> load_tensors(const std::filesystem::path& dir);

std::vector<NamedTensor> snapshot(const nn::ParamList& params, const std::string& prefix = "");
/// Copies values by name (with prefix) into params; shapes must match.
void restore(const nn::ParamList& params, std::span<const NamedTensor> tensors,
             const std::string& prefix = "");

/// Writes `content` to a temporary sibling and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace readlab::checkpoint
