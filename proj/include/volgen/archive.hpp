#pragma once

// Single-file weight archive: "VGCKPT1\n", u64 little-endian manifest length,
// the manifest JSON, then one little-endian f32 block per entry of
// manifest["blocks"] (name + dims), in order.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "volgen/tensor.hpp"

namespace volgen {

struct Archive {
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, Tensor<float>>> blocks;

  const Tensor<float>& block(const std::string& name) const;
  bool has_block(const std::string& name) const;
};

/// Writes to a temporary sibling and renames it into place.
void write_archive(const std::filesystem::path& path, const Archive& a);
Archive read_archive(const std::filesystem::path& path);

/// Writes text atomically (temporary sibling + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace volgen
