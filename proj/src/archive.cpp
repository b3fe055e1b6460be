#include "volgen/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace volgen {

namespace {

constexpr char kMagic[] = "VGCKPT1\n";
constexpr size_t kMagicLen = 8;

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

void replace_atomically(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

const Tensor<float>& Archive::block(const std::string& name) const {
  for (const auto& [n, t] : blocks)
    if (n == name) return t;
  throw std::out_of_range("archive has no block named " + name);
}

bool Archive::has_block(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.first == name) return true;
  return false;
}

void write_archive(const std::filesystem::path& path, const Archive& a) {
  auto manifest = a.manifest;
  auto list = nlohmann::ordered_json::array();
  for (const auto& [name, t] : a.blocks) list.push_back({{"name", name}, {"dims", t.shape()}});
  manifest["blocks"] = list;
  const std::string text = manifest.dump();

  std::string bytes(kMagic, kMagicLen);
  const uint64_t len = text.size();
  bytes.append(reinterpret_cast<const char*>(&len), sizeof len);
  bytes += text;
  for (const auto& b : a.blocks)
    bytes.append(reinterpret_cast<const char*>(b.second.data()),
                 static_cast<size_t>(b.second.numel()) * sizeof(float));
  replace_atomically(path, bytes);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint archive");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint manifest in " + path.string());

  Archive a;
  a.manifest = nlohmann::ordered_json::parse(text);
  for (const auto& b : a.manifest.at("blocks")) {
    Tensor<float> t(b.at("dims").get<Shape>());
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
    if (!in) throw std::runtime_error("truncated block " + b.at("name").get<std::string>());
    a.blocks.emplace_back(b.at("name").get<std::string>(), std::move(t));
  }
  a.manifest.erase("blocks");
  return a;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  replace_atomically(path, text);
}

}  // namespace volgen
