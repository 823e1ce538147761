#include "bcr/nn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace bcr::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'B', 'C', 'R', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated weights file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }
float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor>& params,
                     nlohmann::json manifest) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + (dir / "weights.bin").string());
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, kCheckpointFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(tensor.shape().size()));
    for (int d : tensor.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (float f : tensor.data()) put_f32(os, f);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");

  manifest["format_version"] = kCheckpointFormatVersion;
  std::ofstream ms(dir / "manifest.json", std::ios::trunc);
  ms << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "weights.bin", std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: missing " + (dir / "weights.bin").string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error("checkpoint: bad magic in " + dir.string());
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  }
  LoadedCheckpoint out;
  const std::uint32_t count = get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get_u32(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(get_u32(is));
    for (int& d : shape) d = static_cast<int>(get_u32(is));
    std::vector<float> values(shape_numel(shape));
    for (float& f : values) f = get_f32(is);
    out.params.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }

  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw std::runtime_error("checkpoint: missing " + (dir / "manifest.json").string());
  out.manifest = nlohmann::json::parse(ms);
  if (out.manifest.value("format_version", -1) != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint: manifest format_version mismatch in " + dir.string());
  }
  return out;
}

}  // namespace bcr::nn
