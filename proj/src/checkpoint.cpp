#include <bit>
#include <cstring>
#include <fstream>

#include "entlab/error.hpp"
#include "entlab/io.hpp"
#include "entlab/nanoformer.hpp"

namespace entlab {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelState& model) {
  nlohmann::json meta;
  meta["config"] = model.config();
  meta["dtype"] = "float32-le";
  meta["tensors"] = nlohmann::json::array();
  for (const auto& t : model.layout().manifest)
    meta["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"size", t.size}});
  const std::string text = meta.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float f : model.params()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

ModelState deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    fail(ErrorCode::kFormat, "checkpoint: bad magic");
  const auto version = get_u32(bytes, 8);
  if (version != kCheckpointVersion) fail(ErrorCode::kFormat, "checkpoint: unsupported version " + std::to_string(version));
  const auto meta_len = get_u32(bytes, 12);
  if (bytes.size() < 16 + static_cast<std::size_t>(meta_len)) fail(ErrorCode::kFormat, "checkpoint: truncated metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + meta_len);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint: bad metadata: ") + e.what());
  }
  const auto cfg = meta.at("config").get<ModelConfig>();
  const auto layout = ParamLayout::make(cfg);
  const auto& tensors = meta.at("tensors");
  if (tensors.size() != layout.manifest.size()) fail(ErrorCode::kFormat, "checkpoint: tensor manifest mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = layout.manifest[i];
    if (tensors[i].at("name") != t.name || tensors[i].at("offset").get<std::size_t>() != t.offset ||
        tensors[i].at("size").get<std::size_t>() != t.size || tensors[i].at("shape").get<std::vector<int>>() != t.shape)
      fail(ErrorCode::kFormat, "checkpoint: tensor manifest mismatch at " + t.name);
  }
  const std::size_t data_at = 16 + meta_len;
  if (bytes.size() != data_at + 4 * layout.total) fail(ErrorCode::kFormat, "checkpoint: wrong payload size");
  std::vector<float> params(layout.total);
  for (std::size_t i = 0; i < layout.total; ++i) params[i] = std::bit_cast<float>(get_u32(bytes, data_at + 4 * i));
  auto model = ModelState::from_params(cfg, std::move(params));
  if (!model.all_finite()) fail(ErrorCode::kFormat, "checkpoint: non-finite parameters");
  return model;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::kIo, "cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(ErrorCode::kIo, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace entlab
