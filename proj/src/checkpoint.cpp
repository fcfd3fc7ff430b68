#include "bt/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "bt/errors.hpp"
#include "bt/serde.hpp"

namespace bt {

namespace {

constexpr char kMagic[] = "BTCKPT1\n";
constexpr std::size_t kMagicLen = 8;

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw DataError("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f32_le(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

float read_f32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("checkpoint: truncated parameter blob");
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, BasisTransformer<T>& model) {
  nlohmann::json manifest;
  manifest["format"] = 1;
  manifest["model"] = serde::to_json(model.config());
  manifest["text_encoder"] = serde::to_json(model.text_spec());
  nlohmann::json params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto* p : model.params()) {
    nlohmann::json entry;
    entry["name"] = p->name;
    entry["shape"] = p->value.shape();
    entry["offset"] = offset;
    params.push_back(std::move(entry));
    offset += static_cast<std::uint64_t>(p->value.numel());
  }
  manifest["params"] = std::move(params);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write(kMagic, kMagicLen);
  const std::string text = manifest.dump();
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : model.params())
    for (std::int64_t i = 0; i < p->value.numel(); ++i)
      write_f32_le(out, static_cast<float>(p->value[i]));
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

template <typename T>
std::unique_ptr<BasisTransformer<T>> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  const std::uint64_t manifest_len = read_u64_le(in);
  std::string text(manifest_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(manifest_len)))
    throw DataError("checkpoint: truncated manifest in " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw DataError("checkpoint: manifest parse error: " + std::string(e.what()));
  }
  if (manifest.value("format", 0) != 1)
    throw DataError("checkpoint: unsupported format version");

  const ModelConfig cfg = serde::model_from_json(manifest.at("model"), "model");
  const TextEncoderSpec spec =
      serde::text_encoder_from_json(manifest.at("text_encoder"), "text_encoder");
  auto model = std::make_unique<BasisTransformer<T>>(cfg, spec, 0);

  const auto& entries = manifest.at("params");
  const auto& params = model->params();
  if (entries.size() != params.size())
    throw DataError("checkpoint: parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& entry = entries[k];
    if (entry.at("name").get<std::string>() != params[k]->name)
      throw DataError("checkpoint: parameter order mismatch at '" +
                      params[k]->name + "'");
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != params[k]->value.shape())
      throw DataError("checkpoint: shape mismatch for '" + params[k]->name + "'");
    for (std::int64_t i = 0; i < params[k]->value.numel(); ++i)
      params[k]->value[i] = static_cast<T>(read_f32_le(in));
  }
  return model;
}

template void save_checkpoint<float>(const std::string&, BasisTransformer<float>&);
template void save_checkpoint<double>(const std::string&, BasisTransformer<double>&);
template std::unique_ptr<BasisTransformer<float>> load_checkpoint<float>(
    const std::string&);
template std::unique_ptr<BasisTransformer<double>> load_checkpoint<double>(
    const std::string&);

}  // namespace bt
