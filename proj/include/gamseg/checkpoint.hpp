#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "json.hpp"

#include "gamseg/error.hpp"
#include "gamseg/features.hpp"
#include "gamseg/model.hpp"

namespace gamseg {

inline void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = {{"window", c.window},
       {"hop", c.hop},
       {"n_mfcc", c.n_mfcc},
       {"n_mels", c.n_mels},
       {"n_cqt_bins", c.n_cqt_bins},
       {"cqt_fmin", c.cqt_fmin},
       {"bins_per_octave", c.bins_per_octave},
       {"sample_rate", c.sample_rate}};
}

inline void from_json(const nlohmann::json& j, FeatureConfig& c) {
  c.window = j.at("window").get<std::size_t>();
  c.hop = j.at("hop").get<std::size_t>();
  c.n_mfcc = j.at("n_mfcc").get<std::size_t>();
  c.n_mels = j.at("n_mels").get<std::size_t>();
  c.n_cqt_bins = j.at("n_cqt_bins").get<std::size_t>();
  c.cqt_fmin = j.at("cqt_fmin").get<double>();
  c.bins_per_octave = j.at("bins_per_octave").get<std::size_t>();
  c.sample_rate = j.at("sample_rate").get<int>();
}

/// Trained model plus everything needed to reproduce its inputs.
struct ModelCheckpoint {
  nn::Model<float> model{nn::Architecture::reduced()};
  FeatureConfig features;
  nlohmann::json training = nlohmann::json::object();
  std::uint64_t seed = 0;

  const nn::Architecture& architecture() const { return model.architecture(); }
};

inline constexpr char kCheckpointMagic[8] = {'G', 'M', 'S', 'E', 'G', '0', '0', '1'};

/// "GMSEG001" | u32 header length | JSON header | per tensor:
/// u32 name length, name, u32 rank, u32 dims…, f32 payload (all little-endian).
inline std::string encode_checkpoint(const ModelCheckpoint& ckpt) {
  nlohmann::json names = nlohmann::json::array();
  for (const auto& p : ckpt.model.params()) names.push_back(p.name);
  const nlohmann::json header = {{"architecture", ckpt.model.architecture()},
                                 {"feature_config", ckpt.features},
                                 {"training_config", ckpt.training},
                                 {"seed", ckpt.seed},
                                 {"tensors", names}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u32le(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& p : ckpt.model.params()) {
    detail::put_u32le(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_u32le(out, static_cast<std::uint32_t>(p.tensor->shape.size()));
    for (auto d : p.tensor->shape) detail::put_u32le(out, static_cast<std::uint32_t>(d));
    for (float v : p.tensor->data) detail::put_u32le(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw IoError("checkpoint truncated");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    return read_u32le(reinterpret_cast<const unsigned char*>(take(4).data()));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ModelCheckpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw BadMagic("not a checkpoint file");
  }
  detail::ByteReader reader(bytes.substr(8));
  const std::uint32_t header_len = reader.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(reader.take(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }

  ModelCheckpoint ckpt;
  nn::Architecture arch;
  try {
    arch = header.at("architecture").get<nn::Architecture>();
    ckpt.features = header.at("feature_config").get<FeatureConfig>();
    ckpt.training = header.value("training_config", nlohmann::json::object());
    ckpt.seed = header.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  try {
    ckpt.model = nn::Model<float>(arch, 0);
  } catch (const ConfigError& e) {
    throw ArchitectureMismatch(e.what());
  }

  std::size_t loaded = 0;
  std::vector<bool> seen(ckpt.model.params().size(), false);
  while (!reader.done()) {
    const std::uint32_t name_len = reader.u32();
    const std::string name(reader.take(name_len));
    const std::uint32_t rank = reader.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = reader.u32();
    auto& params = ckpt.model.params();
    const auto it = std::find_if(params.begin(), params.end(),
                                 [&](const auto& p) { return p.name == name; });
    if (it == params.end()) throw ArchitectureMismatch("unexpected tensor '" + name + "'");
    const auto index = static_cast<std::size_t>(it - params.begin());
    if (seen[index]) throw ArchitectureMismatch("duplicate tensor '" + name + "'");
    if (shape != it->tensor->shape) {
      throw ArchitectureMismatch("tensor '" + name + "' has shape " + nn::shape_string(shape) +
                                 ", architecture expects " + nn::shape_string(it->tensor->shape));
    }
    const auto payload = reader.take(it->tensor->numel() * 4);
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
    for (std::size_t k = 0; k < it->tensor->numel(); ++k) {
      it->tensor->data[k] = std::bit_cast<float>(detail::read_u32le(p + 4 * k));
    }
    seen[index] = true;
    ++loaded;
  }
  if (loaded != seen.size()) {
    throw IoError("checkpoint holds " + std::to_string(loaded) + " of " +
                  std::to_string(seen.size()) + " tensors");
  }
  return ckpt;
}

inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace gamseg
