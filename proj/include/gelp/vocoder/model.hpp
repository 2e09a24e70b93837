#pragma once

#include "gelp/nn/models.hpp"

namespace gelp::vocoder {

/// Generator and conditioning network, the parts needed for synthesis.
/// Stored as one GELPW archive with tensors under "G/" and "C/" and both
/// configs (keys prefixed "G." and "C.") in the CONF chunk. Training
/// checkpoints use the same layout and load here as well.
template <class T>
struct VocoderModel {
  nn::NetConfig g_cfg;
  nn::NetConfig c_cfg;
  nn::Weights<T> g;
  nn::Weights<T> c;

  void check() const {
    require(g_cfg.conditioning_channels == c_cfg.output_channels,
            "generator expects " + std::to_string(g_cfg.conditioning_channels) +
                " context channels but the conditioning network produces " + std::to_string(c_cfg.output_channels));
    nn::check_weights(g, g_cfg, "G");
    nn::check_weights(c, c_cfg, "C");
  }
};

enum class ModelSize { toy, full };

inline ModelSize parse_model_size(const std::string& s) {
  if (s == "toy") return ModelSize::toy;
  if (s == "full" || s == "default") return ModelSize::full;
  throw InvalidArgument("model must be toy or full, got \"" + s + "\"");
}

inline std::string to_string(ModelSize m) { return m == ModelSize::toy ? "toy" : "full"; }

struct ModelConfigs {
  nn::NetConfig g, c, d;
};

inline ModelConfigs model_configs(ModelSize size) {
  if (size == ModelSize::toy)
    return {nn::toy(nn::generator_config()), nn::toy(nn::conditioner_config()), nn::toy(nn::discriminator_config())};
  return {nn::generator_config(), nn::conditioner_config(), nn::discriminator_config()};
}

/// Fresh weights; G, C and D draw from seed, seed + 1 and seed + 2.
template <class T>
VocoderModel<T> init_vocoder(const ModelConfigs& cfg, std::uint64_t seed) {
  VocoderModel<T> m{cfg.g, cfg.c, nn::init_weights<T>(cfg.g, seed), nn::init_weights<T>(cfg.c, seed + 1)};
  m.check();
  return m;
}

template <class T>
void append_model(nn::WeightArchive& archive, const VocoderModel<T>& m) {
  nn::append_weights(archive, m.g, "G/");
  nn::append_weights(archive, m.c, "C/");
  archive.chunks["CONF"] += nn::to_text(m.g_cfg, "G.") + nn::to_text(m.c_cfg, "C.");
}

template <class T>
void save_vocoder(const std::filesystem::path& path, const VocoderModel<T>& m) {
  m.check();
  nn::WeightArchive archive;
  archive.version = std::is_same_v<T, double> ? nn::kWeightsF64 : nn::kWeightsF32;
  append_model(archive, m);
  nn::write_archive(path, archive);
}

template <class T>
VocoderModel<T> model_from_archive(const nn::WeightArchive& archive, const std::string& source) {
  auto conf = archive.chunks.find("CONF");
  if (conf == archive.chunks.end()) throw FormatError(source + ": weight file has no CONF chunk");
  VocoderModel<T> m;
  try {
    m.g_cfg = nn::net_config_from_text(conf->second, "G.");
    m.c_cfg = nn::net_config_from_text(conf->second, "C.");
    m.g = nn::extract_weights<T>(archive, m.g_cfg, "G/");
    m.c = nn::extract_weights<T>(archive, m.c_cfg, "C/");
  } catch (const FormatError& e) {
    throw FormatError(source + ": " + e.what());
  }
  m.check();
  return m;
}

template <class T>
VocoderModel<T> load_vocoder(const std::filesystem::path& path) {
  return model_from_archive<T>(nn::read_archive(path), path.string());
}

}  // namespace gelp::vocoder
