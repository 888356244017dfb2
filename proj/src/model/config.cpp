#include "mmif/model/config.hpp"

#include "mmif/model/inversion.hpp"

#include <algorithm>
#include <set>

namespace mmif::model {

std::string to_string(BottleneckKind k) {
  switch (k) {
    case BottleneckKind::ACB: return "acb";
    case BottleneckKind::RES: return "res";
    case BottleneckKind::AOT: return "aot";
  }
  return "acb";
}

std::string to_string(FusionKind k) {
  switch (k) {
    case FusionKind::GmaAdn: return "gma_adn";
    case FusionKind::Add: return "add";
    case FusionKind::Concat: return "concat";
    case FusionKind::GmaAdaIN: return "adain";
    case FusionKind::GmaSpade: return "spade";
  }
  return "gma_adn";
}

std::string to_string(GuidanceKind k) {
  switch (k) {
    case GuidanceKind::Unbiased: return "unbiased";
    case GuidanceKind::Biased: return "biased";
    case GuidanceKind::GroundTruth: return "gt";
  }
  return "unbiased";
}

BottleneckKind parse_bottleneck(const std::string& s) {
  if (s == "acb") return BottleneckKind::ACB;
  if (s == "res") return BottleneckKind::RES;
  if (s == "aot") return BottleneckKind::AOT;
  throw ConfigError("unknown bottleneck '" + s + "' (acb|res|aot)");
}

FusionKind parse_fusion(const std::string& s) {
  if (s == "gma_adn") return FusionKind::GmaAdn;
  if (s == "add") return FusionKind::Add;
  if (s == "concat") return FusionKind::Concat;
  if (s == "adain") return FusionKind::GmaAdaIN;
  if (s == "spade") return FusionKind::GmaSpade;
  throw ConfigError("unknown fusion '" + s + "' (gma_adn|add|concat|adain|spade)");
}

GuidanceKind parse_guidance(const std::string& s) {
  if (s == "unbiased") return GuidanceKind::Unbiased;
  if (s == "biased") return GuidanceKind::Biased;
  if (s == "gt") return GuidanceKind::GroundTruth;
  throw ConfigError("unknown guidance '" + s + "' (unbiased|biased|gt)");
}

int ModelConfig::num_style_layers() const { return model::num_style_layers(resolution); }

void ModelConfig::validate() const {
  if (resolution < 32 || (resolution & (resolution - 1)) != 0)
    throw ConfigError("resolution must be a power of two >= 32 for five stride-2 layers, got " +
                      std::to_string(resolution));
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (enc_channels.size() != 5) throw ConfigError("enc_channels needs 5 entries");
  if (std::any_of(enc_channels.begin(), enc_channels.end(), [](int c) { return c < 1; }))
    throw ConfigError("enc_channels must be positive");
  if (acb_layers < 1) throw ConfigError("bottleneck layers must be >= 1");
  if (acb_rates.empty()) throw ConfigError("dilation rates must be non-empty");
  std::set<int> distinct(acb_rates.begin(), acb_rates.end());
  if (distinct.size() != acb_rates.size() || *distinct.begin() < 1)
    throw ConfigError("dilation rates must be positive and distinct");
  if (patch_sizes.size() != 3) throw ConfigError("patch_sizes needs 3 entries");
  const int scales[3] = {resolution / 4, resolution / 2, resolution};
  const int widths[3] = {enc_channels[1], enc_channels[0], dec_full_channels};
  for (int i = 0; i < 3; ++i) {
    if (patch_sizes[i] < 1 || scales[i] % patch_sizes[i] != 0)
      throw ConfigError("patch size " + std::to_string(patch_sizes[i]) + " does not divide decoder scale " +
                        std::to_string(scales[i]));
    if (heads < 1 || widths[i] % heads != 0)
      throw ConfigError("heads=" + std::to_string(heads) + " must divide decoder width " + std::to_string(widths[i]));
  }
  if (bottleneck == BottleneckKind::AOT && enc_channels[4] % static_cast<int>(acb_rates.size()) != 0)
    throw ConfigError("AOT bottleneck needs channels divisible by the number of rates");
  if (w_dim < 1 || gen_base < 1 || gen_max < 1 || mapping_layers < 1 || disc_base < 1)
    throw ConfigError("widths must be positive");
}

}  // namespace mmif::model
