#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mmif::model {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BottleneckKind { ACB, RES, AOT };
/// How the inpainting branch absorbs the auxiliary branches at each decoder scale.
enum class FusionKind { GmaAdn, Add, Concat, GmaAdaIN, GmaSpade };
/// What conditions the normalization: auxiliary features, predicted maps, or ground-truth maps.
enum class GuidanceKind { Unbiased, Biased, GroundTruth };

std::string to_string(BottleneckKind k);
std::string to_string(FusionKind k);
std::string to_string(GuidanceKind k);
BottleneckKind parse_bottleneck(const std::string& s);
FusionKind parse_fusion(const std::string& s);
GuidanceKind parse_guidance(const std::string& s);

struct ModelConfig {
  int resolution = 64;
  int num_classes = 1;

  // Encoder
  std::vector<int> enc_channels{64, 128, 256, 512, 512};
  int acb_layers = 8;
  std::vector<int> acb_rates{1, 2, 3, 4};
  int acb_gate_channels = 0;  // 0: channels/4
  int acb_fc_hidden = 4;
  BottleneckKind bottleneck = BottleneckKind::ACB;

  // Decoder
  int dec_full_channels = 32;  // width of the full-resolution stage
  std::vector<int> patch_sizes{4, 4, 2};
  int heads = 4;
  FusionKind fusion = FusionKind::GmaAdn;
  GuidanceKind guidance = GuidanceKind::Unbiased;

  // Inversion
  int w_dim = 512;
  int map2style_channels = 128;
  int map2structure_channels = 32;
  int premod_hidden = 512;

  // Generator
  int gen_base = 32;
  int gen_max = 512;
  int mapping_layers = 8;
  bool noise = true;

  // Discriminator
  int disc_base = 32;

  /// Channel count of the encoder input: RGB + edge + K one-hot + mask.
  int input_channels() const { return 5 + num_classes; }
  int num_style_layers() const;
  void validate() const;
};

}  // namespace mmif::model
