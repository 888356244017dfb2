#pragma once

#include "mmif/data/dataset.hpp"
#include "mmif/masking/mask.hpp"
#include "mmif/model/config.hpp"
#include "mmif/objectives/losses.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mmif::train {

enum class Phase { PretrainGan, TrainEncoder };
std::string to_string(Phase p);
Phase parse_phase(const std::string& s);

struct TrainConfig {
  double lr = 1e-4;
  double disc_lr = 1e-4;
  int batch = 8;
  int steps = 1000;
  double tau = 0.001;
  objectives::LossWeights weights;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  Phase phase = Phase::TrainEncoder;
  bool joint_generator = false;  // unfreeze the generator in the encoder phase
  int mean_latent_samples = 4096;
  int log_every = 1;
  int ckpt_every = 0;  // 0: only at the end
  int extractor_base = 16;
  std::uint64_t extractor_seed = 1234;

  // Training masks: drawn fresh each step, or one fixed mask per image when `fixed_masks`.
  masking::MaskKind mask_kind = masking::MaskKind::Brush;
  std::vector<masking::Bucket> mask_buckets{masking::Bucket::Low, masking::Bucket::Mid, masking::Bucket::High};
  bool fixed_masks = false;

  data::CannyThresholds canny;
  std::string label_merge;  // "src:dst,..." or a path to a JSON map; empty keeps labels
};

struct RunConfig {
  model::ModelConfig model;
  TrainConfig train;
};

/// Parses `[model]` and `[train]` sections of key = value lines. Unknown keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Applies one "section.key=value" style override (section defaults to train, then model).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);
/// Canonical text form; parse_config(serialize(c)) == c.
std::string serialize(const RunConfig& cfg);
std::string serialize_model(const model::ModelConfig& cfg);
/// FNV-1a of the canonical model section, as 16 hex digits.
std::string config_hash(const model::ModelConfig& cfg);

}  // namespace mmif::train
