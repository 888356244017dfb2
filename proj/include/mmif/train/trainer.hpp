#pragma once

#include "mmif/core/optim.hpp"
#include "mmif/model/network.hpp"
#include "mmif/objectives/losses.hpp"
#include "mmif/train/batch.hpp"
#include "mmif/train/checkpoint.hpp"
#include "mmif/train/config.hpp"

#include <functional>
#include <map>
#include <ostream>
#include <string>

namespace mmif::train {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named loss values of one step, in logging order.
struct StepLog {
  std::int64_t step = 0;
  std::vector<std::pair<std::string, double>> terms;
  double get(const std::string& name) const;
};

/// Writes one line-delimited record per (step, term, value).
void write_log(std::ostream& out, const StepLog& log);

/// Mixes integers into a seed (splitmix64 chain) for per-step RNG streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

/// Mean latent from the generator's mapping network, (L,D) in double.
Tensor<double> mean_latent_of(const model::Generator<float>& g, int samples, std::uint64_t seed);

/// Desk-scale generator pretraining with the non-saturating loss and its own discriminator.
class GanPretrainer {
 public:
  GanPretrainer(RunConfig cfg, const Corpus& corpus);
  StepLog step();
  std::int64_t steps_done() const { return step_; }
  const model::InpaintNet<float>& net() const { return net_; }

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& c);

 private:
  RunConfig cfg_;
  const Corpus* corpus_;
  model::InpaintNet<float> net_;  // only the generator is trained here
  objectives::Discriminator<float> disc_;
  Adam<float> g_opt_, d_opt_;
  std::int64_t step_ = 0;
  int stuck_ = 0;
};

/// Encoder-phase training against a frozen generator.
class EncoderTrainer {
 public:
  EncoderTrainer(RunConfig cfg, const Corpus& corpus);
  /// Imports generator weights (and its mean latent if present) from a pretraining checkpoint.
  void load_generator(const Checkpoint& c);

  StepLog step();
  std::int64_t steps_done() const { return step_; }
  const model::InpaintNet<float>& net() const { return net_; }
  const model::MeanLatentState& mean_latent() const { return mean_; }
  const RunConfig& config() const { return cfg_; }

  /// Masks used for image `index` at `step` (fixed per image when configured).
  masking::Mask training_mask(size_t index, std::int64_t step, size_t slot) const;
  /// Masked-region L1 of the composited output on each image's fixed training mask.
  double evaluate_masked_l1() const;

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& c);

 private:
  std::vector<size_t> batch_indices(std::int64_t step) const;
  masking::Mask fixed_mask(size_t index) const;
  Tensor<double> draw_mean_latent(std::uint64_t index) const;

  RunConfig cfg_;
  const Corpus* corpus_;
  model::InpaintNet<float> net_;
  objectives::Discriminator<float> disc_;
  objectives::FeatureExtractor<float> extractor_;
  Adam<float> enc_opt_, disc_opt_;
  model::MeanLatentState mean_;
  std::int64_t step_ = 0;
};

/// Loop driver shared by the CLI: runs `steps`, writes the log and periodic checkpoints.
template <typename Trainer>
void run_training(Trainer& t, int steps, std::ostream* log, const std::filesystem::path& ckpt_dir, int ckpt_every,
                  const std::function<void(const StepLog&)>& on_step = {}) {
  for (int i = 0; i < steps; ++i) {
    StepLog s = t.step();
    if (log) write_log(*log, s);
    if (on_step) on_step(s);
    if (!ckpt_dir.empty() && ckpt_every > 0 && t.steps_done() % ckpt_every == 0) save_checkpoint(ckpt_dir, t.checkpoint());
  }
  if (!ckpt_dir.empty()) save_checkpoint(ckpt_dir, t.checkpoint());
}

}  // namespace mmif::train
