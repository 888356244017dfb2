#include "mmif/train/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace mmif::train {

using model::InpaintNet;
using objectives::Discriminator;

double StepLog::get(const std::string& name) const {
  for (const auto& [k, v] : terms)
    if (k == name) return v;
  throw TrainError("no term '" + name + "' in step log");
}

void write_log(std::ostream& out, const StepLog& log) {
  for (const auto& [term, value] : log.terms) {
    nlohmann::json rec{{"step", log.step}, {"term", term}, {"value", value}};
    out << rec.dump() << "\n";
  }
  out.flush();
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

Tensor<double> mean_latent_of(const model::Generator<float>& g, int samples, std::uint64_t seed) {
  const Index dim = g.mapping.layers.front().weight.dim(0);
  auto mapper = [&](const Tensor<float>& z) {
    NoGradGuard ng;
    return g.mapping(constant(z)).value();
  };
  return model::sample_mean_latent(mapper, dim, samples, g.num_layers(), seed);
}

namespace {

// Checkpoint naming: "param.<name>", "<opt>.m.<name>", "<opt>.v.<name>", "disc.sn<i>.u|v".

void put_adam(Checkpoint& c, const std::string& prefix, const Adam<float>& opt) {
  const auto& ps = opt.params();
  for (size_t i = 0; i < ps.size(); ++i) {
    c.f32[prefix + ".m." + ps[i].first] = opt.first_moments()[i];
    c.f32[prefix + ".v." + ps[i].first] = opt.second_moments()[i];
  }
  c.scalars[prefix + ".t"] = std::to_string(opt.step_count());
}

void get_adam(const Checkpoint& c, const std::string& prefix, Adam<float>& opt) {
  const auto& ps = opt.params();
  for (size_t i = 0; i < ps.size(); ++i) {
    for (auto [tag, buf] : {std::pair{".m.", &opt.first_moments()[i]}, std::pair{".v.", &opt.second_moments()[i]}}) {
      auto it = c.f32.find(prefix + tag + ps[i].first);
      if (it == c.f32.end() || it->second.shape() != buf->shape())
        throw CheckpointError("checkpoint lacks optimizer state " + prefix + tag + ps[i].first);
      *buf = it->second;
    }
  }
  opt.set_step_count(c.scalar_int(prefix + ".t"));
}

void put_disc(Checkpoint& c, const std::string& prefix, const Discriminator<float>& d) {
  ParamList<float> ps;
  d.collect(ps, prefix);
  store_params(c, "param.", ps);
  for (size_t i = 0; i < d.norms.size(); ++i) {
    c.f32[prefix + ".sn" + std::to_string(i) + ".u"] = d.norms[i].u;
    c.f32[prefix + ".sn" + std::to_string(i) + ".v"] = d.norms[i].v;
  }
}

void get_disc(const Checkpoint& c, const std::string& prefix, Discriminator<float>& d) {
  ParamList<float> ps;
  d.collect(ps, prefix);
  restore_params(c, "param.", ps);
  for (size_t i = 0; i < d.norms.size(); ++i) {
    for (auto [tag, buf] : {std::pair{".u", &d.norms[i].u}, std::pair{".v", &d.norms[i].v}}) {
      auto it = c.f32.find(prefix + ".sn" + std::to_string(i) + tag);
      if (it == c.f32.end() || it->second.shape() != buf->shape())
        throw CheckpointError("checkpoint lacks spectral-norm state for " + prefix);
      *buf = it->second;
    }
  }
}

ParamList<float> disc_params(const Discriminator<float>& d) {
  ParamList<float> ps;
  d.collect(ps, "disc");
  return ps;
}

void check_header(const Checkpoint& c, const RunConfig& cfg, Phase phase) {
  const std::string ph = c.scalars.count("phase") ? c.scalars.at("phase") : "?";
  if (ph != to_string(phase)) throw CheckpointError("checkpoint is from phase " + ph + ", expected " + to_string(phase));
  if (c.config_hash != config_hash(cfg.model))
    throw CheckpointError("checkpoint model config " + c.config_hash + " differs from the current one " +
                          config_hash(cfg.model));
}

/// Indices for a step: consecutive slices of per-epoch permutations.
std::vector<size_t> indices_for(std::int64_t step, int batch, size_t n, std::uint64_t seed) {
  std::vector<size_t> out;
  for (int i = 0; i < batch; ++i) {
    const auto pos = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch) + static_cast<std::uint64_t>(i);
    out.push_back(data::epoch_order(n, seed, pos / n)[pos % n]);
  }
  return out;
}

Tensor<float> images_of(const Corpus& c, const std::vector<size_t>& idx) {
  const Index s = c.resolution, b = static_cast<Index>(idx.size());
  Tensor<float> out(Shape{b, 3, s, s});
  for (Index i = 0; i < b; ++i) std::copy_n(c.samples[idx[static_cast<size_t>(i)]].image.ptr(), 3 * s * s, out.ptr() + i * 3 * s * s);
  return out;
}

RunConfig adapt(RunConfig cfg, const Corpus& corpus) {
  if (corpus.resolution != cfg.model.resolution)
    throw TrainError("corpus resolution " + std::to_string(corpus.resolution) + " differs from model resolution " +
                     std::to_string(cfg.model.resolution));
  if (corpus.samples.empty()) throw TrainError("empty training corpus");
  cfg.model.num_classes = corpus.num_classes;
  cfg.model.validate();
  if (cfg.train.batch < 1) throw TrainError("batch must be >= 1");
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------

GanPretrainer::GanPretrainer(RunConfig cfg, const Corpus& corpus)
    : cfg_(adapt(std::move(cfg), corpus)), corpus_(&corpus), net_(cfg_.model, cfg_.train.seed) {
  Rng rng(mix_seed(cfg_.train.seed, 0xd15c));
  disc_ = Discriminator<float>(3, cfg_.model.disc_base, rng);
  g_opt_ = Adam<float>(net_.generator_params(), AdamOptions{cfg_.train.lr});
  d_opt_ = Adam<float>(disc_params(disc_), AdamOptions{cfg_.train.disc_lr});
}

StepLog GanPretrainer::step() {
  const auto& g = net_.generator;
  const int b = cfg_.train.batch, layers = g.num_layers();
  const Index wd = cfg_.model.w_dim;
  Rng rng(mix_seed(cfg_.train.seed, static_cast<std::uint64_t>(step_), 1));
  auto real = constant(images_of(*corpus_, indices_for(step_, b, corpus_->samples.size(), cfg_.train.seed)));
  Var<float> w = reshape(g.mapping(constant(normal_tensor<float>(Shape{b, wd}, rng))), Shape{b, 1, wd});
  Var<float> w_all = concat(std::vector<Var<float>>(static_cast<size_t>(layers), w), 1);
  Var<float> fake = g.synthesize(w_all, {}, mix_seed(cfg_.train.seed, static_cast<std::uint64_t>(step_), 2));

  d_opt_.zero_grad();
  Var<float> scores = disc_(concat<float>({real, fake.detach()}, 0), true);
  Var<float> d_loss = objectives::nonsaturating_d_loss(slice(scores, 0, 0, b), slice(scores, 0, b, b));
  d_loss.backward();
  d_opt_.step();

  const auto dp = disc_params(disc_);
  set_trainable(dp, false);
  g_opt_.zero_grad();
  Var<float> g_loss = objectives::nonsaturating_g_loss(disc_(fake, false));
  g_loss.backward();
  const double gnorm = clip_grad_norm(g_opt_.params(), cfg_.train.clip_norm);
  g_opt_.step();
  set_trainable(dp, true);

  const double gl = g_loss.item(), dl = d_loss.item();
  if (!std::isfinite(gl) || !std::isfinite(dl))
    throw TrainError("non-finite " + std::string(std::isfinite(gl) ? "discriminator" : "generator") +
                     " loss at pretraining step " + std::to_string(step_));
  stuck_ = gl > 10.0 ? stuck_ + 1 : 0;
  if (stuck_ == 500) std::cerr << "warning: generator loss above 10 for 500 steps (possible mode collapse)\n";
  ++step_;
  return {step_, {{"g_loss", gl}, {"d_loss", dl}, {"grad_norm", gnorm}}};
}

Checkpoint GanPretrainer::checkpoint() const {
  Checkpoint c;
  c.config_text = serialize(cfg_);
  c.config_hash = config_hash(cfg_.model);
  c.scalars["phase"] = to_string(Phase::PretrainGan);
  c.scalars["step"] = std::to_string(step_);
  c.scalars["stuck"] = std::to_string(stuck_);
  store_params(c, "param.", net_.generator_params());
  put_adam(c, "adam.gen", g_opt_);
  put_disc(c, "disc", disc_);
  put_adam(c, "adam.disc", d_opt_);
  c.f64["mean_latent"] = mean_latent_of(net_.generator, cfg_.train.mean_latent_samples, mix_seed(cfg_.train.seed, 0x3ea7));
  return c;
}

void GanPretrainer::restore(const Checkpoint& c) {
  check_header(c, cfg_, Phase::PretrainGan);
  restore_params(c, "param.", net_.generator_params());
  get_adam(c, "adam.gen", g_opt_);
  get_disc(c, "disc", disc_);
  get_adam(c, "adam.disc", d_opt_);
  step_ = c.scalar_int("step");
  stuck_ = static_cast<int>(c.scalar_int("stuck"));
}

// ---------------------------------------------------------------------------

EncoderTrainer::EncoderTrainer(RunConfig cfg, const Corpus& corpus)
    : cfg_(adapt(std::move(cfg), corpus)),
      corpus_(&corpus),
      net_(cfg_.model, cfg_.train.seed),
      extractor_(cfg_.train.extractor_seed, cfg_.train.extractor_base) {
  Rng rng(mix_seed(cfg_.train.seed, 0xd15c, 1));
  disc_ = Discriminator<float>(4, cfg_.model.disc_base, rng);
  ParamList<float> trained = net_.encoder_params();
  set_trainable(net_.generator_params(), cfg_.train.joint_generator);
  if (cfg_.train.joint_generator)
    for (const auto& p : net_.generator_params()) trained.push_back(p);
  enc_opt_ = Adam<float>(trained, AdamOptions{cfg_.train.lr});
  disc_opt_ = Adam<float>(disc_params(disc_), AdamOptions{cfg_.train.disc_lr});
  mean_.tau = cfg_.train.tau;
  mean_.online = draw_mean_latent(0);
  mean_.target = draw_mean_latent(1);
  mean_.resamples = 1;
}

Tensor<double> EncoderTrainer::draw_mean_latent(std::uint64_t index) const {
  return mean_latent_of(net_.generator, cfg_.train.mean_latent_samples, mix_seed(cfg_.train.seed, 0x3ea7, index));
}

void EncoderTrainer::load_generator(const Checkpoint& c) {
  restore_params(c, "param.", net_.generator_params());
  mean_.online = draw_mean_latent(0);
  mean_.target = draw_mean_latent(1);
  mean_.resamples = 1;
}

std::vector<size_t> EncoderTrainer::batch_indices(std::int64_t step) const {
  return indices_for(step, cfg_.train.batch, corpus_->samples.size(), cfg_.train.seed);
}

masking::Mask EncoderTrainer::fixed_mask(size_t index) const {
  const auto& buckets = cfg_.train.mask_buckets;
  const masking::MaskSpec spec{cfg_.train.mask_kind, buckets[index % buckets.size()],
                               mix_seed(cfg_.train.seed, index, 0xf1)};
  return masking::generate_mask(spec, cfg_.model.resolution, cfg_.model.resolution);
}

masking::Mask EncoderTrainer::training_mask(size_t index, std::int64_t step, size_t slot) const {
  if (cfg_.train.fixed_masks) return fixed_mask(index);
  const auto& buckets = cfg_.train.mask_buckets;
  const auto pos = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(cfg_.train.batch) + slot;
  const masking::MaskSpec spec{cfg_.train.mask_kind, buckets[pos % buckets.size()],
                               mix_seed(cfg_.train.seed, static_cast<std::uint64_t>(step), slot + 1)};
  return masking::generate_mask(spec, cfg_.model.resolution, cfg_.model.resolution);
}

StepLog EncoderTrainer::step() {
  const int b = cfg_.train.batch;
  const auto idx = batch_indices(step_);
  std::vector<masking::Mask> masks;
  for (size_t i = 0; i < idx.size(); ++i) masks.push_back(training_mask(idx[i], step_, i));
  Batch batch = make_batch(*corpus_, idx, masks);
  const auto& in = batch.input;
  auto target = objectives::make_targets(in.image, in.edge, batch.labels, cfg_.model.num_classes);
  auto fwd = net_.forward(in, mix_seed(cfg_.train.seed, static_cast<std::uint64_t>(step_), 2));
  const Var<float>& out = fwd.output;
  const Var<float>& edge_pred = fwd.dec.preds[2].edge;
  Var<float> real = constant(in.image);

  // Discriminator: real [Y; E] against fake [O; E_hat], one batched pass.
  disc_opt_.zero_grad();
  Var<float> pairs = concat<float>({concat<float>({real, constant(in.edge)}, 1),
                                    concat<float>({out.detach(), edge_pred.detach()}, 1)},
                                   0);
  Var<float> scores = disc_(pairs, true);
  Var<float> d_loss = objectives::discriminator_loss(slice(scores, 0, 0, b), slice(scores, 0, b, b));
  d_loss.backward();
  disc_opt_.step();

  // Encoder side.
  const auto dp = disc_params(disc_);
  set_trainable(dp, false);
  Var<float> l_adv = objectives::adversarial_g_loss(disc_(concat<float>({out, edge_pred}, 1), false));
  Var<float> l_p = objectives::perceptual_loss(extractor_, out, real);
  Var<float> l_ipt = add(l_p, l_adv);
  auto msr = objectives::msr_loss(fwd.dec.preds, target, extractor_);
  Tensor<float> w_bar(mean_.online.shape());
  w_bar.data() = mean_.online.data().cast<float>();
  Var<float> l_fid = objectives::fidelity_loss(fwd.style.w_star, constant(w_bar));
  Var<float> total;
  try {
    total = objectives::total_loss(l_ipt, msr.total, l_fid, cfg_.train.weights);
  } catch (const objectives::LossError& e) {
    set_trainable(dp, true);
    throw TrainError("step " + std::to_string(step_) + ": " + e.what());
  }
  enc_opt_.zero_grad();
  total.backward();
  const double gnorm = clip_grad_norm(enc_opt_.params(), cfg_.train.clip_norm);
  enc_opt_.step();
  set_trainable(dp, true);
  if (!std::isfinite(d_loss.item())) throw TrainError("step " + std::to_string(step_) + ": non-finite discriminator loss");

  const bool resampled = model::soft_update(mean_, [this](std::uint64_t i) { return draw_mean_latent(i); });
  const double l1 = masked_l1(out.value(), in.image, in.mask);
  ++step_;
  double rec = 0, perc = 0, edge = 0, seg = 0;
  for (int r = 0; r < 3; ++r) {
    rec += msr.rec[r];
    perc += msr.perceptual[r];
    edge += msr.edge[r];
    seg += msr.seg[r];
  }
  return {step_,
          {{"total", total.item()},
           {"ipt", l_ipt.item()},
           {"perceptual", l_p.item()},
           {"adv", l_adv.item()},
           {"msr", msr.total.item()},
           {"msr_rec", rec},
           {"msr_perceptual", perc},
           {"msr_edge", edge},
           {"msr_seg", seg},
           {"fid", l_fid.item()},
           {"d_loss", d_loss.item()},
           {"grad_norm", gnorm},
           {"masked_l1", l1},
           {"resampled", resampled ? 1.0 : 0.0}}};
}

double EncoderTrainer::evaluate_masked_l1() const {
  NoGradGuard ng;
  const size_t n = corpus_->samples.size(), b = static_cast<size_t>(cfg_.train.batch);
  double total = 0;
  for (size_t start = 0; start < n; start += b) {
    std::vector<size_t> idx;
    std::vector<masking::Mask> masks;
    for (size_t i = start; i < std::min(n, start + b); ++i) {
      idx.push_back(i);
      masks.push_back(fixed_mask(i));
    }
    Batch batch = make_batch(*corpus_, idx, masks);
    auto fwd = net_.forward(batch.input, mix_seed(cfg_.train.seed, 0xe7a1));
    Tensor<float> comp = masking::composite(fwd.output.value(), batch.input.image, batch.input.mask);
    total += masked_l1(comp, batch.input.image, batch.input.mask) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(n);
}

Checkpoint EncoderTrainer::checkpoint() const {
  Checkpoint c;
  c.config_text = serialize(cfg_);
  c.config_hash = config_hash(cfg_.model);
  c.scalars["phase"] = to_string(Phase::TrainEncoder);
  c.scalars["step"] = std::to_string(step_);
  store_params(c, "param.", net_.all_params());
  put_adam(c, "adam.enc", enc_opt_);
  put_disc(c, "disc", disc_);
  put_adam(c, "adam.disc", disc_opt_);
  std::ostringstream tau;
  tau << std::setprecision(17) << mean_.tau;
  c.scalars["mean.tau"] = tau.str();
  c.scalars["mean.resamples"] = std::to_string(mean_.resamples);
  c.f64["mean.online"] = mean_.online;
  c.f64["mean.target"] = mean_.target;
  return c;
}

void EncoderTrainer::restore(const Checkpoint& c) {
  check_header(c, cfg_, Phase::TrainEncoder);
  restore_params(c, "param.", net_.all_params());
  get_adam(c, "adam.enc", enc_opt_);
  get_disc(c, "disc", disc_);
  get_adam(c, "adam.disc", disc_opt_);
  step_ = c.scalar_int("step");
  mean_.tau = c.scalar_double("mean.tau");
  mean_.resamples = static_cast<std::uint64_t>(c.scalar_int("mean.resamples"));
  mean_.online = c.f64.at("mean.online");
  mean_.target = c.f64.at("mean.target");
}

}  // namespace mmif::train
