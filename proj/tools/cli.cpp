#include "cli.hpp"

#include "mmif/eval/evaluate.hpp"
#include "mmif/infer/inpainter.hpp"
#include "mmif/train/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mmif::cli {
namespace {

namespace fs = std::filesystem;

/// Flags shared by the commands that build a RunConfig.
struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> resolution;
  std::optional<int> steps;
};

void add_common(CLI::App* c, Common& o) {
  c->add_option("--config", o.config, "INI file with [model] and [train] sections")->check(CLI::ExistingFile);
  c->add_option("--set", o.sets, "Config override key=value (repeatable)");
  c->add_option("--seed", o.seed, "Seed for every random stream");
  c->add_option("--resolution", o.resolution, "Model resolution s");
  c->add_option("--steps", o.steps, "Total training steps");
}

/// Config file, then flags.
train::RunConfig resolve(const Common& o) {
  train::RunConfig cfg = o.config.empty() ? train::RunConfig{} : train::load_config(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw model::ConfigError("--set expects key=value, got '" + kv + "'");
    train::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.resolution) cfg.model.resolution = *o.resolution;
  if (o.steps) cfg.train.steps = *o.steps;
  return cfg;
}

train::Corpus corpus_for(const std::string& manifest, data::Split split, const train::RunConfig& cfg) {
  return train::load_corpus(manifest, split, cfg.model.resolution, cfg.train.label_merge, cfg.train.canny);
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

/// "o.png" -> "o.raw.png".
fs::path raw_path(const fs::path& out) {
  fs::path p = out;
  return p.replace_filename(out.stem().string() + ".raw" + out.extension().string());
}

bool holds_phase(const fs::path& dir, train::Phase phase) {
  if (!fs::exists(dir / "meta.txt")) return false;
  const auto c = train::load_checkpoint(dir);
  const auto it = c.scalars.find("phase");
  return it != c.scalars.end() && it->second == train::to_string(phase);
}

template <typename Trainer>
void train_loop(Trainer& t, const train::RunConfig& cfg, const fs::path& ckpt, std::ostream& err) {
  const int remaining = cfg.train.steps - static_cast<int>(t.steps_done());
  fs::create_directories(ckpt);
  std::ofstream log(ckpt / "metrics.jsonl", std::ios::app);
  const int every = std::max(1, cfg.train.log_every);
  train::run_training(t, std::max(0, remaining), nullptr, ckpt, cfg.train.ckpt_every, [&](const train::StepLog& s) {
    if (s.step % every != 0) return;
    train::write_log(log, s);
    if (s.step % (every * 50) == 0) {
      err << "step " << s.step;
      for (const auto& [k, v] : s.terms)
        if (k == "total" || k == "g_loss" || k == "d_loss" || k == "masked_l1") err << " " << k << "=" << v;
      err << "\n";
    }
  });
}

int cmd_ingest(const Common& co, const std::string& manifest, const std::string& out_dir, int synthetic,
               std::ostream& out) {
  train::RunConfig cfg = resolve(co);
  std::string path = manifest;
  if (synthetic > 0) {
    if (out_dir.empty()) throw std::runtime_error("--synthetic needs --out");
    path = data::write_synthetic_corpus(out_dir, synthetic, cfg.model.resolution, cfg.train.seed).string();
  }
  if (path.empty()) throw std::runtime_error("ingest needs --manifest or --synthetic");
  nlohmann::ordered_json summary{{"manifest", path}, {"resolution", cfg.model.resolution}};
  int num_classes = 1;
  for (data::Split split : {data::Split::Train, data::Split::Val, data::Split::Test}) {
    const auto recs = data::filter_split(data::load_manifest(path), split);
    summary[data::to_string(split)] = recs.size();
    if (recs.empty()) continue;
    const train::Corpus c = corpus_for(path, split, cfg);
    num_classes = std::max(num_classes, c.num_classes);
    if (!out_dir.empty() && synthetic == 0) {
      const fs::path dir = fs::path(out_dir) / data::to_string(split);
      fs::create_directories(dir);
      for (const auto& smp : c.samples) {
        Tensor<float> img01 = smp.image;
        img01.data() = (img01.data() + 1.0f) * 0.5f;
        data::save_png(dir / (smp.id + ".png"), data::from_tensor(img01));
        data::save_png(dir / (smp.id + "_edge.png"),
                       data::from_tensor(smp.edge.reshaped(Shape{1, smp.edge.dim(0), smp.edge.dim(1)})));
        data::LabelImage li{static_cast<int>(smp.seg.dim(1)), static_cast<int>(smp.seg.dim(0)),
                            std::vector<std::int32_t>(smp.seg.ptr(), smp.seg.ptr() + smp.seg.size())};
        data::write_file(dir / (smp.id + "_seg.png"), data::encode_label_png(li));
      }
    }
  }
  summary["num_classes"] = num_classes;
  out << summary.dump() << "\n";
  return 0;
}

int cmd_mask_gen(const Common& co, const std::string& bucket, const std::string& kind, int n, const std::string& out_dir,
                 std::ostream& out) {
  const train::RunConfig cfg = resolve(co);
  if (out_dir.empty()) throw std::runtime_error("mask-gen needs --out");
  const masking::Bucket b = masking::parse_bucket(bucket);
  const masking::MaskKind k = masking::parse_kind(kind);
  const Index s = cfg.model.resolution;
  fs::create_directories(out_dir);
  std::ofstream index(fs::path(out_dir) / "coverage.jsonl");
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = masking::eval_mask_seed(cfg.train.seed, static_cast<std::uint64_t>(i), b);
    const masking::Mask m = masking::generate_mask({k, b, seed}, s, s);
    char name[32];
    std::snprintf(name, sizeof name, "mask_%04d.png", i);
    masking::save_mask(fs::path(out_dir) / name, m);
    nlohmann::ordered_json rec{{"file", name},     {"bucket", bucket}, {"kind", kind},
                               {"seed", seed},     {"size", s},        {"coverage", masking::coverage(m)}};
    index << rec.dump() << "\n";
  }
  out << n << " masks written to " << out_dir << "\n";
  return 0;
}

int cmd_pretrain(const Common& co, const std::string& manifest, const std::string& ckpt, std::ostream& out,
                 std::ostream& err) {
  train::RunConfig cfg = resolve(co);
  cfg.train.phase = train::Phase::PretrainGan;
  const train::Corpus corpus = corpus_for(manifest, data::Split::Train, cfg);
  train::GanPretrainer t(cfg, corpus);
  if (holds_phase(ckpt, train::Phase::PretrainGan)) t.restore(train::load_checkpoint(ckpt));
  train_loop(t, cfg, ckpt, err);
  out << "pretrain-gan: " << t.steps_done() << " steps, checkpoint in " << ckpt << "\n";
  return 0;
}

int cmd_train_encoder(const Common& co, const std::string& manifest, const std::string& ckpt,
                      const std::string& generator, std::ostream& out, std::ostream& err) {
  train::RunConfig cfg = resolve(co);
  cfg.train.phase = train::Phase::TrainEncoder;
  const train::Corpus corpus = corpus_for(manifest, data::Split::Train, cfg);
  train::EncoderTrainer t(cfg, corpus);
  if (holds_phase(ckpt, train::Phase::TrainEncoder)) {
    t.restore(train::load_checkpoint(ckpt));
    err << "resuming from step " << t.steps_done() << "\n";
  } else if (!generator.empty()) {
    t.load_generator(train::load_checkpoint(generator));
  }
  train_loop(t, cfg, ckpt, err);
  out << "train-encoder: " << t.steps_done() << " steps, masked L1 on training masks "
      << t.evaluate_masked_l1() << ", checkpoint in " << ckpt << "\n";
  return 0;
}

int cmd_eval(const Common& co, const std::string& manifest, const std::string& ckpt, const std::string& buckets,
             const std::string& split, const std::string& kind, int n, const std::string& out_path, std::ostream& out) {
  const train::Checkpoint c = train::load_checkpoint(ckpt);
  const infer::Inpainter inp = infer::Inpainter::from_checkpoint(c);
  // The checkpoint fixes the model; flags may still adjust train-side keys such as the extractor.
  train::RunConfig cfg = train::parse_config(c.config_text);
  for (const auto& kv : co.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw model::ConfigError("--set expects key=value, got '" + kv + "'");
    train::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (train::serialize_model(cfg.model) != train::serialize_model(inp.config()))
    throw model::ConfigError("model keys cannot be overridden at evaluation time");
  if (co.resolution && *co.resolution != inp.config().resolution)
    throw model::ConfigError("checkpoint resolution is " + std::to_string(inp.config().resolution));
  // Masks depend on the evaluation seed only, so every checkpoint sees the same ones.
  cfg.train.seed = co.seed.value_or(0);
  train::Corpus corpus = corpus_for(manifest, data::parse_split(split), cfg);
  if (corpus.num_classes > inp.config().num_classes)
    throw std::runtime_error("corpus has " + std::to_string(corpus.num_classes) + " classes, checkpoint expects " +
                             std::to_string(inp.config().num_classes));
  corpus.num_classes = inp.config().num_classes;
  if (n > 0 && static_cast<size_t>(n) < corpus.samples.size()) corpus.samples.resize(static_cast<size_t>(n));
  eval::EvalOptions o;
  o.buckets = masking::parse_buckets(buckets);
  o.kind = masking::parse_kind(kind);
  o.seed = cfg.train.seed;
  o.batch = cfg.train.batch;
  o.extractor_seed = cfg.train.extractor_seed;
  o.extractor_base = cfg.train.extractor_base;
  const eval::BucketReport rep = eval::evaluate_corpus(eval::network_filler(inp.net()), corpus, o);
  if (!out_path.empty()) {
    write_text(out_path, rep.to_jsonl());
    write_text(fs::path(out_path).replace_extension(".txt"), rep.to_table());
  }
  out << rep.to_table();
  return 0;
}

int cmd_infer(const Common& co, const std::string& ckpt, const std::string& image, const std::string& mask,
              const std::string& edge, const std::string& seg, const std::string& out_path, std::ostream& out) {
  const infer::Inpainter inp = infer::Inpainter::load(ckpt);
  infer::Request r;
  r.image = data::load_image(image, 3);
  r.mask = masking::load_mask(mask);
  if (!edge.empty()) r.edge = data::load_image(edge, 1);
  if (!seg.empty()) r.seg = data::load_labels(seg);
  r.seed = co.seed.value_or(0);
  const infer::Result res = inp.run(r);
  if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
  data::save_png(out_path, res.composite_full);
  data::save_png(raw_path(out_path), res.raw_full);
  out << "wrote " << out_path << " and " << raw_path(out_path).string() << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, std::ostream& out) {
  for (const auto& p : inputs) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot read " + p);
    std::stringstream ss;
    ss << f.rdbuf();
    out << "== " << p << "\n" << eval::BucketReport::from_jsonl(ss.str()).to_table();
  }
  return 0;
}

}  // namespace

void keep_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal guided inpainting with GAN inversion", "mmif"};
  app.require_subcommand(1);
  Common co;
  std::string manifest, ckpt, image, mask, edge, seg, out_path, bucket = "mid", buckets = "low,mid,high",
                                                                 kind = "brush", split = "test", generator;
  int n = 0, synthetic = 0;
  std::vector<std::string> reports;

  auto* ingest = app.add_subcommand("ingest", "Validate a manifest and optionally export prepared samples");
  add_common(ingest, co);
  ingest->add_option("--manifest", manifest, "Line-delimited JSON manifest");
  ingest->add_option("--out", out_path, "Directory for prepared samples or the synthetic corpus");
  ingest->add_option("--synthetic", synthetic, "Write this many procedural images to --out instead");

  auto* maskgen = app.add_subcommand("mask-gen", "Write masks of one difficulty bucket");
  add_common(maskgen, co);
  maskgen->add_option("--bucket", bucket, "low, mid or high")->required();
  maskgen->add_option("--kind", kind, "brush, rect or outpaint");
  maskgen->add_option("--n", n, "Number of masks")->required()->check(CLI::PositiveNumber);
  maskgen->add_option("--out", out_path, "Output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain-gan", "Desk-scale generator pretraining");
  add_common(pretrain, co);
  pretrain->add_option("--manifest", manifest, "Training manifest")->required();
  pretrain->add_option("--ckpt", ckpt, "Checkpoint directory (resumed if it holds one)")->required();

  auto* enc = app.add_subcommand("train-encoder", "Train encoder, decoder and inversion against a frozen generator");
  add_common(enc, co);
  enc->add_option("--manifest", manifest, "Training manifest")->required();
  enc->add_option("--ckpt", ckpt, "Checkpoint directory (resumed if it holds one)")->required();
  enc->add_option("--generator", generator, "Pretraining checkpoint to take the generator from");

  auto* ev = app.add_subcommand("eval", "Bucketed evaluation on fixed masks");
  add_common(ev, co);
  ev->add_option("--manifest", manifest, "Evaluation manifest")->required();
  ev->add_option("--ckpt", ckpt, "Encoder checkpoint")->required();
  ev->add_option("--buckets,--bucket", buckets, "Comma-separated buckets");
  ev->add_option("--split", split, "Manifest split to evaluate");
  ev->add_option("--kind", kind, "Mask kind");
  ev->add_option("--n", n, "Evaluate only the first n images");
  ev->add_option("--out", out_path, "Report file (JSON lines; a .txt table is written beside it)");

  auto* inf = app.add_subcommand("infer", "Inpaint one image");
  add_common(inf, co);
  inf->add_option("--ckpt", ckpt, "Encoder checkpoint")->required();
  inf->add_option("--image", image, "Input image (PNG or JPEG)")->required()->check(CLI::ExistingFile);
  inf->add_option("--mask", mask, "Mask PNG, 255 = missing")->required()->check(CLI::ExistingFile);
  inf->add_option("--edge-hint", edge, "Edge hint image")->check(CLI::ExistingFile);
  inf->add_option("--seg-hint", seg, "Single-channel label PNG")->check(CLI::ExistingFile);
  inf->add_option("--out", out_path, "Composited output; the raw output goes to <stem>.raw.png")->required();

  auto* rep = app.add_subcommand("report", "Print evaluation reports as tables");
  rep->add_option("reports", reports, "Report files written by eval")->required()->check(CLI::ExistingFile);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n" << app.help();
    return 2;
  }

  try {
    if (*ingest) return cmd_ingest(co, manifest, out_path, synthetic, out);
    if (*maskgen) return cmd_mask_gen(co, bucket, kind, n, out_path, out);
    if (*pretrain) return cmd_pretrain(co, manifest, ckpt, out, err);
    if (*enc) return cmd_train_encoder(co, manifest, ckpt, generator, out, err);
    if (*ev) return cmd_eval(co, manifest, ckpt, buckets, split, kind, n, out_path, out);
    if (*inf) return cmd_infer(co, ckpt, image, mask, edge, seg, out_path, out);
    if (*rep) return cmd_report(reports, out);
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mmif::cli
