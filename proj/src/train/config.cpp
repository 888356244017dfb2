#include "mmif/train/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace mmif::train {

using model::ConfigError;

std::string to_string(Phase p) { return p == Phase::PretrainGan ? "pretrain-gan" : "train-encoder"; }

Phase parse_phase(const std::string& s) {
  if (s == "pretrain-gan") return Phase::PretrainGan;
  if (s == "train-encoder") return Phase::TrainEncoder;
  throw ConfigError("unknown phase '" + s + "' (pretrain-gan|train-encoder)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("bad value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("bad boolean '" + v + "' for " + key);
}

std::vector<int> parse_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_number<int>(key, trim(tok)));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& model_keys() {
  static const std::map<std::string, Setter> keys = {
      {"resolution", [](RunConfig& c, const std::string& v) { c.model.resolution = parse_number<int>("resolution", v); }},
      {"num_classes", [](RunConfig& c, const std::string& v) { c.model.num_classes = parse_number<int>("num_classes", v); }},
      {"enc_channels", [](RunConfig& c, const std::string& v) { c.model.enc_channels = parse_ints("enc_channels", v); }},
      {"acb_layers", [](RunConfig& c, const std::string& v) { c.model.acb_layers = parse_number<int>("acb_layers", v); }},
      {"acb_rates", [](RunConfig& c, const std::string& v) { c.model.acb_rates = parse_ints("acb_rates", v); }},
      {"acb_gate_channels", [](RunConfig& c, const std::string& v) { c.model.acb_gate_channels = parse_number<int>("acb_gate_channels", v); }},
      {"acb_fc_hidden", [](RunConfig& c, const std::string& v) { c.model.acb_fc_hidden = parse_number<int>("acb_fc_hidden", v); }},
      {"bottleneck", [](RunConfig& c, const std::string& v) { c.model.bottleneck = model::parse_bottleneck(v); }},
      {"dec_full_channels", [](RunConfig& c, const std::string& v) { c.model.dec_full_channels = parse_number<int>("dec_full_channels", v); }},
      {"patch_sizes", [](RunConfig& c, const std::string& v) { c.model.patch_sizes = parse_ints("patch_sizes", v); }},
      {"heads", [](RunConfig& c, const std::string& v) { c.model.heads = parse_number<int>("heads", v); }},
      {"fusion", [](RunConfig& c, const std::string& v) { c.model.fusion = model::parse_fusion(v); }},
      {"guidance", [](RunConfig& c, const std::string& v) { c.model.guidance = model::parse_guidance(v); }},
      {"w_dim", [](RunConfig& c, const std::string& v) { c.model.w_dim = parse_number<int>("w_dim", v); }},
      {"map2style_channels", [](RunConfig& c, const std::string& v) { c.model.map2style_channels = parse_number<int>("map2style_channels", v); }},
      {"map2structure_channels", [](RunConfig& c, const std::string& v) { c.model.map2structure_channels = parse_number<int>("map2structure_channels", v); }},
      {"premod_hidden", [](RunConfig& c, const std::string& v) { c.model.premod_hidden = parse_number<int>("premod_hidden", v); }},
      {"gen_base", [](RunConfig& c, const std::string& v) { c.model.gen_base = parse_number<int>("gen_base", v); }},
      {"gen_max", [](RunConfig& c, const std::string& v) { c.model.gen_max = parse_number<int>("gen_max", v); }},
      {"mapping_layers", [](RunConfig& c, const std::string& v) { c.model.mapping_layers = parse_number<int>("mapping_layers", v); }},
      {"noise", [](RunConfig& c, const std::string& v) { c.model.noise = parse_bool("noise", v); }},
      {"disc_base", [](RunConfig& c, const std::string& v) { c.model.disc_base = parse_number<int>("disc_base", v); }},
  };
  return keys;
}

const std::map<std::string, Setter>& train_keys() {
  static const std::map<std::string, Setter> keys = {
      {"lr", [](RunConfig& c, const std::string& v) { c.train.lr = parse_number<double>("lr", v); }},
      {"disc_lr", [](RunConfig& c, const std::string& v) { c.train.disc_lr = parse_number<double>("disc_lr", v); }},
      {"batch", [](RunConfig& c, const std::string& v) { c.train.batch = parse_number<int>("batch", v); }},
      {"steps", [](RunConfig& c, const std::string& v) { c.train.steps = parse_number<int>("steps", v); }},
      {"tau", [](RunConfig& c, const std::string& v) { c.train.tau = parse_number<double>("tau", v); }},
      {"lambda_msr", [](RunConfig& c, const std::string& v) { c.train.weights.msr = parse_number<double>("lambda_msr", v); }},
      {"lambda_fid", [](RunConfig& c, const std::string& v) { c.train.weights.fid = parse_number<double>("lambda_fid", v); }},
      {"clip_norm", [](RunConfig& c, const std::string& v) { c.train.clip_norm = parse_number<double>("clip_norm", v); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); }},
      {"phase", [](RunConfig& c, const std::string& v) { c.train.phase = parse_phase(v); }},
      {"joint_generator", [](RunConfig& c, const std::string& v) { c.train.joint_generator = parse_bool("joint_generator", v); }},
      {"mean_latent_samples", [](RunConfig& c, const std::string& v) { c.train.mean_latent_samples = parse_number<int>("mean_latent_samples", v); }},
      {"log_every", [](RunConfig& c, const std::string& v) { c.train.log_every = parse_number<int>("log_every", v); }},
      {"ckpt_every", [](RunConfig& c, const std::string& v) { c.train.ckpt_every = parse_number<int>("ckpt_every", v); }},
      {"extractor_base", [](RunConfig& c, const std::string& v) { c.train.extractor_base = parse_number<int>("extractor_base", v); }},
      {"extractor_seed", [](RunConfig& c, const std::string& v) { c.train.extractor_seed = parse_number<std::uint64_t>("extractor_seed", v); }},
      {"mask_kind", [](RunConfig& c, const std::string& v) { c.train.mask_kind = masking::parse_kind(v); }},
      {"mask_buckets", [](RunConfig& c, const std::string& v) { c.train.mask_buckets = masking::parse_buckets(v); }},
      {"fixed_masks", [](RunConfig& c, const std::string& v) { c.train.fixed_masks = parse_bool("fixed_masks", v); }},
      {"canny_low", [](RunConfig& c, const std::string& v) { c.train.canny.low = parse_number<float>("canny_low", v); }},
      {"canny_high", [](RunConfig& c, const std::string& v) { c.train.canny.high = parse_number<float>("canny_high", v); }},
      {"canny_sigma", [](RunConfig& c, const std::string& v) { c.train.canny.sigma = parse_number<float>("canny_sigma", v); }},
      {"label_merge", [](RunConfig& c, const std::string& v) { c.train.label_merge = v; }},
  };
  return keys;
}

void set_key(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  const auto& table = section == "model" ? model_keys() : train_keys();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
  it->second(cfg, value);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    line = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train")
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value inside a section");
    try {
      set_key(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot != std::string::npos) {
    set_key(cfg, key.substr(0, dot), key.substr(dot + 1), value);
    return;
  }
  if (train_keys().count(key)) set_key(cfg, "train", key, value);
  else set_key(cfg, "model", key, value);
}

std::string serialize_model(const model::ModelConfig& m) {
  std::ostringstream os;
  os << "[model]\n"
     << "resolution = " << m.resolution << "\n"
     << "num_classes = " << m.num_classes << "\n"
     << "enc_channels = " << join(m.enc_channels) << "\n"
     << "acb_layers = " << m.acb_layers << "\n"
     << "acb_rates = " << join(m.acb_rates) << "\n"
     << "acb_gate_channels = " << m.acb_gate_channels << "\n"
     << "acb_fc_hidden = " << m.acb_fc_hidden << "\n"
     << "bottleneck = " << model::to_string(m.bottleneck) << "\n"
     << "dec_full_channels = " << m.dec_full_channels << "\n"
     << "patch_sizes = " << join(m.patch_sizes) << "\n"
     << "heads = " << m.heads << "\n"
     << "fusion = " << model::to_string(m.fusion) << "\n"
     << "guidance = " << model::to_string(m.guidance) << "\n"
     << "w_dim = " << m.w_dim << "\n"
     << "map2style_channels = " << m.map2style_channels << "\n"
     << "map2structure_channels = " << m.map2structure_channels << "\n"
     << "premod_hidden = " << m.premod_hidden << "\n"
     << "gen_base = " << m.gen_base << "\n"
     << "gen_max = " << m.gen_max << "\n"
     << "mapping_layers = " << m.mapping_layers << "\n"
     << "noise = " << (m.noise ? "true" : "false") << "\n"
     << "disc_base = " << m.disc_base << "\n";
  return os.str();
}

std::string serialize(const RunConfig& c) {
  const TrainConfig& t = c.train;
  std::string buckets;
  for (size_t i = 0; i < t.mask_buckets.size(); ++i) buckets += (i ? "," : "") + masking::to_string(t.mask_buckets[i]);
  std::ostringstream os;
  os << serialize_model(c.model) << "\n[train]\n"
     << "lr = " << fmt(t.lr) << "\n"
     << "disc_lr = " << fmt(t.disc_lr) << "\n"
     << "batch = " << t.batch << "\n"
     << "steps = " << t.steps << "\n"
     << "tau = " << fmt(t.tau) << "\n"
     << "lambda_msr = " << fmt(t.weights.msr) << "\n"
     << "lambda_fid = " << fmt(t.weights.fid) << "\n"
     << "clip_norm = " << fmt(t.clip_norm) << "\n"
     << "seed = " << t.seed << "\n"
     << "phase = " << to_string(t.phase) << "\n"
     << "joint_generator = " << (t.joint_generator ? "true" : "false") << "\n"
     << "mean_latent_samples = " << t.mean_latent_samples << "\n"
     << "log_every = " << t.log_every << "\n"
     << "ckpt_every = " << t.ckpt_every << "\n"
     << "extractor_base = " << t.extractor_base << "\n"
     << "extractor_seed = " << t.extractor_seed << "\n"
     << "mask_kind = " << masking::to_string(t.mask_kind) << "\n"
     << "mask_buckets = " << buckets << "\n"
     << "fixed_masks = " << (t.fixed_masks ? "true" : "false") << "\n"
     << "canny_low = " << fmt(t.canny.low) << "\n"
     << "canny_high = " << fmt(t.canny.high) << "\n"
     << "canny_sigma = " << fmt(t.canny.sigma) << "\n";
  if (!t.label_merge.empty()) os << "label_merge = " << t.label_merge << "\n";
  return os.str();
}

std::string config_hash(const model::ModelConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_model(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace mmif::train
