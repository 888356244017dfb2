#include "mmif/train/checkpoint.hpp"


#include <bit>
#include <fstream>
#include <sstream>

namespace mmif::train {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "raw array files are little-endian");

std::int64_t Checkpoint::scalar_int(const std::string& key) const {
  auto it = scalars.find(key);
  if (it == scalars.end()) throw CheckpointError("checkpoint is missing scalar '" + key + "'");
  return std::stoll(it->second);
}

double Checkpoint::scalar_double(const std::string& key) const {
  auto it = scalars.find(key);
  if (it == scalars.end()) throw CheckpointError("checkpoint is missing scalar '" + key + "'");
  return std::stod(it->second);
}

namespace {

std::string dims(const Shape& s) {
  std::string out;
  for (int i = 0; i < s.rank(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out.empty() ? "-" : out;
}

Shape parse_dims(const std::string& text) {
  std::vector<Index> d;
  if (text != "-") {
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) d.push_back(std::stoll(tok));
  }
  return Shape(d);
}

template <typename T>
void write_raw(const fs::path& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!f) throw CheckpointError("short write to " + path.string());
}

template <typename T>
Tensor<T> read_raw(const fs::path& path, const Shape& shape) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw CheckpointError("missing array file " + path.string());
  Tensor<T> t(shape);
  const auto want = static_cast<std::uintmax_t>(t.size()) * sizeof(T);
  if (bytes != want)
    throw CheckpointError("array file " + path.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                          std::to_string(want));
  std::ifstream f(path, std::ios::binary);
  f.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(want));
  if (!f) throw CheckpointError("short read from " + path.string());
  return t;
}

}  // namespace

void store_params(Checkpoint& c, const std::string& prefix, const ParamList<float>& ps) {
  for (const auto& [name, p] : ps) c.f32[prefix + name] = p.value();
}

void restore_params(const Checkpoint& c, const std::string& prefix, const ParamList<float>& ps) {
  for (const auto& [name, p] : ps) {
    auto it = c.f32.find(prefix + name);
    if (it == c.f32.end()) throw CheckpointError("checkpoint lacks array " + prefix + name);
    if (it->second.shape() != p.shape())
      throw CheckpointError("array " + prefix + name + " has shape " + it->second.shape().str() + ", model expects " +
                            p.shape().str());
    p.mutable_value() = it->second;
  }
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir / "arrays");
  std::ostringstream meta;
  meta << "mmif-checkpoint " << ckpt.version << "\n";
  meta << "config_hash " << ckpt.config_hash << "\n";
  for (const auto& [k, v] : ckpt.scalars) meta << "scalar " << k << " " << v << "\n";
  for (const auto& [name, t] : ckpt.f32) {
    write_raw(dir / "arrays" / (name + ".f32"), t);
    meta << "array f32 " << name << " " << dims(t.shape()) << "\n";
  }
  for (const auto& [name, t] : ckpt.f64) {
    write_raw(dir / "arrays" / (name + ".f64"), t);
    meta << "array f64 " << name << " " << dims(t.shape()) << "\n";
  }
  meta << "config\n" << ckpt.config_text;
  std::ofstream f(dir / "meta.txt", std::ios::binary);
  if (!f) throw CheckpointError("cannot write " + (dir / "meta.txt").string());
  f << meta.str();
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream f(dir / "meta.txt", std::ios::binary);
  if (!f) throw CheckpointError("no checkpoint at " + dir.string() + " (meta.txt missing)");
  Checkpoint c;
  std::string line;
  if (!std::getline(f, line) || line.rfind("mmif-checkpoint ", 0) != 0)
    throw CheckpointError("not a checkpoint header in " + (dir / "meta.txt").string());
  const std::string version = line.substr(16);
  if (version != std::to_string(kCheckpointVersion))
    throw CheckpointError("checkpoint version " + version + " is not supported (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
  bool config_seen = false;
  while (std::getline(f, line)) {
    if (line == "config") {
      config_seen = true;
      std::stringstream rest;
      rest << f.rdbuf();
      c.config_text = rest.str();
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config_hash") {
      ls >> c.config_hash;
    } else if (kind == "scalar") {
      std::string k, v;
      ls >> k >> v;
      c.scalars[k] = v;
    } else if (kind == "array") {
      std::string dtype, name, shape;
      if (!(ls >> dtype >> name >> shape)) throw CheckpointError("malformed array line: " + line);
      if (dtype == "f32") c.f32[name] = read_raw<float>(dir / "arrays" / (name + ".f32"), parse_dims(shape));
      else if (dtype == "f64") c.f64[name] = read_raw<double>(dir / "arrays" / (name + ".f64"), parse_dims(shape));
      else throw CheckpointError("unknown dtype " + dtype);
    } else {
      throw CheckpointError("unrecognized meta line: " + line);
    }
  }
  if (!config_seen) throw CheckpointError("meta.txt is truncated (no config section)");
  return c;
}

}  // namespace mmif::train
