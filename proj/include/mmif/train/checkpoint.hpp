#pragma once

#include "mmif/core/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace mmif::train {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// Directory layout: meta.txt (text header, array index, embedded config) plus one raw
/// little-endian file per array under arrays/ (.f32 or .f64).
struct Checkpoint {
  int version = kCheckpointVersion;
  std::string config_text;
  std::string config_hash;
  std::map<std::string, std::string> scalars;  // step counters, tau, ...
  std::map<std::string, Tensor<float>> f32;
  std::map<std::string, Tensor<double>> f64;

  std::int64_t scalar_int(const std::string& key) const;
  double scalar_double(const std::string& key) const;
};

/// Copies parameter values into `f32` under prefix + name.
void store_params(Checkpoint& c, const std::string& prefix, const ParamList<float>& params);
/// Overwrites parameter values in place; missing arrays or shape changes are errors.
void restore_params(const Checkpoint& c, const std::string& prefix, const ParamList<float>& params);

/// Arrays go first and meta.txt last, so an interrupted save leaves no readable header.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
/// Refuses other versions and truncated or missing array files.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace mmif::train
