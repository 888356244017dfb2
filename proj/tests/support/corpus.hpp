#pragma once

#include "support/tiny.hpp"

#include "mmif/train/batch.hpp"
#include "mmif/train/config.hpp"

#include <filesystem>
#include <string>

namespace mmif::testing {

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("mmif_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

/// `count` synthetic images written once per name and loaded at `resolution`.
inline train::Corpus synthetic_corpus(const std::string& name, int count, int resolution = 32, int classes = 3) {
  const auto dir = fresh_dir(name);
  const auto manifest = data::write_synthetic_corpus(dir, count, resolution, 7, classes);
  return train::load_corpus(manifest, data::Split::Train, resolution, "", {});
}

/// Tiny network plus small training knobs so a step takes milliseconds.
inline train::RunConfig tiny_run(int resolution = 32) {
  train::RunConfig c;
  c.model = tiny_config(resolution);
  c.train.batch = 2;
  c.train.mean_latent_samples = 64;
  c.train.extractor_base = 4;
  c.train.seed = 5;
  return c;
}

}  // namespace mmif::testing
