#pragma once

#include <filesystem>
#include <string>

#include "vibrancy/signatures.hpp"
#include "vibrancy/synth.hpp"

namespace support {

struct Planted {
  vibrancy::SynthTruth truth;
  vibrancy::NormalizedTensor normalized;
};

// Synthetic city pushed through aggregation and relative risk.
inline Planted planted(const vibrancy::SynthSpec& spec) {
  Planted p{vibrancy::generate(spec), {}};
  const auto raw = vibrancy::build_signatures(p.truth.traffic, p.truth.taxonomy, p.truth.region, spec.day_type);
  p.normalized = vibrancy::relative_risk(raw);
  return p;
}

inline vibrancy::SynthSpec spec(std::uint64_t seed, std::size_t n, std::size_t k, double sigma) {
  vibrancy::SynthSpec s;
  s.seed = seed;
  s.n_cells = n;
  s.k_true = k;
  s.noise_sigma = sigma;
  return s;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("vibrancy_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace support
