#pragma once

// Synthetic MoE generator: heavy-tailed (Student-t, df 3) attention
// projections, expert FFN weights drawn Gaussian or with a graded tail
// spread, plus an activation-frequency table with a configurable imbalance
// ratio. Per-matrix seeding keeps generation order-independent.

#include <cstdint>
#include <random>
#include <string>

#include "milo/matrix.hpp"
#include "milo/tensor_store.hpp"

namespace milo {

enum class ExpertDist { Gaussian, StudentTMix };

struct SynthSpec {
  int layers = 2;
  int experts = 4;
  std::size_t model_dim = 128;
  std::size_t ffn_dim = 256;
  std::uint64_t seed = 0;
  double imbalance = 4.0;  // most / least activated expert count ratio
  ExpertDist expert_dist = ExpertDist::Gaussian;
  double expert_df_min = 5.0;  // heaviest expert tail for StudentTMix

  void validate() const {
    if (layers < 1 || experts < 1) throw ConfigError("layers and experts must be >= 1");
    if (model_dim % 64 != 0 || ffn_dim % 64 != 0)
      throw ConfigError("model_dim and ffn_dim must be multiples of 64");
    if (imbalance < 1.0) throw ConfigError("imbalance must be >= 1");
    if (expert_df_min <= 4.0) throw ConfigError("expert_df_min must be > 4");
  }
};

std::uint64_t fnv1a64(const std::string& s);

/// Manifest for the spec (4 attention + 3 matrices per expert per layer).
ModelManifest synth_manifest(const SynthSpec& spec);

/// Deterministic weights for one manifest entry.
WeightMatrix synth_matrix(const SynthSpec& spec, const MatrixEntry& entry);

/// Activation counts per layer: geometric interpolation from
/// round(10*imbalance) down to 10, so max/min hits the imbalance exactly.
ExpertFrequencyStats synth_frequency_stats(const SynthSpec& spec);

/// Writes manifest.json, freq_stats.json and tensors/<name>.milo under out_dir.
void synth_model(const SynthSpec& spec, const std::string& out_dir);

}  // namespace milo
