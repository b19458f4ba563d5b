#include "milo/synth.hpp"

#include <cmath>
#include <filesystem>

namespace milo {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ModelManifest synth_manifest(const SynthSpec& spec) {
  spec.validate();
  ModelManifest m;
  for (int l = 0; l < spec.layers; ++l) {
    LayerEntry layer;
    layer.layer_index = l;
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (const char* proj : {"q", "k", "v", "o"}) {
      MatrixEntry e;
      e.name = prefix + "attn." + proj;
      e.rows = spec.model_dim;
      e.cols = spec.model_dim;
      e.structure_tag = StructureTag::Attention;
      layer.matrices.push_back(std::move(e));
    }
    for (int x = 0; x < spec.experts; ++x) {
      const std::string eprefix = prefix + "expert" + std::to_string(x) + ".";
      const struct {
        const char* name;
        std::size_t rows, cols;
      } mats[3] = {{"w1", spec.model_dim, spec.ffn_dim},
                   {"w2", spec.ffn_dim, spec.model_dim},
                   {"w3", spec.model_dim, spec.ffn_dim}};
      for (const auto& mm : mats) {
        MatrixEntry e;
        e.name = eprefix + mm.name;
        e.rows = mm.rows;
        e.cols = mm.cols;
        e.structure_tag = StructureTag::Expert;
        e.expert_index = x;
        layer.matrices.push_back(std::move(e));
      }
    }
    m.layers.push_back(std::move(layer));
  }
  m.validate();
  return m;
}

WeightMatrix synth_matrix(const SynthSpec& spec, const MatrixEntry& entry) {
  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ull + fnv1a64(entry.name));
  WeightMatrix w(entry.rows, entry.cols, entry.name);

  if (entry.structure_tag != StructureTag::Expert) {
    std::student_t_distribution<float> dist(3.0f);
    for (float& v : w.data) v = 0.02f * dist(rng);
    return w;
  }

  double df = 0.0;  // 0 means Gaussian
  if (spec.expert_dist == ExpertDist::StudentTMix && spec.experts > 1) {
    const double x =
        static_cast<double>(*entry.expert_index) / static_cast<double>(spec.experts - 1);
    if (x > 0.0) df = spec.expert_df_min / x;
  }
  if (df == 0.0 || df > 200.0) {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (float& v : w.data) v = 0.02f * dist(rng);
  } else {
    std::student_t_distribution<float> dist(static_cast<float>(df));
    // Normalize to unit variance so experts stay on a common scale.
    const float scale = 0.02f / std::sqrt(static_cast<float>(df / (df - 2.0)));
    for (float& v : w.data) v = scale * dist(rng);
  }
  return w;
}

ExpertFrequencyStats synth_frequency_stats(const SynthSpec& spec) {
  spec.validate();
  ExpertFrequencyStats s;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(spec.experts));
  const double base = 10.0;
  for (int e = 0; e < spec.experts; ++e) {
    double t = spec.experts > 1
                   ? static_cast<double>(spec.experts - 1 - e) /
                         static_cast<double>(spec.experts - 1)
                   : 1.0;
    counts[static_cast<std::size_t>(e)] =
        static_cast<std::int64_t>(std::llround(base * std::pow(spec.imbalance, t)));
  }
  std::int64_t total = 0;
  for (std::int64_t c : counts) total += c;
  for (int l = 0; l < spec.layers; ++l) s.counts.push_back(counts);
  s.total_tokens = total;
  return s;
}

void synth_model(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir + "/tensors");
  ModelManifest manifest = synth_manifest(spec);
  save_manifest(manifest, out_dir + "/manifest.json");
  save_frequency_stats(synth_frequency_stats(spec), out_dir + "/freq_stats.json");
  for (const MatrixEntry* e : manifest.all_matrices()) {
    WeightMatrix w = synth_matrix(spec, *e);
    save_tensor(w, out_dir + "/tensors/" + e->name + ".milo");
  }
}

}  // namespace milo
