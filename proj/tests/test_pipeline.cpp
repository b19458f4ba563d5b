#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "milo/pipeline.hpp"
#include "milo/stats.hpp"

using namespace milo;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("milo_pipe_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

SynthSpec small_spec(std::uint64_t seed = 0) {
  SynthSpec spec;
  spec.layers = 1;
  spec.experts = 2;
  spec.model_dim = 64;
  spec.ffn_dim = 128;
  spec.seed = seed;
  spec.imbalance = 11.7;
  return spec;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

QuantConfig fast_quant() {
  QuantConfig q;
  q.inner_iters = 5;
  return q;
}

MiloConfig fast_milo() {
  MiloConfig m;
  m.quant = fast_quant();
  m.max_outer_iters = 4;
  return m;
}

}  // namespace

TEST_CASE("synth writes the expected matrix count and exact imbalance") {
  TempDir dir("synth");
  SynthSpec spec = small_spec();
  spec.layers = 2;
  spec.experts = 4;
  synth_model(spec, dir.str());

  ModelManifest m = load_manifest(dir.str() + "/manifest.json");
  // 2 layers x (4 attention + 4 experts x 3 matrices).
  CHECK(m.all_matrices().size() == 2 * (4 + 4 * 3));
  for (const MatrixEntry* e : m.all_matrices())
    CHECK(fs::exists(dir.str() + "/tensors/" + e->name + ".milo"));

  ExpertFrequencyStats stats = load_frequency_stats(dir.str() + "/freq_stats.json");
  auto freq = expert_frequencies(stats);
  CHECK(*freq[0].max_min_ratio == doctest::Approx(11.7));
}

TEST_CASE("synth is bit-identical across runs with a fixed seed") {
  TempDir a("synth_a"), b("synth_b");
  synth_model(small_spec(7), a.str());
  synth_model(small_spec(7), b.str());
  for (const auto& entry : fs::recursive_directory_iterator(a.path)) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), a.path);
    CHECK(slurp(entry.path()) == slurp(b.path / rel));
  }
  // And a different seed changes the tensors.
  TempDir c("synth_c");
  synth_model(small_spec(8), c.str());
  CHECK(slurp(a.path / "tensors/layer0.attn.q.milo") !=
        slurp(c.path / "tensors/layer0.attn.q.milo"));
}

TEST_CASE("attention kurtosis dominates expert kurtosis on synthetic models") {
  TempDir dir("analyze");
  synth_model(small_spec(3), dir.str());

  AnalyzeOptions opts;
  opts.manifest_path = dir.str() + "/manifest.json";
  opts.tensor_dir = dir.str() + "/tensors";
  opts.freq_stats_path = dir.str() + "/freq_stats.json";
  opts.out_dir = dir.str();
  opts.quant = fast_quant();
  auto stats = run_analyze(opts);

  double att = 0, exp = 0;
  int n_att = 0, n_exp = 0;
  for (const auto& [name, s] : stats) {
    if (s.structure_tag == StructureTag::Attention) {
      att += s.kurtosis;
      ++n_att;
    } else {
      exp += s.kurtosis;
      ++n_exp;
      CHECK(s.expert_frequency.has_value());
    }
  }
  CHECK(att / n_att > exp / n_exp);
  CHECK(fs::exists(dir.str() + "/analysis/stats.csv"));

  // Stats file round trip.
  auto loaded = load_stats(dir.str() + "/analysis/stats.json");
  CHECK(loaded.size() == stats.size());
  for (const auto& [name, s] : stats)
    CHECK(loaded.at(name).kurtosis == doctest::Approx(s.kurtosis));
}

TEST_CASE("quantize pipeline writes artifacts, reports and an exact memory figure") {
  TempDir dir("quant");
  synth_model(small_spec(5), dir.str());

  QuantizeOptions opts;
  opts.manifest_path = dir.str() + "/manifest.json";
  opts.tensor_dir = dir.str() + "/tensors";
  opts.policy = "Uniform-8";
  opts.out_dir = dir.str();
  opts.milo = fast_milo();
  QuantizeSummary summary = run_quantize(opts);

  ModelManifest m = load_manifest(opts.manifest_path);
  CHECK(summary.matrices == m.all_matrices().size());
  for (const MatrixEntry* e : m.all_matrices()) {
    CHECK(fs::exists(dir.str() + "/artifacts/" + e->name + ".q.milo"));
    CHECK(fs::exists(dir.str() + "/artifacts/" + e->name + ".u.milo"));
    CHECK(fs::exists(dir.str() + "/artifacts/" + e->name + ".report.json"));
  }

  // Reported memory equals the accounting formula for the realized plan.
  RankPlan plan;
  plan.policy = "Uniform-8";
  for (const MatrixEntry* e : m.all_matrices()) plan.ranks[e->name] = 8;
  CHECK(summary.memory_bytes == quantized_memory_bytes(m, plan, 3, 64, 3));

  // Uniform-0 reduces to pure HQQ: no compensators on disk.
  TempDir dir0("quant0");
  synth_model(small_spec(5), dir0.str());
  QuantizeOptions o0 = opts;
  o0.manifest_path = dir0.str() + "/manifest.json";
  o0.tensor_dir = dir0.str() + "/tensors";
  o0.policy = "Uniform-0";
  o0.out_dir = dir0.str();
  QuantizeSummary s0 = run_quantize(o0);
  for (const MatrixEntry* e : m.all_matrices())
    CHECK_FALSE(fs::exists(dir0.str() + "/artifacts/" + e->name + ".u.milo"));

  // A compensated run strictly beats the uncompensated one on total error.
  CHECK(summary.total_epsilon < s0.total_epsilon);
}

TEST_CASE("quantize parallelism does not change numerical output") {
  TempDir a("par1"), b("par4");
  synth_model(small_spec(9), a.str());
  synth_model(small_spec(9), b.str());

  auto run = [&](const std::string& dir, int workers) {
    QuantizeOptions opts;
    opts.manifest_path = dir + "/manifest.json";
    opts.tensor_dir = dir + "/tensors";
    opts.policy = "Uniform-4";
    opts.out_dir = dir;
    opts.milo = fast_milo();
    opts.workers = workers;
    return run_quantize(opts);
  };
  QuantizeSummary s1 = run(a.str(), 1);
  QuantizeSummary s4 = run(b.str(), 4);
  CHECK(s1.total_epsilon == s4.total_epsilon);
  CHECK(slurp(a.path / "artifacts/summary.json") ==
        slurp(b.path / "artifacts/summary.json"));
  CHECK(slurp(a.path / "artifacts/layer0.expert1.w2.q.milo") ==
        slurp(b.path / "artifacts/layer0.expert1.w2.q.milo"));
}

TEST_CASE("plan, pack and report complete the pipeline deterministically") {
  TempDir dir("full");
  synth_model(small_spec(1), dir.str());

  AnalyzeOptions aopts;
  aopts.manifest_path = dir.str() + "/manifest.json";
  aopts.tensor_dir = dir.str() + "/tensors";
  aopts.freq_stats_path = dir.str() + "/freq_stats.json";
  aopts.out_dir = dir.str();
  aopts.quant = fast_quant();
  run_analyze(aopts);

  PlanOptions popts;
  popts.manifest_path = aopts.manifest_path;
  popts.stats_path = dir.str() + "/analysis/stats.json";
  popts.policy = "Dense-16+Kurtosis-4";
  popts.out_path = dir.str() + "/plan.json";
  RankPlan plan = run_plan(popts);
  CHECK(plan.ranks.size() == 10);
  RankPlan loaded = load_plan(popts.out_path);
  CHECK(loaded.ranks == plan.ranks);

  QuantizeOptions qopts;
  qopts.manifest_path = aopts.manifest_path;
  qopts.tensor_dir = aopts.tensor_dir;
  qopts.plan_path = popts.out_path;
  qopts.out_dir = dir.str();
  qopts.milo = fast_milo();
  run_quantize(qopts);

  PackOptions kopts;
  kopts.manifest_path = aopts.manifest_path;
  kopts.artifact_dir = dir.str() + "/artifacts";
  kopts.out_dir = dir.str();
  run_pack(kopts);
  PackedInt3Matrix packed =
      load_packed(dir.str() + "/packed/layer0.attn.q.packed.milo");
  CHECK(packed.layout == PackLayout::Tiled16x64);
  CHECK(packed.split);
  // The packed artifact decodes to the same codes as the linear one.
  PackedInt3Matrix linear = load_packed(dir.str() + "/artifacts/layer0.attn.q.q.milo");
  CHECK(unpack_codes(packed) == unpack_codes(linear));

  ReportOptions ropts;
  ropts.run_dir = dir.str();
  ropts.out_dir = dir.str();
  run_report(ropts);
  CHECK(fs::exists(dir.str() + "/report/report.json"));
  CHECK(fs::exists(dir.str() + "/report/fig_scatter.csv"));
  CHECK(fs::exists(dir.str() + "/report/fig_traces.csv"));

  // Report twice: identical bytes.
  std::string first = slurp(dir.path / "report/report.json");
  run_report(ropts);
  CHECK(slurp(dir.path / "report/report.json") == first);

  // Missing upstream artifacts produce a ConfigError naming the path.
  ReportOptions missing;
  missing.run_dir = dir.str() + "/nowhere";
  missing.out_dir = dir.str();
  CHECK_THROWS_AS(run_report(missing), ConfigError);
}

TEST_CASE("gemm-check desk suite passes and writes a report") {
  TempDir dir("gemmchk");
  GemmCheckOptions opts;
  opts.shapes = {{256, 256}};
  opts.batches = {1, 5, 16, 17};
  opts.seeds = 2;
  opts.out_path = dir.str() + "/gemm_check.json";
  GemmCheckReport r = run_gemm_check(opts);
  CHECK(r.pass);
  CHECK(r.error_handling_pass);
  CHECK(r.boundary_pass);
  CHECK(r.max_rel_error < 0.005);
  CHECK(fs::exists(*opts.out_path));
}

TEST_CASE("frequency-planned quantization runs end to end") {
  TempDir dir("freqplan");
  SynthSpec spec = small_spec(13);
  spec.experts = 4;
  synth_model(spec, dir.str());

  AnalyzeOptions aopts;
  aopts.manifest_path = dir.str() + "/manifest.json";
  aopts.tensor_dir = dir.str() + "/tensors";
  aopts.freq_stats_path = dir.str() + "/freq_stats.json";
  aopts.out_dir = dir.str();
  aopts.quant = fast_quant();
  run_analyze(aopts);

  PlanOptions popts;
  popts.manifest_path = aopts.manifest_path;
  popts.stats_path = dir.str() + "/analysis/stats.json";
  popts.policy = "Frequency-8";
  popts.out_path = dir.str() + "/plan.json";
  RankPlan plan = run_plan(popts);

  // More frequent experts never receive less rank.
  auto stats = load_stats(*popts.stats_path);
  ModelManifest m = load_manifest(aopts.manifest_path);
  for (const MatrixEntry* a : m.all_matrices())
    for (const MatrixEntry* b : m.all_matrices()) {
      if (a->structure_tag != StructureTag::Expert ||
          b->structure_tag != StructureTag::Expert)
        continue;
      double fa = *stats.at(a->name).expert_frequency;
      double fb = *stats.at(b->name).expert_frequency;
      if (fa > fb) CHECK(plan.ranks.at(a->name) >= plan.ranks.at(b->name));
    }
}
