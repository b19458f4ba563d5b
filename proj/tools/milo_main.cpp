// milo: calibration-free INT3 MoE compression toolkit.
//
// Verbs: synth, analyze, plan-ranks, quantize, pack, gemm-check, report.
// Exit codes: 0 ok, 2 config error, 3 data/format error, 4 numeric failure,
// 5 acceptance (gemm-check) failure.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "milo/pipeline.hpp"

namespace {

using nlohmann::json;

struct GlobalOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out_dir = "milo-out";
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw milo::ConfigError("cannot open config '" + path + "'");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw milo::ConfigError("config '" + path + "' is not a JSON object");
  return j;
}

milo::QuantConfig quant_from_config(const json& cfg) {
  milo::QuantConfig q;
  q.bits = cfg.value("bits", q.bits);
  q.group_size = cfg.value("group_size", q.group_size);
  q.p = cfg.value("p", q.p);
  q.beta0 = cfg.value("beta0", q.beta0);
  q.beta_growth = cfg.value("beta_growth", q.beta_growth);
  q.inner_iters = cfg.value("inner_iters", q.inner_iters);
  return q;
}

milo::MiloConfig milo_from_config(const json& cfg) {
  milo::MiloConfig m;
  m.quant = quant_from_config(cfg);
  m.max_outer_iters = cfg.value("max_outer_iters", m.max_outer_iters);
  m.window = cfg.value("window", m.window);
  m.rel_tol = cfg.value("rel_tol", m.rel_tol);
  m.quantize_compensator = cfg.value("quantize_compensator", m.quantize_compensator);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MiLo: INT3 MoE compression with low-rank compensators"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--seed", g.seed, "Seed for synthetic generators");
  app.add_option("--workers", g.workers, "Worker threads for per-matrix stages");
  app.add_option("--out", g.out_dir, "Output directory");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic MoE model");
  milo::SynthSpec spec;
  std::string expert_dist = "gaussian";
  synth->add_option("--layers", spec.layers);
  synth->add_option("--experts", spec.experts);
  synth->add_option("--model-dim", spec.model_dim);
  synth->add_option("--ffn-dim", spec.ffn_dim);
  synth->add_option("--imbalance", spec.imbalance, "Expert frequency max/min ratio");
  synth->add_option("--expert-dist", expert_dist, "gaussian | student-t-mix");
  synth->add_option("--expert-df-min", spec.expert_df_min);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Weight statistics and quant error");
  std::string manifest_path, tensor_dir, freq_path, stats_path, plan_path, policy;
  analyze->add_option("--manifest", manifest_path)->required();
  analyze->add_option("--tensors", tensor_dir)->required();
  analyze->add_option("--freq-stats", freq_path);

  // plan-ranks
  auto* plan = app.add_subcommand("plan-ranks", "Assign compensator ranks");
  std::uint64_t budget = 0;
  std::string candidates = "Uniform,Dense,Sparse";
  plan->add_option("--manifest", manifest_path)->required();
  plan->add_option("--stats", stats_path);
  plan->add_option("--policy", policy, "e.g. Uniform-16 or Dense-64+Kurtosis-16");
  plan->add_option("--budget", budget, "Memory budget in bytes");
  plan->add_option("--candidates", candidates, "Policy families for budget search");

  // quantize
  auto* quant = app.add_subcommand("quantize", "Compress every matrix in the manifest");
  quant->add_option("--manifest", manifest_path)->required();
  quant->add_option("--tensors", tensor_dir)->required();
  quant->add_option("--plan", plan_path);
  quant->add_option("--policy", policy);
  quant->add_option("--stats", stats_path);
  bool real_compensator = false;
  quant->add_flag("--real-compensator", real_compensator,
                  "Keep compensators in 32-bit storage (skip symmetric INT3)");

  // pack
  auto* pack = app.add_subcommand("pack", "Reshuffle + split packed artifacts");
  std::string artifact_dir;
  bool no_tile = false, no_split = false;
  pack->add_option("--manifest", manifest_path)->required();
  pack->add_option("--artifacts", artifact_dir)->required();
  pack->add_flag("--no-tile", no_tile);
  pack->add_flag("--no-split", no_split);

  // gemm-check
  auto* gemm = app.add_subcommand("gemm-check", "Mixed-precision GeMM verification");
  std::string shapes = "512x512";
  std::string batches = "1,5,16,17,32,64";
  int seeds = 5;
  bool appendix = false;
  std::uint64_t sweep_to = 0;
  gemm->add_option("--shapes", shapes, "Semicolon-separated kxn list");
  gemm->add_option("--batches", batches);
  gemm->add_option("--seeds", seeds);
  gemm->add_option("--sweep-batches-to", sweep_to, "Run every batch 1..N on the first shape");
  gemm->add_flag("--appendix-shapes", appendix, "Add (2048,11008) and (4096,14336)");

  // report
  auto* report = app.add_subcommand("report", "Aggregate run artifacts");
  std::string run_dir;
  report->add_option("--run", run_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = load_config(g.config_path);
    g.seed = cfg.value("seed", g.seed);
    g.workers = cfg.value("workers", g.workers);

    if (*synth) {
      spec.seed = g.seed;
      spec.expert_dist = expert_dist == "student-t-mix" ? milo::ExpertDist::StudentTMix
                         : expert_dist == "gaussian"
                             ? milo::ExpertDist::Gaussian
                             : throw milo::ConfigError("unknown expert distribution '" +
                                                       expert_dist + "'");
      milo::synth_model(spec, g.out_dir);
      std::cout << "synth: wrote " << g.out_dir << "/manifest.json\n";
    } else if (*analyze) {
      milo::AnalyzeOptions opts;
      opts.manifest_path = manifest_path;
      opts.tensor_dir = tensor_dir;
      if (!freq_path.empty()) opts.freq_stats_path = freq_path;
      opts.out_dir = g.out_dir;
      opts.quant = quant_from_config(cfg);
      opts.workers = g.workers;
      auto stats = milo::run_analyze(opts);
      std::cout << "analyze: " << stats.size() << " matrices -> " << g.out_dir
                << "/analysis\n";
    } else if (*plan) {
      milo::PlanOptions opts;
      opts.manifest_path = manifest_path;
      if (!stats_path.empty()) opts.stats_path = stats_path;
      if (!policy.empty()) opts.policy = policy;
      if (budget > 0) opts.budget_bytes = budget;
      opts.candidates.clear();
      std::stringstream ss(candidates);
      std::string fam;
      while (std::getline(ss, fam, ',')) {
        if (fam == "Uniform") opts.candidates.push_back(milo::PolicyKind::Uniform);
        else if (fam == "Dense") opts.candidates.push_back(milo::PolicyKind::Dense);
        else if (fam == "Sparse") opts.candidates.push_back(milo::PolicyKind::Sparse);
        else if (fam == "Frequency") opts.candidates.push_back(milo::PolicyKind::Frequency);
        else if (fam == "Kurtosis") opts.candidates.push_back(milo::PolicyKind::Kurtosis);
        else throw milo::PlanError("unknown policy family '" + fam + "'");
      }
      opts.out_path = g.out_dir + "/plan.json";
      std::filesystem::create_directories(g.out_dir);
      milo::RankPlan p = milo::run_plan(opts);
      std::cout << "plan-ranks: " << p.policy << " memory=" << p.memory_bytes
                << " bytes -> " << opts.out_path << "\n";
    } else if (*quant) {
      milo::QuantizeOptions opts;
      opts.manifest_path = manifest_path;
      opts.tensor_dir = tensor_dir;
      if (!plan_path.empty()) opts.plan_path = plan_path;
      if (!policy.empty()) opts.policy = policy;
      if (!stats_path.empty()) opts.stats_path = stats_path;
      opts.out_dir = g.out_dir;
      opts.milo = milo_from_config(cfg);
      if (real_compensator) opts.milo.quantize_compensator = false;
      opts.workers = g.workers;
      auto t0 = std::chrono::steady_clock::now();
      milo::QuantizeSummary s = milo::run_quantize(opts);
      auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
      std::cout << "quantize: " << s.matrices << " matrices policy=" << s.policy
                << " total_epsilon=" << s.total_epsilon << " memory=" << s.memory_bytes
                << " wall_time_ms=" << ms << "\n";
    } else if (*pack) {
      milo::PackOptions opts;
      opts.manifest_path = manifest_path;
      opts.artifact_dir = artifact_dir;
      opts.out_dir = g.out_dir;
      opts.tiled = !no_tile;
      opts.split = !no_split;
      milo::run_pack(opts);
      std::cout << "pack: wrote " << g.out_dir << "/packed\n";
    } else if (*gemm) {
      milo::GemmCheckOptions opts;
      opts.shapes.clear();
      std::stringstream ss(shapes);
      std::string item;
      while (std::getline(ss, item, ';')) {
        auto x = item.find('x');
        if (x == std::string::npos)
          throw milo::ConfigError("bad shape '" + item + "', expected kxn");
        opts.shapes.emplace_back(std::stoull(item.substr(0, x)),
                                 std::stoull(item.substr(x + 1)));
      }
      if (appendix) {
        opts.shapes.emplace_back(2048, 11008);
        opts.shapes.emplace_back(4096, 14336);
      }
      opts.batches.clear();
      std::stringstream bs(batches);
      while (std::getline(bs, item, ',')) opts.batches.push_back(std::stoull(item));
      opts.seeds = seeds;
      if (sweep_to > 0) opts.sweep_batches_to = sweep_to;
      std::filesystem::create_directories(g.out_dir);
      opts.out_path = g.out_dir + "/gemm_check.json";
      milo::GemmCheckReport r = milo::run_gemm_check(opts);
      std::cout << "gemm-check: max_rel_error=" << r.max_rel_error
                << " pass=" << (r.pass ? "true" : "false") << "\n";
      if (!r.pass) return 5;
    } else if (*report) {
      milo::ReportOptions opts;
      opts.run_dir = run_dir;
      opts.out_dir = g.out_dir;
      milo::run_report(opts);
      std::cout << "report: wrote " << g.out_dir << "/report\n";
    }
  } catch (const milo::MiloError& e) {
    std::cerr << "error[" << milo::error_code_name(e.code()) << "]: " << e.what()
              << "\n";
    return milo::error_exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
