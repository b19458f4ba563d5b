#pragma once

// Pipeline stages behind the CLI verbs: analyze -> plan-ranks -> quantize ->
// pack -> gemm-check -> report. Each stage reads/writes files under a run
// directory and is deterministic given its inputs; all writes are atomic.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milo/gemm.hpp"
#include "milo/optimizer.hpp"
#include "milo/rank_policy.hpp"
#include "milo/synth.hpp"

namespace milo {

// --- analyze ----------------------------------------------------------------

struct AnalyzeOptions {
  std::string manifest_path;
  std::string tensor_dir;
  std::optional<std::string> freq_stats_path;
  std::string out_dir;  // writes analysis/stats.json + analysis/stats.csv
  QuantConfig quant;
  double tau = 0.5;  // residual-rank threshold
  int workers = 1;
};

std::map<std::string, MatrixStats> run_analyze(const AnalyzeOptions& opts);

std::map<std::string, MatrixStats> load_stats(const std::string& path);

// --- plan-ranks ---------------------------------------------------------------

struct PlanOptions {
  std::string manifest_path;
  std::optional<std::string> stats_path;  // needed by Frequency/Kurtosis
  std::optional<std::string> policy;      // exclusive with budget
  std::optional<std::uint64_t> budget_bytes;
  std::vector<PolicyKind> candidates{PolicyKind::Uniform, PolicyKind::Dense,
                                     PolicyKind::Sparse};
  MemoryAccounting acct;
  std::string out_path;  // plan.json
};

RankPlan run_plan(const PlanOptions& opts);

RankPlan load_plan(const std::string& path);
void save_plan(const RankPlan& plan, const std::string& path);

// --- quantize -----------------------------------------------------------------

struct QuantizeOptions {
  std::string manifest_path;
  std::string tensor_dir;
  std::optional<std::string> plan_path;  // or an inline policy below
  std::optional<std::string> policy;
  std::optional<std::string> stats_path;
  std::string out_dir;  // writes artifacts/
  MiloConfig milo;      // rank field is taken from the plan per matrix
  int workers = 1;
};

struct QuantizeSummary {
  std::size_t matrices = 0;
  std::string policy;
  double total_epsilon = 0.0;  // sqrt of the summed squared per-matrix errors
  double sum_eps_sq = 0.0;
  std::uint64_t memory_bytes = 0;
  std::map<std::string, double> per_tag_mean_rel_error;
};

QuantizeSummary run_quantize(const QuantizeOptions& opts);

// --- pack ---------------------------------------------------------------------

struct PackOptions {
  std::string manifest_path;
  std::string artifact_dir;  // <name>.q.milo inputs
  std::string out_dir;       // packed/<name>.packed.milo
  bool tiled = true;
  bool split = true;
};

void run_pack(const PackOptions& opts);

// --- gemm-check -----------------------------------------------------------------

struct GemmCheckOptions {
  std::vector<std::pair<std::size_t, std::size_t>> shapes{{512, 512}};
  std::vector<std::size_t> batches{1, 5, 16, 17, 32, 64};
  int seeds = 5;
  double tolerance = 0.005;
  // Optional exhaustive batch sweep (1..max) for the first shape.
  std::optional<std::size_t> sweep_batches_to;
  std::optional<std::string> out_path;
};

struct GemmCheckEntry {
  std::size_t k = 0, n = 0;
  std::pair<int, int> tile{0, 0};
  DequantMode mode = DequantMode::Asymmetric;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GemmCheckReport {
  std::vector<GemmCheckEntry> entries;
  bool error_handling_pass = false;
  bool boundary_pass = false;
  double max_rel_error = 0.0;
  bool pass = false;
};

GemmCheckReport run_gemm_check(const GemmCheckOptions& opts);

// --- report ---------------------------------------------------------------------

struct ReportOptions {
  std::string run_dir;  // directory holding analysis/, plan.json, artifacts/
  std::string out_dir;  // report/report.json + CSV tables
};

void run_report(const ReportOptions& opts);

// --- shared ----------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on `workers` threads; exceptions rethrow after
/// join. Output slots are the caller's responsibility, so scheduling never
/// affects results.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace milo
