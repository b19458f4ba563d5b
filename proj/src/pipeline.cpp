#include "milo/pipeline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "milo/stats.hpp"

namespace milo {

namespace fs = std::filesystem;
using nlohmann::json;

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  const int count = std::min<int>(workers, static_cast<int>(n));
  threads.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// --- analyze ----------------------------------------------------------------

namespace {

json stats_to_json(const MatrixStats& s) {
  json j;
  j["name"] = s.name;
  j["kurtosis"] = s.kurtosis;
  j["residual_rank"] = s.residual_rank;
  j["rel_quant_error"] = s.rel_quant_error;
  j["structure_tag"] = structure_tag_name(s.structure_tag);
  if (s.expert_frequency) j["expert_frequency"] = *s.expert_frequency;
  return j;
}

MatrixStats stats_from_json(const json& j) {
  MatrixStats s;
  s.name = j.at("name").get<std::string>();
  s.kurtosis = j.at("kurtosis").get<double>();
  s.residual_rank = j.at("residual_rank").get<std::size_t>();
  s.rel_quant_error = j.at("rel_quant_error").get<double>();
  s.structure_tag = structure_tag_from_name(j.at("structure_tag").get<std::string>());
  if (j.contains("expert_frequency"))
    s.expert_frequency = j["expert_frequency"].get<double>();
  return s;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::map<std::string, MatrixStats> run_analyze(const AnalyzeOptions& opts) {
  ModelManifest manifest = load_manifest(opts.manifest_path);
  std::vector<const MatrixEntry*> mats = manifest.all_matrices();

  std::vector<std::vector<LayerFrequencies>> freq;
  if (opts.freq_stats_path) {
    ExpertFrequencyStats fstats = load_frequency_stats(*opts.freq_stats_path);
    freq.push_back(expert_frequencies(fstats));
  }

  std::vector<MatrixStats> results(mats.size());
  parallel_for(mats.size(), opts.workers, [&](std::size_t i) {
    const MatrixEntry& e = *mats[i];
    WeightMatrix w = load_tensor(opts.tensor_dir + "/" + e.name + ".milo");
    QuantParams params = init_quant_params(w, opts.quant);
    QuantizedMatrix q = hqq_solve(w, opts.quant, params.scales, params.zeros);
    WeightMatrix wdq = dequantize(q);
    MatrixStats s;
    s.name = e.name;
    s.structure_tag = e.structure_tag;
    s.kurtosis = kurtosis(w);
    s.rel_quant_error = rel_quant_error(w, wdq);
    s.residual_rank = residual_rank(w, wdq, opts.tau);
    results[i] = std::move(s);
  });

  // Attach expert frequencies by (layer, expert_index).
  if (!freq.empty()) {
    std::size_t idx = 0;
    for (std::size_t l = 0; l < manifest.layers.size(); ++l) {
      for (const MatrixEntry& e : manifest.layers[l].matrices) {
        if (e.structure_tag == StructureTag::Expert && l < freq[0].size()) {
          const auto& lf = freq[0][l];
          std::size_t xi = static_cast<std::size_t>(*e.expert_index);
          if (xi < lf.frequencies.size())
            results[idx].expert_frequency = lf.frequencies[xi];
        }
        ++idx;
      }
    }
  }

  std::map<std::string, MatrixStats> out;
  for (auto& s : results) out[s.name] = s;

  fs::create_directories(opts.out_dir + "/analysis");
  json j = json::array();
  for (const MatrixEntry* e : mats) j.push_back(stats_to_json(out.at(e->name)));
  write_file_atomic(opts.out_dir + "/analysis/stats.json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "name,tag,kurtosis,rel_quant_error,residual_rank\n";
  for (const MatrixEntry* e : mats) {
    const MatrixStats& s = out.at(e->name);
    csv << s.name << ',' << structure_tag_name(s.structure_tag) << ','
        << format_double(s.kurtosis) << ',' << format_double(s.rel_quant_error) << ','
        << s.residual_rank << '\n';
  }
  write_file_atomic(opts.out_dir + "/analysis/stats.csv", csv.str());
  return out;
}

std::map<std::string, MatrixStats> load_stats(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("missing stats file '" + path + "'");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw FormatError("stats file '" + path + "' is not valid JSON");
  std::map<std::string, MatrixStats> out;
  for (const auto& je : j) {
    MatrixStats s = stats_from_json(je);
    out[s.name] = std::move(s);
  }
  return out;
}

// --- plan-ranks -----------------------------------------------------------------

void save_plan(const RankPlan& plan, const std::string& path) {
  json j;
  j["policy"] = plan.policy;
  j["ranks"] = plan.ranks;
  j["avg_sparse_rank"] = plan.avg_sparse_rank;
  j["memory_bytes"] = plan.memory_bytes;
  write_file_atomic(path, j.dump(2) + "\n");
}

RankPlan load_plan(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("missing plan file '" + path + "'");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw FormatError("plan file '" + path + "' is not valid JSON");
  RankPlan plan;
  plan.policy = j.at("policy").get<std::string>();
  for (auto it = j.at("ranks").begin(); it != j.at("ranks").end(); ++it)
    plan.ranks[it.key()] = it.value().get<std::size_t>();
  plan.avg_sparse_rank = j.value("avg_sparse_rank", 0.0);
  plan.memory_bytes = j.value("memory_bytes", std::uint64_t{0});
  return plan;
}

RankPlan run_plan(const PlanOptions& opts) {
  ModelManifest manifest = load_manifest(opts.manifest_path);
  std::map<std::string, MatrixStats> stats;
  if (opts.stats_path) stats = load_stats(*opts.stats_path);

  RankPlan plan;
  if (opts.policy) {
    PolicySpec spec = parse_policy(*opts.policy);
    plan = plan_ranks(manifest, stats, spec);
    plan.memory_bytes = quantized_memory_bytes(manifest, plan, opts.acct.bits,
                                               opts.acct.group_size, opts.acct.comp_bits);
  } else if (opts.budget_bytes) {
    std::vector<RankPlan> plans = plan_under_memory(manifest, stats, *opts.budget_bytes,
                                                    opts.candidates, opts.acct);
    // Best realized memory under the budget wins the primary slot.
    plan = *std::max_element(plans.begin(), plans.end(),
                             [](const RankPlan& a, const RankPlan& b) {
                               return a.memory_bytes < b.memory_bytes;
                             });
    json all = json::array();
    for (const RankPlan& p : plans) {
      json jp;
      jp["policy"] = p.policy;
      jp["memory_bytes"] = p.memory_bytes;
      jp["avg_sparse_rank"] = p.avg_sparse_rank;
      all.push_back(jp);
    }
    fs::path out(opts.out_path);
    write_file_atomic((out.parent_path() / "plan_candidates.json").string(),
                      all.dump(2) + "\n");
  } else {
    throw ConfigError("plan-ranks needs either a policy or a memory budget");
  }
  save_plan(plan, opts.out_path);
  return plan;
}

// --- quantize ---------------------------------------------------------------------

namespace {

void save_compensator(const Compensator& c, const std::string& name,
                      const std::string& base_path) {
  if (c.storage == CompensatorStorage::Real) {
    json hu;
    hu["name"] = name + ".U";
    hu["rows"] = c.rows;
    hu["cols"] = c.rank;
    hu["dtype"] = "f32";
    hu["role"] = "compensator-U";
    hu["rank"] = c.rank;
    hu["storage"] = "real";
    std::vector<std::uint8_t> pu(c.U.size() * sizeof(float));
    std::memcpy(pu.data(), c.U.data(), pu.size());
    save_container(hu.dump(), pu, base_path + ".u.milo");

    json hv = hu;
    hv["name"] = name + ".V";
    hv["rows"] = c.rank;
    hv["cols"] = c.cols;
    hv["role"] = "compensator-V";
    std::vector<std::uint8_t> pv(c.V.size() * sizeof(float));
    std::memcpy(pv.data(), c.V.data(), pv.size());
    save_container(hv.dump(), pv, base_path + ".v.milo");
    return;
  }

  auto save_factor = [&](const SymmInt3Factor& f, const std::string& role,
                         bool transposed, const std::string& path,
                         const std::string& fname) {
    json h;
    h["name"] = fname;
    h["rows"] = f.rows;
    h["cols"] = f.cols;
    h["dtype"] = "symm-i3";
    h["role"] = role;
    h["rank"] = c.rank;
    h["storage"] = "symm-int3";
    h["group_size"] = f.group_size;
    h["transposed"] = transposed;
    std::vector<std::uint8_t> payload;
    payload.reserve(f.codes.size() + f.scales.size() * 2);
    payload.insert(payload.end(), f.codes.begin(), f.codes.end());
    for (float s : f.scales) {
      half_t hs = float_to_half(s);
      payload.push_back(static_cast<std::uint8_t>(hs & 0xFF));
      payload.push_back(static_cast<std::uint8_t>((hs >> 8) & 0xFF));
    }
    save_container(h.dump(), payload, path);
  };
  save_factor(c.qU, "compensator-U", false, base_path + ".u.milo", name + ".U");
  save_factor(c.qVt, "compensator-V", true, base_path + ".v.milo", name + ".V");
}

}  // namespace

QuantizeSummary run_quantize(const QuantizeOptions& opts) {
  ModelManifest manifest = load_manifest(opts.manifest_path);
  std::vector<const MatrixEntry*> mats = manifest.all_matrices();

  RankPlan plan;
  if (opts.plan_path) {
    plan = load_plan(*opts.plan_path);
  } else if (opts.policy) {
    std::map<std::string, MatrixStats> stats;
    if (opts.stats_path) stats = load_stats(*opts.stats_path);
    plan = plan_ranks(manifest, stats, parse_policy(*opts.policy));
  } else {
    throw ConfigError("quantize needs a rank plan or a policy");
  }

  const std::string artifact_dir = opts.out_dir + "/artifacts";
  fs::create_directories(artifact_dir);

  struct PerMatrix {
    double eps = 0.0;
    double rel = 0.0;
    json report;
  };
  std::vector<PerMatrix> per(mats.size());

  parallel_for(mats.size(), opts.workers, [&](std::size_t i) {
    const MatrixEntry& e = *mats[i];
    try {
      auto it = plan.ranks.find(e.name);
      if (it == plan.ranks.end())
        throw PlanError("plan has no rank for matrix '" + e.name + "'");
      WeightMatrix w = load_tensor(opts.tensor_dir + "/" + e.name + ".milo");
      MiloConfig cfg = opts.milo;
      cfg.rank = it->second;
      MiloResult res = milo_compress(w, cfg);

      const std::string base = artifact_dir + "/" + e.name;
      save_packed(pack_linear(res.quantized), e.name, base + ".q.milo");
      if (cfg.rank > 0) save_compensator(res.compensator, e.name, base);

      double wnorm = frobenius_norm(w);
      PerMatrix pm;
      pm.eps = res.final_error();
      pm.rel = wnorm > 0 ? pm.eps / wnorm : 0.0;
      pm.report["name"] = e.name;
      pm.report["iterations_run"] = res.iterations_run;
      pm.report["stop_reason"] = stop_reason_name(res.stop_reason);
      pm.report["error_trace"] = res.error_trace;
      pm.report["final_rel_error"] = pm.rel;
      write_file_atomic(base + ".report.json", pm.report.dump(2) + "\n");
      per[i] = std::move(pm);
    } catch (const MiloError&) {
      throw;
    } catch (const std::exception& ex) {
      throw NumericError("matrix '" + e.name + "': " + ex.what());
    }
  });

  QuantizeSummary summary;
  summary.matrices = mats.size();
  summary.policy = plan.policy;
  std::map<std::string, std::pair<double, std::size_t>> tag_acc;
  for (std::size_t i = 0; i < mats.size(); ++i) {
    summary.sum_eps_sq += per[i].eps * per[i].eps;
    auto& acc = tag_acc[structure_tag_name(mats[i]->structure_tag)];
    acc.first += per[i].rel;
    acc.second += 1;
  }
  summary.total_epsilon = std::sqrt(summary.sum_eps_sq);
  for (const auto& [tag, acc] : tag_acc)
    summary.per_tag_mean_rel_error[tag] = acc.first / static_cast<double>(acc.second);
  summary.memory_bytes = quantized_memory_bytes(
      manifest, plan, opts.milo.quant.bits, opts.milo.quant.group_size,
      opts.milo.quantize_compensator ? 3 : 8);

  json js;
  js["matrices"] = summary.matrices;
  js["policy"] = summary.policy;
  js["total_epsilon"] = summary.total_epsilon;
  js["sum_eps_sq"] = summary.sum_eps_sq;
  js["memory_bytes"] = summary.memory_bytes;
  js["per_tag_mean_rel_error"] = summary.per_tag_mean_rel_error;
  write_file_atomic(artifact_dir + "/summary.json", js.dump(2) + "\n");
  return summary;
}

// --- pack -------------------------------------------------------------------------

void run_pack(const PackOptions& opts) {
  ModelManifest manifest = load_manifest(opts.manifest_path);
  fs::create_directories(opts.out_dir + "/packed");
  for (const MatrixEntry* e : manifest.all_matrices()) {
    const std::string in_path = opts.artifact_dir + "/" + e->name + ".q.milo";
    if (!fs::exists(in_path)) throw ConfigError("missing quantized artifact '" + in_path + "'");
    PackedInt3Matrix linear = load_packed(in_path);

    QuantizedMatrix q;
    q.rows = linear.rows;
    q.cols = linear.cols;
    q.bits = 3;
    q.group_size = linear.group_size;
    q.codes = unpack_codes(linear);
    q.scales.resize(linear.scales.size());
    q.zeros.resize(linear.zeros.size());
    for (std::size_t i = 0; i < linear.scales.size(); ++i)
      q.scales[i] = half_to_float(linear.scales[i]);
    for (std::size_t i = 0; i < linear.zeros.size(); ++i)
      q.zeros[i] = half_to_float(linear.zeros[i]);

    PackedInt3Matrix packed = opts.tiled ? reshuffle_tiled(q) : pack_linear(q);
    if (opts.split) packed = split_planes(packed);
    save_packed(packed, e->name, opts.out_dir + "/packed/" + e->name + ".packed.milo");
  }
}

// --- gemm-check ---------------------------------------------------------------------

namespace {

using MatrixXfRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

PackedInt3Matrix random_packed(std::size_t k, std::size_t n, DequantMode mode,
                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (mode == DequantMode::Asymmetric) {
    WeightMatrix w(k, n);
    std::normal_distribution<float> dist(0.0f, 0.05f);
    for (float& v : w.data) v = dist(rng);
    QuantConfig qc;
    QuantParams params = init_quant_params(w, qc);
    return pack_linear(quantize(w, params.scales, params.zeros, qc));
  }
  std::vector<std::uint8_t> codes(k * n);
  std::uniform_int_distribution<int> cdist(0, 7);
  for (auto& c : codes) c = static_cast<std::uint8_t>(cdist(rng));
  std::vector<float> scales(k * n / 64);
  std::normal_distribution<float> sdist(0.0f, 0.05f);
  for (float& s : scales) s = std::fabs(sdist(rng)) + 0.01f;
  return pack_linear_symmetric(k, n, codes, scales, 64);
}

double rel_error_rows(const WeightMatrix& c, const MatrixXfRM& ref, std::size_t rows) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c.cols; ++j) {
      double r = ref(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      double d = static_cast<double>(c.at(i, j)) - r;
      num += d * d;
      den += r * r;
    }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

bool gemm_error_handling_suite() {
  const std::size_t k = 128, n = 256;
  PackedInt3Matrix p = random_packed(k, n, DequantMode::Asymmetric, 7);
  WeightMatrix a(4, k);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    a.data[i] = static_cast<float>(i % 7) * 0.1f;

  bool ok = true;
  // 1. group size must be 64
  try {
    GemmConfig cfg;
    cfg.tile_shape = {128, 128};
    cfg.group_size = 32;
    gemm_w3a16(a, p, std::nullopt, cfg);
    ok = false;
  } catch (const ConfigError&) {
  }
  // 2. (k, n) must be a multiple of the tile shape
  try {
    GemmConfig cfg;
    cfg.tile_shape = {256, 64};  // k = 128 is not a multiple of 256
    gemm_w3a16(a, p, std::nullopt, cfg);
    ok = false;
  } catch (const ShapeError&) {
  }
  // 3. tile shape restricted to the allowed set
  try {
    GemmConfig cfg;
    cfg.tile_shape = {32, 32};
    gemm_w3a16(a, p, std::nullopt, cfg);
    ok = false;
  } catch (const ConfigError&) {
  }
  return ok;
}

bool gemm_boundary_suite(double tolerance) {
  // Batch padding: results for m = 5 equal the first 5 rows of the padded run.
  const std::size_t k = 256, n = 256;
  PackedInt3Matrix p = random_packed(k, n, DequantMode::Asymmetric, 11);
  std::mt19937_64 rng(13);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  WeightMatrix a5(5, k);
  for (float& v : a5.data) v = dist(rng);
  WeightMatrix a16(16, k);
  std::copy(a5.data.begin(), a5.data.end(), a16.data.begin());

  GemmConfig cfg;
  cfg.tile_shape = {128, 128};
  WeightMatrix c5 = gemm_w3a16(a5, p, std::nullopt, cfg);
  WeightMatrix c16 = gemm_w3a16(a16, p, std::nullopt, cfg);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (c5.at(i, j) != c16.at(i, j)) return false;

  // Reduction tail: k/tile0 = 5 leaves a short final pipeline stage; the
  // result must still match the monolithic reference.
  const std::size_t k2 = 5 * 128;
  PackedInt3Matrix p2 = random_packed(k2, n, DequantMode::Asymmetric, 17);
  TileSchedule sched = pipeline_tail_check(k2, cfg);
  if (sched.stage_tiles != std::vector<int>{4, 1}) return false;

  WeightMatrix a2(8, k2);
  for (float& v : a2.data) v = dist(rng);
  WeightMatrix wd = dequant_packed(p2, DequantMode::Asymmetric);
  Eigen::Map<const MatrixXfRM> Am(a2.data.data(), 8, static_cast<Eigen::Index>(k2));
  Eigen::Map<const MatrixXfRM> Wm(wd.data.data(), static_cast<Eigen::Index>(k2),
                                  static_cast<Eigen::Index>(n));
  MatrixXfRM ref = Am * Wm;
  WeightMatrix c2 = gemm_w3a16(a2, p2, std::nullopt, cfg);
  return rel_error_rows(c2, ref, 8) < tolerance;
}

}  // namespace

GemmCheckReport run_gemm_check(const GemmCheckOptions& opts) {
  GemmCheckReport report;
  const std::array<std::pair<int, int>, 3> tiles{{{64, 256}, {128, 128}, {256, 64}}};

  for (const auto& [k, n] : opts.shapes) {
    for (DequantMode mode : {DequantMode::Asymmetric, DequantMode::Symmetric}) {
      for (const auto& tile : tiles) {
        GemmCheckEntry entry;
        entry.k = k;
        entry.n = n;
        entry.tile = tile;
        entry.mode = mode;
        report.entries.push_back(entry);
      }
    }
  }

  std::size_t m_max = 1;
  for (std::size_t b : opts.batches) m_max = std::max(m_max, b);
  if (opts.sweep_batches_to) m_max = std::max(m_max, *opts.sweep_batches_to);

  std::size_t entry_idx = 0;
  bool first_shape = true;
  for (const auto& [k, n] : opts.shapes) {
    for (int seed = 0; seed < opts.seeds; ++seed) {
      for (DequantMode mode : {DequantMode::Asymmetric, DequantMode::Symmetric}) {
        std::uint64_t s = fnv1a64("gemm-" + std::to_string(k) + "x" + std::to_string(n)) +
                          static_cast<std::uint64_t>(seed);
        PackedInt3Matrix packed = random_packed(k, n, mode, s);
        std::mt19937_64 rng(s ^ 0xA5A5A5A5ull);
        std::normal_distribution<float> dist(0.0f, 1.0f);
        WeightMatrix A(m_max, k);
        for (float& v : A.data) v = dist(rng);

        WeightMatrix wd = dequant_packed(packed, mode);
        Eigen::Map<const MatrixXfRM> Am(A.data.data(), static_cast<Eigen::Index>(m_max),
                                        static_cast<Eigen::Index>(k));
        Eigen::Map<const MatrixXfRM> Wm(wd.data.data(), static_cast<Eigen::Index>(k),
                                        static_cast<Eigen::Index>(n));
        MatrixXfRM ref = Am * Wm;

        for (std::size_t t = 0; t < tiles.size(); ++t) {
          GemmCheckEntry& entry =
              report.entries[entry_idx + (mode == DequantMode::Symmetric ? 3 : 0) + t];
          GemmConfig cfg;
          cfg.tile_shape = tiles[t];
          cfg.mode = mode;

          std::vector<std::size_t> batches = opts.batches;
          if (first_shape && seed == 0 && mode == DequantMode::Asymmetric &&
              tiles[t] == std::pair<int, int>{128, 128} && opts.sweep_batches_to) {
            batches.clear();
            for (std::size_t b = 1; b <= *opts.sweep_batches_to; ++b)
              batches.push_back(b);
          }
          for (std::size_t m : batches) {
            WeightMatrix Asub(m, k);
            std::copy(A.data.begin(), A.data.begin() + static_cast<std::ptrdiff_t>(m * k),
                      Asub.data.begin());
            WeightMatrix C = gemm_w3a16(Asub, packed, std::nullopt, cfg);
            double err = rel_error_rows(C, ref, m);
            entry.max_rel_error = std::max(entry.max_rel_error, err);
          }
        }
      }
    }
    entry_idx += 6;
    first_shape = false;
  }

  report.error_handling_pass = gemm_error_handling_suite();
  report.boundary_pass = gemm_boundary_suite(opts.tolerance);

  report.pass = report.error_handling_pass && report.boundary_pass;
  for (GemmCheckEntry& e : report.entries) {
    e.pass = e.max_rel_error < opts.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.pass = report.pass && e.pass;
  }

  if (opts.out_path) {
    json j;
    j["tolerance"] = opts.tolerance;
    j["seeds"] = opts.seeds;
    j["max_rel_error"] = report.max_rel_error;
    j["error_handling_pass"] = report.error_handling_pass;
    j["boundary_pass"] = report.boundary_pass;
    j["pass"] = report.pass;
    j["entries"] = json::array();
    for (const GemmCheckEntry& e : report.entries) {
      json je;
      je["shape"] = {e.k, e.n};
      je["tile"] = {e.tile.first, e.tile.second};
      je["mode"] = dequant_mode_name(e.mode);
      je["max_rel_error"] = e.max_rel_error;
      je["pass"] = e.pass;
      j["entries"].push_back(je);
    }
    fs::path p(opts.out_path->c_str());
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file_atomic(*opts.out_path, j.dump(2) + "\n");
  }
  return report;
}

// --- report ------------------------------------------------------------------------

void run_report(const ReportOptions& opts) {
  const fs::path run(opts.run_dir);
  const fs::path stats_csv = run / "analysis" / "stats.csv";
  const fs::path summary_path = run / "artifacts" / "summary.json";
  const fs::path plan_path = run / "plan.json";
  if (!fs::exists(stats_csv)) throw ConfigError("missing '" + stats_csv.string() + "'");
  if (!fs::exists(summary_path))
    throw ConfigError("missing '" + summary_path.string() + "'");

  fs::create_directories(opts.out_dir + "/report");

  // Kurtosis-vs-error scatter straight from the analysis table.
  {
    std::ifstream is(stats_csv);
    std::string line;
    std::getline(is, line);  // header
    std::ostringstream scatter;
    scatter << "name,tag,kurtosis,rel_quant_error\n";
    while (std::getline(is, line)) {
      std::istringstream row(line);
      std::string name, tag, kurt, rel, rr;
      std::getline(row, name, ',');
      std::getline(row, tag, ',');
      std::getline(row, kurt, ',');
      std::getline(row, rel, ',');
      std::getline(row, rr, ',');
      scatter << name << ',' << tag << ',' << kurt << ',' << rel << '\n';
    }
    write_file_atomic(opts.out_dir + "/report/fig_scatter.csv", scatter.str());
  }

  // Convergence traces from the per-matrix run reports.
  std::vector<fs::path> reports;
  const fs::path artifacts = run / "artifacts";
  for (const auto& entry : fs::directory_iterator(artifacts)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 12 && name.substr(name.size() - 12) == ".report.json")
      reports.push_back(entry.path());
  }
  std::sort(reports.begin(), reports.end());

  std::ostringstream traces;
  traces << "name,iteration,epsilon\n";
  json matrices = json::array();
  for (const fs::path& p : reports) {
    std::ifstream is(p);
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw FormatError("bad report JSON '" + p.string() + "'");
    const std::string name = j.at("name").get<std::string>();
    const auto& trace = j.at("error_trace");
    for (std::size_t i = 0; i < trace.size(); ++i)
      traces << name << ',' << (i + 1) << ',' << format_double(trace[i].get<double>())
             << '\n';
    json m;
    m["name"] = name;
    m["iterations_run"] = j.at("iterations_run");
    m["stop_reason"] = j.at("stop_reason");
    m["final_rel_error"] = j.at("final_rel_error");
    matrices.push_back(std::move(m));
  }
  write_file_atomic(opts.out_dir + "/report/fig_traces.csv", traces.str());

  json out;
  {
    std::ifstream is(summary_path);
    out["summary"] = json::parse(is);
  }
  if (fs::exists(plan_path)) {
    std::ifstream is(plan_path);
    out["plan"] = json::parse(is);
  }
  out["matrices"] = std::move(matrices);
  write_file_atomic(opts.out_dir + "/report/report.json", out.dump(2) + "\n");
}

}  // namespace milo
