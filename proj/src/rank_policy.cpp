#include "milo/rank_policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>

namespace milo {

const char* policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::Uniform: return "Uniform";
    case PolicyKind::Dense: return "Dense";
    case PolicyKind::Sparse: return "Sparse";
    case PolicyKind::Frequency: return "Frequency";
    case PolicyKind::Kurtosis: return "Kurtosis";
  }
  return "?";
}

std::string PolicySpec::to_string() const {
  std::string s;
  if (dense_rank) s += "Dense-" + std::to_string(*dense_rank) + "+";
  s += std::string(policy_kind_name(kind)) + "-" + std::to_string(rank);
  return s;
}

PolicySpec parse_policy(const std::string& text) {
  static const std::regex simple(R"(^(Uniform|Dense|Sparse|Frequency|Kurtosis)-(\d+)$)");
  static const std::regex composite(R"(^Dense-(\d+)\+(Frequency|Kurtosis)-(\d+)$)");
  std::smatch m;
  PolicySpec spec;
  if (std::regex_match(text, m, simple)) {
    const std::string kind = m[1];
    spec.rank = static_cast<std::size_t>(std::stoull(m[2]));
    if (kind == "Uniform") spec.kind = PolicyKind::Uniform;
    else if (kind == "Dense") spec.kind = PolicyKind::Dense;
    else if (kind == "Sparse") spec.kind = PolicyKind::Sparse;
    else if (kind == "Frequency") spec.kind = PolicyKind::Frequency;
    else spec.kind = PolicyKind::Kurtosis;
    return spec;
  }
  if (std::regex_match(text, m, composite)) {
    spec.dense_rank = static_cast<std::size_t>(std::stoull(m[1]));
    spec.kind = m[2] == "Frequency" ? PolicyKind::Frequency : PolicyKind::Kurtosis;
    spec.rank = static_cast<std::size_t>(std::stoull(m[3]));
    return spec;
  }
  throw PlanError("unknown policy '" + text + "'");
}

namespace {

// Proportional allocation with largest-remainder rounding: totals are exact,
// assignment is monotone in the score, ties break by position order.
std::vector<std::size_t> allocate_proportional(const std::vector<double>& scores,
                                               std::size_t mean_rank) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> ranks(n, 0);
  if (n == 0) return ranks;
  const double total_target = static_cast<double>(mean_rank) * static_cast<double>(n);
  double score_sum = std::accumulate(scores.begin(), scores.end(), 0.0);
  std::vector<double> real(n);
  if (score_sum <= 0.0) {
    // Degenerate scores reduce to a uniform assignment.
    std::fill(real.begin(), real.end(), static_cast<double>(mean_rank));
  } else {
    for (std::size_t i = 0; i < n; ++i)
      real[i] = scores[i] / score_sum * total_target;
  }
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> remainders(n);
  for (std::size_t i = 0; i < n; ++i) {
    ranks[i] = static_cast<std::size_t>(std::floor(real[i]));
    assigned += ranks[i];
    remainders[i] = {real[i] - std::floor(real[i]), i};
  }
  std::size_t remaining = static_cast<std::size_t>(std::llround(total_target)) - assigned;
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; k < remaining && k < n; ++k) ranks[remainders[k].second] += 1;
  return ranks;
}

const MatrixStats& stats_for(const std::map<std::string, MatrixStats>& stats,
                             const std::string& name) {
  auto it = stats.find(name);
  if (it == stats.end()) throw PlanError("missing stats for matrix '" + name + "'");
  return it->second;
}

}  // namespace

RankPlan plan_ranks(const ModelManifest& manifest,
                    const std::map<std::string, MatrixStats>& stats,
                    const PolicySpec& policy) {
  manifest.validate();
  RankPlan plan;
  plan.policy = policy.to_string();

  std::vector<const MatrixEntry*> mats = manifest.all_matrices();
  std::vector<const MatrixEntry*> experts;
  for (const MatrixEntry* e : mats)
    if (e->structure_tag == StructureTag::Expert) experts.push_back(e);

  // Dense side.
  std::size_t dense_rank = 0;
  if (policy.dense_rank) dense_rank = *policy.dense_rank;
  else if (policy.kind == PolicyKind::Uniform || policy.kind == PolicyKind::Dense)
    dense_rank = policy.rank;
  for (const MatrixEntry* e : mats)
    if (is_dense_tag(e->structure_tag)) plan.ranks[e->name] = dense_rank;

  // Expert side.
  switch (policy.kind) {
    case PolicyKind::Uniform:
    case PolicyKind::Sparse:
      for (const MatrixEntry* e : experts) plan.ranks[e->name] = policy.rank;
      break;
    case PolicyKind::Dense:
      for (const MatrixEntry* e : experts) plan.ranks[e->name] = 0;
      break;
    case PolicyKind::Frequency: {
      std::vector<double> scores;
      scores.reserve(experts.size());
      for (const MatrixEntry* e : experts) {
        const MatrixStats& s = stats_for(stats, e->name);
        if (!s.expert_frequency)
          throw PlanError("matrix '" + e->name + "' has no expert frequency");
        scores.push_back(*s.expert_frequency);
      }
      std::vector<std::size_t> ranks = allocate_proportional(scores, policy.rank);
      for (std::size_t i = 0; i < experts.size(); ++i)
        plan.ranks[experts[i]->name] = ranks[i];
      break;
    }
    case PolicyKind::Kurtosis: {
      std::vector<double> kurt;
      kurt.reserve(experts.size());
      for (const MatrixEntry* e : experts)
        kurt.push_back(stats_for(stats, e->name).kurtosis);
      std::vector<double> scores(kurt.size(), 1.0);
      if (!kurt.empty()) {
        double lo = *std::min_element(kurt.begin(), kurt.end());
        double hi = *std::max_element(kurt.begin(), kurt.end());
        if (hi > lo)
          for (std::size_t i = 0; i < kurt.size(); ++i)
            scores[i] = (kurt[i] - lo) / (hi - lo);
      }
      std::vector<std::size_t> ranks = allocate_proportional(scores, policy.rank);
      for (std::size_t i = 0; i < experts.size(); ++i)
        plan.ranks[experts[i]->name] = ranks[i];
      break;
    }
  }

  if (!experts.empty()) {
    double acc = 0.0;
    for (const MatrixEntry* e : experts)
      acc += static_cast<double>(plan.ranks.at(e->name));
    plan.avg_sparse_rank = acc / static_cast<double>(experts.size());
  }
  return plan;
}

std::vector<RankPlan> plan_under_memory(const ModelManifest& manifest,
                                        const std::map<std::string, MatrixStats>& stats,
                                        std::uint64_t budget_bytes,
                                        const std::vector<PolicyKind>& candidates,
                                        const MemoryAccounting& acct) {
  std::size_t max_dim = 0;
  for (const MatrixEntry* e : manifest.all_matrices())
    max_dim = std::max(max_dim, std::min(e->rows, e->cols));

  auto try_plan = [&](PolicyKind kind, std::size_t r) -> std::optional<RankPlan> {
    PolicySpec spec;
    spec.kind = kind;
    spec.rank = r;
    RankPlan plan = plan_ranks(manifest, stats, spec);
    std::uint64_t mem;
    try {
      mem = quantized_memory_bytes(manifest, plan, acct.bits, acct.group_size,
                                   acct.comp_bits);
    } catch (const PlanError&) {
      return std::nullopt;  // some rank exceeded a matrix dimension
    }
    if (mem > budget_bytes) return std::nullopt;
    plan.memory_bytes = mem;
    return plan;
  };

  std::vector<RankPlan> plans;
  for (PolicyKind kind : candidates) {
    if (!try_plan(kind, 0)) continue;  // even the metadata floor is over budget
    std::size_t lo = 0, hi = max_dim;
    while (lo < hi) {  // invariant: lo feasible, find the largest feasible r
      std::size_t mid = lo + (hi - lo + 1) / 2;
      if (try_plan(kind, mid)) lo = mid;
      else hi = mid - 1;
    }
    plans.push_back(*try_plan(kind, lo));
  }
  if (plans.empty())
    throw PlanError("no candidate policy fits within " +
                    std::to_string(budget_bytes) + " bytes");
  return plans;
}

}  // namespace milo
