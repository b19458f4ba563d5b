#pragma once

// Rank-assignment policies over a model manifest.
//
// Grammar: Uniform-<r> | Dense-<r> | Sparse-<r> | Frequency-<r> |
// Kurtosis-<r> | Dense-<a>+Frequency-<b> | Dense-<a>+Kurtosis-<b>.
// Frequency/Kurtosis score expert matrices, assign ranks proportional to the
// score and round by largest remainder so the total equals r * #experts.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milo/tensor_store.hpp"

namespace milo {

struct MatrixStats {
  std::string name;
  double kurtosis = 0.0;
  std::size_t residual_rank = 0;
  double rel_quant_error = 0.0;
  StructureTag structure_tag = StructureTag::Attention;
  std::optional<double> expert_frequency;  // present for experts
};

struct RankPlan {
  std::string policy;
  std::map<std::string, std::size_t> ranks;  // every manifest matrix appears once
  double avg_sparse_rank = 0.0;              // mean rank over expert matrices
  std::uint64_t memory_bytes = 0;            // filled by accounting when known
};

enum class PolicyKind { Uniform, Dense, Sparse, Frequency, Kurtosis };

struct PolicySpec {
  PolicyKind kind = PolicyKind::Uniform;
  std::size_t rank = 0;
  // Composite "Dense-<a>+X-<b>": dense part below, kind/rank describe X.
  std::optional<std::size_t> dense_rank;

  std::string to_string() const;
};

/// Parses the policy grammar; throws PlanError for anything else.
PolicySpec parse_policy(const std::string& text);

/// Deterministic rank assignment for every matrix in the manifest.
RankPlan plan_ranks(const ModelManifest& manifest,
                    const std::map<std::string, MatrixStats>& stats,
                    const PolicySpec& policy);

struct MemoryAccounting {
  int bits = 3;
  std::size_t group_size = 64;
  int comp_bits = 3;
};

/// For each candidate family, binary-search the largest r whose plan fits the
/// budget; returns every feasible plan with realized memory filled in.
/// Throws PlanError when no candidate fits at any rank.
std::vector<RankPlan> plan_under_memory(const ModelManifest& manifest,
                                        const std::map<std::string, MatrixStats>& stats,
                                        std::uint64_t budget_bytes,
                                        const std::vector<PolicyKind>& candidates,
                                        const MemoryAccounting& acct = {});

const char* policy_kind_name(PolicyKind k);

}  // namespace milo
