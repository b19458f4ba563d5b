#pragma once

// Tensor container, model manifest and expert-frequency stats.
//
// Container layout: magic "MILO1", u32-le header length, UTF-8 JSON header,
// raw little-endian payload. Weight tensors use dtype "f32"; compensator
// factors add {"role","rank","storage"}; packed INT3 tensors use dtype
// "packed-i3" (see pack.hpp for their payload layout).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milo/matrix.hpp"

namespace milo {

inline constexpr char kContainerMagic[5] = {'M', 'I', 'L', 'O', '1'};

enum class StructureTag { Attention, SharedExpert, DenseFfn, Expert };

const char* structure_tag_name(StructureTag t);
StructureTag structure_tag_from_name(const std::string& s);

/// True for tags that are activated for every token (the paper's dense layers).
inline bool is_dense_tag(StructureTag t) { return t != StructureTag::Expert; }

struct MatrixEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  StructureTag structure_tag = StructureTag::Attention;
  std::optional<int> expert_index;  // present iff structure_tag == Expert
};

struct LayerEntry {
  int layer_index = 0;
  std::vector<MatrixEntry> matrices;
};

struct ModelManifest {
  std::vector<LayerEntry> layers;

  void validate() const;
  std::vector<const MatrixEntry*> all_matrices() const;
  const MatrixEntry* find(const std::string& name) const;
};

struct ExpertFrequencyStats {
  // counts[layer][expert] = activation count
  std::vector<std::vector<std::int64_t>> counts;
  std::int64_t total_tokens = 0;
};

// --- container IO ---------------------------------------------------------

WeightMatrix load_tensor(const std::string& path);
void save_tensor(const WeightMatrix& m, const std::string& path);

/// Raw container access for non-f32 dtypes (compensators, packed tensors).
struct ContainerBlob {
  std::string header_json;
  std::vector<std::uint8_t> payload;
};
ContainerBlob load_container(const std::string& path);
void save_container(const std::string& header_json,
                    const std::vector<std::uint8_t>& payload,
                    const std::string& path);

// --- manifest / stats JSON -------------------------------------------------

ModelManifest load_manifest(const std::string& path);
void save_manifest(const ModelManifest& m, const std::string& path);
ExpertFrequencyStats load_frequency_stats(const std::string& path);
void save_frequency_stats(const ExpertFrequencyStats& s, const std::string& path);

// --- memory accounting ------------------------------------------------------

struct RankPlan;  // rank_policy.hpp

/// Bytes for the quantized model under a rank plan: packed codes at `bits`
/// per weight, 2-byte scale+zero per group, compensator codes at `comp_bits`
/// per entry plus one 2-byte scale per group of `group_size` along the rank
/// axis. Throws PlanError when a planned rank exceeds min(rows, cols).
std::uint64_t quantized_memory_bytes(const ModelManifest& manifest,
                                     const RankPlan& plan, int bits,
                                     std::size_t group_size, int comp_bits);

/// Same accounting for a single matrix.
std::uint64_t matrix_memory_bytes(std::size_t rows, std::size_t cols,
                                  std::size_t rank, int bits,
                                  std::size_t group_size, int comp_bits);

/// Atomic file write (temp + rename); used by every pipeline stage.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace milo
