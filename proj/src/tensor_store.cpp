#include "milo/tensor_store.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "milo/rank_policy.hpp"

namespace milo {

using nlohmann::json;

const char* structure_tag_name(StructureTag t) {
  switch (t) {
    case StructureTag::Attention: return "attention";
    case StructureTag::SharedExpert: return "shared_expert";
    case StructureTag::DenseFfn: return "dense_ffn";
    case StructureTag::Expert: return "expert";
  }
  return "unknown";
}

StructureTag structure_tag_from_name(const std::string& s) {
  if (s == "attention") return StructureTag::Attention;
  if (s == "shared_expert") return StructureTag::SharedExpert;
  if (s == "dense_ffn") return StructureTag::DenseFfn;
  if (s == "expert") return StructureTag::Expert;
  throw FormatError("unknown structure_tag '" + s + "'");
}

void ModelManifest::validate() const {
  std::set<std::string> names;
  for (const auto& layer : layers) {
    for (const auto& m : layer.matrices) {
      if (!names.insert(m.name).second)
        throw FormatError("duplicate matrix name '" + m.name + "' in manifest");
      bool is_expert = m.structure_tag == StructureTag::Expert;
      if (is_expert != m.expert_index.has_value())
        throw FormatError("matrix '" + m.name +
                          "': expert_index must be present exactly for expert tag");
      if (m.rows == 0 || m.cols == 0)
        throw FormatError("matrix '" + m.name + "': zero dimension");
    }
  }
}

std::vector<const MatrixEntry*> ModelManifest::all_matrices() const {
  std::vector<const MatrixEntry*> out;
  for (const auto& layer : layers)
    for (const auto& m : layer.matrices) out.push_back(&m);
  return out;
}

const MatrixEntry* ModelManifest::find(const std::string& name) const {
  for (const auto& layer : layers)
    for (const auto& m : layer.matrices)
      if (m.name == name) return &m;
  return nullptr;
}

// --- container IO ---------------------------------------------------------

namespace {

void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("container truncated while reading header length");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

json parse_header(const std::string& text) {
  json h = json::parse(text, nullptr, false);
  if (h.is_discarded() || !h.is_object())
    throw FormatError("container header is not a JSON object");
  return h;
}

}  // namespace

ContainerBlob load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kContainerMagic, 5) != 0)
    throw FormatError("'" + path + "': bad magic, not a MILO1 container");
  std::uint32_t hlen = read_u32_le(is);
  std::string header(hlen, '\0');
  is.read(header.data(), hlen);
  if (!is) throw FormatError("'" + path + "': truncated header");
  ContainerBlob blob;
  blob.header_json = std::move(header);
  blob.payload.assign(std::istreambuf_iterator<char>(is),
                      std::istreambuf_iterator<char>());
  return blob;
}

void save_container(const std::string& header_json,
                    const std::vector<std::uint8_t>& payload,
                    const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(kContainerMagic, 5);
    write_u32_le(os, static_cast<std::uint32_t>(header_json.size()));
    os.write(header_json.data(), static_cast<std::streamsize>(header_json.size()));
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed for '" + path + "': " + ec.message());
}

WeightMatrix load_tensor(const std::string& path) {
  ContainerBlob blob = load_container(path);
  json h = parse_header(blob.header_json);
  if (!h.contains("rows") || !h.contains("cols") || !h.contains("dtype"))
    throw FormatError("'" + path + "': header missing rows/cols/dtype");
  if (h["dtype"] != "f32")
    throw FormatError("'" + path + "': dtype '" + h["dtype"].get<std::string>() +
                      "' is not f32");
  WeightMatrix m;
  m.rows = h["rows"].get<std::size_t>();
  m.cols = h["cols"].get<std::size_t>();
  m.name = h.value("name", std::string{});
  std::size_t expect = m.rows * m.cols * sizeof(float);
  if (blob.payload.size() != expect)
    throw FormatError("'" + path + "': payload is " +
                      std::to_string(blob.payload.size()) + " bytes, expected " +
                      std::to_string(expect));
  m.data.resize(m.rows * m.cols);
  std::memcpy(m.data.data(), blob.payload.data(), expect);
  for (float v : m.data)
    if (!std::isfinite(v))
      throw DataError("'" + path + "': payload contains non-finite values");
  return m;
}

void save_tensor(const WeightMatrix& m, const std::string& path) {
  m.validate();
  json h;
  h["name"] = m.name;
  h["rows"] = m.rows;
  h["cols"] = m.cols;
  h["dtype"] = "f32";
  std::vector<std::uint8_t> payload(m.data.size() * sizeof(float));
  std::memcpy(payload.data(), m.data.data(), payload.size());
  save_container(h.dump(), payload, path);
}

// --- manifest / stats ------------------------------------------------------

ModelManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest '" + path + "'");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw FormatError("manifest '" + path + "' is not valid JSON");
  ModelManifest m;
  for (const auto& jl : j.at("layers")) {
    LayerEntry layer;
    layer.layer_index = jl.at("layer_index").get<int>();
    for (const auto& jm : jl.at("matrices")) {
      MatrixEntry e;
      e.name = jm.at("name").get<std::string>();
      e.rows = jm.at("rows").get<std::size_t>();
      e.cols = jm.at("cols").get<std::size_t>();
      e.structure_tag = structure_tag_from_name(jm.at("structure_tag").get<std::string>());
      if (jm.contains("expert_index")) e.expert_index = jm["expert_index"].get<int>();
      layer.matrices.push_back(std::move(e));
    }
    m.layers.push_back(std::move(layer));
  }
  m.validate();
  return m;
}

void save_manifest(const ModelManifest& m, const std::string& path) {
  m.validate();
  json j;
  j["layers"] = json::array();
  for (const auto& layer : m.layers) {
    json jl;
    jl["layer_index"] = layer.layer_index;
    jl["matrices"] = json::array();
    for (const auto& e : layer.matrices) {
      json jm;
      jm["name"] = e.name;
      jm["rows"] = e.rows;
      jm["cols"] = e.cols;
      jm["structure_tag"] = structure_tag_name(e.structure_tag);
      if (e.expert_index) jm["expert_index"] = *e.expert_index;
      jl["matrices"].push_back(std::move(jm));
    }
    j["layers"].push_back(std::move(jl));
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

ExpertFrequencyStats load_frequency_stats(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open frequency stats '" + path + "'");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded())
    throw FormatError("frequency stats '" + path + "' is not valid JSON");
  ExpertFrequencyStats s;
  s.total_tokens = j.at("total_tokens").get<std::int64_t>();
  for (const auto& jl : j.at("counts")) {
    std::vector<std::int64_t> layer;
    for (const auto& c : jl) {
      std::int64_t v = c.get<std::int64_t>();
      if (v < 0) throw DataError("frequency stats: negative count");
      layer.push_back(v);
    }
    s.counts.push_back(std::move(layer));
  }
  return s;
}

void save_frequency_stats(const ExpertFrequencyStats& s, const std::string& path) {
  json j;
  j["total_tokens"] = s.total_tokens;
  j["counts"] = s.counts;
  write_file_atomic(path, j.dump(2) + "\n");
}

// --- memory accounting ------------------------------------------------------

std::uint64_t matrix_memory_bytes(std::size_t rows, std::size_t cols,
                                  std::size_t rank, int bits,
                                  std::size_t group_size, int comp_bits) {
  if (rank > std::min(rows, cols))
    throw PlanError("rank " + std::to_string(rank) + " exceeds min(rows, cols) of " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  if (group_size == 0 || cols % group_size != 0)
    throw PlanError("group size " + std::to_string(group_size) +
                    " does not divide cols " + std::to_string(cols));
  std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
  std::uint64_t code_bytes = n * static_cast<std::uint64_t>(bits) / 8;
  std::uint64_t meta_bytes = 2 * (n / group_size) * 2;
  std::uint64_t comp_entries = static_cast<std::uint64_t>(rows + cols) * rank;
  std::uint64_t comp_code_bytes = comp_entries * static_cast<std::uint64_t>(comp_bits) / 8;
  std::uint64_t comp_groups =
      rank == 0 ? 0
                : static_cast<std::uint64_t>(rows + cols) *
                      ((rank + group_size - 1) / group_size);
  return code_bytes + meta_bytes + comp_code_bytes + comp_groups * 2;
}

std::uint64_t quantized_memory_bytes(const ModelManifest& manifest,
                                     const RankPlan& plan, int bits,
                                     std::size_t group_size, int comp_bits) {
  if (bits != 3 && bits != 4 && bits != 8)
    throw PlanError("bits must be one of {3, 4, 8}");
  if (comp_bits != 3 && comp_bits != 8)
    throw PlanError("comp_bits must be one of {3, 8}");
  std::uint64_t total = 0;
  for (const MatrixEntry* e : manifest.all_matrices()) {
    auto it = plan.ranks.find(e->name);
    if (it == plan.ranks.end())
      throw PlanError("plan has no rank for matrix '" + e->name + "'");
    total += matrix_memory_bytes(e->rows, e->cols, it->second, bits, group_size,
                                 comp_bits);
  }
  return total;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed for '" + path + "': " + ec.message());
}

}  // namespace milo
