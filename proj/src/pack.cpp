#include "milo/pack.hpp"

#include <cstring>

#include <json.hpp>

#include "milo/tensor_store.hpp"

namespace milo {

using nlohmann::json;

const char* pack_layout_name(PackLayout l) {
  return l == PackLayout::Linear ? "linear" : "tiled16x64";
}

const char* dequant_mode_name(DequantMode m) {
  return m == DequantMode::Symmetric ? "symmetric" : "asymmetric";
}

PackLayout pack_layout_from_name(const std::string& s) {
  if (s == "linear") return PackLayout::Linear;
  if (s == "tiled16x64") return PackLayout::Tiled16x64;
  throw FormatError("unknown layout '" + s + "'");
}

DequantMode dequant_mode_from_name(const std::string& s) {
  if (s == "symmetric") return DequantMode::Symmetric;
  if (s == "asymmetric") return DequantMode::Asymmetric;
  throw FormatError("unknown mode '" + s + "'");
}

std::array<std::uint32_t, 3> pack32(std::span<const std::uint8_t> codes) {
  if (codes.size() != 32)
    throw ShapeError("pack32 takes exactly 32 codes, got " +
                     std::to_string(codes.size()));
  for (std::uint8_t c : codes)
    if (c > 7)
      throw RangeError("pack32 code " + std::to_string(c) + " outside [0, 7]");

  std::array<std::uint32_t, 3> w{0, 0, 0};
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 8; ++k)
      w[static_cast<std::size_t>(j)] |=
          static_cast<std::uint32_t>(codes[static_cast<std::size_t>(8 * j + k)])
          << (3 * k);
  std::uint32_t rest = 0;
  for (int k = 0; k < 8; ++k)
    rest |= static_cast<std::uint32_t>(codes[static_cast<std::size_t>(24 + k)])
            << (3 * k);
  for (int j = 0; j < 3; ++j)
    w[static_cast<std::size_t>(j)] |= ((rest >> (8 * j)) & 0xFFu) << 24;
  return w;
}

std::array<std::uint8_t, 32> unpack32(const std::array<std::uint32_t, 3>& words) {
  std::array<std::uint8_t, 32> codes{};
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 8; ++k)
      codes[static_cast<std::size_t>(8 * j + k)] =
          static_cast<std::uint8_t>((words[static_cast<std::size_t>(j)] >> (3 * k)) & 0x7u);
  std::uint32_t rest = (words[0] >> 24) | ((words[1] >> 24) << 8) |
                       ((words[2] >> 24) << 16);
  for (int k = 0; k < 8; ++k)
    codes[static_cast<std::size_t>(24 + k)] =
        static_cast<std::uint8_t>((rest >> (3 * k)) & 0x7u);
  return codes;
}

namespace {

void check_packable(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ShapeError("cannot pack an empty matrix");
  if (cols % 32 != 0)
    throw ShapeError("cols " + std::to_string(cols) + " not a multiple of 32");
}

std::vector<std::uint32_t> pack_stream(const std::uint8_t* codes, std::size_t n) {
  std::vector<std::uint32_t> words(n / 32 * 3);
  for (std::size_t g = 0; g < n / 32; ++g) {
    auto w = pack32(std::span<const std::uint8_t>(codes + g * 32, 32));
    words[g * 3 + 0] = w[0];
    words[g * 3 + 1] = w[1];
    words[g * 3 + 2] = w[2];
  }
  return words;
}

std::vector<half_t> to_half(const std::vector<float>& v) {
  std::vector<half_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = float_to_half(v[i]);
  return out;
}

}  // namespace

PackedInt3Matrix pack_linear(const QuantizedMatrix& q) {
  if (q.bits != 3) throw ConfigError("packed storage is 3-bit only");
  check_packable(q.rows, q.cols);
  PackedInt3Matrix p;
  p.rows = q.rows;
  p.cols = q.cols;
  p.layout = PackLayout::Linear;
  p.mode = DequantMode::Asymmetric;
  p.group_size = q.group_size;
  p.words = pack_stream(q.codes.data(), q.codes.size());
  p.scales = to_half(q.scales);
  p.zeros = to_half(q.zeros);
  return p;
}

PackedInt3Matrix pack_linear_symmetric(std::size_t rows, std::size_t cols,
                                       const std::vector<std::uint8_t>& codes,
                                       const std::vector<float>& scales,
                                       std::size_t group_size) {
  check_packable(rows, cols);
  if (codes.size() != rows * cols) throw ShapeError("code count does not match shape");
  if (cols % group_size != 0)
    throw ShapeError("group_size does not divide cols");
  if (scales.size() != rows * cols / group_size)
    throw ShapeError("scale count does not match grouping");
  PackedInt3Matrix p;
  p.rows = rows;
  p.cols = cols;
  p.layout = PackLayout::Linear;
  p.mode = DequantMode::Symmetric;
  p.group_size = group_size;
  p.words = pack_stream(codes.data(), codes.size());
  p.scales = to_half(scales);
  return p;
}

std::size_t tiled_position(std::size_t rows, std::size_t cols, std::size_t i,
                           std::size_t j) {
  const std::size_t tiles_per_row = cols / 64;
  const std::size_t ti = i / 16, tj = j / 64;
  const std::size_t r = i % 16, c = j % 64;
  return (ti * tiles_per_row + tj) * (16 * 64) + r * 64 + c;
}

PackedInt3Matrix reshuffle_tiled(const QuantizedMatrix& q) {
  if (q.bits != 3) throw ConfigError("packed storage is 3-bit only");
  if (q.rows % 16 != 0 || q.cols % 64 != 0)
    throw ShapeError("tiled layout needs rows % 16 == 0 and cols % 64 == 0, got " +
                     std::to_string(q.rows) + "x" + std::to_string(q.cols));
  std::vector<std::uint8_t> shuffled(q.codes.size());
  for (std::size_t i = 0; i < q.rows; ++i)
    for (std::size_t j = 0; j < q.cols; ++j)
      shuffled[tiled_position(q.rows, q.cols, i, j)] = q.codes[i * q.cols + j];

  PackedInt3Matrix p;
  p.rows = q.rows;
  p.cols = q.cols;
  p.layout = PackLayout::Tiled16x64;
  p.mode = DequantMode::Asymmetric;
  p.group_size = q.group_size;
  p.words = pack_stream(shuffled.data(), shuffled.size());
  p.scales = to_half(q.scales);
  p.zeros = to_half(q.zeros);
  return p;
}

PackedInt3Matrix split_planes(const PackedInt3Matrix& p) {
  if (p.split) return p;
  PackedInt3Matrix out = p;
  const std::size_t groups = p.num_code_groups();
  out.plane_a.resize(groups * 2);
  out.plane_b.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    out.plane_a[g * 2 + 0] = p.words[g * 3 + 0];
    out.plane_a[g * 2 + 1] = p.words[g * 3 + 1];
    out.plane_b[g] = p.words[g * 3 + 2];
  }
  out.words.clear();
  out.words.shrink_to_fit();
  out.split = true;
  return out;
}

PackedInt3Matrix merge_planes(const PackedInt3Matrix& p) {
  if (!p.split) return p;
  PackedInt3Matrix out = p;
  const std::size_t groups = p.num_code_groups();
  out.words.resize(groups * 3);
  for (std::size_t g = 0; g < groups; ++g) {
    out.words[g * 3 + 0] = p.plane_a[g * 2 + 0];
    out.words[g * 3 + 1] = p.plane_a[g * 2 + 1];
    out.words[g * 3 + 2] = p.plane_b[g];
  }
  out.plane_a.clear();
  out.plane_b.clear();
  out.split = false;
  return out;
}

std::vector<std::uint8_t> unpack_codes(const PackedInt3Matrix& p) {
  const std::size_t groups = p.num_code_groups();
  std::vector<std::uint8_t> stream(p.rows * p.cols);
  for (std::size_t g = 0; g < groups; ++g) {
    std::array<std::uint32_t, 3> w = {p.word(g, 0), p.word(g, 1), p.word(g, 2)};
    std::array<std::uint8_t, 32> codes = unpack32(w);
    std::memcpy(stream.data() + g * 32, codes.data(), 32);
  }
  if (p.layout == PackLayout::Linear) return stream;
  // Undo the tile permutation.
  std::vector<std::uint8_t> logical(p.rows * p.cols);
  for (std::size_t i = 0; i < p.rows; ++i)
    for (std::size_t j = 0; j < p.cols; ++j)
      logical[i * p.cols + j] = stream[tiled_position(p.rows, p.cols, i, j)];
  return logical;
}

namespace {

// binary16 constants used by the fast path.
constexpr half_t kHalf1024 = 0x6400;   // 1024.0
constexpr half_t kHalf1028 = 0x6404;   // 1028.0
constexpr half_t kHalfEighth = 0x3000; // 0.125
constexpr half_t kHalfNeg132 = 0xD820; // -132.0
constexpr half_t kHalfNeg128 = 0xD800; // -128.0

}  // namespace

std::pair<half_t, half_t> fast_dequant_pair(std::uint32_t word, int pair_index,
                                            DequantMode mode) {
  const std::uint32_t t = word >> (6 * pair_index);
  const std::uint32_t lanes =
      (t & 0x7u) | ((t << 16) & 0x00380000u) | 0x64006400u;
  const half_t lo = static_cast<half_t>(lanes & 0xFFFFu);        // 1024 + e_2i
  const half_t hi = static_cast<half_t>(lanes >> 16);            // 1024 + 8*e_2i+1
  if (mode == DequantMode::Symmetric)
    return {half_sub(lo, kHalf1028), half_fma(hi, kHalfEighth, kHalfNeg132)};
  return {half_sub(lo, kHalf1024), half_fma(hi, kHalfEighth, kHalfNeg128)};
}

half_t symmetric_step(half_t scale) {
  return double_to_half(static_cast<double>(half_to_float(scale)) * 2.0 / 7.0);
}

half_t asymmetric_offset(half_t scale, half_t zero) {
  return half_neg(half_mul(scale, zero));
}

std::vector<half_t> dequant_packed_half(const PackedInt3Matrix& p, DequantMode mode) {
  if (mode == DequantMode::Asymmetric && p.zeros.empty())
    throw ConfigError("asymmetric de-quantization needs zero-points");
  const std::size_t groups = p.num_code_groups();
  std::vector<half_t> stream(p.rows * p.cols);

  // Codes -4 (symmetric) or codes (asymmetric) via the register-pair path.
  for (std::size_t g = 0; g < groups; ++g) {
    half_t* out = stream.data() + g * 32;
    for (int j = 0; j < 3; ++j) {
      const std::uint32_t w = p.word(g, j);
      for (int pair = 0; pair < 4; ++pair) {
        auto [lo, hi] = fast_dequant_pair(w, pair, mode);
        out[8 * j + 2 * pair + 0] = lo;
        out[8 * j + 2 * pair + 1] = hi;
      }
    }
    // Reassemble the rest fragments into the virtual fourth word.
    const std::uint32_t w3 = (p.word(g, 0) >> 24) | ((p.word(g, 1) >> 24) << 8) |
                             ((p.word(g, 2) >> 24) << 16);
    for (int pair = 0; pair < 4; ++pair) {
      auto [lo, hi] = fast_dequant_pair(w3, pair, mode);
      out[24 + 2 * pair + 0] = lo;
      out[24 + 2 * pair + 1] = hi;
    }
  }

  // Tile permutation, if any, then the per-group scaling step.
  std::vector<half_t> logical;
  if (p.layout == PackLayout::Linear) {
    logical = std::move(stream);
  } else {
    logical.resize(p.rows * p.cols);
    for (std::size_t i = 0; i < p.rows; ++i)
      for (std::size_t j = 0; j < p.cols; ++j)
        logical[i * p.cols + j] = stream[tiled_position(p.rows, p.cols, i, j)];
  }

  const std::size_t qgroups = p.rows * p.cols / p.group_size;
  for (std::size_t g = 0; g < qgroups; ++g) {
    half_t* v = logical.data() + g * p.group_size;
    if (mode == DequantMode::Symmetric) {
      const half_t step = symmetric_step(p.scales[g]);
      for (std::size_t k = 0; k < p.group_size; ++k) v[k] = half_mul(v[k], step);
    } else {
      const half_t s = p.scales[g];
      const half_t off = asymmetric_offset(s, p.zeros[g]);
      for (std::size_t k = 0; k < p.group_size; ++k) v[k] = half_fma(v[k], s, off);
    }
  }
  return logical;
}

WeightMatrix dequant_packed(const PackedInt3Matrix& p, DequantMode mode) {
  std::vector<half_t> h = dequant_packed_half(p, mode);
  WeightMatrix m(p.rows, p.cols);
  for (std::size_t i = 0; i < h.size(); ++i) m.data[i] = half_to_float(h[i]);
  return m;
}

// --- container IO ------------------------------------------------------------

void save_packed(const PackedInt3Matrix& p, const std::string& name,
                 const std::string& path) {
  json h;
  h["name"] = name;
  h["rows"] = p.rows;
  h["cols"] = p.cols;
  h["dtype"] = "packed-i3";
  h["layout"] = pack_layout_name(p.layout);
  h["split"] = p.split;
  h["group_size"] = p.group_size;
  h["mode"] = dequant_mode_name(p.mode);

  std::vector<std::uint8_t> payload;
  auto append_words = [&](const std::vector<std::uint32_t>& ws) {
    for (std::uint32_t w : ws) {
      payload.push_back(static_cast<std::uint8_t>(w & 0xFF));
      payload.push_back(static_cast<std::uint8_t>((w >> 8) & 0xFF));
      payload.push_back(static_cast<std::uint8_t>((w >> 16) & 0xFF));
      payload.push_back(static_cast<std::uint8_t>((w >> 24) & 0xFF));
    }
  };
  auto append_halfs = [&](const std::vector<half_t>& hs) {
    for (half_t v : hs) {
      payload.push_back(static_cast<std::uint8_t>(v & 0xFF));
      payload.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    }
  };
  if (p.split) {
    append_words(p.plane_a);
    append_words(p.plane_b);
  } else {
    append_words(p.words);
  }
  append_halfs(p.scales);
  if (p.mode == DequantMode::Asymmetric) append_halfs(p.zeros);
  save_container(h.dump(), payload, path);
}

PackedInt3Matrix load_packed(const std::string& path) {
  ContainerBlob blob = load_container(path);
  json h = json::parse(blob.header_json, nullptr, false);
  if (h.is_discarded() || !h.is_object())
    throw FormatError("'" + path + "': bad container header");
  if (h.value("dtype", "") != "packed-i3")
    throw FormatError("'" + path + "': dtype is not packed-i3");

  PackedInt3Matrix p;
  p.rows = h.at("rows").get<std::size_t>();
  p.cols = h.at("cols").get<std::size_t>();
  p.layout = pack_layout_from_name(h.at("layout").get<std::string>());
  p.split = h.at("split").get<bool>();
  p.group_size = h.at("group_size").get<std::size_t>();
  p.mode = dequant_mode_from_name(h.at("mode").get<std::string>());

  const std::size_t groups = p.num_code_groups();
  const std::size_t n_words = groups * 3;
  const std::size_t qgroups = p.rows * p.cols / p.group_size;
  const std::size_t expect = n_words * 4 + qgroups * 2 +
                             (p.mode == DequantMode::Asymmetric ? qgroups * 2 : 0);
  if (blob.payload.size() != expect)
    throw FormatError("'" + path + "': payload is " +
                      std::to_string(blob.payload.size()) + " bytes, expected " +
                      std::to_string(expect));

  const std::uint8_t* ptr = blob.payload.data();
  auto read_words = [&](std::size_t count) {
    std::vector<std::uint32_t> ws(count);
    for (std::size_t i = 0; i < count; ++i) {
      ws[i] = static_cast<std::uint32_t>(ptr[0]) |
              (static_cast<std::uint32_t>(ptr[1]) << 8) |
              (static_cast<std::uint32_t>(ptr[2]) << 16) |
              (static_cast<std::uint32_t>(ptr[3]) << 24);
      ptr += 4;
    }
    return ws;
  };
  auto read_halfs = [&](std::size_t count) {
    std::vector<half_t> hs(count);
    for (std::size_t i = 0; i < count; ++i) {
      hs[i] = static_cast<half_t>(static_cast<std::uint16_t>(ptr[0]) |
                                  (static_cast<std::uint16_t>(ptr[1]) << 8));
      ptr += 2;
    }
    return hs;
  };
  if (p.split) {
    p.plane_a = read_words(groups * 2);
    p.plane_b = read_words(groups);
  } else {
    p.words = read_words(n_words);
  }
  p.scales = read_halfs(qgroups);
  if (p.mode == DequantMode::Asymmetric) p.zeros = read_halfs(qgroups);
  return p;
}

}  // namespace milo
