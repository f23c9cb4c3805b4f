#include "netmoments/sketch_core.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <string>

namespace netmoments {

namespace {

constexpr std::uint64_t kPhiDomain = 0x7068690000000001ULL;
constexpr std::uint64_t kChiDomain = 0x6368690000000002ULL;

// Multiply-shift reduction of a 64-bit hash onto [0, n).
std::uint64_t reduce(std::uint64_t h, std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(h) * n) >> 64);
}

void check_index(int index, int limit, const char* what) {
  if (index < 0 || index >= limit) {
    throw ConfigError(std::string(what) + " index " + std::to_string(index) + " outside [0, " +
                      std::to_string(limit) + ")");
  }
}

}  // namespace

RootOfUnity root_of_unity(int l, int k) {
  if (k < 1) throw ConfigError("root_of_unity: k must be positive");
  l = ((l % k) + k) % k;
  RootOfUnity r;
  r.index = l;
  if ((4 * l) % k == 0) {
    switch ((4 * l) / k) {
      case 0: r.re = 1.0; r.im = 0.0; break;
      case 1: r.re = 0.0; r.im = 1.0; break;
      case 2: r.re = -1.0; r.im = 0.0; break;
      default: r.re = 0.0; r.im = -1.0; break;
    }
    return r;
  }
  const double angle = 2.0 * std::numbers::pi * l / k;
  r.re = std::cos(angle);
  r.im = std::sin(angle);
  return r;
}

SharedRandomness::SharedRandomness(std::uint64_t master_seed, int r1, int r2, int k,
                                   int num_buckets, int s1)
    : master_seed_(master_seed), r1_(r1), r2_(r2), k_(k), num_buckets_(num_buckets), s1_(s1) {
  if (r1 < 1 || r2 < 1 || s1 < 1) throw ConfigError("r1, r2 and s1 must be >= 1");
  if (k < 2) throw ConfigError("moment order k must be >= 2");
  if (num_buckets < 1) throw ConfigError("num_buckets must be >= 1");
}

std::uint64_t SharedRandomness::phi_hash(int map_index, AlphabetValue v) const {
  return keyed_hash(master_seed_, kPhiDomain, static_cast<std::uint64_t>(map_index), v);
}

int SharedRandomness::sign(int map_index, AlphabetValue v) const {
  check_index(map_index, r1_, "sign map");
  return reduce(phi_hash(map_index, v), 2) == 0 ? +1 : -1;
}

RootOfUnity SharedRandomness::root(int map_index, AlphabetValue v) const {
  check_index(map_index, r1_, "root map");
  const auto l = reduce(phi_hash(map_index, v), static_cast<std::uint64_t>(k_));
  return root_of_unity(static_cast<int>(l), k_);
}

int SharedRandomness::bucket(int bucket_map_index, AlphabetValue v) const {
  check_index(bucket_map_index, s1_, "bucket map");
  const auto h =
      keyed_hash(master_seed_, kChiDomain, static_cast<std::uint64_t>(bucket_map_index), v);
  return static_cast<int>(reduce(h, static_cast<std::uint64_t>(num_buckets_)));
}

// ---------------------------------------------------------------------------

void QuantConfig::validate() const {
  if (!(truncation_L > 0.0) || !std::isfinite(truncation_L)) {
    throw ConfigError("truncation L must be positive and finite");
  }
  if (quant_bits < 1 || quant_bits > 30) throw ConfigError("quant_bits must be in [1, 30]");
  if (!(target_mu > 0.0 && target_mu < 1.0)) throw ConfigError("target mu must be in (0, 1)");
}

QuantConfig QuantConfig::defaults(std::int64_t num_nodes, double target_mu) {
  if (num_nodes < 2) throw ConfigError("quantization defaults need N >= 2");
  if (!(target_mu > 0.0 && target_mu < 1.0)) throw ConfigError("target mu must be in (0, 1)");
  QuantConfig q;
  q.target_mu = target_mu;
  q.truncation_L = 2.0 * std::log(static_cast<double>(num_nodes));
  const double cells = q.truncation_L * static_cast<double>(num_nodes) / target_mu;
  q.quant_bits = std::max(1, static_cast<int>(std::ceil(std::log2(cells))));
  q.validate();
  return q;
}

Level quantize(double x, const QuantConfig& q) {
  if (!(x >= 0.0)) throw DomainError("quantize: value must be non-negative");
  const double cell = std::floor(x / q.cell_width());
  const double last = static_cast<double>(q.infinity() - 1);
  return static_cast<Level>(std::min(cell, last));
}

double dequantize(Level level, const QuantConfig& q) {
  if (level >= q.infinity()) return std::numeric_limits<double>::infinity();
  return (static_cast<double>(level) + 0.5) * q.cell_width();
}

double sample_exponential(double rate, NodeRng& rng) {
  if (!(rate > 0.0)) throw DomainError("sample_exponential: rate must be positive");
  return -std::log1p(-uniform01(rng)) / rate;
}

double sample_truncated_exponential(double rate, double L, NodeRng& rng) {
  for (;;) {
    const double x = sample_exponential(rate, rng);
    if (x <= L) return x;
  }
}

Level draw_truncated_exp(double rate, const QuantConfig& q, NodeRng& rng) {
  if (rate < 0.0 || std::isnan(rate)) throw DomainError("draw_truncated_exp: negative rate");
  if (rate == 0.0) return q.infinity();
  return quantize(sample_truncated_exponential(rate, q.truncation_L, rng), q);
}

// ---------------------------------------------------------------------------

const char* to_string(Channel c) {
  switch (c) {
    case Channel::sign: return "sign";
    case Channel::root_real: return "root-real";
    case Channel::root_imag: return "root-imag";
    case Channel::population: return "population";
  }
  return "?";
}

SketchVector SketchVector::infinite(int r1, int r2, const QuantConfig& q, Channel channel) {
  if (r1 < 1 || r2 < 1) throw ConfigError("sketch dimensions must be positive");
  return SketchVector{LevelGrid::Constant(r1, r2, q.infinity()), channel};
}

void check_same_shape(const SketchVector& a, const SketchVector& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.channel != b.channel) {
    throw StructuralError("sketch merge: shape or channel mismatch (" + std::to_string(a.rows()) +
                          "x" + std::to_string(a.cols()) + " " + to_string(a.channel) + " vs " +
                          std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + " " +
                          to_string(b.channel) + ")");
  }
}

SketchVector merge_min(const SketchVector& a, const SketchVector& b) {
  check_same_shape(a, b);
  return SketchVector{a.entries.min(b.entries), a.channel};
}

double harmonic_estimate(std::span<const Level> row, const QuantConfig& q) {
  return harmonic_estimate(
      Eigen::Map<const Eigen::Array<Level, 1, Eigen::Dynamic>>(row.data(),
                                                               static_cast<Eigen::Index>(row.size())),
      q);
}

Eigen::VectorXd harmonic_estimates(const SketchVector& s, const QuantConfig& q) {
  Eigen::VectorXd out(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) out(i) = harmonic_estimate(s.entries.row(i), q);
  return out;
}

std::vector<std::uint8_t> encode_message(const SketchVector& s, const QuantConfig& q) {
  const int width = q.wire_bits();
  const std::uint64_t all_ones = (std::uint64_t{1} << width) - 1;
  const auto total_bits = static_cast<std::size_t>(message_bits(
      static_cast<int>(s.rows()), static_cast<int>(s.cols()), q));
  std::vector<std::uint8_t> out((total_bits + 7) / 8, 0);
  std::size_t bit = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const Level lv = s.entries(i, j);
      if (lv < 0 || lv > q.infinity()) throw DomainError("encode_message: level out of range");
      const std::uint64_t code = lv == q.infinity() ? all_ones : static_cast<std::uint64_t>(lv);
      for (int b = 0; b < width; ++b, ++bit) {
        if ((code >> b) & 1U) out[bit / 8] |= static_cast<std::uint8_t>(1U << (bit % 8));
      }
    }
  }
  return out;
}

SketchVector decode_message(std::span<const std::uint8_t> bytes, int r1, int r2,
                            const QuantConfig& q, Channel channel) {
  const int width = q.wire_bits();
  const std::uint64_t all_ones = (std::uint64_t{1} << width) - 1;
  const auto total_bits = static_cast<std::size_t>(message_bits(r1, r2, q));
  if (bytes.size() != (total_bits + 7) / 8) throw StructuralError("decode_message: wrong length");
  SketchVector s = SketchVector::infinite(r1, r2, q, channel);
  std::size_t bit = 0;
  for (int i = 0; i < r1; ++i) {
    for (int j = 0; j < r2; ++j) {
      std::uint64_t code = 0;
      for (int b = 0; b < width; ++b, ++bit) {
        code |= static_cast<std::uint64_t>((bytes[bit / 8] >> (bit % 8)) & 1U) << b;
      }
      if (code == all_ones) {
        s.entries(i, j) = q.infinity();
      } else if (code >= static_cast<std::uint64_t>(q.infinity())) {
        throw DomainError("decode_message: invalid level code");
      } else {
        s.entries(i, j) = static_cast<Level>(code);
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

BottomKState::BottomKState(int r1, int r2) : r2_(r2), lists_(static_cast<std::size_t>(r1)) {
  if (r1 < 1 || r2 < 1) throw ConfigError("bottom-k dimensions must be positive");
}

BottomKState BottomKState::single(int r2, std::span<const double> per_map_values) {
  BottomKState s(static_cast<int>(per_map_values.size()), r2);
  for (std::size_t i = 0; i < per_map_values.size(); ++i) {
    s.insert(static_cast<int>(i), per_map_values[i]);
  }
  return s;
}

void BottomKState::insert(int map_index, double value) {
  if (!std::isfinite(value)) return;
  auto& list = lists_.at(static_cast<std::size_t>(map_index));
  const auto pos = std::lower_bound(list.begin(), list.end(), value);
  // An equal value is the same draw arriving again.
  if (pos != list.end() && *pos == value) return;
  list.insert(pos, value);
  if (list.size() > static_cast<std::size_t>(r2_)) list.pop_back();
}

BottomKState bottom_k_merge(const BottomKState& a, const BottomKState& b) {
  if (a.r1() != b.r1() || a.r2() != b.r2()) throw StructuralError("bottom-k merge: shape mismatch");
  BottomKState out(a.r1(), a.r2());
  for (int i = 0; i < a.r1(); ++i) {
    std::vector<double> merged;
    merged.reserve(a.list(i).size() + b.list(i).size());
    std::set_union(a.list(i).begin(), a.list(i).end(), b.list(i).begin(), b.list(i).end(),
                   std::back_inserter(merged));
    merged.resize(std::min(merged.size(), static_cast<std::size_t>(a.r2())));
    for (double v : merged) out.insert(i, v);
  }
  return out;
}

double bottom_k_estimate(const BottomKState& s, int map_index) {
  const auto& list = s.list(map_index);
  if (list.size() < static_cast<std::size_t>(s.r2())) return static_cast<double>(list.size());
  // r2 == 1 carries no scale information; report the retained count.
  if (s.r2() == 1) return 1.0;
  return static_cast<double>(s.r2() - 1) / -std::expm1(-list.back());
}

}  // namespace netmoments
