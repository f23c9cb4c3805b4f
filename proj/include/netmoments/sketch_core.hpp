#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "netmoments/errors.hpp"

namespace netmoments {

// A data value drawn from the alphabet {1, ..., M}.
using AlphabetValue = std::uint32_t;

// Per-node random stream. Each node owns one; streams are never shared.
using NodeRng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Keyed hash of a short tuple; the building block for maps and derived seeds.
constexpr std::uint64_t keyed_hash(std::uint64_t key, std::uint64_t a, std::uint64_t b = 0,
                                   std::uint64_t c = 0) noexcept {
  std::uint64_t h = mix64(key ^ 0x2545f4914f6cdd1dULL);
  h = mix64(h ^ a);
  h = mix64(h ^ (b + 0x632be59bd9b4e019ULL));
  return mix64(h ^ (c + 0x8cb92ba72f3d8dd7ULL));
}

// Seed for an independent stream identified by (seed, index, purpose).
inline NodeRng make_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t purpose = 0) {
  return NodeRng(keyed_hash(seed, index, purpose, 0x5eed));
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(NodeRng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// A k-th root of unity e^{2 pi i l / k}.
struct RootOfUnity {
  int index = 0;  // l in [0, k)
  double re = 1.0;
  double im = 0.0;

  std::complex<double> as_complex() const { return {re, im}; }
};

// Exact-where-possible e^{2 pi i l / k}: quarter turns are returned without rounding noise.
RootOfUnity root_of_unity(int l, int k);

// Global randomness shared by all nodes. All maps are pure functions of
// (master_seed, map index, value); nothing is stored per node.
//
// Map indices are 0-based: sign/root maps in [0, r1), bucket maps in [0, s1).
class SharedRandomness {
 public:
  SharedRandomness(std::uint64_t master_seed, int r1, int r2, int k = 2, int num_buckets = 1,
                   int s1 = 1);

  std::uint64_t master_seed() const noexcept { return master_seed_; }
  int r1() const noexcept { return r1_; }
  int r2() const noexcept { return r2_; }
  int k() const noexcept { return k_; }
  int num_buckets() const noexcept { return num_buckets_; }
  int s1() const noexcept { return s1_; }

  // phi_i(v) in {+1, -1}.
  int sign(int map_index, AlphabetValue v) const;
  // phi_p(v) as a k-th root of unity; for k = 2 agrees with sign().
  RootOfUnity root(int map_index, AlphabetValue v) const;
  // chi_t(v), a bucket in [0, num_buckets).
  int bucket(int bucket_map_index, AlphabetValue v) const;

 private:
  std::uint64_t phi_hash(int map_index, AlphabetValue v) const;

  std::uint64_t master_seed_;
  int r1_;
  int r2_;
  int k_;
  int num_buckets_;
  int s1_;
};

// Free-function forms of the map evaluations.
inline int sign_map_eval(const SharedRandomness& rand, int map_index, AlphabetValue v) {
  return rand.sign(map_index, v);
}
inline RootOfUnity root_map_eval(const SharedRandomness& rand, int map_index, AlphabetValue v) {
  return rand.root(map_index, v);
}
inline int bucket_map_eval(const SharedRandomness& rand, int bucket_map_index, AlphabetValue v) {
  return rand.bucket(bucket_map_index, v);
}

// ---------------------------------------------------------------------------
// Truncation and quantization

using Level = std::int32_t;

// Truncation at L, uniform quantization into 2^quant_bits cells of width L / 2^quant_bits.
// Level 2^quant_bits is reserved for infinity.
struct QuantConfig {
  double truncation_L = 1.0;
  int quant_bits = 16;
  double target_mu = 0.01;

  double cell_width() const { return truncation_L / std::ldexp(1.0, quant_bits); }
  Level infinity() const { return Level{1} << quant_bits; }
  int wire_bits() const { return quant_bits + 1; }

  void validate() const;

  // L = 2 ln N and the smallest quant_bits with cell width <= mu / N.
  static QuantConfig defaults(std::int64_t num_nodes, double target_mu);
};

// Floor-to-cell; values at or beyond L land in the last finite cell.
Level quantize(double x, const QuantConfig& q);
// Cell midpoint, or +infinity for the sentinel.
double dequantize(Level level, const QuantConfig& q);

// Exp(rate) by inversion. rate must be positive.
double sample_exponential(double rate, NodeRng& rng);
// Exp(rate) conditioned on <= L, by resampling.
double sample_truncated_exponential(double rate, double L, NodeRng& rng);

// rate == 0 gives the infinity sentinel; otherwise a resampled truncated draw, quantized.
Level draw_truncated_exp(double rate, const QuantConfig& q, NodeRng& rng);

// ---------------------------------------------------------------------------
// Min-sketch state

enum class Channel : std::uint8_t { sign, root_real, root_imag, population };

const char* to_string(Channel c);

using LevelGrid = Eigen::Array<Level, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// r1 x r2 grid of quantized exponential minima for one logical channel.
struct SketchVector {
  LevelGrid entries;
  Channel channel = Channel::sign;

  Eigen::Index rows() const { return entries.rows(); }
  Eigen::Index cols() const { return entries.cols(); }

  // The merge identity: every entry is the sentinel.
  static SketchVector infinite(int r1, int r2, const QuantConfig& q, Channel channel);

  friend bool operator==(const SketchVector& a, const SketchVector& b) {
    return a.channel == b.channel && a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.entries == b.entries).all();
  }
};

void check_same_shape(const SketchVector& a, const SketchVector& b);

// Elementwise minimum.
SketchVector merge_min(const SketchVector& a, const SketchVector& b);

// dst <- min(dst, src).
inline void merge_into(SketchVector& dst, const SketchVector& src) {
  check_same_shape(dst, src);
  dst.entries = dst.entries.min(src.entries);
}

// r2 / (sum of dequantized entries); 0 when the row holds a sentinel.
double harmonic_estimate(std::span<const Level> row, const QuantConfig& q);

template <typename Derived>
double harmonic_estimate(const Eigen::DenseBase<Derived>& row, const QuantConfig& q) {
  const Level inf = q.infinity();
  if ((row.derived().array() >= inf).any() || row.size() == 0) return 0.0;
  const double sum =
      (row.derived().array().template cast<double>() + 0.5).sum() * q.cell_width();
  return static_cast<double>(row.size()) / sum;
}

// Row-by-row harmonic estimates of a sketch, one per outer map.
Eigen::VectorXd harmonic_estimates(const SketchVector& s, const QuantConfig& q);

// Message encoding: quant_bits + 1 bits per entry, row-major, LSB-first; the sentinel is all ones.
std::vector<std::uint8_t> encode_message(const SketchVector& s, const QuantConfig& q);
SketchVector decode_message(std::span<const std::uint8_t> bytes, int r1, int r2,
                            const QuantConfig& q, Channel channel);
inline std::int64_t message_bits(int r1, int r2, const QuantConfig& q) {
  return std::int64_t{r1} * r2 * q.wire_bits();
}

// ---------------------------------------------------------------------------
// Bottom-r2 sketch: per outer map the r2 smallest values seen so far.

class BottomKState {
 public:
  BottomKState(int r1, int r2);

  // A node's starting state: at most one value per map; +inf means "no value".
  static BottomKState single(int r2, std::span<const double> per_map_values);

  int r1() const noexcept { return static_cast<int>(lists_.size()); }
  int r2() const noexcept { return r2_; }
  const std::vector<double>& list(int map_index) const { return lists_.at(map_index); }

  void insert(int map_index, double value);

  friend bool operator==(const BottomKState&, const BottomKState&) = default;

 private:
  int r2_;
  std::vector<std::vector<double>> lists_;
};

BottomKState bottom_k_merge(const BottomKState& a, const BottomKState& b);

// Population estimate for unit-rate values: (r2 - 1) / (1 - e^{-v_(r2)}), exact count below r2.
double bottom_k_estimate(const BottomKState& s, int map_index);

}  // namespace netmoments
