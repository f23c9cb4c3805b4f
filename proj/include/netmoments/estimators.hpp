#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "netmoments/sketch_core.hpp"

namespace netmoments {

// One value per node.
struct Dataset {
  std::vector<AlphabetValue> values;
  int alphabet_size = 1;  // M

  Dataset() = default;
  Dataset(std::vector<AlphabetValue> v, int M);

  std::int64_t size() const noexcept { return static_cast<std::int64_t>(values.size()); }
  void validate() const;
  // Stable 64-bit digest of (M, values), hex-encoded.
  std::string digest() const;
};

// counts[m - 1] = N_m.
using Histogram = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

Histogram histogram(const Dataset& d);

// sum_m N_m^k; throws DomainError on 64-bit overflow.
std::uint64_t exact_fk(const Histogram& h, int k);
inline std::uint64_t exact_fk(const Dataset& d, int k) { return exact_fk(histogram(d), k); }

// F_k / N^k in floating point.
template <typename Scalar = double>
Scalar scaled_moment(const Histogram& h, int k) {
  const Scalar n = static_cast<Scalar>(h.sum());
  if (n == Scalar(0)) return Scalar(0);
  Scalar acc(0);
  for (Eigen::Index m = 0; m < h.size(); ++m) {
    const Scalar p = static_cast<Scalar>(h(m)) / n;
    Scalar term(1);
    for (int i = 0; i < k; ++i) term *= p;
    acc += term;
  }
  return acc;
}

// Number of nodes whose value maps to +1 under sign map i.
std::int64_t exact_nplus(const Dataset& d, const SharedRandomness& rand, int map_index);

// r1^{-1} sum_i (2 n_i - N)^2 for per-map population counts or estimates n_i.
template <typename Derived>
double f2_from_populations(const Eigen::DenseBase<Derived>& nplus, double num_nodes) {
  const auto centred = (2.0 * nplus.derived().array().template cast<double>() - num_nodes);
  return centred.square().mean();
}

// Streaming baseline with exact sign sums.
double ams_reference_f2(const Dataset& d, const SharedRandomness& rand);

struct MomentEstimate {
  double raw = 0.0;     // estimate of F_k
  double scaled = 0.0;  // estimate of F_k / N^k
};

// Harmonic estimate per row, then the sign-sum combination.
MomentEstimate estimate_f2(const SketchVector& final_state, std::int64_t num_nodes,
                           const QuantConfig& q);

// ---------------------------------------------------------------------------
// Error budget

struct ErrorBudget {
  double eps1 = 0.05;
  double eps2 = 0.01;
  double mu = 0.01;
  int r1 = 64;
  int r2 = 512;
  double beta = 0.0;

  void validate() const;

  // eps1 + 4 eps2 (3 + eps2)
  double epsilon_unquantized() const;
  // eps1 + 8 mu (3 + 2 mu)
  double epsilon_quantized() const;
  // 1 - 2 / (r1 eps1^2), clamped to [0, 1]
  double p1() const;
  // 1 - 2 exp(-eps2^2 r2 / 12), clamped to [0, 1]
  double p2() const;
  // p1 p2 (1 - beta)
  double success_lower_bound() const;
  // e^{-mu^2 r2 / 6} + (2 / (r1 eps1^2)) (1 - e^{-mu^2 r2 / 6}), clamped to [0, 1]
  double delta_quantized() const;
};

// ---------------------------------------------------------------------------
// Higher moments

// Channel totals for one (bucket map t, bucket b, root map p): the harmonic estimates of
// sum(alpha + 1), sum(beta + 1) and the bucket population.
struct ChannelTotals {
  double real_channel = 0.0;
  double imag_channel = 0.0;
  double population = 0.0;

  // (real - pop) + i (imag - pop)
  std::complex<double> bucket_sum() const {
    return {real_channel - population, imag_channel - population};
  }
};

class FkEstimatorState {
 public:
  FkEstimatorState(int k, int r1, int s1, int num_buckets);

  int k() const noexcept { return k_; }
  int r1() const noexcept { return r1_; }
  int s1() const noexcept { return s1_; }
  int num_buckets() const noexcept { return num_buckets_; }

  ChannelTotals& at(int t, int b, int p);
  const ChannelTotals& at(int t, int b, int p) const;

 private:
  std::size_t index(int t, int b, int p) const;

  int k_;
  int r1_;
  int s1_;
  int num_buckets_;
  std::vector<ChannelTotals> cells_;
};

// Re{z^k} computed by repeated multiplication.
double real_power(std::complex<double> z, int k);

// Y^{p,t} = sum_b Re{S_b^k}; mean over p, then median over t.
MomentEstimate estimate_fk(const FkEstimatorState& state, std::int64_t num_nodes);

// ---------------------------------------------------------------------------
// Percolation data loss

struct PercolationBound {
  std::uint64_t f2 = 0;
  std::uint64_t f2_alpha = 0;  // after greedy most-frequent removal
  std::int64_t removed = 0;    // floor(alpha N)
  bool applies = false;        // m_{i1} >= alpha N
  bool bound_ok = true;        // f2_alpha <= f2 - (alpha N)^2 whenever it applies
  double slack = 0.0;          // (f2 - (alpha N)^2) - f2_alpha
};

// Removes floor(alpha N) copies, each from the value that is currently most frequent, and checks
// F_{2,alpha} <= F_2 - alpha^2 N^2. This removal maximizes F_2 - F_{2,alpha}.
PercolationBound percolation_bound_check(const Dataset& d, double alpha);

}  // namespace netmoments
