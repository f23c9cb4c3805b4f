#include "netmoments/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <queue>

namespace netmoments {

Dataset::Dataset(std::vector<AlphabetValue> v, int M) : values(std::move(v)), alphabet_size(M) {
  validate();
}

void Dataset::validate() const {
  if (alphabet_size < 1) throw ConfigError("alphabet size M must be >= 1");
  for (std::size_t u = 0; u < values.size(); ++u) {
    if (values[u] < 1 || values[u] > static_cast<AlphabetValue>(alphabet_size)) {
      throw ConfigError("node " + std::to_string(u) + " holds value " + std::to_string(values[u]) +
                        " outside [1, " + std::to_string(alphabet_size) + "]");
    }
  }
}

std::string Dataset::digest() const {
  std::uint64_t h = keyed_hash(0xda7a5e7ULL, static_cast<std::uint64_t>(alphabet_size),
                               values.size());
  for (AlphabetValue v : values) h = mix64(h ^ v);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Histogram histogram(const Dataset& d) {
  Histogram h = Histogram::Zero(d.alphabet_size);
  for (AlphabetValue v : d.values) {
    if (v < 1 || v > static_cast<AlphabetValue>(d.alphabet_size)) {
      throw ConfigError("value outside alphabet");
    }
    ++h(static_cast<Eigen::Index>(v - 1));
  }
  return h;
}

std::uint64_t exact_fk(const Histogram& h, int k) {
  if (k < 0) throw DomainError("exact_fk: k must be >= 0");
  unsigned __int128 total = 0;
  const unsigned __int128 cap = std::numeric_limits<std::uint64_t>::max();
  for (Eigen::Index m = 0; m < h.size(); ++m) {
    if (h(m) == 0 && k > 0) continue;
    unsigned __int128 term = 1;
    for (int i = 0; i < k; ++i) {
      term *= static_cast<unsigned __int128>(h(m));
      if (term > cap) throw DomainError("exact_fk: overflow");
    }
    total += term;
    if (total > cap) throw DomainError("exact_fk: overflow");
  }
  return static_cast<std::uint64_t>(total);
}

std::int64_t exact_nplus(const Dataset& d, const SharedRandomness& rand, int map_index) {
  std::int64_t n = 0;
  for (AlphabetValue v : d.values) n += rand.sign(map_index, v) > 0 ? 1 : 0;
  return n;
}

double ams_reference_f2(const Dataset& d, const SharedRandomness& rand) {
  // Sign sums only depend on the histogram.
  const Histogram h = histogram(d);
  Eigen::VectorXd nplus = Eigen::VectorXd::Zero(rand.r1());
  for (int i = 0; i < rand.r1(); ++i) {
    for (Eigen::Index m = 0; m < h.size(); ++m) {
      if (rand.sign(i, static_cast<AlphabetValue>(m + 1)) > 0) nplus(i) += static_cast<double>(h(m));
    }
  }
  return f2_from_populations(nplus, static_cast<double>(d.size()));
}

MomentEstimate estimate_f2(const SketchVector& final_state, std::int64_t num_nodes,
                           const QuantConfig& q) {
  const Eigen::VectorXd nplus = harmonic_estimates(final_state, q);
  const double n = static_cast<double>(num_nodes);
  MomentEstimate e;
  e.raw = f2_from_populations(nplus, n);
  e.scaled = n > 0 ? e.raw / (n * n) : 0.0;
  return e;
}

// ---------------------------------------------------------------------------

void ErrorBudget::validate() const {
  if (r1 < 1 || r2 < 1) throw ConfigError("r1 and r2 must be >= 1");
  if (!(eps1 > 0.0) || !(eps2 > 0.0) || !(mu > 0.0)) {
    throw ConfigError("eps1, eps2 and mu must be positive");
  }
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must be in [0, 1)");
}

namespace {
double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }
}  // namespace

double ErrorBudget::epsilon_unquantized() const { return eps1 + 4.0 * eps2 * (3.0 + eps2); }

double ErrorBudget::epsilon_quantized() const { return eps1 + 8.0 * mu * (3.0 + 2.0 * mu); }

double ErrorBudget::p1() const { return clamp01(1.0 - 2.0 / (r1 * eps1 * eps1)); }

double ErrorBudget::p2() const {
  return clamp01(1.0 - 2.0 * std::exp(-eps2 * eps2 * r2 / 12.0));
}

double ErrorBudget::success_lower_bound() const { return p1() * p2() * (1.0 - beta); }

double ErrorBudget::delta_quantized() const {
  const double tail = std::exp(-mu * mu * r2 / 6.0);
  return clamp01(tail + 2.0 / (r1 * eps1 * eps1) * (1.0 - tail));
}

// ---------------------------------------------------------------------------

FkEstimatorState::FkEstimatorState(int k, int r1, int s1, int num_buckets)
    : k_(k), r1_(r1), s1_(s1), num_buckets_(num_buckets) {
  if (k < 2) throw ConfigError("moment order k must be >= 2");
  if (r1 < 1 || s1 < 1 || num_buckets < 1) throw ConfigError("r1, s1, num_buckets must be >= 1");
  cells_.resize(static_cast<std::size_t>(r1) * s1 * num_buckets);
}

std::size_t FkEstimatorState::index(int t, int b, int p) const {
  if (t < 0 || t >= s1_ || b < 0 || b >= num_buckets_ || p < 0 || p >= r1_) {
    throw ConfigError("FkEstimatorState index out of range");
  }
  return (static_cast<std::size_t>(t) * num_buckets_ + b) * r1_ + p;
}

ChannelTotals& FkEstimatorState::at(int t, int b, int p) { return cells_[index(t, b, p)]; }

const ChannelTotals& FkEstimatorState::at(int t, int b, int p) const {
  return cells_[index(t, b, p)];
}

double real_power(std::complex<double> z, int k) {
  std::complex<double> acc(1.0, 0.0);
  for (int i = 0; i < k; ++i) acc *= z;
  return acc.real();
}

MomentEstimate estimate_fk(const FkEstimatorState& state, std::int64_t num_nodes) {
  if (state.k() < 3) throw ConfigError("estimate_fk needs k >= 3; use estimate_f2 for k = 2");
  std::vector<double> per_bucket_map(static_cast<std::size_t>(state.s1()));
  for (int t = 0; t < state.s1(); ++t) {
    double mean_over_roots = 0.0;
    for (int p = 0; p < state.r1(); ++p) {
      double y = 0.0;
      for (int b = 0; b < state.num_buckets(); ++b) {
        y += real_power(state.at(t, b, p).bucket_sum(), state.k());
      }
      mean_over_roots += y;
    }
    per_bucket_map[static_cast<std::size_t>(t)] = mean_over_roots / state.r1();
  }
  std::sort(per_bucket_map.begin(), per_bucket_map.end());
  const std::size_t n = per_bucket_map.size();
  const double median =
      n % 2 == 1 ? per_bucket_map[n / 2] : 0.5 * (per_bucket_map[n / 2 - 1] + per_bucket_map[n / 2]);
  MomentEstimate e;
  e.raw = median;
  e.scaled = num_nodes > 0 ? median / std::pow(static_cast<double>(num_nodes), state.k()) : 0.0;
  return e;
}

// ---------------------------------------------------------------------------

PercolationBound percolation_bound_check(const Dataset& d, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw DomainError("alpha must be in [0, 1)");
  Histogram h = histogram(d);
  PercolationBound r;
  r.f2 = exact_fk(h, 2);
  const double alpha_n = alpha * static_cast<double>(d.size());
  r.removed = static_cast<std::int64_t>(std::floor(alpha_n + 1e-9));

  std::vector<std::int64_t> counts(h.data(), h.data() + h.size());
  r.applies = !counts.empty() &&
              static_cast<double>(*std::max_element(counts.begin(), counts.end())) + 1e-9 >= alpha_n;
  // One copy at a time from the currently most frequent value.
  std::priority_queue<std::int64_t> heap(counts.begin(), counts.end());
  for (std::int64_t left = r.removed; left > 0 && !heap.empty(); --left) {
    const std::int64_t c = heap.top();
    heap.pop();
    if (c > 1) heap.push(c - 1);
  }
  counts.clear();
  while (!heap.empty()) {
    counts.push_back(heap.top());
    heap.pop();
  }
  std::uint64_t f2a = 0;
  for (auto c : counts) f2a += static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(c);
  r.f2_alpha = f2a;
  r.slack = (static_cast<double>(r.f2) - alpha_n * alpha_n) - static_cast<double>(r.f2_alpha);
  r.bound_ok = !r.applies || r.slack >= -1e-9 * std::max(1.0, static_cast<double>(r.f2));
  return r;
}

}  // namespace netmoments
