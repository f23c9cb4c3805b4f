// Acceptance suite: one pass/fail line per criterion, nonzero exit when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "netmoments/simulator.hpp"

using namespace netmoments;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int jobs() { return static_cast<int>(std::max(1U, std::thread::hardware_concurrency())); }

Dataset random_dataset(std::mt19937_64& rng, int max_n, int max_m) {
  const int m = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_m));
  const int n = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_n));
  std::vector<AlphabetValue> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<AlphabetValue>(1 + rng() % static_cast<unsigned>(m));
  return Dataset(std::move(v), m);
}

// 1. E over all 2^M sign assignments of (sum_m s_m N_m)^2 is F2, variance at most 2 F2^2
Outcome sign_expectation() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  bool var_ok = true;
  for (int t = 0; t < 20; ++t) {
    const auto d = random_dataset(rng, 30, 6);
    const auto h = histogram(d);
    const int M = d.alphabet_size;
    const double f2 = static_cast<double>(exact_fk(h, 2));
    double s1 = 0.0;
    double s2 = 0.0;
    for (int mask = 0; mask < (1 << M); ++mask) {
      double s = 0.0;
      for (int m = 0; m < M; ++m) s += ((mask >> m) & 1) ? h(m) : -h(m);
      s1 += s * s;
      s2 += s * s * s * s;
    }
    const double total = 1 << M;
    const double mean = s1 / total;
    worst = std::max(worst, std::abs(mean - f2));
    var_ok = var_ok && (s2 / total - mean * mean) <= 2.0 * f2 * f2 + 1e-9;
  }
  return {worst <= 1e-9 && var_ok, fmt("max |mean - F2| = %.3g, variance bound %s", worst, var_ok ? "holds" : "violated")};
}

// 2. E over all k^M root assignments of Re (sum_m N_m w_m)^k is F_k
Outcome root_expectation() {
  std::mt19937_64 rng(102);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const auto d = random_dataset(rng, 30, 4);
    const auto h = histogram(d);
    const int M = d.alphabet_size;
    for (int k : {3, 4}) {
      int total = 1;
      for (int m = 0; m < M; ++m) total *= k;
      double sum = 0.0;
      for (int code = 0; code < total; ++code) {
        std::complex<double> s;
        int c = code;
        for (int m = 0; m < M; ++m, c /= k) s += static_cast<double>(h(m)) * root_of_unity(c % k, k).as_complex();
        sum += real_power(s, k);
      }
      worst = std::max(worst, std::abs(sum / total - static_cast<double>(exact_fk(h, k))));
    }
  }
  return {worst <= 1e-9, fmt("max |mean - F_k| = %.3g over 10 datasets, k = 3, 4", worst)};
}

// 3. min of Exp(1), Exp(2), Exp(3.5) against Exp(6.5) by Kolmogorov-Smirnov
Outcome min_distribution() {
  const int n = 100000;
  NodeRng rng(103);
  std::vector<double> x(n);
  for (auto& v : x) {
    v = std::min({sample_exponential(1.0, rng), sample_exponential(2.0, rng), sample_exponential(3.5, rng)});
  }
  std::sort(x.begin(), x.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = 1.0 - std::exp(-6.5 * x[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  const double crit = 1.628 / std::sqrt(static_cast<double>(n));
  return {d < crit, fmt("KS D = %.5f, 1%% critical value %.5f", d, crit)};
}

// 4. harmonic estimate of N_+ = 100 from r2 = 512 minima
Outcome harmonic_concentration() {
  const int n_plus = 100;
  const int r2 = 512;
  const double eps2 = 0.2;
  NodeRng rng(104);
  int bad = 0;
  for (int t = 0; t < 1000; ++t) {
    double z = 0.0;
    for (int j = 0; j < r2; ++j) {
      double m = std::numeric_limits<double>::infinity();
      for (int u = 0; u < n_plus; ++u) m = std::min(m, sample_exponential(1.0, rng));
      z += m;
    }
    bad += std::abs(r2 / z - n_plus) > eps2 * n_plus ? 1 : 0;
  }
  const double rate = bad / 1000.0;
  const double bound = 2.0 * std::exp(-eps2 * eps2 * r2 / 12.0);
  return {rate <= bound, fmt("violation rate %.4f, bound %.4f", rate, bound)};
}

// 5. F2 end to end with the solved budget
Outcome f2_end_to_end() {
  ExperimentConfig c;
  c.num_nodes = 1024;
  c.alphabet_size = 64;
  c.data = DataSpec::parse("zipf:1.2");
  c.epsilon = 0.1;
  c.delta = 0.1;
  c.trials = 100;
  c.master_seed = 5;
  c.jobs = jobs();
  const auto rep = run_experiment(c);
  int ok = 0;
  for (const auto& t : rep.trials) ok += t.converged && t.abs_error <= 0.1 ? 1 : 0;
  return {ok >= 90 && rep.nodes_agree,
          fmt("%d/100 trials within 0.1 (r1 = %d, r2 = %d, quant_bits = %d, mean |error| %.4f)", ok,
              rep.config.r1, rep.config.r2, rep.config.quant_bits, rep.mean_abs_error)};
}

// 6. point-mass and uniform extremes
Outcome extremes() {
  auto rate = [](ExperimentConfig c, double expect) {
    c.trials = 10;
    c.jobs = jobs();
    c.sketch_eval = SketchEval::lazy;
    const auto rep = run_experiment(c);
    int ok = 0;
    for (const auto& t : rep.trials) {
      ok += t.converged && std::abs(t.exact_scaled - expect) < 1e-12 &&
                    std::abs(t.estimate_scaled - expect) <= c.epsilon
                ? 1
                : 0;
    }
    return ok;
  };
  ExperimentConfig f2;
  f2.num_nodes = 512;
  f2.alphabet_size = 64;
  f2.data = DataSpec::parse("pointmass");
  f2.master_seed = 61;
  const int point2 = rate(f2, 1.0);

  // 512 nodes over 64 values: 8 copies each gives exactly 1/64
  const std::string path = "acceptance_uniform64.txt";
  {
    std::vector<AlphabetValue> v;
    for (int i = 0; i < 512; ++i) v.push_back(static_cast<AlphabetValue>(1 + i % 64));
    std::ofstream out(path);
    write_dataset(out, Dataset(v, 64));
  }
  ExperimentConfig u = f2;
  u.data = DataSpec::parse("file:" + path);
  u.master_seed = 62;
  const int uni = rate(u, 1.0 / 64.0);
  std::remove(path.c_str());

  ExperimentConfig f3;
  f3.num_nodes = 128;
  f3.alphabet_size = 4;
  f3.k = 3;
  f3.r1 = 32;
  f3.r2 = 1024;
  f3.data = DataSpec::parse("pointmass");
  f3.master_seed = 63;
  const int point3 = rate(f3, 1.0);
  return {point2 >= 9 && uni >= 9 && point3 >= 9,
          fmt("within eps = 0.1 of the exact value: point-mass F2 %d/10, uniform F2 %d/10, point-mass F3 %d/10",
              point2, uni, point3)};
}

// 7. F3 with 30 sequential phases
Outcome f3_end_to_end() {
  ExperimentConfig c;
  c.num_nodes = 512;
  c.alphabet_size = 27;
  c.k = 3;
  c.r1 = 16;
  c.r2 = 32;
  c.trials = 100;
  c.master_seed = 7;
  c.jobs = jobs();
  c.sketch_eval = SketchEval::lazy;
  const auto rep = run_experiment(c);
  const std::int64_t expect_bpm =
      std::int64_t{rep.config.r1} * rep.config.r2 * 3 * (rep.config.quant_bits + 1);
  int ok = 0;
  bool constant = true;
  for (const auto& t : rep.trials) {
    ok += t.converged && t.abs_error <= 0.15 ? 1 : 0;
    constant = constant && t.bits_per_message == expect_bpm && t.bits == t.messages * expect_bpm &&
               t.phases == 30;
  }
  return {ok >= 85 && constant && rep.config.phases() == 30,
          fmt("%d/100 trials within 0.15, %d phases, bits/message %lld %s r1*r2*3*(q+1) = %lld", ok,
              rep.config.phases(), static_cast<long long>(rep.trials[0].bits_per_message),
              constant ? "==" : "!=", static_cast<long long>(expect_bpm))};
}

// 8. spreading-time scaling
Outcome spreading_scaling() {
  std::vector<double> x;
  std::vector<double> y;
  SpreadConfig sc;
  for (NodeId n : {64, 128, 256, 512}) {
    const auto st = measure_spreading(complete_graph(n), Protocol::gossip, sc, 51, 800 + n);
    x.push_back(n * std::log(static_cast<double>(n)));
    y.push_back(static_cast<double>(st.median));
  }
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double r2 = sxy * sxy / (sxx * syy);

  ExperimentConfig a;
  a.network = NetworkSpec::parse("rgg-connected");
  a.protocol = Protocol::aloha;
  a.master_seed = 88;
  a.trials = 21;
  const auto small = spreading_time(a, 1024);
  a.trials = 11;
  const auto large = spreading_time(a, 4096);
  const double ratio = static_cast<double>(large.stats.median) / static_cast<double>(small.stats.median);
  const double pred = std::sqrt((4096.0 / std::log(4096.0)) / (1024.0 / std::log(1024.0)));
  const bool in_band = ratio >= pred / 2.0 && ratio <= pred * 2.0;
  return {r2 >= 0.95 && in_band && small.stats.completed > 0 && large.stats.completed > 0,
          fmt("gossip R^2 = %.4f; Aloha median slots %lld (N=1024, %lld/21 done) and %lld (N=4096, %lld/11 done), "
              "ratio %.3f vs prediction %.3f, band [%.3f, %.3f]",
              r2, static_cast<long long>(small.stats.median), static_cast<long long>(small.stats.completed),
              static_cast<long long>(large.stats.median), static_cast<long long>(large.stats.completed), ratio,
              pred, pred / 2.0, pred * 2.0)};
}

// 9. worst-case removal bound by brute force, then percolating trials
Outcome percolation() {
  long checked = 0;
  bool exact = true;
  for (int M = 1; M <= 4; ++M) {
    std::vector<std::int64_t> c(static_cast<std::size_t>(M), 0);
    std::function<void(int, int)> histograms = [&](int i, int left) {
      if (i < M) {
        for (int x = 0; x <= left; ++x) {
          c[i] = x;
          histograms(i + 1, left - x);
        }
        c[i] = 0;
        return;
      }
      const std::int64_t N = std::accumulate(c.begin(), c.end(), std::int64_t{0});
      if (N == 0) return;
      std::int64_t f2 = 0;
      for (auto v : c) f2 += v * v;
      std::vector<AlphabetValue> vals;
      for (int m = 0; m < M; ++m) vals.insert(vals.end(), static_cast<std::size_t>(c[m]), m + 1);
      const Dataset d(vals, M);
      for (std::int64_t R = 0; R < N; ++R) {
        // every removal pattern of R copies
        std::int64_t worst = std::numeric_limits<std::int64_t>::max();
        std::vector<std::int64_t> take(c.size(), 0);
        std::function<void(std::size_t, std::int64_t)> patterns = [&](std::size_t j, std::int64_t rem) {
          if (j == c.size()) {
            if (rem != 0) return;
            std::int64_t f = 0;
            for (std::size_t q = 0; q < c.size(); ++q) f += (c[q] - take[q]) * (c[q] - take[q]);
            worst = std::min(worst, f);
            return;
          }
          for (std::int64_t r = 0; r <= std::min(rem, c[j]); ++r) {
            take[j] = r;
            patterns(j + 1, rem - r);
          }
          take[j] = 0;
        };
        patterns(0, R);
        const auto r = percolation_bound_check(d, static_cast<double>(R) / static_cast<double>(N));
        exact = exact && static_cast<std::int64_t>(r.f2_alpha) == worst;
        if (r.applies) {
          exact = exact && worst <= f2 - R * R && r.bound_ok;
          ++checked;
        }
      }
    };
    histograms(0, 12);
  }

  ExperimentConfig p;
  p.num_nodes = 2000;
  p.alphabet_size = 64;
  p.network = NetworkSpec::parse("rgg-percolating");
  p.r1 = 64;
  p.r2 = 128;
  p.master_seed = 9;
  p.jobs = jobs();
  p.sketch_eval = SketchEval::lazy;
  const auto rep = run_percolation_experiment(p, 100);
  double alpha = 0.0;
  for (const auto& t : rep.trials) alpha += t.alpha;
  return {exact && rep.converged > 0 && rep.participating_success_rate >= 0.9,
          fmt("brute force %s on %ld applicable cases; %d converged, %d rejected, participating accuracy "
              "%.2f, full-population accuracy %.2f, loss exceed rate %.2f, mean alpha %.3f",
              exact ? "exact" : "MISMATCH", checked, rep.converged, rep.rejected, rep.participating_success_rate,
              rep.success_rate, rep.loss_exceed_rate, alpha / 100.0)};
}

// 10. byte-identical reports and merge-order independence
Outcome determinism() {
  ExperimentConfig c;
  c.num_nodes = 256;
  c.alphabet_size = 16;
  c.network = NetworkSpec::parse("rgg-connected");
  c.r1 = 16;
  c.r2 = 32;
  c.trials = 6;
  c.master_seed = 10;
  auto report = [](const ExperimentConfig& cfg) {
    auto r = run_experiment(cfg);
    r.config.jobs = 1;  // the thread count is echoed in the config block
    std::ostringstream os;
    r.write_csv(os);
    return r.to_json() + os.str();
  };
  const std::string a = report(c);
  const bool same = a == report(c);
  c.jobs = 3;
  const bool threads = a == report(c);

  const auto q = QuantConfig::defaults(256, 0.01);
  NodeRng rng(1010);
  std::vector<SketchVector> parts;
  for (int i = 0; i < 12; ++i) {
    auto s = SketchVector::infinite(8, 16, q, Channel::sign);
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        if (rng() % 3) s.entries(r, j) = draw_truncated_exp(1.0 + i, q, rng);
      }
    }
    parts.push_back(std::move(s));
  }
  auto reference = parts[0];
  for (const auto& s : parts) reference.entries = reference.entries.min(s.entries);
  int mismatches = 0;
  std::mt19937_64 g(1011);
  for (int trial = 0; trial < 10000; ++trial) {
    auto pool = parts;
    std::shuffle(pool.begin(), pool.end(), g);
    // random merge tree: combine two random entries until one is left
    while (pool.size() > 1) {
      const std::size_t i = g() % pool.size();
      std::size_t j = g() % (pool.size() - 1);
      if (j >= i) ++j;
      pool[i] = merge_min(pool[i], pool[j]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    }
    mismatches += pool[0] == reference ? 0 : 1;
  }
  return {same && threads && mismatches == 0,
          fmt("repeat run %s, 1 vs 3 threads %s, %d/10000 merge orders differ", same ? "identical" : "DIFFERS",
              threads ? "identical" : "DIFFERS", mismatches)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"sign expectation", sign_expectation},
      {"root expectation", root_expectation},
      {"minimum of exponentials", min_distribution},
      {"harmonic concentration", harmonic_concentration},
      {"F2 end to end", f2_end_to_end},
      {"extreme distributions", extremes},
      {"F3 end to end", f3_end_to_end},
      {"spreading-time scaling", spreading_scaling},
      {"percolation", percolation},
      {"determinism and merge order", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %zu (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
