#include "netmoments/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace netmoments {

namespace {

// Purposes for keyed seed derivation.
enum : std::uint64_t {
  kTrial = 0x7e1a1,
  kData = 0xda7a,
  kTopology = 0x7090,
  kMaps = 0x3a95,
  kInit = 0x1417,
  kSpread = 0x5b7e,
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("invalid value '" + value + "' for " + key);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data

DataSpec DataSpec::parse(const std::string& s) {
  DataSpec d;
  if (s == "pointmass") {
    d.model = DataModel::pointmass;
  } else if (s == "uniform") {
    d.model = DataModel::uniform;
  } else if (s.rfind("zipf:", 0) == 0) {
    d.model = DataModel::zipf;
    d.theta = parse_number<double>("zipf exponent", s.substr(5));
    if (!(d.theta >= 0.0)) throw ConfigError("zipf exponent must be >= 0");
  } else if (s.rfind("file:", 0) == 0) {
    d.model = DataModel::file;
    d.path = s.substr(5);
    if (d.path.empty()) throw ConfigError("file data model needs a path");
  } else {
    throw ConfigError("unknown data model '" + s + "' (pointmass|uniform|zipf:THETA|file:PATH)");
  }
  return d;
}

std::string DataSpec::to_string() const {
  switch (model) {
    case DataModel::pointmass: return "pointmass";
    case DataModel::uniform: return "uniform";
    case DataModel::zipf: return "zipf:" + fmt_double(theta);
    case DataModel::file: return "file:" + path;
  }
  return {};
}

Dataset generate_dataset(const DataSpec& spec, std::int64_t num_nodes, int alphabet_size,
                         std::uint64_t seed) {
  if (spec.model == DataModel::file) {
    Dataset d = read_dataset_file(spec.path);
    if (d.size() != num_nodes || d.alphabet_size != alphabet_size) {
      throw ConfigError("dataset file " + spec.path + " has N=" + std::to_string(d.size()) +
                        " M=" + std::to_string(d.alphabet_size) + ", configuration expects N=" +
                        std::to_string(num_nodes) + " M=" + std::to_string(alphabet_size));
    }
    return d;
  }
  if (num_nodes < 0) throw ConfigError("N must be non-negative");
  if (alphabet_size < 1) throw ConfigError("M must be >= 1");
  std::vector<AlphabetValue> v(static_cast<std::size_t>(num_nodes), 1);
  NodeRng rng = make_stream(seed, 0, kData);
  if (spec.model == DataModel::uniform) {
    std::uniform_int_distribution<AlphabetValue> pick(1, static_cast<AlphabetValue>(alphabet_size));
    for (auto& x : v) x = pick(rng);
  } else if (spec.model == DataModel::zipf) {
    std::vector<double> w(static_cast<std::size_t>(alphabet_size));
    for (int m = 0; m < alphabet_size; ++m) w[m] = std::pow(m + 1.0, -spec.theta);
    std::discrete_distribution<int> pick(w.begin(), w.end());
    for (auto& x : v) x = static_cast<AlphabetValue>(pick(rng) + 1);
  }
  return Dataset(std::move(v), alphabet_size);
}

void write_dataset(std::ostream& os, const Dataset& d) {
  os << d.size() << ' ' << d.alphabet_size << '\n';
  for (AlphabetValue x : d.values) os << x << '\n';
}

Dataset read_dataset(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  long long n = -1;
  long long m = 0;
  std::vector<AlphabetValue> values;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    std::string extra;
    if (n < 0) {
      if (!(ls >> n >> m) || (ls >> extra) || n < 0 || m < 1) {
        throw ParseError(lineno, "expected header 'N M'");
      }
      values.reserve(static_cast<std::size_t>(n));
      continue;
    }
    long long x = 0;
    if (!(ls >> x) || (ls >> extra)) throw ParseError(lineno, "expected one integer value");
    if (x < 1 || x > m) {
      throw ParseError(lineno, "value " + std::to_string(x) + " outside [1, " + std::to_string(m) + "]");
    }
    if (static_cast<long long>(values.size()) == n) throw ParseError(lineno, "more than N values");
    values.push_back(static_cast<AlphabetValue>(x));
  }
  if (n < 0) throw ParseError(lineno, "missing header 'N M'");
  if (static_cast<long long>(values.size()) != n) {
    throw ParseError(lineno, "expected " + std::to_string(n) + " values, found " +
                                 std::to_string(values.size()));
  }
  return Dataset(std::move(values), static_cast<int>(m));
}

Dataset read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset file " + path);
  return read_dataset(in);
}

// ---------------------------------------------------------------------------
// Network

NetworkSpec NetworkSpec::parse(const std::string& s) {
  NetworkSpec n;
  if (s == "complete") {
    n.kind = NetworkKind::complete;
  } else if (s == "rgg-connected") {
    n.kind = NetworkKind::rgg_connected;
  } else if (s == "rgg-percolating") {
    n.kind = NetworkKind::rgg_percolating;
  } else if (s.rfind("graph:", 0) == 0) {
    n.kind = NetworkKind::graph_file;
    n.path = s.substr(6);
    if (n.path.empty()) throw ConfigError("graph network needs a path");
  } else {
    throw ConfigError("unknown network '" + s +
                      "' (complete|graph:PATH|rgg-connected|rgg-percolating)");
  }
  return n;
}

std::string NetworkSpec::to_string() const {
  switch (kind) {
    case NetworkKind::complete: return "complete";
    case NetworkKind::graph_file: return "graph:" + path;
    case NetworkKind::rgg_connected: return "rgg-connected";
    case NetworkKind::rgg_percolating: return "rgg-percolating";
  }
  return {};
}

Topology build_topology(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto n = static_cast<NodeId>(cfg.num_nodes);
  switch (cfg.network.kind) {
    case NetworkKind::complete: return complete_graph(n);
    case NetworkKind::graph_file: {
      std::ifstream in(cfg.network.path);
      if (!in) throw ConfigError("cannot open graph file " + cfg.network.path);
      Topology t = read_edge_list(in);
      if (t.size() != n) {
        throw ConfigError("graph file has " + std::to_string(t.size()) + " nodes, expected " +
                          std::to_string(n));
      }
      return t;
    }
    case NetworkKind::rgg_connected: {
      const double c = cfg.radius_c > 0 ? cfg.radius_c : kDefaultConnectivityC;
      NodeRng rng = make_stream(seed, 0, kTopology);
      return build_rgg(n, std::min(connectivity_radius(n, c), std::sqrt(2.0)), rng);
    }
    case NetworkKind::rgg_percolating: {
      const double c = cfg.radius_c > 0 ? cfg.radius_c : kDefaultPercolationC;
      NodeRng rng = make_stream(seed, 0, kTopology);
      return build_rgg(n, std::min(percolation_radius(n, c), std::sqrt(2.0)), rng);
    }
  }
  throw ConfigError("unknown network kind");
}

// ---------------------------------------------------------------------------
// Budget

BudgetRule parse_budget_rule(const std::string& s) {
  if (s == "conservative") return BudgetRule::conservative;
  if (s == "variance") return BudgetRule::variance;
  throw ConfigError("unknown budget rule '" + s + "' (conservative|variance)");
}

const char* to_string(BudgetRule r) { return r == BudgetRule::conservative ? "conservative" : "variance"; }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must be in (0, 1)");
  double lo = -40.0;
  double hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

// Positive root of 8 mu (3 + 2 mu) = x.
double mu_for_quantized_share(double x) { return (-24.0 + std::sqrt(576.0 + 32.0 * x)) / 32.0; }

std::uint64_t next_pow2(double x) {
  if (!(x > 1.0)) return 1;
  const double e = std::ceil(std::log2(x) - 1e-12);
  if (e >= 63) return std::uint64_t{1} << 63;
  auto v = std::uint64_t{1} << static_cast<int>(e);
  if (static_cast<double>(v) < x) v <<= 1;
  return v;
}

BudgetSolution solve_conservative(double eps, double delta, std::int64_t n) {
  BudgetSolution s;
  s.rule = BudgetRule::conservative;
  s.budget.eps1 = eps / 2.0;
  s.budget.eps2 = eps / 32.0;
  s.budget.mu = mu_for_quantized_share(eps / 2.0);
  const double e1 = s.budget.eps1;
  const double mu = s.budget.mu;
  double best = std::numeric_limits<double>::infinity();
  std::uint64_t best_r1 = 0;
  std::uint64_t best_r2 = 0;
  for (int e = 0; e < 63; ++e) {
    const double r2 = std::ldexp(1.0, e);
    const double a = std::exp(-mu * mu * r2 / 6.0);
    if (a >= delta) continue;
    const auto r1 = next_pow2(2.0 * (1.0 - a) / (e1 * e1 * (delta - a)));
    const double prod = static_cast<double>(r1) * r2;
    if (prod < best) {
      best = prod;
      best_r1 = r1;
      best_r2 = std::uint64_t{1} << e;
    }
  }
  if (best > static_cast<double>(kMaxSketchEntries)) {
    throw InfeasibleBudget("conservative budget rule needs r1 = " + std::to_string(best_r1) +
                               ", r2 = " + std::to_string(best_r2) + " (r1*r2 = " +
                               fmt_double(best) + " > " + std::to_string(kMaxSketchEntries) + ")",
                           best_r1, best_r2);
  }
  s.budget.r1 = static_cast<int>(best_r1);
  s.budget.r2 = static_cast<int>(best_r2);
  s.predicted_delta = s.budget.delta_quantized();
  s.quant = QuantConfig::defaults(n, mu);
  return s;
}

struct VarianceTerms {
  double sd;
  double bias;
};

// sign-sum spread plus harmonic noise, and the harmonic estimator's upward bias
VarianceTerms variance_terms(double r1, double r2) {
  return {std::sqrt(0.25 / r1 + 8.0 / (r1 * (r2 - 2.0))), 4.0 / (r2 - 2.0)};
}

BudgetSolution solve_variance(double eps, double delta, std::int64_t n) {
  BudgetSolution s;
  s.rule = BudgetRule::variance;
  const double mu = eps / 10.0;
  const double slack = 2.0 * mu * (1.0 + mu);
  const double z = normal_quantile(1.0 - delta / 2.0);
  for (int total = 2; total <= 40; ++total) {
    double best_margin = -1.0;
    int best_a = -1;
    for (int a = 0; a + 2 <= total; ++a) {
      const double r1 = std::ldexp(1.0, a);
      const double r2 = std::ldexp(1.0, total - a);
      const auto t = variance_terms(r1, r2);
      const double margin = eps - (z * t.sd + t.bias + slack);
      if (margin >= 0.0 && margin > best_margin) {
        best_margin = margin;
        best_a = a;
      }
    }
    if (best_a < 0) continue;
    if ((std::uint64_t{1} << total) > kMaxSketchEntries) {
      throw InfeasibleBudget("variance budget rule needs r1*r2 = 2^" + std::to_string(total),
                             std::uint64_t{1} << best_a, std::uint64_t{1} << (total - best_a));
    }
    s.budget.r1 = 1 << best_a;
    s.budget.r2 = 1 << (total - best_a);
    s.budget.mu = mu;
    s.budget.eps1 = eps - slack;
    s.budget.eps2 = 1.0 / std::sqrt(static_cast<double>(s.budget.r2));
    const auto t = variance_terms(s.budget.r1, s.budget.r2);
    s.predicted_delta = std::erfc((eps - t.bias - slack) / t.sd / std::sqrt(2.0));
    s.quant = QuantConfig::defaults(n, mu);
    return s;
  }
  throw InfeasibleBudget("variance budget rule found no r1*r2 <= 2^40", 0, 0);
}

}  // namespace

BudgetSolution solve_budget(double eps, double delta, std::int64_t num_nodes, BudgetRule rule) {
  if (!(eps > 0.0 && eps < 1.0) || !(delta > 0.0 && delta < 1.0)) {
    throw ConfigError("epsilon and delta must be in (0, 1)");
  }
  if (num_nodes < 2) throw ConfigError("solve_budget: N must be >= 2");
  return rule == BudgetRule::conservative ? solve_conservative(eps, delta, num_nodes)
                                   : solve_variance(eps, delta, num_nodes);
}

// ---------------------------------------------------------------------------
// Configuration

SketchEval parse_sketch_eval(const std::string& s) {
  if (s == "eager") return SketchEval::eager;
  if (s == "lazy") return SketchEval::lazy;
  throw ConfigError("unknown sketch evaluation '" + s + "' (eager|lazy)");
}

const char* to_string(SketchEval e) { return e == SketchEval::eager ? "eager" : "lazy"; }

int default_num_buckets(int alphabet_size, int k) {
  if (alphabet_size < 1 || k < 3) throw ConfigError("bucket default needs M >= 1, k >= 3");
  const double b = std::ceil(std::pow(static_cast<double>(alphabet_size), 1.0 - 1.0 / (k - 1)) - 1e-9);
  return std::max(1, static_cast<int>(b));
}

void ExperimentConfig::validate() const {
  if (num_nodes < 2) throw ConfigError("N must be >= 2");
  if (num_nodes > std::numeric_limits<NodeId>::max()) throw ConfigError("N too large");
  if (alphabet_size < 1) throw ConfigError("M must be >= 1");
  if (alphabet_size >= num_nodes) throw ConfigError("M must be smaller than N");
  if (k < 2) throw ConfigError("k must be >= 2");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must be in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must be in (0, 1)");
  if (r1 < 0 || r2 < 0) throw ConfigError("r1 and r2 must be >= 1 (0 = solve)");
  if (quant_bits < 0 || quant_bits > 30) throw ConfigError("quant_bits must be in [1, 30]");
  if (trunc_L < 0.0) throw ConfigError("trunc_L must be positive");
  if (target_mu < 0.0 || target_mu >= 1.0) throw ConfigError("target_mu must be in (0, 1)");
  if (num_buckets < 0) throw ConfigError("buckets must be >= 1");
  if (s1 < 1) throw ConfigError("s1 must be >= 1");
  if (radius_c < 0.0) throw ConfigError("radius_c must be positive");
  spread.validate();
}

QuantConfig ExperimentConfig::quant() const {
  QuantConfig q;
  q.truncation_L = trunc_L;
  q.quant_bits = quant_bits;
  q.target_mu = target_mu;
  q.validate();
  return q;
}

ErrorBudget ExperimentConfig::budget() const {
  ErrorBudget b;
  b.r1 = r1;
  b.r2 = r2;
  b.mu = target_mu;
  b.eps1 = epsilon / 2.0;
  b.eps2 = epsilon / 32.0;
  b.beta = spread.beta;
  return b;
}

ExperimentConfig resolve(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentConfig c = cfg;
  if (c.r1 == 0 || c.r2 == 0) {
    const auto sol = solve_budget(c.epsilon, c.delta, c.num_nodes, c.budget_rule);
    if (c.r1 == 0) c.r1 = sol.budget.r1;
    if (c.r2 == 0) c.r2 = sol.budget.r2;
    if (c.target_mu == 0.0) c.target_mu = sol.budget.mu;
  }
  if (c.target_mu == 0.0) {
    c.target_mu = c.budget_rule == BudgetRule::conservative ? mu_for_quantized_share(c.epsilon / 2.0)
                                                     : c.epsilon / 10.0;
  }
  const auto d = QuantConfig::defaults(c.num_nodes, c.target_mu);
  if (c.trunc_L == 0.0) c.trunc_L = d.truncation_L;
  if (c.quant_bits == 0) {
    c.quant_bits = QuantConfig::defaults(c.num_nodes, c.target_mu).quant_bits;
    // Keep the cell width rule when L was overridden.
    if (c.trunc_L != d.truncation_L) {
      c.quant_bits = static_cast<int>(
          std::ceil(std::log2(c.trunc_L * static_cast<double>(c.num_nodes) / c.target_mu)));
      c.quant_bits = std::clamp(c.quant_bits, 1, 30);
    }
  }
  if (c.k >= 3 && c.num_buckets == 0) c.num_buckets = default_num_buckets(c.alphabet_size, c.k);
  if (c.k == 2) c.num_buckets = 1;
  if (c.radius_c == 0.0) {
    if (c.network.kind == NetworkKind::rgg_connected) c.radius_c = kDefaultConnectivityC;
    if (c.network.kind == NetworkKind::rgg_percolating) c.radius_c = kDefaultPercolationC;
  }
  if (c.protocol == Protocol::aloha && c.spread.p_n == 0.0) {
    c.spread.p_n = c.percolating() ? 0.1 : default_aloha_probability(c.num_nodes);
  }
  c.quant();  // validates
  return c;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  auto as_int = [&] { return parse_number<int>(key, value); };
  auto as_double = [&] { return parse_number<double>(key, value); };
  if (key == "nodes") {
    cfg.num_nodes = parse_number<std::int64_t>(key, value);
  } else if (key == "alphabet") {
    cfg.alphabet_size = as_int();
  } else if (key == "k") {
    cfg.k = as_int();
  } else if (key == "data") {
    cfg.data = DataSpec::parse(value);
  } else if (key == "network") {
    cfg.network = NetworkSpec::parse(value);
  } else if (key == "radius_c") {
    cfg.radius_c = as_double();
  } else if (key == "protocol") {
    cfg.protocol = parse_protocol(value);
  } else if (key == "p_n") {
    cfg.spread.p_n = as_double();
  } else if (key == "beta") {
    cfg.spread.beta = as_double();
  } else if (key == "max_steps") {
    cfg.spread.max_steps = parse_number<std::int64_t>(key, value);
  } else if (key == "exchange_mode") {
    cfg.spread.mode = parse_exchange_mode(value);
  } else if (key == "epsilon") {
    cfg.epsilon = as_double();
  } else if (key == "delta") {
    cfg.delta = as_double();
  } else if (key == "budget_rule") {
    cfg.budget_rule = parse_budget_rule(value);
  } else if (key == "r1") {
    cfg.r1 = as_int();
  } else if (key == "r2") {
    cfg.r2 = as_int();
  } else if (key == "quant_bits") {
    cfg.quant_bits = as_int();
  } else if (key == "trunc_L") {
    cfg.trunc_L = as_double();
  } else if (key == "target_mu") {
    cfg.target_mu = as_double();
  } else if (key == "buckets") {
    cfg.num_buckets = value == "auto" ? 0 : as_int();
  } else if (key == "s1") {
    cfg.s1 = as_int();
  } else if (key == "trials") {
    cfg.trials = as_int();
  } else if (key == "seed") {
    cfg.master_seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "jobs") {
    cfg.jobs = as_int();
  } else if (key == "sketch_eval") {
    cfg.sketch_eval = parse_sketch_eval(value);
  } else {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
}

std::map<std::string, std::string> read_settings(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ParseError(lineno, "empty key");
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

std::string describe(const ExperimentConfig& c) {
  std::ostringstream os;
  auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
  kv("nodes", std::to_string(c.num_nodes));
  kv("alphabet", std::to_string(c.alphabet_size));
  kv("k", std::to_string(c.k));
  kv("data", c.data.to_string());
  kv("network", c.network.to_string());
  kv("radius_c", fmt_double(c.radius_c));
  kv("protocol", to_string(c.protocol));
  kv("p_n", fmt_double(c.spread.p_n));
  kv("beta", fmt_double(c.spread.beta));
  kv("max_steps", std::to_string(c.spread.max_steps));
  kv("exchange_mode", to_string(c.spread.mode));
  kv("epsilon", fmt_double(c.epsilon));
  kv("delta", fmt_double(c.delta));
  kv("budget_rule", to_string(c.budget_rule));
  kv("r1", std::to_string(c.r1));
  kv("r2", std::to_string(c.r2));
  kv("quant_bits", std::to_string(c.quant_bits));
  kv("trunc_L", fmt_double(c.trunc_L));
  kv("target_mu", fmt_double(c.target_mu));
  kv("buckets", c.num_buckets == 0 ? std::string("auto") : std::to_string(c.num_buckets));
  kv("s1", std::to_string(c.s1));
  kv("trials", std::to_string(c.trials));
  kv("seed", std::to_string(c.master_seed));
  kv("jobs", std::to_string(c.jobs));
  kv("sketch_eval", to_string(c.sketch_eval));
  return os.str();
}

// ---------------------------------------------------------------------------
// Trials

std::uint64_t trial_seed(std::uint64_t master_seed, int trial) {
  return keyed_hash(master_seed, static_cast<std::uint64_t>(trial), kTrial);
}

namespace {

struct Participants {
  Topology topology;
  Dataset data;
  double alpha = 0.0;
  bool rejected = false;
};

Participants select_participants(const ExperimentConfig& cfg, const Dataset& data,
                                 std::uint64_t seed) {
  Participants p;
  Topology full = build_topology(cfg, keyed_hash(seed, kTopology));
  if (!cfg.percolating()) {
    p.topology = std::move(full);
    p.data = data;
    return p;
  }
  const auto comp = giant_component(full);
  p.alpha = comp.alpha;
  if (2 * static_cast<std::int64_t>(comp.giant_set.size()) < cfg.num_nodes) {
    p.rejected = true;
    return p;
  }
  p.topology = full.induced(comp.giant_set);
  std::vector<AlphabetValue> vals;
  vals.reserve(comp.giant_set.size());
  for (NodeId u : comp.giant_set) vals.push_back(data.values[static_cast<std::size_t>(u)]);
  p.data = Dataset(std::move(vals), data.alphabet_size);
  return p;
}

NodeState sign_state(const SharedRandomness& rand, AlphabetValue x, const QuantConfig& q,
                     NodeRng& rng) {
  NodeState s{SketchVector::infinite(rand.r1(), rand.r2(), q, Channel::sign)};
  for (int i = 0; i < rand.r1(); ++i) {
    if (rand.sign(i, x) < 0) continue;
    for (int j = 0; j < rand.r2(); ++j) s[0].entries(i, j) = draw_truncated_exp(1.0, q, rng);
  }
  return s;
}

NodeState root_state(const SharedRandomness& rand, AlphabetValue x, bool member,
                     const QuantConfig& q, NodeRng& rng) {
  NodeState s{SketchVector::infinite(rand.r1(), rand.r2(), q, Channel::root_real),
              SketchVector::infinite(rand.r1(), rand.r2(), q, Channel::root_imag),
              SketchVector::infinite(rand.r1(), rand.r2(), q, Channel::population)};
  if (!member) return s;
  for (int p = 0; p < rand.r1(); ++p) {
    const RootOfUnity w = rand.root(p, x);
    const double rates[3] = {w.re + 1.0, w.im + 1.0, 1.0};
    for (int c = 0; c < 3; ++c) {
      for (int j = 0; j < rand.r2(); ++j) {
        s[c].entries(p, j) = draw_truncated_exp(std::max(0.0, rates[c]), q, rng);
      }
    }
  }
  return s;
}

// Min over the initial states of everything v has heard.
NodeState heard_min(const std::vector<NodeState>& init, const HeardSets& heard, NodeId v) {
  NodeState out = init[static_cast<std::size_t>(v)];
  for (NodeId u = 0; u < heard.size(); ++u) {
    if (u == v || !heard.contains(v, u)) continue;
    const auto& src = init[static_cast<std::size_t>(u)];
    for (std::size_t c = 0; c < out.size(); ++c) merge_into(out[c], src[c]);
  }
  return out;
}

struct PhaseOutcome {
  NodeState final_state;
  SpreadReport report;
  bool nodes_agree = true;
};

PhaseOutcome spread_phase(const ExperimentConfig& cfg, std::vector<NodeState> init,
                          const Topology& topo, std::uint64_t spread_seed,
                          std::int64_t bits_per_message) {
  const NodeId n = topo.size();
  SpreadConfig sc = cfg.spread;
  sc.record_coverage = false;
  PhaseOutcome out;
  const NodeId probes[3] = {0, n / 2, n - 1};
  if (cfg.sketch_eval == SketchEval::eager) {
    NetworkState net(std::move(init), n);
    out.report = run_spreading(net, topo, cfg.protocol, sc, spread_seed, bits_per_message);
    for (NodeId v : probes) out.nodes_agree = out.nodes_agree && net.sketches[v] == net.sketches[0];
    out.final_state = std::move(net.sketches[0]);
  } else {
    NetworkState net(n);
    out.report = run_spreading(net, topo, cfg.protocol, sc, spread_seed, bits_per_message);
    for (NodeId v : probes) out.nodes_agree = out.nodes_agree && net.heard.equal(v, 0);
    out.final_state = heard_min(init, net.heard, 0);
  }
  return out;
}

TrialResult begin_trial(const ExperimentConfig& cfg, std::uint64_t seed, Dataset& data,
                        Participants& part) {
  TrialResult r;
  r.seed = seed;
  r.phases = cfg.phases();
  data = generate_dataset(cfg.data, cfg.num_nodes, cfg.alphabet_size, keyed_hash(seed, kData));
  r.exact_scaled = scaled_moment(histogram(data), cfg.k);
  part = select_participants(cfg, data, seed);
  r.alpha = part.alpha;
  r.rejected = part.rejected;
  if (!r.rejected) {
    r.participating = part.data.size();
    r.participating_exact_scaled = scaled_moment(histogram(part.data), cfg.k);
  }
  return r;
}

void finish_trial(const ExperimentConfig& cfg, TrialResult& r, const MomentEstimate& est) {
  r.estimate_scaled = est.scaled;
  r.abs_error = std::abs(r.estimate_scaled - r.exact_scaled);
  r.participating_error = std::abs(r.estimate_scaled - r.participating_exact_scaled);
  if (cfg.k == 2) {
    const double n = static_cast<double>(cfg.num_nodes);
    r.loss_statistic = std::abs(est.raw - r.exact_scaled * n * n);
    r.loss_threshold = n * n * r.alpha * r.alpha * (1.0 - cfg.epsilon);
  }
}

}  // namespace

TrialResult run_f2_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.k != 2) throw ConfigError("run_f2_trial needs k = 2");
  Dataset data;
  Participants part;
  TrialResult r = begin_trial(cfg, seed, data, part);
  if (r.rejected) return r;
  const QuantConfig q = cfg.quant();
  const SharedRandomness rand(keyed_hash(seed, kMaps), cfg.r1, cfg.r2);
  const auto n = static_cast<NodeId>(part.data.size());
  std::vector<NodeState> init(static_cast<std::size_t>(n));
  for (NodeId v = 0; v < n; ++v) {
    NodeRng rng = make_stream(seed, static_cast<std::uint64_t>(v), kInit);
    init[v] = sign_state(rand, part.data.values[v], q, rng);
  }
  r.bits_per_message = account_bits(1, q, cfg.r1, cfg.r2, 1);
  auto phase = spread_phase(cfg, std::move(init), part.topology, keyed_hash(seed, kSpread),
                            r.bits_per_message);
  r.steps = phase.report.steps_to_full;
  r.messages = phase.report.messages;
  r.bits = phase.report.bits_sent;
  r.converged = phase.report.completed;
  r.nodes_agree = phase.nodes_agree;
  finish_trial(cfg, r, estimate_f2(phase.final_state[0], n, q));
  return r;
}

TrialResult run_fk_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.k < 3) throw ConfigError("run_fk_trial needs k >= 3");
  if (cfg.num_buckets < 1) throw ConfigError("run_fk_trial needs a resolved bucket count");
  Dataset data;
  Participants part;
  TrialResult r = begin_trial(cfg, seed, data, part);
  if (r.rejected) return r;
  const QuantConfig q = cfg.quant();
  const SharedRandomness rand(keyed_hash(seed, kMaps), cfg.r1, cfg.r2, cfg.k, cfg.num_buckets,
                              cfg.s1);
  const auto n = static_cast<NodeId>(part.data.size());
  FkEstimatorState state(cfg.k, cfg.r1, cfg.s1, cfg.num_buckets);
  r.bits_per_message = account_bits(1, q, cfg.r1, cfg.r2, 3);
  r.converged = true;
  for (int t = 0; t < cfg.s1; ++t) {
    for (int b = 0; b < cfg.num_buckets; ++b) {
      const auto phase_id = static_cast<std::uint64_t>(t * cfg.num_buckets + b);
      std::vector<NodeState> init(static_cast<std::size_t>(n));
      for (NodeId v = 0; v < n; ++v) {
        const AlphabetValue x = part.data.values[v];
        NodeRng rng = make_stream(seed, static_cast<std::uint64_t>(v), kInit + (phase_id << 8));
        init[v] = root_state(rand, x, rand.bucket(t, x) == b, q, rng);
      }
      auto phase = spread_phase(cfg, std::move(init), part.topology,
                                keyed_hash(seed, kSpread, phase_id), r.bits_per_message);
      r.steps += phase.report.steps_to_full;
      r.messages += phase.report.messages;
      r.bits += phase.report.bits_sent;
      r.converged = r.converged && phase.report.completed;
      r.nodes_agree = r.nodes_agree && phase.nodes_agree;
      double pop = 0.0;
      for (int p = 0; p < cfg.r1; ++p) {
        auto& cell = state.at(t, b, p);
        cell.real_channel = harmonic_estimate(phase.final_state[0].entries.row(p), q);
        cell.imag_channel = harmonic_estimate(phase.final_state[1].entries.row(p), q);
        cell.population = harmonic_estimate(phase.final_state[2].entries.row(p), q);
        pop += cell.population;
      }
      r.phase_population.push_back(pop / cfg.r1);
    }
  }
  finish_trial(cfg, r, estimate_fk(state, n));
  return r;
}

TrialResult run_trial(const ExperimentConfig& cfg, int trial) {
  const std::uint64_t seed = trial_seed(cfg.master_seed, trial);
  TrialResult r = cfg.k == 2 ? run_f2_trial(cfg, seed) : run_fk_trial(cfg, seed);
  r.trial = trial;
  return r;
}

ExperimentReport run_experiment(const ExperimentConfig& raw) {
  ExperimentReport rep;
  rep.config = resolve(raw);
  const ExperimentConfig& cfg = rep.config;
  rep.trials.resize(static_cast<std::size_t>(cfg.trials));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int i = next++; i < cfg.trials; i = next++) {
      try {
        rep.trials[static_cast<std::size_t>(i)] = run_trial(cfg, i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = cfg.trials;
      }
    }
  };
  const int threads = std::min(cfg.jobs, cfg.trials);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < threads; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  int successes = 0;
  int part_successes = 0;
  int exceed = 0;
  double err = 0.0;
  double steps = 0.0;
  double bits = 0.0;
  for (const auto& t : rep.trials) {
    if (t.rejected) {
      ++rep.rejected;
      rep.rejected_seeds.push_back(t.seed);
      continue;
    }
    if (!t.converged) {
      ++rep.nonconverged;
      continue;
    }
    ++rep.converged;
    rep.nodes_agree = rep.nodes_agree && t.nodes_agree;
    successes += t.abs_error <= cfg.epsilon ? 1 : 0;
    part_successes += t.participating_error <= cfg.epsilon ? 1 : 0;
    exceed += t.loss_statistic >= t.loss_threshold ? 1 : 0;
    err += t.abs_error;
    steps += static_cast<double>(t.steps);
    bits += static_cast<double>(t.bits);
  }
  if (rep.converged > 0) {
    const double c = rep.converged;
    rep.success_rate = successes / c;
    rep.participating_success_rate = part_successes / c;
    rep.loss_exceed_rate = exceed / c;
    rep.mean_abs_error = err / c;
    rep.mean_steps = steps / c;
    rep.mean_bits = bits / c;
  }
  return rep;
}

ExperimentReport run_percolation_experiment(const ExperimentConfig& cfg, int trials) {
  if (!cfg.percolating()) throw ConfigError("percolation experiment needs network rgg-percolating");
  if (cfg.k != 2) throw ConfigError("percolation experiment needs k = 2");
  ExperimentConfig c = cfg;
  c.trials = trials;
  return run_experiment(c);
}

std::string ExperimentReport::to_json() const {
  using nlohmann::ordered_json;
  ordered_json j;
  ordered_json c = ordered_json::object();
  std::istringstream in(describe(config));
  for (const auto& [k, v] : read_settings(in)) c[k] = v;
  j["config"] = c;
  j["summary"] = {
      {"trials", trials.size()},
      {"converged", converged},
      {"nonconverged", nonconverged},
      {"rejected", rejected},
      {"rejected_seeds", rejected_seeds},
      {"success_rate", success_rate},
      {"participating_success_rate", participating_success_rate},
      {"loss_exceed_rate", loss_exceed_rate},
      {"mean_abs_error", mean_abs_error},
      {"mean_steps", mean_steps},
      {"mean_bits", mean_bits},
      {"nodes_agree", nodes_agree},
      {"delta", config.delta},
  };
  ordered_json rows = ordered_json::array();
  for (const auto& t : trials) {
    rows.push_back({
        {"trial", t.trial},
        {"seed", t.seed},
        {"exact_scaled", t.exact_scaled},
        {"estimate_scaled", t.estimate_scaled},
        {"abs_error", t.abs_error},
        {"steps", t.steps},
        {"messages", t.messages},
        {"bits", t.bits},
        {"bits_per_message", t.bits_per_message},
        {"phases", t.phases},
        {"alpha", t.alpha},
        {"participating", t.participating},
        {"participating_exact_scaled", t.participating_exact_scaled},
        {"participating_error", t.participating_error},
        {"loss_statistic", t.loss_statistic},
        {"loss_threshold", t.loss_threshold},
        {"converged", t.converged},
        {"nodes_agree", t.nodes_agree},
        {"rejected", t.rejected},
    });
  }
  j["trials"] = rows;
  return j.dump(2) + "\n";
}

void ExperimentReport::write_csv(std::ostream& os) const {
  os << "seed,exact_scaled,estimate_scaled,abs_error,steps,bits,phases,alpha\n";
  std::vector<const TrialResult*> sorted;
  for (const auto& t : trials) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->trial < b->trial; });
  for (const auto* t : sorted) {
    os << t->seed << ',' << fmt_double(t->exact_scaled) << ',' << fmt_double(t->estimate_scaled)
       << ',' << fmt_double(t->abs_error) << ',' << t->steps << ',' << t->bits << ','
       << t->phases << ',' << fmt_double(t->alpha) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Spreading time

SpreadingRow spreading_time(const ExperimentConfig& base, std::int64_t num_nodes) {
  ExperimentConfig cfg = base;
  cfg.num_nodes = num_nodes;
  if (cfg.protocol == Protocol::aloha && cfg.spread.p_n == 0.0) {
    cfg.spread.p_n = cfg.percolating() ? 0.1 : default_aloha_probability(num_nodes);
  }
  cfg.spread.validate();
  if (cfg.trials < 1) throw ConfigError("trials must be >= 1");
  SpreadConfig sc = cfg.spread;
  sc.record_coverage = false;
  SpreadingRow row;
  row.num_nodes = num_nodes;
  row.stats.trials = cfg.trials;
  double sum = 0.0;
  for (int i = 0; i < cfg.trials; ++i) {
    const std::uint64_t seed = trial_seed(cfg.master_seed, i);
    Topology topo = build_topology(cfg, keyed_hash(seed, kTopology));
    if (cfg.percolating()) topo = topo.induced(giant_component(topo).giant_set);
    NetworkState net(topo.size());
    const auto rep = run_spreading(net, topo, cfg.protocol, sc, keyed_hash(seed, kSpread), 0);
    if (rep.completed) {
      row.stats.steps.push_back(rep.steps_to_full);
      sum += static_cast<double>(rep.steps_to_full);
    }
  }
  auto& st = row.stats;
  std::sort(st.steps.begin(), st.steps.end());
  st.completed = static_cast<std::int64_t>(st.steps.size());
  st.incomplete_warning = st.completed < st.trials;
  st.quantile = nearest_rank_quantile(st.steps, 1.0 - sc.beta);
  st.median = nearest_rank_quantile(st.steps, 0.5);
  row.mean = st.completed > 0 ? sum / static_cast<double>(st.completed) : 0.0;
  return row;
}

void write_spreading_csv(std::ostream& os, const std::vector<SpreadingRow>& rows, double beta) {
  os << "N,trials,completed,median,quantile,beta,mean\n";
  for (const auto& r : rows) {
    os << r.num_nodes << ',' << r.stats.trials << ',' << r.stats.completed << ','
       << r.stats.median << ',' << r.stats.quantile << ',' << fmt_double(beta) << ','
       << fmt_double(r.mean) << '\n';
  }
}

}  // namespace netmoments
