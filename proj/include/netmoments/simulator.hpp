#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "netmoments/estimators.hpp"
#include "netmoments/network.hpp"
#include "netmoments/protocols.hpp"
#include "netmoments/sketch_core.hpp"

namespace netmoments {

// ---------------------------------------------------------------------------
// Data

enum class DataModel { pointmass, uniform, zipf, file };

struct DataSpec {
  DataModel model = DataModel::zipf;
  double theta = 1.2;  // zipf exponent
  std::string path;    // file model

  // pointmass | uniform | zipf:THETA | file:PATH
  static DataSpec parse(const std::string& s);
  std::string to_string() const;
};

// i.i.d. values per node; pointmass puts every node on value 1. The file model reads `path`.
Dataset generate_dataset(const DataSpec& spec, std::int64_t num_nodes, int alphabet_size,
                         std::uint64_t seed);

// "N M" header, then one value per line.
void write_dataset(std::ostream& os, const Dataset& d);
Dataset read_dataset(std::istream& is);
Dataset read_dataset_file(const std::string& path);

// ---------------------------------------------------------------------------
// Network

enum class NetworkKind { complete, graph_file, rgg_connected, rgg_percolating };

struct NetworkSpec {
  NetworkKind kind = NetworkKind::complete;
  std::string path;

  // complete | graph:PATH | rgg-connected | rgg-percolating
  static NetworkSpec parse(const std::string& s);
  std::string to_string() const;
};

// ---------------------------------------------------------------------------
// Budget

enum class BudgetRule { conservative, variance };

BudgetRule parse_budget_rule(const std::string& s);
const char* to_string(BudgetRule r);

struct BudgetSolution {
  ErrorBudget budget;
  QuantConfig quant;
  BudgetRule rule = BudgetRule::variance;
  double predicted_delta = 1.0;  // failure probability the rule guarantees at (r1, r2)
};

// Largest sketch (r1 * r2) the solver will hand out.
inline constexpr std::uint64_t kMaxSketchEntries = std::uint64_t{1} << 20;

// Picks power-of-two r1, r2 for (eps, delta) at N nodes, plus default truncation and quantization.
// Throws InfeasibleBudget when the rule needs more than kMaxSketchEntries.
BudgetSolution solve_budget(double eps, double delta, std::int64_t num_nodes,
                            BudgetRule rule = BudgetRule::variance);

// Phi^{-1}(p) by bisection on erfc.
double normal_quantile(double p);

// ---------------------------------------------------------------------------
// Experiments

enum class SketchEval { eager, lazy };

SketchEval parse_sketch_eval(const std::string& s);
const char* to_string(SketchEval e);

// Zero means "derive" for r1, r2, quant_bits, trunc_L, num_buckets, radius_c and spread.p_n.
struct ExperimentConfig {
  std::int64_t num_nodes = 1024;
  int alphabet_size = 64;
  int k = 2;
  DataSpec data;
  NetworkSpec network;
  double radius_c = 0.0;
  Protocol protocol = Protocol::gossip;
  SpreadConfig spread;

  double epsilon = 0.1;
  double delta = 0.1;
  BudgetRule budget_rule = BudgetRule::variance;
  int r1 = 0;
  int r2 = 0;
  int quant_bits = 0;
  double trunc_L = 0.0;
  double target_mu = 0.0;

  int num_buckets = 0;
  int s1 = 5;

  int trials = 100;
  std::uint64_t master_seed = 1;
  int jobs = 1;
  // eager merges sketches on every message; lazy tracks heard sets and takes the min over
  // each node's heard set when the estimate is read. Both give identical sketches.
  SketchEval sketch_eval = SketchEval::eager;

  void validate() const;
  bool percolating() const noexcept { return network.kind == NetworkKind::rgg_percolating; }
  int phases() const noexcept { return k == 2 ? 1 : num_buckets * s1; }
  int channels() const noexcept { return k == 2 ? 1 : 3; }
  QuantConfig quant() const;
  ErrorBudget budget() const;
};

// ceil(M^{1 - 1/(k-1)})
int default_num_buckets(int alphabet_size, int k);

// Fills every derived field; throws InfeasibleBudget when the budget cannot be met.
ExperimentConfig resolve(const ExperimentConfig& cfg);

// Applies one "key = value" setting; unknown keys throw ConfigError.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
// Reads "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> read_settings(std::istream& is);
// Effective configuration as "key = value" lines, readable by read_settings.
std::string describe(const ExperimentConfig& cfg);

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  double exact_scaled = 0.0;     // F_k / N^k over all N nodes
  double estimate_scaled = 0.0;  // estimate over participating nodes, scaled by their count
  double abs_error = 0.0;
  std::int64_t steps = 0;
  std::int64_t messages = 0;
  std::int64_t bits = 0;
  std::int64_t bits_per_message = 0;
  int phases = 1;
  double alpha = 0.0;
  std::int64_t participating = 0;
  double participating_exact_scaled = 0.0;  // F_{k,alpha} / N_alpha^k
  double participating_error = 0.0;
  double loss_statistic = 0.0;  // |F^_{2,alpha} - F_2|
  double loss_threshold = 0.0;  // N^2 alpha^2 (1 - eps)
  // k >= 3: mean over root maps of the population estimate, per phase t * B + b
  std::vector<double> phase_population;
  bool converged = false;
  bool nodes_agree = true;
  bool rejected = false;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<TrialResult> trials;
  int converged = 0;
  int nonconverged = 0;
  int rejected = 0;
  std::vector<std::uint64_t> rejected_seeds;
  double success_rate = 0.0;               // abs_error <= eps among converged trials
  double participating_success_rate = 0.0; // participating_error <= eps among converged trials
  double loss_exceed_rate = 0.0;      // loss_statistic >= loss_threshold
  double mean_abs_error = 0.0;
  double mean_steps = 0.0;
  double mean_bits = 0.0;
  bool nodes_agree = true;

  std::string to_json() const;
  // seed,exact_scaled,estimate_scaled,abs_error,steps,bits,phases,alpha
  void write_csv(std::ostream& os) const;
};

std::uint64_t trial_seed(std::uint64_t master_seed, int trial);

// Single trials on a resolved configuration.
TrialResult run_f2_trial(const ExperimentConfig& cfg, std::uint64_t seed);
TrialResult run_fk_trial(const ExperimentConfig& cfg, std::uint64_t seed);
TrialResult run_trial(const ExperimentConfig& cfg, int trial);

// Runs cfg.trials trials on cfg.jobs threads; results are ordered by trial index.
ExperimentReport run_experiment(const ExperimentConfig& cfg);
ExperimentReport run_percolation_experiment(const ExperimentConfig& cfg, int trials);

// Topology for one trial; percolating kinds return the full graph.
Topology build_topology(const ExperimentConfig& cfg, std::uint64_t seed);

struct SpreadingRow {
  std::int64_t num_nodes = 0;
  SpreadingStats stats;
  double mean = 0.0;
};

// Heard-set spreading on a fresh topology per trial (giant component when percolating).
SpreadingRow spreading_time(const ExperimentConfig& cfg, std::int64_t num_nodes);

// N,trials,completed,median,quantile,beta,mean
void write_spreading_csv(std::ostream& os, const std::vector<SpreadingRow>& rows, double beta);

}  // namespace netmoments
