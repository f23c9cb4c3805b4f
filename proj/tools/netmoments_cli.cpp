// netmoments: dataset generation, experiments, sweeps, spreading-time studies and oracle queries.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "netmoments/simulator.hpp"

namespace nm = netmoments;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kInfeasible = 3, kNonConvergence = 4 };

// flag name -> configuration key
const std::vector<std::pair<std::string, std::string>> kExperimentFlags = {
    {"--nodes", "nodes"},           {"--alphabet", "alphabet"},
    {"--k", "k"},                   {"--epsilon", "epsilon"},
    {"--delta", "delta"},           {"--r1", "r1"},
    {"--r2", "r2"},                 {"--quant-bits", "quant_bits"},
    {"--trunc-L", "trunc_L"},       {"--target-mu", "target_mu"},
    {"--network", "network"},       {"--radius-c", "radius_c"},
    {"--protocol", "protocol"},     {"--p-n", "p_n"},
    {"--beta", "beta"},             {"--max-steps", "max_steps"},
    {"--exchange-mode", "exchange_mode"},
    {"--data", "data"},             {"--buckets", "buckets"},
    {"--s1", "s1"},                 {"--trials", "trials"},
    {"--seed", "seed"},             {"--jobs", "jobs"},
    {"--budget-rule", "budget_rule"},
    {"--sketch-eval", "sketch_eval"},
};

struct ExperimentFlags {
  std::map<std::string, std::string> values;
  std::string config_path;
  CLI::App* app = nullptr;

  void attach(CLI::App* sub) {
    app = sub;
    sub->add_option("--config", config_path, "key = value file; flags override it");
    for (const auto& [flag, key] : kExperimentFlags) sub->add_option(flag, values[key]);
  }

  // Defaults, then the config file, then explicit flags. A missing seed becomes a fresh random one.
  nm::ExperimentConfig build() const {
    nm::ExperimentConfig cfg;
    bool seeded = false;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw nm::ConfigError("cannot open config file " + config_path);
      for (const auto& [k, v] : nm::read_settings(in)) {
        nm::apply_setting(cfg, k, v);
        seeded = seeded || k == "seed";
      }
    }
    for (const auto& [flag, key] : kExperimentFlags) {
      if (app->count(flag) == 0) continue;
      nm::apply_setting(cfg, key, values.at(key));
      seeded = seeded || key == "seed";
    }
    if (!seeded) cfg.master_seed = std::random_device{}() * 0x100000001ULL ^ std::random_device{}();
    return cfg;
  }
};

struct OutputFlags {
  std::string out_dir = "netmoments-out";
  std::string format = "both";

  void attach(CLI::App* sub) {
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--format", format, "json|csv|both")
        ->check(CLI::IsMember({"json", "csv", "both"}));
  }
  bool json() const { return format != "csv"; }
  bool csv() const { return format != "json"; }
  fs::path prepare() const {
    fs::create_directories(out_dir);
    return out_dir;
  }
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw nm::ConfigError("cannot write " + p.string());
  out << content;
}

void echo_config(const nm::ExperimentConfig& cfg) {
  std::cout << "# effective configuration\n" << nm::describe(cfg) << "# end configuration\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int nonconvergence_code(const nm::ExperimentReport& r) {
  const double frac = static_cast<double>(r.nonconverged) / static_cast<double>(r.trials.size());
  if (frac > r.config.delta) {
    std::cerr << "error: " << r.nonconverged << " of " << r.trials.size()
              << " trials did not finish spreading within max_steps\n";
    return kNonConvergence;
  }
  return kOk;
}

void print_summary(const nm::ExperimentReport& r) {
  const auto& c = r.config;
  std::printf("trials %zu  converged %d  nonconverged %d  rejected %d\n", r.trials.size(),
              r.converged, r.nonconverged, r.rejected);
  std::printf("phases %d  bits/message %lld\n", c.phases(),
              r.trials.empty() ? 0LL : static_cast<long long>(r.trials.front().bits_per_message));
  double exact = 0.0;
  double est = 0.0;
  int n = 0;
  for (const auto& t : r.trials) {
    if (!t.converged) continue;
    exact += t.exact_scaled;
    est += t.estimate_scaled;
    ++n;
  }
  if (n > 0) {
    std::printf("mean exact F%d/N^%d %.6g  mean estimate %.6g  mean |error| %.6g\n", c.k, c.k,
                exact / n, est / n, r.mean_abs_error);
  }
  std::printf("success rate (|error| <= %.4g) %.4f  target >= %.4f\n", c.epsilon, r.success_rate,
              1.0 - c.delta);
  if (c.percolating()) {
    std::printf("participating success rate %.4f  loss exceed rate %.4f\n",
                r.participating_success_rate, r.loss_exceed_rate);
  }
  std::printf("mean steps %.6g  mean bits %.6g\n", r.mean_steps, r.mean_bits);
}

nm::ExperimentReport run_and_write(const nm::ExperimentConfig& cfg, const OutputFlags& out,
                                   const std::string& stem) {
  const auto report = nm::run_experiment(cfg);
  const fs::path dir = out.prepare();
  write_file(dir / (stem + ".config"), nm::describe(report.config));
  if (out.json()) write_file(dir / (stem + ".json"), report.to_json());
  if (out.csv()) {
    std::ostringstream os;
    report.write_csv(os);
    write_file(dir / (stem + ".csv"), os.str());
  }
  return report;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(std::int64_t nodes, int alphabet, const std::string& data, std::uint64_t seed,
                 bool seeded, const std::string& out) {
  if (!seeded) seed = std::random_device{}();
  if (alphabet >= nodes) throw nm::ConfigError("M must be smaller than N");
  const auto spec = nm::DataSpec::parse(data);
  if (spec.model == nm::DataModel::file) throw nm::ConfigError("gen-data cannot copy a file model");
  std::cerr << "# nodes = " << nodes << "\n# alphabet = " << alphabet << "\n# data = "
            << spec.to_string() << "\n# seed = " << seed << '\n';
  const auto d = nm::generate_dataset(spec, nodes, alphabet, seed);
  if (out.empty() || out == "-") {
    nm::write_dataset(std::cout, d);
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw nm::ConfigError("cannot write " + out);
    nm::write_dataset(f, d);
  }
  return kOk;
}

int cmd_run(const ExperimentFlags& flags, const OutputFlags& out) {
  const auto cfg = nm::resolve(flags.build());
  echo_config(cfg);
  const auto report = run_and_write(cfg, out, "report");
  print_summary(report);
  return nonconvergence_code(report);
}

int cmd_sweep(const ExperimentFlags& flags, const OutputFlags& out, const std::string& param,
              const std::string& values) {
  const auto base = flags.build();
  const auto list = split_list(values);
  if (list.empty()) throw nm::ConfigError("sweep needs --values");
  std::ostringstream csv;
  csv << "param,value,trials,converged,success_rate,mean_abs_error,mean_steps,mean_bits\n";
  int code = kOk;
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto cfg = base;
    nm::apply_setting(cfg, param, list[i]);
    cfg = nm::resolve(cfg);
    echo_config(cfg);
    const auto r = run_and_write(cfg, out, "sweep_" + std::to_string(i));
    print_summary(r);
    csv << param << ',' << list[i] << ',' << r.trials.size() << ',' << r.converged << ','
        << r.success_rate << ',' << r.mean_abs_error << ',' << r.mean_steps << ','
        << r.mean_bits << '\n';
    code = std::max(code, nonconvergence_code(r));
  }
  write_file(out.prepare() / "sweep.csv", csv.str());
  std::cout << csv.str();
  return code;
}

int cmd_spreading_time(const ExperimentFlags& flags, const OutputFlags& out,
                       const std::string& ladder) {
  auto cfg = flags.build();
  const auto list = split_list(ladder);
  if (list.empty()) throw nm::ConfigError("spreading-time needs --nodes-list");
  if (cfg.trials < 1) throw nm::ConfigError("trials must be >= 1");
  echo_config(cfg);
  std::vector<nm::SpreadingRow> rows;
  for (const auto& s : list) {
    std::int64_t n = 0;
    try {
      n = std::stoll(s);
    } catch (const std::exception&) {
      throw nm::ConfigError("invalid node count '" + s + "'");
    }
    if (n < 2) throw nm::ConfigError("node counts must be >= 2");
    rows.push_back(nm::spreading_time(cfg, n));
    if (rows.back().stats.incomplete_warning) {
      std::cerr << "warning: N = " << n << ": " << rows.back().stats.completed << " of "
                << rows.back().stats.trials << " trials completed\n";
    }
  }
  std::ostringstream csv;
  nm::write_spreading_csv(csv, rows, cfg.spread.beta);
  write_file(out.prepare() / "spreading.csv", csv.str());
  std::cout << csv.str();
  return kOk;
}

int cmd_oracle(const std::string& file, int k, int top, bool json, int r1, std::uint64_t seed) {
  const auto d = nm::read_dataset_file(file);
  const auto h = nm::histogram(d);
  const auto fk = nm::exact_fk(h, k);
  const double scaled = nm::scaled_moment(h, k);
  std::vector<std::pair<std::int64_t, int>> freq;
  for (Eigen::Index m = 0; m < h.size(); ++m) {
    if (h(m) > 0) freq.emplace_back(h(m), static_cast<int>(m + 1));
  }
  std::sort(freq.begin(), freq.end(), [](auto& a, auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  if (static_cast<int>(freq.size()) > top) freq.resize(static_cast<std::size_t>(top));
  if (json) {
    nlohmann::ordered_json j;
    j["dataset_digest"] = d.digest();
    j["k"] = k;
    j["exact"] = fk;
    if (k == 2 && d.size() > 0) {
      const nm::SharedRandomness rand(seed, r1, 1);
      const double est = nm::ams_reference_f2(d, rand);
      const double n2 = static_cast<double>(d.size()) * static_cast<double>(d.size());
      j["estimate"] = est;
      j["scaled_error"] = std::abs(est / n2 - scaled);
    } else {
      j["estimate"] = nullptr;
      j["scaled_error"] = nullptr;
    }
    std::cout << j.dump(2) << '\n';
    return kOk;
  }
  std::printf("N = %lld\nM = %d\nk = %d\nF_k = %llu\nF_k/N^k = %.17g\ntop =",
              static_cast<long long>(d.size()), d.alphabet_size, k,
              static_cast<unsigned long long>(fk), scaled);
  for (const auto& [count, value] : freq) std::printf(" %d:%lld", value, static_cast<long long>(count));
  std::printf("\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-moment estimation over simulated gossip and radio networks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "write a dataset file (header 'N M', one value per line)");
  std::int64_t gen_nodes = 1024;
  int gen_alphabet = 64;
  std::string gen_data = "zipf:1.2";
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--nodes", gen_nodes);
  gen->add_option("--alphabet", gen_alphabet);
  gen->add_option("--data", gen_data, "pointmass|uniform|zipf:THETA");
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out, "output file (default stdout)");

  auto* run = app.add_subcommand("run", "run seeded trials and write JSON/CSV reports");
  ExperimentFlags run_flags;
  OutputFlags run_out;
  run_flags.attach(run);
  run_out.attach(run);

  auto* sweep = app.add_subcommand("sweep", "repeat run over a list of values for one key");
  ExperimentFlags sweep_flags;
  OutputFlags sweep_out;
  std::string sweep_param;
  std::string sweep_values;
  sweep_flags.attach(sweep);
  sweep_out.attach(sweep);
  sweep->add_option("--param", sweep_param, "configuration key to vary")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required();

  auto* spread = app.add_subcommand("spreading-time", "empirical spreading time per N");
  ExperimentFlags spread_flags;
  OutputFlags spread_out;
  std::string ladder;
  spread_flags.attach(spread);
  spread_out.attach(spread);
  spread->add_option("--nodes-list", ladder, "comma-separated node counts")->required();

  auto* oracle = app.add_subcommand("oracle", "exact F_k and top frequencies of a dataset file");
  std::string oracle_file;
  int oracle_k = 2;
  int oracle_top = 5;
  bool oracle_json = false;
  int oracle_r1 = 64;
  std::uint64_t oracle_seed = 1;
  oracle->add_option("--file", oracle_file)->required();
  oracle->add_option("--k", oracle_k);
  oracle->add_option("--top", oracle_top);
  oracle->add_flag("--json", oracle_json, "JSON record with a streaming baseline estimate");
  oracle->add_option("--r1", oracle_r1, "sign maps for the baseline estimate");
  oracle->add_option("--seed", oracle_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(gen_nodes, gen_alphabet, gen_data, gen_seed, gen->count("--seed") > 0, gen_out);
    if (*run) return cmd_run(run_flags, run_out);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_out, sweep_param, sweep_values);
    if (*spread) return cmd_spreading_time(spread_flags, spread_out, ladder);
    if (*oracle) {
      if (oracle_k < 0) throw nm::ConfigError("k must be >= 0");
      if (oracle_r1 < 1) throw nm::ConfigError("r1 must be >= 1");
      return cmd_oracle(oracle_file, oracle_k, oracle_top, oracle_json, oracle_r1, oracle_seed);
    }
  } catch (const nm::InfeasibleBudget& e) {
    std::cerr << "error: infeasible budget: " << e.what() << "\n  required r1 = " << e.required_r1()
              << ", required r2 = " << e.required_r2() << "\n  pass --r1/--r2 or --budget-rule variance\n";
    return kInfeasible;
  } catch (const nm::ParseError& e) {
    std::cerr << "error: parse error: " << e.what() << '\n';
    return kConfig;
  } catch (const nm::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const nm::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
