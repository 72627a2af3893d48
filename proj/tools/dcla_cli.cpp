#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "dcla/experiment.hpp"

namespace {

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

dcla::ExperimentConfig load(const std::string& path, const std::vector<std::string>& sets) {
  auto cfg = dcla::ExperimentConfig::from_file(path);
  for (const auto& s : sets) cfg.apply_override(s);
  cfg.validate();
  return cfg;
}

void echo_source(const std::filesystem::path& dir, const std::string& path) {
  std::ifstream is(path);
  std::ofstream os(dir / "config.source.ini");
  os << is.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DC-DQN link adaptation simulator"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config, "INI config file")->required()->check(CLI::ExistingFile);
  run->add_option("--set", sets, "override, key=value (repeatable)");

  std::string sweep_config, param, values;
  std::vector<std::string> sweep_sets;
  auto* sw = app.add_subcommand("sweep", "run one experiment per parameter value");
  sw->add_option("--config", sweep_config, "INI config file")->required()->check(CLI::ExistingFile);
  sw->add_option("--param", param, "parameter name, e.g. sim.d_ack")->required();
  sw->add_option("--values", values, "comma separated values")->required();
  sw->add_option("--set", sweep_sets, "override, key=value (repeatable)");

  std::string kind, out;
  long long len = 100000;
  std::uint64_t seed = 1;
  auto* gen = app.add_subcommand("gen-trace", "write a synthetic SNR trace as CSV");
  gen->add_option("--kind", kind, "static | mobile | mobile-to-static")->required();
  gen->add_option("--len", len, "length in TTIs")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "RNG seed")->required();
  gen->add_option("--out", out, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = load(config, sets);
      const auto dir = dcla::run_experiment(cfg);
      echo_source(dir, config);
      std::ifstream summary(dir / "summary.json");
      std::cout << summary.rdbuf() << "run directory: " << dir.string() << '\n';
    } else if (*sw) {
      const auto cfg = load(sweep_config, sweep_sets);
      std::vector<dcla::SweepRow> rows;
      const auto dir = dcla::run_sweep(cfg, param, split_values(values), &rows);
      echo_source(dir, sweep_config);
      dcla::write_sweep_csv(std::cout, param, rows);
      std::cout << "run directory: " << dir.string() << '\n';
      for (const auto& r : rows)
        if (!r.error.empty()) return 3;
    } else if (*gen) {
      const auto trace = dcla::generate_trace(dcla::parse_trace_kind(kind), len, seed);
      dcla::write_trace_csv(out, trace);
      std::cout << "wrote " << trace.size() << " samples to " << out << '\n';
    }
  } catch (const dcla::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
