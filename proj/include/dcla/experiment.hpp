#pragma once

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dcla/agents.hpp"
#include "dcla/config.hpp"
#include "dcla/dcdqn_agent.hpp"
#include "dcla/harq_sim.hpp"
#include "dcla/trace.hpp"

namespace dcla {

struct Summary {
  std::string agent;
  Tti tti_count = 0;
  double mean_tput_mbps = 0.0;
  double last_quartile_tput_mbps = 0.0;
  double bler = 0.0;
  double fallback_rate = 0.0;
  Tti convergence_tti = -1;  // -1: never settled
  std::int64_t acks = 0;
  std::int64_t nacks = 0;
  std::int64_t drops = 0;
  std::optional<double> delay_metric_mean;  // empirical lower bound
  std::optional<double> deadline_hit_rate;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["agent"] = agent;
    j["tti_count"] = tti_count;
    j["mean_tput_mbps"] = mean_tput_mbps;
    j["last_quartile_tput_mbps"] = last_quartile_tput_mbps;
    j["bler"] = bler;
    j["fallback_rate"] = fallback_rate;
    j["convergence_tti"] = convergence_tti;
    j["acks"] = acks;
    j["nacks"] = nacks;
    j["drops"] = drops;
    if (delay_metric_mean) j["delay_metric_mean_lower_bound"] = *delay_metric_mean;
    if (deadline_hit_rate) j["deadline_hit_rate"] = *deadline_hit_rate;
    return j;
  }
};

// First TTI from which windowed throughput stays within `tol` of its final
// value for at least `hold` TTIs; -1 if it never does.
inline Tti convergence_tti(const std::vector<double>& win, double tol = 0.05, Tti hold = 10000) {
  const auto n = static_cast<Tti>(win.size());
  if (n == 0 || n < hold) return -1;
  const double final_value = win.back();
  const double band = tol * std::abs(final_value);
  Tti run_start = 0;
  for (Tti t = 0; t < n; ++t) {
    if (std::abs(win[static_cast<std::size_t>(t)] - final_value) > band) {
      run_start = t + 1;
    } else if (t - run_start + 1 >= hold) {
      return run_start;
    }
  }
  return -1;
}

// Everything in here comes from the per-TTI metrics.
inline Summary summarize(const MetricsLog& log, const std::string& agent) {
  Summary s;
  s.agent = agent;
  const auto n = log.records.size();
  s.tti_count = static_cast<Tti>(n);
  s.mean_tput_mbps = mean_throughput(log, 0, n);
  s.last_quartile_tput_mbps = mean_throughput(log, n - n / 4, n);
  std::int64_t fallbacks = 0;
  for (const auto& r : log.records) {
    if (r.ack) (*r.ack ? s.acks : s.nacks) += 1;
    if (r.fallback) ++fallbacks;
  }
  s.bler = s.acks + s.nacks == 0 ? 0.0 : static_cast<double>(s.nacks) / static_cast<double>(s.acks + s.nacks);
  s.drops = log.drops;
  s.fallback_rate = n == 0 ? 0.0 : static_cast<double>(fallbacks) / static_cast<double>(n);
  s.convergence_tti = convergence_tti(windowed_throughput(log, log.window));
  return s;
}

inline SnrTrace build_trace(const ExperimentConfig& cfg) {
  if (auto path = cfg.trace_file()) return read_trace_csv(path->string());
  const auto kind = parse_trace_kind(cfg.str("experiment.scenario"));
  return generate_trace(kind, cfg.integer("sim.tti_count"), cfg.trace_seed(), cfg.trace_params());
}

inline std::unique_ptr<LinkAdapter> make_agent(const ExperimentConfig& cfg, const SnrTrace& trace) {
  const auto sim = cfg.sim();
  const auto a = cfg.str("experiment.agent");
  const auto seed = static_cast<std::uint64_t>(cfg.integer("experiment.seed"));
  if (a == "illa") return std::make_unique<IllaAgent>(sim.tables);
  if (a == "olla") return std::make_unique<OllaAgent>(cfg.olla(), sim.tables);
  if (a == "bayes") {
    auto prior = BayesState::with_prior(cfg.real("bayes.prior_alpha"), cfg.real("bayes.prior_beta"));
    return std::make_unique<BayesAgent>(prior, sim.n_rb, sim.d_tx, sim.d_decision, seed ^ 0xb5ad4eceda1ce2a9ULL,
                                        sim.tables);
  }
  if (a == "oracle") return std::make_unique<OracleAgent>(trace, sim.d_tx + sim.d_decision, sim.n_rb, sim.tables);
  if (a.rfind("fixed:", 0) == 0) return std::make_unique<FixedAgent>(McsIndex{std::stoi(a.substr(6))});
  if (a == "dcdqn") {
    return std::make_unique<DcDqnAgent>(cfg.hyper(), LinkContext{sim.d_tx, sim.d_ack, sim.n_rb}, cfg.runtime(),
                                        seed * 0x9e3779b97f4a7c15ULL + 7);
  }
  throw ConfigError("experiment.agent", "unknown agent '" + a + "'");
}

struct RunResult {
  MetricsLog log;
  Summary summary;
  std::vector<nlohmann::json> audit;
  std::vector<std::pair<Tti, double>> delay_series;
};

// Runs one configuration in memory on the given trace.
inline RunResult execute(const ExperimentConfig& cfg, const SnrTrace& trace) {
  cfg.validate();
  const auto sim_cfg = cfg.sim();
  auto agent = make_agent(cfg, trace);
  RunResult out;
  Simulator sim(trace, *agent, sim_cfg);
  try {
    while (!sim.done()) sim.step();
  } catch (const std::exception& e) {
    throw std::runtime_error("at TTI " + std::to_string(sim.now()) + ": " + e.what());
  }
  out.log = sim.take_log();
  out.summary = summarize(out.log, agent->name());
  if (auto* dq = dynamic_cast<DcDqnAgent*>(agent.get())) {
    dq->finish();
    out.audit = dq->audit().entries();
    out.delay_series = dq->learner().delay_series();
    if (!out.delay_series.empty()) {
      double sum = 0.0;
      for (const auto& [t, d] : out.delay_series) sum += d;
      out.summary.delay_metric_mean = sum / static_cast<double>(out.delay_series.size());
    }
    if (dq->mode() == RuntimeMode::kRealTime) {
      const auto st = dq->deadline_stats();
      out.summary.deadline_hit_rate = st.fraction_within(std::chrono::duration<double, std::micro>(st.deadline).count());
    }
  }
  return out;
}

inline RunResult execute(const ExperimentConfig& cfg) { return execute(cfg, build_trace(cfg)); }

// <out_dir>/<YYYYmmdd-HHMMSS>-<name>[-k], created fresh.
inline std::filesystem::path make_run_dir(const std::filesystem::path& parent, const std::string& name) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-' << name;
  std::filesystem::create_directories(parent);
  auto dir = parent / stamp.str();
  for (int k = 1; std::filesystem::exists(dir); ++k) dir = parent / (stamp.str() + "-" + std::to_string(k));
  std::filesystem::create_directory(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

inline void write_run_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const RunResult& r) {
  write_text(dir / "config.ini", cfg.to_ini());
  {
    std::ofstream os(dir / "metrics.csv");
    write_metrics_csv(os, r.log);
  }
  write_text(dir / "summary.json", r.summary.to_json().dump(2) + "\n");
  std::ofstream audit(dir / "audit.jsonl");
  for (const auto& e : r.audit) audit << e.dump() << '\n';
}

// Runs and writes config.ini, metrics.csv, summary.json and audit.jsonl
// into a new run directory, which is returned.
inline std::filesystem::path run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto result = execute(cfg);
  const auto dir = make_run_dir(cfg.str("experiment.out_dir"), cfg.str("experiment.name"));
  write_run_outputs(dir, cfg, result);
  return dir;
}

struct SweepRow {
  std::string value;
  std::optional<Summary> summary;
  std::string error;
};

inline bool sweep_changes_trace(const std::string& key) {
  const auto k = canonical_key(key);
  return k.rfind("trace.", 0) == 0 || k == "experiment.scenario" || k == "experiment.trace_seed" ||
         k == "sim.tti_count" || k == "experiment.seed";
}

// One run per value with an otherwise identical config and a shared trace.
// A failing value is recorded and the sweep moves on.
inline std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::string& param,
                                   const std::vector<std::string>& values,
                                   const std::filesystem::path& out_dir = {}) {
  if (!ExperimentConfig::known(param)) throw ConfigError(param, "unknown sweep parameter");
  if (values.empty()) throw ConfigError(param, "sweep needs at least one value");
  std::optional<SnrTrace> shared;
  if (!sweep_changes_trace(param)) shared = build_trace(base);
  std::vector<SweepRow> rows;
  for (const auto& v : values) {
    SweepRow row{v, std::nullopt, {}};
    try {
      auto cfg = base;
      cfg.set(param, v);
      cfg.validate();
      const auto r = shared ? execute(cfg, *shared) : execute(cfg);
      row.summary = r.summary;
      if (!out_dir.empty()) {
        const auto sub = out_dir / (canonical_key(param) + "=" + v);
        std::filesystem::create_directories(sub);
        write_run_outputs(sub, cfg, r);
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::string& param, const std::vector<SweepRow>& rows) {
  os << canonical_key(param)
     << ",agent,mean_tput_mbps,last_quartile_tput_mbps,bler,fallback_rate,convergence_tti,delay_metric_mean,error\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.value << ',';
    if (r.summary) {
      const auto& s = *r.summary;
      os << s.agent << ',' << s.mean_tput_mbps << ',' << s.last_quartile_tput_mbps << ',' << s.bler << ','
         << s.fallback_rate << ',' << s.convergence_tti << ',';
      if (s.delay_metric_mean) os << *s.delay_metric_mean;
      os << ",\n";
    } else {
      std::string err = r.error;
      for (auto& c : err)
        if (c == ',' || c == '\n') c = ';';
      os << ",,,,,,," << err << '\n';
    }
  }
}

inline std::filesystem::path run_sweep(const ExperimentConfig& base, const std::string& param,
                                       const std::vector<std::string>& values, std::vector<SweepRow>* rows_out = nullptr) {
  base.validate();
  const auto dir = make_run_dir(base.str("experiment.out_dir"), base.str("experiment.name") + "-sweep");
  write_text(dir / "config.ini", base.to_ini());
  auto rows = sweep(base, param, values, dir);
  std::ofstream os(dir / "sweep.csv");
  write_sweep_csv(os, param, rows);
  if (rows_out) *rows_out = std::move(rows);
  return dir;
}

}  // namespace dcla
