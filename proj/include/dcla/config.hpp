#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcla/agents.hpp"
#include "dcla/dcdqn_agent.hpp"
#include "dcla/dqn.hpp"
#include "dcla/harq_sim.hpp"
#include "dcla/trace.hpp"

namespace dcla {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ConfigKey {
  const char* name;
  const char* fallback;  // empty string: unset
  const char* help;
};

// Every recognised key, with its default.
inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"experiment.scenario", "mobile", "static | mobile | mobile-to-static | path to a trace CSV"},
      {"experiment.agent", "dcdqn", "illa | olla | bayes | dcdqn | fixed:<m> | oracle"},
      {"experiment.seed", "1", "simulator seed; agent seeds derive from it"},
      {"experiment.trace_seed", "", "trace seed (defaults to experiment.seed)"},
      {"experiment.out_dir", "runs", "parent of the timestamped run directory"},
      {"experiment.name", "run", "run directory suffix"},

      {"sim.tti_count", "100000", ""},
      {"sim.d_tx", "4", "TTIs from decision to transmission"},
      {"sim.d_ack", "8", "TTIs from transmission to ACK/NACK"},
      {"sim.d_cqi", "4", "CQI report delay"},
      {"sim.cqi_period", "40", "CQI report period"},
      {"sim.d_decision", "0", "decision delay in TTIs"},
      {"sim.max_tx", "4", "HARQ transmissions per TB"},
      {"sim.n_rb", "50", ""},
      {"sim.window", "2000", "throughput window in TTIs"},

      {"dqn.gamma", "0.9", ""},
      {"dqn.learning_rate", "0.001", ""},
      {"dqn.batch_size", "64", ""},
      {"dqn.train_interval", "50", "T"},
      {"dqn.update_interval", "", "U (defaults to 10 * T)"},
      {"dqn.history", "20", "l"},
      {"dqn.hidden", "64", ""},
      {"dqn.buffer_capacity", "4096", ""},
      {"dqn.eps_start", "1.0", ""},
      {"dqn.eps_end", "0.01", ""},
      {"dqn.eps_decay_ttis", "10000", ""},
      {"dqn.reward_scale", "0.001", "multiplies rewards in the TD target"},

      {"olla.delta_up", "0.001", "dB"},
      {"olla.target_bler", "0.1", ""},
      {"olla.delta_down", "", "dB (defaults to delta_up / (1/target - 1))"},

      {"bayes.prior_alpha", "1.0", ""},
      {"bayes.prior_beta", "1.0", ""},

      {"runtime.mode", "lockstep", "lockstep | two-role | realtime"},
      {"runtime.transport", "inproc", "inproc | tcp (env DCLA_TRANSPORT overrides)"},
      {"runtime.deadline_us", "500", "real-time inference deadline"},
      {"runtime.delay_metric", "false", "record the Q-value delay diagnostic"},
      {"runtime.probe_count", "256", ""},

      {"trace.static_mean_db", "14.0", ""},
      {"trace.static_jitter_db", "0.5", ""},
      {"trace.mobile_mean_db", "12.0", ""},
      {"trace.mobile_mean_lo_db", "4.0", ""},
      {"trace.mobile_mean_hi_db", "20.0", ""},
      {"trace.mobile_walk_sigma_db", "0.05", ""},
      {"trace.fading_corr", "0.98", ""},
      {"trace.fading_floor_db", "-30.0", ""},
      {"trace.switch_tti", "70000", ""},
  };
  return keys;
}

// Short names accepted by --set and sweeps.
inline std::string canonical_key(const std::string& key) {
  static const std::map<std::string, std::string> aliases = {
      {"d_tx", "sim.d_tx"},           {"d_ack", "sim.d_ack"},
      {"d_cqi", "sim.d_cqi"},         {"d_decision", "sim.d_decision"},
      {"T", "dqn.train_interval"},    {"U", "dqn.update_interval"},
      {"lr", "dqn.learning_rate"},    {"seed", "experiment.seed"},
      {"agent", "experiment.agent"},  {"scenario", "experiment.scenario"},
      {"tti_count", "sim.tti_count"},
  };
  auto it = aliases.find(key);
  return it == aliases.end() ? key : it->second;
}

class ExperimentConfig {
 public:
  ExperimentConfig() {
    for (const auto& k : config_schema()) values_[k.name] = k.fallback;
  }

  static ExperimentConfig from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("", "cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    auto cfg = from_string(ss.str());
    cfg.base_dir_ = std::filesystem::absolute(path).parent_path();
    return cfg;
  }

  static ExperimentConfig from_string(const std::string& text) {
    ExperimentConfig cfg;
    boost::property_tree::ptree tree;
    std::istringstream is(text);
    try {
      boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("", std::string("malformed config: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw ConfigError(section, "keys must live inside a [section]");
      for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    const auto k = canonical_key(key);
    if (!values_.count(k)) throw ConfigError(k, "unknown config key");
    values_[k] = value;
  }

  // "key=value"
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("", "override must look like key=value: " + assignment);
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
  }

  static bool known(const std::string& key) {
    for (const auto& k : config_schema())
      if (canonical_key(key) == k.name) return true;
    return false;
  }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(canonical_key(key));
    if (it == values_.end()) throw ConfigError(key, "unknown config key");
    return it->second;
  }
  bool is_set(const std::string& key) const { return !raw(key).empty(); }

  std::string str(const std::string& key) const { return raw(key); }

  long long integer(const std::string& key) const {
    const auto& v = raw(key);
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected an integer, got '" + v + "'");
    return out;
  }

  double real(const std::string& key) const {
    const auto& v = raw(key);
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError(key, "expected a number, got '" + v + "'");
    }
  }

  bool boolean(const std::string& key) const {
    const auto& v = raw(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key, "expected a boolean, got '" + v + "'");
  }

  // Resolved configuration as INI, every key present.
  std::string to_ini() const {
    std::ostringstream os;
    std::string section;
    for (const auto& k : config_schema()) {
      const std::string name = k.name;
      const auto dot = name.find('.');
      const auto sec = name.substr(0, dot);
      if (sec != section) {
        os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
        section = sec;
      }
      os << name.substr(dot + 1) << " = " << values_.at(name) << '\n';
    }
    return os.str();
  }

  // Typed views -----------------------------------------------------------

  SimConfig sim() const {
    SimConfig s;
    s.tti_count = integer("sim.tti_count");
    s.d_tx = static_cast<int>(integer("sim.d_tx"));
    s.d_ack = static_cast<int>(integer("sim.d_ack"));
    s.d_cqi = static_cast<int>(integer("sim.d_cqi"));
    s.cqi_period = static_cast<int>(integer("sim.cqi_period"));
    s.d_decision = static_cast<int>(integer("sim.d_decision"));
    s.max_tx = static_cast<int>(integer("sim.max_tx"));
    s.n_rb = static_cast<int>(integer("sim.n_rb"));
    s.window = integer("sim.window");
    s.seed = static_cast<std::uint64_t>(integer("experiment.seed"));
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("sim", e.what());
    }
    return s;
  }

  Hyperparams hyper() const {
    Hyperparams h;
    h.gamma = real("dqn.gamma");
    h.learning_rate = real("dqn.learning_rate");
    h.batch_size = static_cast<int>(integer("dqn.batch_size"));
    h.train_interval = static_cast<int>(integer("dqn.train_interval"));
    h.update_interval = is_set("dqn.update_interval") ? static_cast<int>(integer("dqn.update_interval"))
                                                      : 10 * h.train_interval;
    h.history = static_cast<int>(integer("dqn.history"));
    h.hidden = static_cast<int>(integer("dqn.hidden"));
    h.buffer_capacity = static_cast<std::size_t>(integer("dqn.buffer_capacity"));
    h.eps_start = real("dqn.eps_start");
    h.eps_end = real("dqn.eps_end");
    h.eps_decay_ttis = integer("dqn.eps_decay_ttis");
    h.reward_scale = real("dqn.reward_scale");
    try {
      h.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("dqn", e.what());
    }
    return h;
  }

  OllaState olla() const {
    try {
      auto s = OllaState::with_target(real("olla.delta_up"), real("olla.target_bler"));
      if (is_set("olla.delta_down")) s.delta_down = real("olla.delta_down");
      if (!(s.delta_down > 0.0)) throw std::invalid_argument("delta_down must be positive");
      return s;
    } catch (const std::invalid_argument& e) {
      throw ConfigError("olla", e.what());
    }
  }

  TraceParams trace_params() const {
    TraceParams p;
    p.static_mean_db = real("trace.static_mean_db");
    p.static_jitter_db = real("trace.static_jitter_db");
    p.mobile_mean_db = real("trace.mobile_mean_db");
    p.mobile_mean_lo_db = real("trace.mobile_mean_lo_db");
    p.mobile_mean_hi_db = real("trace.mobile_mean_hi_db");
    p.mobile_walk_sigma_db = real("trace.mobile_walk_sigma_db");
    p.fading_corr = real("trace.fading_corr");
    p.fading_floor_db = real("trace.fading_floor_db");
    p.switch_tti = integer("trace.switch_tti");
    if (!(p.fading_corr >= 0.0 && p.fading_corr < 1.0)) throw ConfigError("trace.fading_corr", "must be in [0,1)");
    if (p.mobile_mean_lo_db > p.mobile_mean_hi_db) throw ConfigError("trace.mobile_mean_lo_db", "exceeds mobile_mean_hi_db");
    return p;
  }

  std::uint64_t trace_seed() const {
    return static_cast<std::uint64_t>(integer(is_set("experiment.trace_seed") ? "experiment.trace_seed" : "experiment.seed"));
  }

  RuntimeOptions runtime() const {
    RuntimeOptions o;
    try {
      o.mode = parse_runtime_mode(str("runtime.mode"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("runtime.mode", e.what());
    }
    try {
      o.transport = transport_from_env(parse_transport(str("runtime.transport")));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("runtime.transport", e.what());
    }
    const auto us = integer("runtime.deadline_us");
    if (us < 1) throw ConfigError("runtime.deadline_us", "must be >= 1");
    o.deadline = std::chrono::microseconds(us);
    o.delay_metric = boolean("runtime.delay_metric");
    o.probe_count = static_cast<std::size_t>(integer("runtime.probe_count"));
    if (o.probe_count < 1) throw ConfigError("runtime.probe_count", "must be >= 1");
    return o;
  }

  // Trace CSV path for file scenarios, resolved against the config's directory.
  std::optional<std::filesystem::path> trace_file() const {
    const auto& s = raw("experiment.scenario");
    if (s == "static" || s == "mobile" || s == "mobile-to-static") return std::nullopt;
    std::filesystem::path p(s);
    if (p.is_relative() && !base_dir_.empty() && !std::filesystem::exists(p)) p = base_dir_ / p;
    if (!std::filesystem::exists(p)) throw ConfigError("experiment.scenario", "trace file does not exist: " + s);
    return p;
  }

  // Checks every typed view so errors surface before a run starts.
  void validate() const {
    (void)sim();
    (void)hyper();
    (void)olla();
    (void)trace_params();
    (void)runtime();
    (void)trace_file();
    (void)trace_seed();
    const auto a = raw("experiment.agent");
    if (a.rfind("fixed:", 0) == 0) {
      int m = -1;
      const auto v = a.substr(6);
      const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), m);
      if (ec != std::errc() || p != v.data() + v.size() || m < 0 || m > kMaxMcs)
        throw ConfigError("experiment.agent", "fixed agent needs an MCS in 0..27, got '" + a + "'");
    } else if (a != "illa" && a != "olla" && a != "bayes" && a != "dcdqn" && a != "oracle") {
      throw ConfigError("experiment.agent", "unknown agent '" + a + "'");
    }
    if (real("bayes.prior_alpha") <= 0.0 || real("bayes.prior_beta") <= 0.0)
      throw ConfigError("bayes", "prior parameters must be positive");
  }

 private:
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_;
};

}  // namespace dcla
