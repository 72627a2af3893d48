#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include "dcla/channel_model.hpp"
#include "dcla/link_adapter.hpp"
#include "dcla/trace.hpp"

namespace dcla {

// ---------------------------------------------------------------------------
// ILLA

inline McsIndex illa_select(CqiValue c, const LinkTables& tables) {
  return mcs_for_snr(cqi_to_snr(c, tables), tables);
}

class IllaAgent final : public LinkAdapter {
 public:
  explicit IllaAgent(LinkTables tables = LinkTables::defaults()) : tables_(std::move(tables)) {}

  std::string name() const override { return "illa"; }
  void on_cqi(const CqiReport& report) override { cqi_ = report.cqi; }
  Decision decide(Tti) override { return {illa_select(cqi_, tables_)}; }

 private:
  LinkTables tables_;
  CqiValue cqi_{0};
};

// ---------------------------------------------------------------------------
// OLLA

struct OllaState {
  double offset = 0.0;
  double delta_up = 0.001;
  double delta_down = 0.001 / 9.0;
  double target_bler = 0.1;

  // delta_down = delta_up / (1 / target_bler - 1)
  static OllaState with_target(double delta_up, double target_bler) {
    if (!(target_bler > 0.0 && target_bler < 1.0)) throw std::invalid_argument("target_bler must be in (0,1)");
    if (!(delta_up > 0.0)) throw std::invalid_argument("delta_up must be positive");
    OllaState s;
    s.delta_up = delta_up;
    s.target_bler = target_bler;
    s.delta_down = delta_up / (1.0 / target_bler - 1.0);
    return s;
  }
};

inline OllaState olla_update(OllaState state, bool ack) {
  if (ack) {
    state.offset += state.delta_up;
  } else {
    state.offset -= state.delta_down;
  }
  return state;
}

inline McsIndex olla_select(CqiValue c, const OllaState& state, const LinkTables& tables) {
  return mcs_for_snr(cqi_to_snr(c, tables) + state.offset, tables);
}

class OllaAgent final : public LinkAdapter {
 public:
  OllaAgent(OllaState state, LinkTables tables = LinkTables::defaults(), bool first_tx_only = false)
      : state_(state), tables_(std::move(tables)), first_tx_only_(first_tx_only) {}

  std::string name() const override { return "olla"; }
  void on_cqi(const CqiReport& report) override { cqi_ = report.cqi; }
  void on_feedback(const FeedbackEvent& fb) override {
    if (first_tx_only_ && fb.rtx_count != 1) return;
    state_ = olla_update(state_, fb.ack);
  }
  Decision decide(Tti) override { return {olla_select(cqi_, state_, tables_)}; }

  const OllaState& state() const { return state_; }

 private:
  OllaState state_;
  LinkTables tables_;
  bool first_tx_only_;
  CqiValue cqi_{0};
};

// ---------------------------------------------------------------------------
// BayesLA: per-CQI Beta-Bernoulli Thompson sampling over expected throughput.

struct BayesState {
  double alpha0 = 1.0;
  double beta0 = 1.0;
  std::array<std::array<double, kNumMcs>, kMaxCqi + 1> alpha{};
  std::array<std::array<double, kNumMcs>, kMaxCqi + 1> beta{};

  static BayesState with_prior(double alpha0, double beta0) {
    if (!(alpha0 > 0.0 && beta0 > 0.0)) throw std::invalid_argument("Beta prior must be positive");
    BayesState s;
    s.alpha0 = alpha0;
    s.beta0 = beta0;
    for (auto& row : s.alpha) row.fill(alpha0);
    for (auto& row : s.beta) row.fill(beta0);
    return s;
  }
};

// Draws p ~ Beta(a, b). Replaceable in tests.
using BetaSampler = std::function<double(double a, double b, std::mt19937_64& rng)>;

inline double sample_beta(double a, double b, std::mt19937_64& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

inline McsIndex bayes_select(CqiValue c, const BayesState& state, int n_rb, const LinkTables& tables,
                             std::mt19937_64& rng, const BetaSampler& sampler = sample_beta) {
  int best = 0;
  double best_value = -1.0;
  for (int m = 0; m < kNumMcs; ++m) {
    const double p = sampler(state.alpha[c.value()][m], state.beta[c.value()][m], rng);
    const double value = p * static_cast<double>(tbs(McsIndex{m}, n_rb, tables));
    if (value > best_value) {
      best_value = value;
      best = m;
    }
  }
  return McsIndex{best};
}

// Only first-transmission feedback carries information about the (CQI, MCS) arm.
inline BayesState bayes_update(BayesState state, CqiValue c_at_tx, McsIndex m, bool ack, int n_tx = 1) {
  if (n_tx != 1) return state;
  if (ack) {
    state.alpha[c_at_tx.value()][m.value()] += 1.0;
  } else {
    state.beta[c_at_tx.value()][m.value()] += 1.0;
  }
  return state;
}

class BayesAgent final : public LinkAdapter {
 public:
  BayesAgent(BayesState state, int n_rb, int d_tx, int d_decision, std::uint64_t seed,
             LinkTables tables = LinkTables::defaults())
      : state_(std::move(state)),
        tables_(std::move(tables)),
        n_rb_(n_rb),
        lag_(d_tx + d_decision),
        rng_(seed) {}

  std::string name() const override { return "bayes"; }
  void on_cqi(const CqiReport& report) override { cqi_ = report.cqi; }

  void on_feedback(const FeedbackEvent& fb) override {
    if (fb.rtx_count != 1) return;
    state_ = bayes_update(state_, cqi_at(fb.origin_tti - lag_), fb.mcs, fb.ack, fb.rtx_count);
  }

  void on_tti(Tti t) override {
    history_.push_back(cqi_);
    if (history_.size() == 1) first_ = t;
    // Feedback can refer back at most d_ack + lag TTIs; keep a generous horizon.
    while (history_.size() > 4096) {
      history_.pop_front();
      ++first_;
    }
  }

  Decision decide(Tti) override { return {bayes_select(cqi_, state_, n_rb_, tables_, rng_)}; }

  const BayesState& state() const { return state_; }

 private:
  CqiValue cqi_at(Tti t) const {
    if (history_.empty() || t < first_) return history_.empty() ? CqiValue{0} : history_.front();
    const auto idx = static_cast<std::size_t>(t - first_);
    return idx < history_.size() ? history_[idx] : history_.back();
  }

  BayesState state_;
  LinkTables tables_;
  int n_rb_;
  int lag_;
  std::mt19937_64 rng_;
  CqiValue cqi_{0};
  std::deque<CqiValue> history_;
  Tti first_ = 0;
};

// ---------------------------------------------------------------------------
// Reference agents.

class FixedAgent final : public LinkAdapter {
 public:
  explicit FixedAgent(McsIndex m) : m_(m) {}
  std::string name() const override { return "fixed:" + std::to_string(m_.value()); }
  Decision decide(Tti) override { return {m_}; }

 private:
  McsIndex m_;
};

// Genie: reads the ground-truth SNR of the TTI the decision will be used in.
inline McsIndex oracle_select(double snr_db, int n_rb, const LinkTables& tables) {
  int best = 0;
  double best_value = -1.0;
  for (int m = 0; m < kNumMcs; ++m) {
    const McsIndex mcs{m};
    const double value = (1.0 - bler(mcs, snr_db, tables)) * static_cast<double>(tbs(mcs, n_rb, tables));
    if (value > best_value) {
      best_value = value;
      best = m;
    }
  }
  return McsIndex{best};
}

class OracleAgent final : public LinkAdapter {
 public:
  OracleAgent(const SnrTrace& trace, int d_tx, int n_rb, LinkTables tables = LinkTables::defaults())
      : trace_(trace), d_tx_(d_tx), n_rb_(n_rb), tables_(std::move(tables)) {}

  std::string name() const override { return "oracle"; }
  Decision decide(Tti t) override {
    const Tti last = static_cast<Tti>(trace_.size()) - 1;
    return {oracle_select(trace_[std::min(t + d_tx_, last)], n_rb_, tables_)};
  }

 private:
  const SnrTrace& trace_;
  int d_tx_;
  int n_rb_;
  LinkTables tables_;
};

}  // namespace dcla
