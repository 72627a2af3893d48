#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcla/channel_model.hpp"
#include "dcla/link_adapter.hpp"
#include "dcla/trace.hpp"

namespace dcla {

struct SimConfig {
  int d_tx = 4;
  int d_ack = 8;
  int d_cqi = 4;
  int cqi_period = 40;
  int d_decision = 0;
  int max_tx = 4;
  int n_rb = 50;
  Tti tti_count = 100000;
  Tti window = 2000;
  std::uint64_t seed = 1;
  LinkTables tables = LinkTables::defaults();

  void validate() const {
    for (auto [v, n] : {std::pair{d_tx, "d_tx"}, {d_ack, "d_ack"}, {d_cqi, "d_cqi"}, {d_decision, "d_decision"}})
      if (v < 0) throw std::invalid_argument(std::string(n) + " must be >= 0");
    if (max_tx < 1) throw std::invalid_argument("max_tx must be >= 1");
    if (cqi_period < 1) throw std::invalid_argument("cqi_period must be >= 1");
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    if (n_rb < 1) throw std::invalid_argument("n_rb must be >= 1");
    if (tti_count < 1) throw std::invalid_argument("tti_count must be >= 1");
    tables.validate();
  }
};

struct HarqProcess {
  std::int64_t tb_bits = 0;
  McsIndex mcs;
  int n_tx = 1;
  Tti first_tx_tti = 0;
  Tti feedback_due = 0;
  double ground_snr_at_tx = 0.0;
};

struct TtiRecord {
  Tti tti = 0;
  int mcs = 0;
  int cqi = 0;
  int n_tx = 1;
  std::int64_t tb_bits = 0;
  std::optional<bool> ack;  // filled when the feedback is delivered
  std::int64_t delivered_bits = 0;
  double cum_bler = 0.0;
  bool fallback = false;
};

struct MetricsLog {
  std::vector<TtiRecord> records;
  Tti window = 2000;
  std::int64_t acks = 0;
  std::int64_t nacks = 0;
  std::int64_t drops = 0;
  std::int64_t fallbacks = 0;

  std::int64_t delivered_bits() const {
    std::int64_t sum = 0;
    for (const auto& r : records) sum += r.delivered_bits;
    return sum;
  }
  std::int64_t attempted_bits() const {
    std::int64_t sum = 0;
    for (const auto& r : records) sum += r.tb_bits;
    return sum;
  }
  double bler() const {
    const auto total = acks + nacks;
    return total == 0 ? 0.0 : static_cast<double>(nacks) / static_cast<double>(total);
  }
};

// Element t: ACKed bits transmitted in (t - window, t], per TTI, in Mbps.
inline std::vector<double> windowed_throughput(const MetricsLog& log, Tti window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  std::vector<double> out(log.records.size());
  std::int64_t running = 0;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    running += log.records[i].delivered_bits;
    if (i >= static_cast<std::size_t>(window)) running -= log.records[i - window].delivered_bits;
    out[i] = static_cast<double>(running) / static_cast<double>(window) / 1000.0;
  }
  return out;
}

// Mean throughput in Mbps over records [begin, end).
inline double mean_throughput(const MetricsLog& log, std::size_t begin, std::size_t end) {
  end = std::min(end, log.records.size());
  if (begin >= end) return 0.0;
  std::int64_t sum = 0;
  for (std::size_t i = begin; i < end; ++i) sum += log.records[i].delivered_bits;
  return static_cast<double>(sum) / static_cast<double>(end - begin) / 1000.0;
}

inline void write_metrics_csv(std::ostream& os, const MetricsLog& log) {
  const auto win = windowed_throughput(log, log.window);
  os << "tti,mcs,cqi,ack,tb_bits,delivered_bits,win_tput_mbps,cum_bler,fallback\n";
  std::ostringstream line;
  line << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    line.str({});
    line << r.tti << ',' << r.mcs << ',' << r.cqi << ',';
    if (r.ack) line << (*r.ack ? 1 : 0);
    line << ',' << r.tb_bits << ',';
    if (r.ack) line << r.delivered_bits;
    line << ',' << win[i] << ',' << r.cum_bler << ',' << (r.fallback ? 1 : 0) << '\n';
    os << line.str();
  }
}

struct SimAudit {
  struct Delivery {
    Tti origin = 0;
    Tti delivered = 0;
  };
  std::vector<Delivery> feedback;
  std::vector<Delivery> cqi;
  std::vector<FeedbackEvent> feedback_events;
  std::vector<HarqProcess> transmissions;
  std::size_t max_in_flight = 0;
};

class Simulator {
 public:
  Simulator(const SnrTrace& trace, LinkAdapter& agent, SimConfig cfg, bool audit = false)
      : trace_(trace), agent_(agent), cfg_(std::move(cfg)), rng_(cfg_.seed), audit_enabled_(audit) {
    cfg_.validate();
    if (static_cast<Tti>(trace_.size()) < cfg_.tti_count)
      throw std::invalid_argument("trace is shorter than tti_count");
    log_.window = cfg_.window;
    log_.records.reserve(static_cast<std::size_t>(cfg_.tti_count));
  }

  Tti now() const { return t_; }
  bool done() const { return t_ >= cfg_.tti_count; }
  const MetricsLog& log() const { return log_; }
  MetricsLog take_log() { return std::move(log_); }
  const SimAudit& audit() const { return audit_; }
  std::size_t in_flight() const { return pending_.size() + rtx_queue_.size(); }

  const TtiRecord& step() {
    if (done()) throw std::logic_error("simulation already finished");
    const Tti t = t_;

    deliver_feedback(t);
    handle_cqi(t);

    agent_.on_tti(t);
    request_decision(t);
    transmit(t);
    if (cfg_.d_ack == 0) deliver_feedback(t);
    agent_.on_tti_end(t);

    ++t_;
    return log_.records.back();
  }

  MetricsLog run() {
    while (!done()) step();
    return take_log();
  }

 private:
  struct Pending {
    HarqProcess proc;
    bool ack = false;
  };
  struct Scheduled {
    Tti effective = 0;
    Decision decision;
  };

  void deliver_feedback(Tti t) {
    while (!pending_.empty() && pending_.front().proc.feedback_due <= t) {
      Pending p = pending_.front();
      pending_.pop_front();
      const auto& proc = p.proc;
      const Tti origin = proc.feedback_due - cfg_.d_ack;
      FeedbackEvent fb{t, p.ack, proc.mcs, proc.tb_bits, proc.n_tx, origin};

      auto& rec = log_.records[static_cast<std::size_t>(origin)];
      rec.ack = p.ack;
      rec.delivered_bits = p.ack ? proc.tb_bits : 0;
      if (p.ack) {
        ++log_.acks;
      } else {
        ++log_.nacks;
        if (proc.n_tx < cfg_.max_tx) {
          rtx_queue_.push_back(proc);
        } else {
          ++log_.drops;
        }
      }
      if (audit_enabled_) {
        audit_.feedback.push_back({origin, t});
        audit_.feedback_events.push_back(fb);
      }
      agent_.on_feedback(fb);
    }
  }

  void handle_cqi(Tti t) {
    const int measured = snr_to_cqi(trace_[t], cfg_.tables).value();
    period_.push_back(measured);
    period_sum_ += measured;
    if (static_cast<int>(period_.size()) > cfg_.cqi_period) {
      period_sum_ -= period_.front();
      period_.pop_front();
    }
    if (t % cfg_.cqi_period == 0) {
      const double mean = static_cast<double>(period_sum_) / static_cast<double>(period_.size());
      const int value = static_cast<int>(std::lround(mean));
      cqi_pending_.push_back({t, t + cfg_.d_cqi, CqiValue{value}});
    }
    while (!cqi_pending_.empty() && cqi_pending_.front().delivered_tti <= t) {
      const CqiReport rep = cqi_pending_.front();
      cqi_pending_.pop_front();
      reported_cqi_ = rep.cqi.value();
      if (audit_enabled_) audit_.cqi.push_back({rep.measured_tti, t});
      agent_.on_cqi(rep);
    }
  }

  void request_decision(Tti t) {
    if (cfg_.d_decision == 0) {
      schedule_.push_back({t + cfg_.d_tx, agent_.decide(t)});
      return;
    }
    // One inference in flight at a time; its result is usable d_decision TTIs later.
    if (inflight_ && t >= inflight_ready_) {
      schedule_.push_back({t + cfg_.d_tx, *inflight_});
      inflight_.reset();
    }
    if (!inflight_) {
      inflight_ = agent_.decide(t);
      inflight_ready_ = t + cfg_.d_decision;
    }
  }

  void transmit(Tti t) {
    bool fallback = false;
    while (!schedule_.empty() && schedule_.front().effective <= t) {
      current_mcs_ = schedule_.front().decision.mcs;
      fallback = schedule_.front().decision.fallback;
      schedule_.pop_front();
    }

    HarqProcess proc;
    bool is_new = rtx_queue_.empty();
    if (!is_new) {
      proc = rtx_queue_.front();
      rtx_queue_.pop_front();
      ++proc.n_tx;
      fallback = false;
    } else {
      proc.mcs = current_mcs_;
      proc.tb_bits = tbs(current_mcs_, cfg_.n_rb, cfg_.tables);
      proc.n_tx = 1;
      proc.first_tx_tti = t;
    }
    proc.feedback_due = t + cfg_.d_ack;
    proc.ground_snr_at_tx = trace_[t];

    const double p_err = bler(proc.mcs, harq_effective_snr(trace_[t], proc.n_tx), cfg_.tables);
    const bool ack = uniform_(rng_) >= p_err;
    pending_.push_back({proc, ack});

    if (fallback) ++log_.fallbacks;
    TtiRecord rec;
    rec.tti = t;
    rec.mcs = proc.mcs.value();
    rec.cqi = reported_cqi_;
    rec.n_tx = proc.n_tx;
    rec.tb_bits = proc.tb_bits;
    rec.fallback = fallback;
    const auto total = log_.acks + log_.nacks;
    rec.cum_bler = total == 0 ? 0.0 : static_cast<double>(log_.nacks) / static_cast<double>(total);
    log_.records.push_back(rec);

    if (audit_enabled_) {
      audit_.transmissions.push_back(proc);
      audit_.max_in_flight = std::max(audit_.max_in_flight, in_flight());
    }
  }

  const SnrTrace& trace_;
  LinkAdapter& agent_;
  SimConfig cfg_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  bool audit_enabled_ = false;

  Tti t_ = 0;
  MetricsLog log_;
  SimAudit audit_;

  std::deque<Pending> pending_;
  std::deque<HarqProcess> rtx_queue_;
  std::deque<Scheduled> schedule_;
  std::optional<Decision> inflight_;
  Tti inflight_ready_ = 0;
  McsIndex current_mcs_{0};

  std::deque<int> period_;
  std::int64_t period_sum_ = 0;
  std::deque<CqiReport> cqi_pending_;
  int reported_cqi_ = 0;
};

inline MetricsLog run(const SnrTrace& trace, LinkAdapter& agent, const SimConfig& cfg) {
  Simulator sim(trace, agent, cfg);
  return sim.run();
}

}  // namespace dcla
