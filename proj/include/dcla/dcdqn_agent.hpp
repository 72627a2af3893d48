#pragma once

#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dcla/audit_log.hpp"
#include "dcla/dqn.hpp"
#include "dcla/features.hpp"
#include "dcla/link_adapter.hpp"
#include "dcla/runtime.hpp"
#include "dcla/transport.hpp"

namespace dcla {

enum class RuntimeMode { kLockstep, kTwoRole, kRealTime };
enum class TransportKind { kInProcess, kTcp };

inline RuntimeMode parse_runtime_mode(const std::string& s) {
  if (s == "lockstep") return RuntimeMode::kLockstep;
  if (s == "two-role") return RuntimeMode::kTwoRole;
  if (s == "realtime") return RuntimeMode::kRealTime;
  throw std::invalid_argument("unknown runtime mode '" + s + "' (lockstep | two-role | realtime)");
}

inline TransportKind parse_transport(const std::string& s) {
  if (s == "inproc") return TransportKind::kInProcess;
  if (s == "tcp") return TransportKind::kTcp;
  throw std::invalid_argument("unknown transport '" + s + "' (inproc | tcp)");
}

// DCLA_TRANSPORT=tcp|inproc overrides the configured transport.
inline TransportKind transport_from_env(TransportKind fallback) {
  const char* v = std::getenv("DCLA_TRANSPORT");
  return (v && *v) ? parse_transport(v) : fallback;
}

struct RuntimeOptions {
  RuntimeMode mode = RuntimeMode::kLockstep;
  TransportKind transport = TransportKind::kInProcess;
  std::chrono::nanoseconds deadline = std::chrono::microseconds(500);
  std::chrono::nanoseconds tti_period = std::chrono::milliseconds(1);  // real-time pacing
  bool training = true;
  bool delay_metric = false;
  std::size_t probe_count = 256;
  bool low_priority_trainer = true;
  std::function<void()> train_hook;
  std::function<void()> inference_hook;
};

struct LinkContext {
  int d_tx = 4;
  int d_ack = 8;
  int n_rb = 50;
};

class DcDqnAgent final : public LinkAdapter {
 public:
  DcDqnAgent(const Hyperparams& h, const LinkContext& link, RuntimeOptions opts, std::uint64_t seed)
      : h_(h),
        link_(link),
        opts_(std::move(opts)),
        obs_(h.history, link.d_tx, link.d_ack, link.n_rb),
        rng_(seed ^ 0x5851f42d4c957f2dULL) {
    learner_ = std::make_unique<Learner>(h_, seed);
    if (opts_.delay_metric) learner_->enable_delay_metric(opts_.probe_count);
    learner_->train_hook = opts_.train_hook;
    pair_ = std::make_unique<DecisionPair>(decode_params<float>(learner_->initial_snapshot()), 0);
    if (opts_.mode != RuntimeMode::kLockstep) start_roles(seed);
  }

  ~DcDqnAgent() override {
    try {
      finish();
    } catch (...) {
    }
  }

  std::string name() const override { return "dcdqn"; }

  void on_cqi(const CqiReport& rep) override {
    prev_c_ = c_;
    c_ = rep.cqi;
  }

  void on_feedback(const FeedbackEvent& fb) override {
    last_ack_ = fb.ack;
    last_mcs_ = fb.mcs;
    obs_.record_feedback(fb);
    due_.push_back(fb.origin_tti);
  }

  void on_tti(Tti t) override {
    if (opts_.mode == RuntimeMode::kRealTime) pace(t);
    obs_.record_frame(t, build_frame(c_, last_ack_, last_mcs_, prev_c_));
    state_ = obs_.window(t);

    std::vector<Experience> batch;
    for (const Tti origin : due_) {
      const Tti t0 = origin - link_.d_tx;
      if (t0 < 0 || !obs_.has_frame(t0)) continue;
      batch.push_back(align_experience(obs_, t0, link_.d_tx, link_.d_ack));
    }
    due_.clear();
    if (experience_tap)
      for (const auto& e : batch) experience_tap(e);
    if (!opts_.training || batch.empty()) return;
    experiences_ += batch.size();
    if (opts_.mode == RuntimeMode::kLockstep) {
      for (auto& e : batch) learner_->ingest(std::move(e));
    } else {
      n2_tx_->send(encode_experiences(batch));
    }
  }

  Decision decide(Tti t) override {
    const double eps = epsilon_at(h_, t);
    Decision d;
    if (opts_.mode == RuntimeMode::kLockstep) {
      auto lease = pair_->acquire();
      d.mcs = select_action(lease.net(), state_, eps, rng_);
    } else {
      const auto deadline = opts_.mode == RuntimeMode::kTwoRole ? kNoDeadline : opts_.deadline;
      const auto r = inference_->request_decision(state_, eps, deadline, previous_, t);
      d.mcs = r.mcs;
      d.fallback = r.used_fallback;
    }
    previous_ = d.mcs;
    return d;
  }

  void on_tti_end(Tti t) override {
    if (!opts_.training || paused_) return;
    if (opts_.mode == RuntimeMode::kLockstep) {
      auto rep = learner_->tick(t);
      if (rep.train_tick) {
        if (rep.trained) {
          audit_.record(t, "train", {{"loss", rep.loss}});
        } else {
          audit_.record(t, rep.underfull ? "train_skip" : "train_error");
        }
      }
      if (rep.delay_metric) audit_.record(t, "delay_metric", {{"value", *rep.delay_metric}});
      if (rep.published) {
        const auto v = static_cast<std::int64_t>(rep.published->version);
        audit_.record(t, "sync", {{"version", v}});
        if (pair_->apply_params(*rep.published) == DecisionPair::ApplyResult::kApplied)
          audit_.record(t, "swap", {{"version", v}});
      }
      return;
    }
    n2_tx_->send(encode_control({ControlMsg::Kind::kTick, t}));
    if (opts_.mode == RuntimeMode::kTwoRole && t % h_.update_interval == 0) {
      // Without deadlines the roles stay in step: the next decision must see
      // the snapshot published at this tick, as in lockstep mode.
      ++expected_version_;
      while (!pair_->wait_for_version(expected_version_, std::chrono::milliseconds(1000))) {
        if (trainer_done_.load()) throw std::runtime_error("trainer role exited before publishing");
      }
    }
  }

  // Stops the roles; safe to call more than once. Learner state is final after this.
  void finish() {
    if (finished_) return;
    finished_ = true;
    if (opts_.mode == RuntimeMode::kLockstep) return;
    try {
      n2_tx_->send(encode_control({ControlMsg::Kind::kStop, 0}));
    } catch (const ChannelClosed&) {
    }
    if (trainer_) trainer_->join();
    n1_tx_->close();
    inference_->stop();
    n2_tx_->close();
  }

  // While paused no learner ticks are issued: no training and no publishes.
  // Experiences are still collected.
  void set_training_paused(bool paused) { paused_ = paused; }

  // Sees every experience as it is built; for audits.
  std::function<void(const Experience&)> experience_tap;

  const Learner& learner() const { return *learner_; }
  AuditLog& audit() { return audit_; }
  const DecisionPair& decision_pair() const { return *pair_; }
  std::size_t experiences_sent() const { return experiences_; }
  RuntimeMode mode() const { return opts_.mode; }

  DeadlineStats deadline_stats() const {
    if (inference_) return inference_->stats();
    return {};
  }

 private:
  void start_roles(std::uint64_t seed) {
    if (opts_.transport == TransportKind::kTcp) {
      auto [n2c, n2s] = tcp_loopback_pair();
      auto [n1c, n1s] = tcp_loopback_pair();
      n2_tx_ = std::move(n2c);
      n2_rx_ = std::move(n2s);
      n1_tx_ = std::move(n1c);
      n1_rx_ = std::move(n1s);
    } else {
      auto n2 = std::make_shared<InProcessChannel>();
      auto n1 = std::make_shared<InProcessChannel>();
      n2_tx_ = n2;
      n2_rx_ = n2;
      n1_tx_ = n1;
      n1_rx_ = n1;
    }
    inference_ = std::make_unique<InferenceRole>(*pair_, seed ^ 0x5851f42d4c957f2dULL, &audit_);
    if (opts_.inference_hook) inference_->set_stall_hook(opts_.inference_hook);
    inference_->attach_param_channel(*n1_rx_);
    if (!opts_.training) return;
    trainer_ = std::make_unique<TrainerRole>(*learner_, *n2_rx_, *n1_tx_, &audit_, opts_.low_priority_trainer,
                                             &trainer_done_);
    trainer_->start();
    wall_start_ = std::chrono::steady_clock::now();
  }

  void pace(Tti t) {
    if (t == 0) wall_start_ = std::chrono::steady_clock::now();
    std::this_thread::sleep_until(wall_start_ + opts_.tti_period * t);
  }

  Hyperparams h_;
  LinkContext link_;
  RuntimeOptions opts_;
  ObservationLog obs_;
  std::mt19937_64 rng_;
  AuditLog audit_;

  CqiValue c_{0};
  CqiValue prev_c_{0};
  bool last_ack_ = false;
  McsIndex last_mcs_{0};
  McsIndex previous_{0};
  StateWindow state_;
  std::vector<Tti> due_;
  std::size_t experiences_ = 0;

  std::unique_ptr<Learner> learner_;
  std::unique_ptr<DecisionPair> pair_;
  std::shared_ptr<MessageChannel> n1_tx_, n1_rx_, n2_tx_, n2_rx_;
  std::unique_ptr<InferenceRole> inference_;
  std::unique_ptr<TrainerRole> trainer_;
  std::atomic<bool> trainer_done_{false};
  std::uint64_t expected_version_ = 0;
  std::chrono::steady_clock::time_point wall_start_;
  bool finished_ = false;
  bool paused_ = false;
};

}  // namespace dcla
