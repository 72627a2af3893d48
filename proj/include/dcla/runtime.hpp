#pragma once

#include <pthread.h>
#include <sched.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "dcla/audit_log.hpp"
#include "dcla/dqn.hpp"
#include "dcla/replay_buffer.hpp"
#include "dcla/transport.hpp"
#include "dcla/wire.hpp"

namespace dcla {

// Empirical Delta^Q: max over probe windows and all actions of
// |Q_decision(s, a) - Q_main(s, a)|. A lower bound on the true supremum.
template <typename Scalar>
double estimate_delay_metric(const QNetParams<Scalar>& main, const QNetParams<Scalar>& decision,
                             std::span<const StateWindow* const> probes) {
  if (probes.empty()) throw std::invalid_argument("delay metric needs at least one probe state");
  const auto qm = q_forward_batch<Scalar>(main, probes);
  const auto qd = q_forward_batch<Scalar>(decision, probes);
  return static_cast<double>((qd - qm).cwiseAbs().maxCoeff());
}

// ---------------------------------------------------------------------------
// Two swappable decision networks. Inference reads the active slot through a
// lease; a loader writes the other slot and swaps once no lease is held.

class DecisionPair {
 public:
  enum class ApplyResult { kApplied, kStale, kRejected };

  explicit DecisionPair(const QNetParams<float>& initial, std::uint64_t version = 0)
      : slots_{initial, initial}, version_(version) {}

  class Lease {
   public:
    Lease(DecisionPair& owner, const QNetParams<float>& net, std::uint64_t version)
        : owner_(&owner), net_(&net), version_(version) {}
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
    ~Lease() { owner_->release(); }
    const QNetParams<float>& net() const { return *net_; }
    std::uint64_t version() const { return version_; }

   private:
    DecisionPair* owner_;
    const QNetParams<float>* net_;
    std::uint64_t version_;
  };

  Lease acquire() {
    std::lock_guard lock(mu_);
    ++busy_;
    return Lease(*this, slots_[active_], version_);
  }

  ApplyResult apply_params(const ParamMsg& msg) {
    std::lock_guard load(load_mu_);
    int loading = 0;
    {
      std::lock_guard lock(mu_);
      if (msg.version <= version_) return ApplyResult::kStale;
      loading = 1 - active_;
    }
    try {
      decode_params_into(msg, slots_[loading]);
    } catch (const WireError&) {
      return ApplyResult::kRejected;
    }
    if (!slots_[loading].all_finite()) return ApplyResult::kRejected;
    if (on_loaded) on_loaded();
    {
      std::unique_lock lock(mu_);
      idle_cv_.wait(lock, [&] { return busy_ == 0; });
      active_ = loading;
      version_ = msg.version;
      ++swaps_;
    }
    version_cv_.notify_all();
    return ApplyResult::kApplied;
  }

  std::uint64_t version() const {
    std::lock_guard lock(mu_);
    return version_;
  }

  bool wait_for_version(std::uint64_t v, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return version_cv_.wait_for(lock, timeout, [&] { return version_ >= v; });
  }

  std::uint64_t swaps() const {
    std::lock_guard lock(mu_);
    return swaps_;
  }

  int active_slot() const {
    std::lock_guard lock(mu_);
    return active_;
  }

  // Test hook: runs after the loading slot is written, before the swap.
  std::function<void()> on_loaded;

 private:
  void release() {
    {
      std::lock_guard lock(mu_);
      --busy_;
    }
    idle_cv_.notify_all();
  }

  mutable std::mutex mu_;
  std::mutex load_mu_;
  std::condition_variable idle_cv_;
  std::condition_variable version_cv_;
  std::array<QNetParams<float>, 2> slots_;
  int active_ = 0;
  int busy_ = 0;
  std::uint64_t version_ = 0;
  std::uint64_t swaps_ = 0;
};

// ---------------------------------------------------------------------------
// Inference role.

struct DeadlineStats {
  std::chrono::nanoseconds deadline{std::chrono::microseconds(500)};
  std::vector<double> latency_us;
  std::size_t fallbacks = 0;

  double fraction_within(double us) const {
    if (latency_us.empty()) return 0.0;
    const auto n = std::count_if(latency_us.begin(), latency_us.end(), [&](double x) { return x <= us; });
    return static_cast<double>(n) / static_cast<double>(latency_us.size());
  }
  double fallback_rate() const {
    return latency_us.empty() ? 0.0 : static_cast<double>(fallbacks) / static_cast<double>(latency_us.size());
  }
};

struct InferenceResult {
  McsIndex mcs;
  std::chrono::nanoseconds latency{0};
  bool used_fallback = false;
};

inline constexpr std::chrono::nanoseconds kNoDeadline = std::chrono::nanoseconds::max();

class InferenceRole {
 public:
  InferenceRole(DecisionPair& pair, std::uint64_t seed, AuditLog* audit = nullptr)
      : pair_(pair), rng_(seed), audit_(audit) {
    serve_ = std::thread([this] { serve_loop(); });
  }

  ~InferenceRole() { stop(); }
  InferenceRole(const InferenceRole&) = delete;
  InferenceRole& operator=(const InferenceRole&) = delete;

  // Starts the N1 receiver feeding parameter snapshots into the pair.
  void attach_param_channel(MessageChannel& n1) {
    loader_ = std::thread([this, &n1] { load_loop(n1); });
  }

  // Test hook run on the inference thread before each forward pass.
  void set_stall_hook(std::function<void()> hook) {
    std::lock_guard lock(mu_);
    stall_hook_ = std::move(hook);
  }

  InferenceResult request_decision(const StateWindow& s, double epsilon, std::chrono::nanoseconds deadline,
                                   McsIndex fallback, Tti t = 0) {
    const auto start = std::chrono::steady_clock::now();
    std::unique_lock lock(mu_);
    const std::uint64_t seq = ++req_seq_;
    req_state_ = s;
    req_eps_ = epsilon;
    req_tti_ = t;
    has_request_ = true;
    req_cv_.notify_one();

    const auto ready = [&] { return resp_seq_ == seq; };
    bool ok = true;
    if (deadline == kNoDeadline) {
      resp_cv_.wait(lock, ready);
    } else {
      ok = resp_cv_.wait_until(lock, start + deadline, ready);
    }
    const auto latency = std::chrono::steady_clock::now() - start;
    InferenceResult out;
    out.latency = std::chrono::duration_cast<std::chrono::nanoseconds>(latency);
    if (ok) {
      out.mcs = resp_mcs_;
    } else {
      out.mcs = fallback;
      out.used_fallback = true;
      abandoned_seq_ = seq;
      ++stats_.fallbacks;
    }
    stats_.deadline = deadline;
    stats_.latency_us.push_back(std::chrono::duration<double, std::micro>(latency).count());
    lock.unlock();
    if (!ok && audit_) audit_->record(t, "fallback", {{"mcs", fallback.value()}});
    return out;
  }

  DeadlineStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

  void stop() {
    {
      std::lock_guard lock(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    req_cv_.notify_all();
    if (serve_.joinable()) serve_.join();
    if (loader_.joinable()) loader_.join();
  }

 private:
  void serve_loop() {
    for (;;) {
      StateWindow s;
      double eps = 0.0;
      std::uint64_t seq = 0;
      Tti t = 0;
      std::function<void()> hook;
      {
        std::unique_lock lock(mu_);
        req_cv_.wait(lock, [&] { return has_request_ || stopping_; });
        if (stopping_) return;
        s = std::move(req_state_);
        eps = req_eps_;
        seq = req_seq_;
        t = req_tti_;
        has_request_ = false;
        hook = stall_hook_;
      }
      if (hook) hook();
      McsIndex mcs;
      {
        auto lease = pair_.acquire();
        mcs = select_action(lease.net(), s, eps, rng_);
      }
      bool late = false;
      {
        std::lock_guard lock(mu_);
        resp_seq_ = seq;
        resp_mcs_ = mcs;
        late = abandoned_seq_ == seq;
      }
      resp_cv_.notify_all();
      // Answers that miss the deadline are discarded by the caller.
      if (late && audit_) audit_->record(t, "late_answer", {{"mcs", mcs.value()}});
    }
  }

  void load_loop(MessageChannel& n1) {
    for (;;) {
      {
        std::lock_guard lock(mu_);
        if (stopping_) return;
      }
      std::optional<Frame> f;
      try {
        f = n1.receive(std::chrono::milliseconds(20));
      } catch (const ChannelClosed&) {
        return;
      }
      if (!f) continue;
      const ParamMsg msg = param_msg_from_frame(*f);
      const auto result = pair_.apply_params(msg);
      if (!audit_) continue;
      const auto v = static_cast<std::int64_t>(msg.version);
      switch (result) {
        case DecisionPair::ApplyResult::kApplied: audit_->record(-1, "swap", {{"version", v}}); break;
        case DecisionPair::ApplyResult::kStale: audit_->record(-1, "stale_param", {{"version", v}}); break;
        case DecisionPair::ApplyResult::kRejected: audit_->record(-1, "rejected_param", {{"version", v}}); break;
      }
    }
  }

  DecisionPair& pair_;
  std::mt19937_64 rng_;
  AuditLog* audit_;

  mutable std::mutex mu_;
  std::condition_variable req_cv_;
  std::condition_variable resp_cv_;
  bool stopping_ = false;
  bool has_request_ = false;
  std::uint64_t req_seq_ = 0;
  std::uint64_t resp_seq_ = 0;
  std::uint64_t abandoned_seq_ = 0;
  StateWindow req_state_;
  double req_eps_ = 0.0;
  Tti req_tti_ = 0;
  McsIndex resp_mcs_;
  std::function<void()> stall_hook_;
  DeadlineStats stats_;

  std::thread serve_;
  std::thread loader_;
};

// ---------------------------------------------------------------------------
// Learner: main/target networks, replay buffer and optimizer, driven by TTI
// ticks. Every T TTIs it trains on a sampled batch; every U TTIs it syncs the
// target network and publishes a parameter snapshot for the decision nets.

struct TickReport {
  bool train_tick = false;
  bool trained = false;
  bool underfull = false;
  bool numeric_error = false;
  double loss = std::numeric_limits<double>::quiet_NaN();
  std::optional<ParamMsg> published;
  std::optional<double> delay_metric;
};

class Learner {
 public:
  Learner(const Hyperparams& h, std::uint64_t seed)
      : h_(h), buffer_(h.buffer_capacity), rng_(seed), probe_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
    h_.validate();
    std::mt19937_64 init(seed);
    main_ = QNetParams<double>::random(h_.hidden, init);
    target_ = main_;
    opt_ = Adam<double>(h_.hidden, h_.learning_rate, h_.adam_beta1, h_.adam_beta2, h_.adam_eps);
    published_ = main_.cast<float>();
  }

  const Hyperparams& hyper() const { return h_; }
  const QNetParams<double>& main() const { return main_; }
  const QNetParams<double>& target() const { return target_; }
  const ReplayBuffer<Experience>& buffer() const { return buffer_; }
  std::uint64_t version() const { return version_; }

  ParamMsg initial_snapshot() const { return make_param_msg(0, main_); }

  void ingest(Experience e) { buffer_.push(std::move(e)); }

  void enable_delay_metric(std::size_t probe_count) {
    metric_ = true;
    probe_count_ = probe_count;
  }
  const std::vector<std::pair<Tti, double>>& delay_series() const { return delay_series_; }

  // Runs after every train_step; tests use it to slow training down.
  std::function<void()> train_hook;

  TickReport tick(Tti t) {
    TickReport rep;
    if (t % h_.train_interval == 0) {
      rep.train_tick = true;
      ++train_ticks_;
      if (buffer_.size() < static_cast<std::size_t>(h_.batch_size)) {
        rep.underfull = true;
        ++underfull_;
      } else {
        const auto batch = buffer_.sample(static_cast<std::size_t>(h_.batch_size), rng_);
        try {
          rep.loss = static_cast<double>(train_step<double>(main_, target_, batch, h_, opt_));
          rep.trained = true;
          ++train_steps_;
        } catch (const NumericError&) {
          rep.numeric_error = true;
          ++numeric_errors_;
        }
        if (train_hook) train_hook();
      }
    }
    if (t % h_.update_interval == 0) {
      sync(main_, target_);
      ++version_;
      rep.published = make_param_msg(version_, main_);
      ++publishes_;
      if (metric_) {
        published_ = main_.cast<float>();
        published_q_valid_ = false;
      }
    }
    if (metric_ && rep.train_tick) rep.delay_metric = measure_delay(t);
    return rep;
  }

  std::size_t train_ticks() const { return train_ticks_; }
  std::size_t train_steps() const { return train_steps_; }
  std::size_t underfull_ticks() const { return underfull_; }
  std::size_t publishes() const { return publishes_; }
  std::size_t numeric_errors() const { return numeric_errors_; }

 private:
  std::optional<double> measure_delay(Tti t) {
    if (probes_.empty()) {
      if (buffer_.size() < probe_count_) return std::nullopt;
      for (auto i : buffer_.sample_indices(probe_count_, probe_rng_)) probes_.push_back(buffer_.slot(i).s);
      probe_ptrs_.clear();
      for (const auto& p : probes_) probe_ptrs_.push_back(&p);
    }
    if (!published_q_valid_) {
      published_q_ = q_forward_batch<float>(published_, probe_ptrs_);
      published_q_valid_ = true;
    }
    // Compare against the main net as it would be published, so a fresh
    // sync reads exactly zero.
    const auto qm = q_forward_batch<float>(main_.cast<float>(), probe_ptrs_);
    const double d = static_cast<double>((published_q_ - qm).cwiseAbs().maxCoeff());
    delay_series_.emplace_back(t, d);
    return d;
  }

  Hyperparams h_;
  QNetParams<double> main_;
  QNetParams<double> target_;
  Adam<double> opt_;
  ReplayBuffer<Experience> buffer_;
  std::mt19937_64 rng_;
  std::uint64_t version_ = 0;

  bool metric_ = false;
  std::size_t probe_count_ = 256;
  std::mt19937_64 probe_rng_;
  std::vector<StateWindow> probes_;
  std::vector<const StateWindow*> probe_ptrs_;
  QNetParams<float> published_;
  QNetParams<float>::Matrix published_q_;
  bool published_q_valid_ = false;
  std::vector<std::pair<Tti, double>> delay_series_;

  std::size_t train_ticks_ = 0;
  std::size_t train_steps_ = 0;
  std::size_t underfull_ = 0;
  std::size_t publishes_ = 0;
  std::size_t numeric_errors_ = 0;
};

// ---------------------------------------------------------------------------
// Trainer role: consumes N2 (experience batches and TTI ticks), publishes
// snapshots on N1. Returns on a stop message, a closed channel, or `stop`.

inline void trainer_loop(Learner& learner, MessageChannel& n2, MessageChannel& n1, const std::atomic<bool>& stop,
                         AuditLog* audit = nullptr) {
  while (!stop.load()) {
    std::optional<Frame> f;
    try {
      f = n2.receive(std::chrono::milliseconds(20));
    } catch (const ChannelClosed&) {
      return;
    }
    if (!f) continue;
    if (f->type == MsgType::kExperience) {
      for (auto& e : decode_experiences(*f)) learner.ingest(std::move(e));
      continue;
    }
    if (f->type != MsgType::kControl) continue;
    const auto ctl = decode_control(*f);
    if (ctl.kind == ControlMsg::Kind::kStop) return;
    auto rep = learner.tick(ctl.tti);
    if (audit && rep.train_tick) {
      if (rep.trained) {
        audit->record(ctl.tti, "train", {{"loss", rep.loss}});
      } else {
        audit->record(ctl.tti, rep.underfull ? "train_skip" : "train_error");
      }
    }
    if (audit && rep.delay_metric) audit->record(ctl.tti, "delay_metric", {{"value", *rep.delay_metric}});
    if (rep.published) {
      if (audit) audit->record(ctl.tti, "sync", {{"version", static_cast<std::int64_t>(rep.published->version)}});
      try {
        n1.send(to_frame(*rep.published));
      } catch (const ChannelClosed&) {
        return;
      }
    }
  }
}

// Lowers the calling thread to SCHED_IDLE so it only takes spare CPU. Best effort.
inline bool lower_thread_priority() {
  sched_param p{};
  p.sched_priority = 0;
  return pthread_setschedparam(pthread_self(), SCHED_IDLE, &p) == 0;
}

class TrainerRole {
 public:
  TrainerRole(Learner& learner, MessageChannel& n2, MessageChannel& n1, AuditLog* audit = nullptr,
              bool low_priority = true, std::atomic<bool>* done = nullptr)
      : learner_(learner), n2_(n2), n1_(n1), audit_(audit), low_priority_(low_priority), done_(done) {}

  ~TrainerRole() { stop(); }
  TrainerRole(const TrainerRole&) = delete;
  TrainerRole& operator=(const TrainerRole&) = delete;

  void start() {
    thread_ = std::thread([this] {
      if (low_priority_) lower_thread_priority();
      trainer_loop(learner_, n2_, n1_, stop_, audit_);
      if (done_) done_->store(true);
    });
  }

  // Waits for the loop to drain a stop message already sent on N2.
  void join() {
    if (thread_.joinable()) thread_.join();
  }

  void stop() {
    stop_.store(true);
    join();
  }

 private:
  Learner& learner_;
  MessageChannel& n2_;
  MessageChannel& n1_;
  AuditLog* audit_;
  bool low_priority_;
  std::atomic<bool>* done_;
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

}  // namespace dcla
