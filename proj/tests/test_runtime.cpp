#include <gtest/gtest.h>

#include <atomic>
#include <sstream>
#include <thread>

#include "dcla/dcdqn_agent.hpp"
#include "dcla/harq_sim.hpp"
#include "dcla/runtime.hpp"

using namespace dcla;
using namespace std::chrono_literals;

namespace {

using PF = QNetParams<float>;

// Net whose Q-values are all equal to `v`: a torn load shows up as unequal Q's.
PF constant_net(float v, int hidden = 16) {
  PF p(hidden);
  p[PF::kOutB].setConstant(v);
  return p;
}

StateWindow some_window(int frames = 21) {
  StateWindow s;
  for (int i = 0; i < frames; ++i) s.frames.push_back({0.1 * (i % 7), double(i % 2), 0.3, 0.0});
  return s;
}

Hyperparams small_hyper() {
  Hyperparams h;
  h.hidden = 16;
  return h;
}

std::string metrics_csv(const MetricsLog& log) {
  std::ostringstream os;
  write_metrics_csv(os, log);
  return os.str();
}

}  // namespace

TEST(DecisionPair, ReadersNeverSeeATornNet) {
  DecisionPair pair(constant_net(0.0f), 0);
  std::atomic<bool> loading{false};
  std::atomic<long> reads_during_load{0};
  pair.on_loaded = [&] {
    loading = true;
    std::this_thread::sleep_for(200us);
    loading = false;
  };
  std::atomic<bool> done{false};
  std::atomic<long> reads{0};
  std::atomic<long> torn{0};
  const auto s = some_window();
  std::thread reader([&] {
    while (!done) {
      auto lease = pair.acquire();
      const bool during = loading;
      const auto q = q_forward(lease.net(), s);
      for (float v : q)
        if (v != q[0] || v != static_cast<float>(lease.version())) ++torn;
      ++reads;
      if (during) ++reads_during_load;
    }
  });
  for (std::uint64_t v = 1; v <= 300; ++v) {
    ASSERT_EQ(pair.apply_params(make_param_msg(v, constant_net(static_cast<float>(v)))),
              DecisionPair::ApplyResult::kApplied);
    std::this_thread::yield();
  }
  done = true;
  reader.join();
  EXPECT_EQ(torn.load(), 0);
  EXPECT_GT(reads.load(), 0);
  EXPECT_EQ(pair.version(), 300u);
  EXPECT_EQ(pair.swaps(), 300u);
}

TEST(DecisionPair, LatestVersionWinsAndStaleIsDropped) {
  DecisionPair pair(constant_net(0.0f), 0);
  EXPECT_EQ(pair.apply_params(make_param_msg(1, constant_net(1.0f))), DecisionPair::ApplyResult::kApplied);
  EXPECT_EQ(pair.apply_params(make_param_msg(2, constant_net(2.0f))), DecisionPair::ApplyResult::kApplied);
  EXPECT_EQ(pair.apply_params(make_param_msg(2, constant_net(9.0f))), DecisionPair::ApplyResult::kStale);
  EXPECT_EQ(pair.apply_params(make_param_msg(1, constant_net(9.0f))), DecisionPair::ApplyResult::kStale);
  auto lease = pair.acquire();
  EXPECT_EQ(lease.version(), 2u);
  EXPECT_EQ(q_forward(lease.net(), some_window())[0], 2.0f);
}

TEST(DecisionPair, CorruptSnapshotIsRejected) {
  DecisionPair pair(constant_net(0.0f), 0);
  auto msg = make_param_msg(1, constant_net(5.0f));
  msg.payload[msg.payload.size() - 3] ^= 0x40;
  EXPECT_EQ(pair.apply_params(msg), DecisionPair::ApplyResult::kRejected);
  EXPECT_EQ(pair.version(), 0u);
  EXPECT_EQ(q_forward(pair.acquire().net(), some_window())[0], 0.0f);
}

TEST(DecisionPair, SwappedNetMatchesTrainerSnapshot) {
  std::mt19937_64 rng(5);
  const auto main = QNetParams<double>::random(64, rng);
  DecisionPair pair(constant_net(0.0f, 64), 0);
  pair.apply_params(make_param_msg(1, main));
  const auto kept = main.cast<float>();  // what the trainer sent
  auto lease = pair.acquire();
  for (int i = 0; i < 20; ++i) {
    StateWindow s;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 21; ++k) s.frames.push_back({u(rng), u(rng) > 0.5 ? 1.0 : 0.0, u(rng), u(rng) - 0.5});
    EXPECT_EQ(q_forward(lease.net(), s), q_forward(kept, s));
    const auto qd = q_forward(main, s);
    const auto qf = q_forward(lease.net(), s);
    for (int a = 0; a < kNumMcs; ++a) EXPECT_NEAR(qf[a], qd[a], 1e-4);
  }
}

TEST(InferenceRole, HealthyNetAnswers) {
  PF p(16);
  p[PF::kOutB](13, 0) = 1.0f;
  DecisionPair pair(p, 0);
  InferenceRole role(pair, 1);
  for (int i = 0; i < 50; ++i) {
    const auto r = role.request_decision(some_window(), 0.0, 50ms, McsIndex{2});
    EXPECT_FALSE(r.used_fallback);
    EXPECT_EQ(r.mcs.value(), 13);
  }
  const auto st = role.stats();
  EXPECT_EQ(st.latency_us.size(), 50u);
  EXPECT_EQ(st.fallbacks, 0u);
}

TEST(InferenceRole, StallFallsBackToPreviousMcs) {
  PF p(16);
  p[PF::kOutB](13, 0) = 1.0f;
  DecisionPair pair(p, 0);
  AuditLog audit;
  InferenceRole role(pair, 1, &audit);
  role.set_stall_hook([] { std::this_thread::sleep_for(3ms); });
  const auto r = role.request_decision(some_window(), 0.0, 500us, McsIndex{7}, 42);
  EXPECT_TRUE(r.used_fallback);
  EXPECT_EQ(r.mcs.value(), 7);
  EXPECT_GE(r.latency, 500us);
  role.set_stall_hook({});
  std::this_thread::sleep_for(10ms);  // the late answer lands and is discarded
  const auto ok = role.request_decision(some_window(), 0.0, 1s, McsIndex{7}, 43);
  EXPECT_FALSE(ok.used_fallback);
  EXPECT_EQ(ok.mcs.value(), 13);
  EXPECT_EQ(role.stats().fallbacks, 1u);
  EXPECT_EQ(audit.count("fallback"), 1u);
  EXPECT_EQ(audit.count("late_answer"), 1u);
}

TEST(InferenceRole, NoDeadlineNeverFallsBack) {
  DecisionPair pair(constant_net(0.0f), 0);
  InferenceRole role(pair, 1);
  role.set_stall_hook([] { std::this_thread::sleep_for(2ms); });
  for (int i = 0; i < 5; ++i) EXPECT_FALSE(role.request_decision(some_window(), 0.0, kNoDeadline, McsIndex{7}).used_fallback);
  EXPECT_EQ(role.stats().fallbacks, 0u);
}

TEST(InferenceRole, LoaderAppliesAndAuditsStaleVersions) {
  DecisionPair pair(constant_net(0.0f), 0);
  AuditLog audit;
  InProcessChannel n1;
  InferenceRole role(pair, 1, &audit);
  role.attach_param_channel(n1);
  n1.send(to_frame(make_param_msg(2, constant_net(2.0f))));
  n1.send(to_frame(make_param_msg(1, constant_net(1.0f))));
  n1.send(to_frame(make_param_msg(3, constant_net(3.0f))));
  ASSERT_TRUE(pair.wait_for_version(3, 2000ms));
  n1.close();
  role.stop();
  EXPECT_EQ(audit.count("swap"), 2u);
  EXPECT_EQ(audit.count("stale_param"), 1u);
}

TEST(Learner, TickCadence) {
  Hyperparams h = small_hyper();
  h.batch_size = 8;
  Learner learner(h, 3);
  std::mt19937_64 rng(1);
  int trained = 0, skipped = 0, published = 0;
  for (Tti t = 0; t < 5000; ++t) {
    if (t >= 100) {
      Experience e;
      e.s = some_window();
      e.s_next = some_window();
      e.a = McsIndex{static_cast<int>(t % 28)};
      e.r = 10.0;
      learner.ingest(e);
    }
    const auto rep = learner.tick(t);
    trained += rep.trained;
    skipped += rep.underfull;
    if (rep.published) {
      ++published;
      EXPECT_EQ(rep.published->version, static_cast<std::uint64_t>(published));
    }
  }
  EXPECT_EQ(trained + skipped, 100);
  EXPECT_EQ(skipped, 3);  // t = 0, 50, 100 before 8 experiences arrive
  EXPECT_EQ(published, 10);
}

TEST(Learner, EmptyBufferNeverTrains) {
  Learner learner(small_hyper(), 3);
  const auto before = learner.main().flatten();
  for (Tti t = 0; t < 2000; ++t) learner.tick(t);
  EXPECT_EQ(learner.train_steps(), 0u);
  EXPECT_EQ(learner.underfull_ticks(), 40u);
  EXPECT_EQ(learner.main().flatten(), before);
}

TEST(DelayMetric, HandBuiltPerturbation) {
  std::mt19937_64 rng(9);
  const auto main = QNetParams<double>::random(16, rng);
  auto decision = main;
  decision[QNetParams<double>::kOutB](3, 0) += 0.5;
  std::vector<StateWindow> probes(10, some_window());
  std::vector<const StateWindow*> ptrs;
  for (auto& s : probes) ptrs.push_back(&s);
  EXPECT_DOUBLE_EQ(estimate_delay_metric(main, decision, ptrs), 0.5);
  EXPECT_EQ(estimate_delay_metric(main, main, ptrs), 0.0);
  EXPECT_THROW(estimate_delay_metric(main, main, std::span<const StateWindow* const>{}), std::invalid_argument);
}

TEST(DelayMetric, ZeroAtEverySync) {
  const auto trace = generate_trace(TraceKind::kMobile, 4000, 2);
  SimConfig cfg;
  cfg.tti_count = 4000;
  Hyperparams h = small_hyper();
  RuntimeOptions opts;
  opts.delay_metric = true;
  DcDqnAgent agent(h, {cfg.d_tx, cfg.d_ack, cfg.n_rb}, opts, 4);
  run(trace, agent, cfg);
  const auto& series = agent.learner().delay_series();
  ASSERT_GT(series.size(), 40u);
  int at_sync = 0;
  bool positive = false;
  for (const auto& [t, d] : series) {
    ASSERT_GE(d, 0.0);
    if (t % h.update_interval == 0) {
      EXPECT_EQ(d, 0.0) << t;
      ++at_sync;
    } else if (d > 0.0) {
      positive = true;
    }
  }
  EXPECT_GT(at_sync, 5);
  EXPECT_TRUE(positive);
}

TEST(DcDqnAgent, AuditCountsOverFiveThousandTtis) {
  for (auto mode : {RuntimeMode::kLockstep, RuntimeMode::kTwoRole}) {
    const auto trace = generate_trace(TraceKind::kMobile, 5000, 2);
    SimConfig cfg;
    cfg.tti_count = 5000;
    RuntimeOptions opts;
    opts.mode = mode;
    DcDqnAgent agent(small_hyper(), {cfg.d_tx, cfg.d_ack, cfg.n_rb}, opts, 4);
    run(trace, agent, cfg);
    agent.finish();
    auto& audit = agent.audit();
    EXPECT_EQ(audit.count("train") + audit.count("train_skip"), 100u);
    EXPECT_EQ(audit.count("sync"), 10u);
    EXPECT_EQ(audit.count("swap"), 10u);
    EXPECT_EQ(agent.learner().publishes(), 10u);
    EXPECT_EQ(agent.decision_pair().version(), 10u);
  }
}

// Same event order, no deadlines: the threaded roles must reproduce the
// single-threaded run decision for decision.
TEST(DcDqnAgent, TwoRoleMatchesLockstep) {
  const auto trace = generate_trace(TraceKind::kMobile, 3000, 7);
  SimConfig cfg;
  cfg.tti_count = 3000;
  auto go = [&](RuntimeMode mode, TransportKind transport) {
    RuntimeOptions opts;
    opts.mode = mode;
    opts.transport = transport;
    DcDqnAgent agent(small_hyper(), {cfg.d_tx, cfg.d_ack, cfg.n_rb}, opts, 11);
    auto log = run(trace, agent, cfg);
    agent.finish();
    EXPECT_GT(agent.learner().train_steps(), 40u);
    return metrics_csv(log);
  };
  const auto lock = go(RuntimeMode::kLockstep, TransportKind::kInProcess);
  EXPECT_EQ(lock, go(RuntimeMode::kTwoRole, TransportKind::kInProcess));
  EXPECT_EQ(lock, go(RuntimeMode::kTwoRole, TransportKind::kTcp));
}

TEST(DcDqnAgent, LockstepIsDeterministic) {
  const auto trace = generate_trace(TraceKind::kMobile, 2000, 7);
  SimConfig cfg;
  cfg.tti_count = 2000;
  std::string out[2];
  for (auto& o : out) {
    DcDqnAgent agent(small_hyper(), {cfg.d_tx, cfg.d_ack, cfg.n_rb}, {}, 12);
    o = metrics_csv(run(trace, agent, cfg));
  }
  EXPECT_EQ(out[0], out[1]);
}

TEST(TrainerRole, StopLetsTheCurrentStepFinish) {
  Hyperparams h = small_hyper();
  h.batch_size = 4;
  Learner learner(h, 1);
  for (int i = 0; i < 10; ++i) {
    Experience e;
    e.s = some_window();
    e.s_next = some_window();
    e.a = McsIndex{1};
    e.r = 5.0;
    learner.ingest(e);
  }
  std::atomic<bool> in_step{false};
  learner.train_hook = [&] {
    in_step = true;
    std::this_thread::sleep_for(50ms);
  };
  InProcessChannel n2, n1;
  std::atomic<bool> done{false};
  TrainerRole role(learner, n2, n1, nullptr, false, &done);
  role.start();
  n2.send(encode_control({ControlMsg::Kind::kTick, 0}));
  while (!in_step) std::this_thread::sleep_for(1ms);
  role.stop();
  EXPECT_TRUE(done);
  EXPECT_EQ(learner.train_steps(), 1u);
  EXPECT_EQ(learner.publishes(), 1u);
  EXPECT_TRUE(n1.receive(1ms));  // the tick's publish still went out
}

TEST(RuntimeOptions, ParseAndEnv) {
  EXPECT_EQ(parse_runtime_mode("two-role"), RuntimeMode::kTwoRole);
  EXPECT_THROW(parse_runtime_mode("fast"), std::invalid_argument);
  EXPECT_EQ(parse_transport("tcp"), TransportKind::kTcp);
  ::setenv("DCLA_TRANSPORT", "tcp", 1);
  EXPECT_EQ(transport_from_env(TransportKind::kInProcess), TransportKind::kTcp);
  ::unsetenv("DCLA_TRANSPORT");
  EXPECT_EQ(transport_from_env(TransportKind::kInProcess), TransportKind::kInProcess);
}
