#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "dcla/dcdqn_agent.hpp"
#include "dcla/features.hpp"
#include "dcla/harq_sim.hpp"
#include "dcla/replay_buffer.hpp"
#include "test_support.hpp"

using namespace dcla;

TEST(Reward, Examples) {
  EXPECT_DOUBLE_EQ(reward(10000, 1, 50, true), 200.0);
  EXPECT_DOUBLE_EQ(reward(10000, 2, 50, true), 100.0);
  EXPECT_DOUBLE_EQ(reward(10000, 3, 50, false), -0.06);
  EXPECT_THROW(reward(10000, 0, 50, true), std::invalid_argument);
  EXPECT_THROW(reward(10000, 1, 0, true), std::invalid_argument);
}

TEST(Reward, SignFollowsAck) {
  for (int rtx = 1; rtx <= 4; ++rtx)
    for (std::int64_t tb : {1125, 20000, 41625}) {
      EXPECT_GT(reward(tb, rtx, 50, true), 0.0);
      EXPECT_LT(reward(tb, rtx, 50, false), 0.0);
    }
}

TEST(BuildFrame, Examples) {
  EXPECT_EQ(build_frame(CqiValue{15}, true, McsIndex{27}, CqiValue{15}), (FeatureFrame{1.0, 1.0, 1.0, 0.0}));
  EXPECT_NEAR(build_frame(CqiValue{7}, false, McsIndex{3}, CqiValue{9}).delta, -2.0 / 15.0, 1e-15);
  EXPECT_NEAR(build_frame(CqiValue{7}, false, McsIndex{3}, CqiValue{9}).delta, -0.1333, 1e-4);
  EXPECT_EQ(build_frame(CqiValue{0}, false, McsIndex{0}, CqiValue{0}), (FeatureFrame{0, 0, 0, 0}));
  for (int c = 0; c <= 15; ++c)
    for (int p = 0; p <= 15; ++p) {
      const auto z = build_frame(CqiValue{c}, true, McsIndex{27}, CqiValue{p});
      ASSERT_LE(std::abs(z.delta), 1.0);
      ASSERT_LE(z.c, 1.0);
    }
}

namespace {
// Frame whose c field carries the TTI, so windows can be read back.
FeatureFrame tag(Tti t) { return {static_cast<double>(t), 0, 0, 0}; }
}  // namespace

TEST(ObservationLog, WindowIsNewestFirstAndZeroPadded) {
  ObservationLog log(3, 4, 8, 50);
  for (Tti t = 0; t < 2; ++t) log.record_frame(t, tag(t + 1));
  const auto s = log.window(1);
  ASSERT_EQ(s.length(), 4u);
  EXPECT_EQ(s.frames[0].c, 2.0);
  EXPECT_EQ(s.frames[1].c, 1.0);
  EXPECT_EQ(s.frames[2].c, 0.0);
  EXPECT_EQ(s.frames[3].c, 0.0);
  EXPECT_THROW(log.record_frame(5, tag(5)), AlignmentError);
  EXPECT_THROW(log.window(7), AlignmentError);
}

TEST(AlignExperience, DefaultDelayIndices) {
  ObservationLog log(20, 4, 8, 50);
  for (Tti t = 0; t <= 112; ++t) {
    log.record_frame(t, tag(t));
    if (t == 112) log.record_feedback({112, true, McsIndex{9}, 5000, 1, 104});
  }
  const auto e = align_experience(log, 100, 4, 8);
  EXPECT_EQ(e.s.frames[0].c, 100.0);
  EXPECT_EQ(e.s.frames[20].c, 80.0);
  EXPECT_EQ(e.s_next.frames[0].c, 112.0);
  EXPECT_EQ(e.a.value(), 9);
  EXPECT_DOUBLE_EQ(e.r, 100.0);
  EXPECT_EQ(e.origin_tti, 100);
}

TEST(AlignExperience, ZeroDelays) {
  ObservationLog log(2, 0, 0, 50);
  log.record_frame(0, tag(0));
  log.record_frame(1, tag(1));
  log.record_feedback({1, false, McsIndex{2}, 3000, 1, 1});
  const auto e = align_experience(log, 1, 0, 0);
  EXPECT_EQ(e.s, e.s_next);
  EXPECT_DOUBLE_EQ(e.r, -1.0 / 50.0);
}

TEST(AlignExperience, MissingEntriesAreErrors) {
  ObservationLog log(2, 4, 8, 50);
  for (Tti t = 0; t <= 20; ++t) log.record_frame(t, tag(t));
  EXPECT_THROW(align_experience(log, 5, 4, 8), AlignmentError);  // no feedback
  log.record_feedback({15, true, McsIndex{1}, 10, 1, 9});           // delivered late
  EXPECT_THROW(align_experience(log, 5, 4, 8), AlignmentError);
}

// Every experience the agent builds binds the action sent at t + d_tx and the
// feedback delivered at t + d_tx + d_ack, checked against the simulator audit.
TEST(AlignExperience, ExhaustiveAuditAgainstSimulator) {
  const auto trace = generate_trace(TraceKind::kMobile, 3000, 4);
  SimConfig cfg;
  cfg.tti_count = 3000;
  Hyperparams h;
  h.hidden = 8;
  RuntimeOptions opts;
  opts.training = false;
  DcDqnAgent agent(h, {cfg.d_tx, cfg.d_ack, cfg.n_rb}, opts, 3);
  std::vector<Experience> seen;
  agent.experience_tap = [&](const Experience& e) { seen.push_back(e); };
  Simulator sim(trace, agent, cfg, true);
  sim.run();
  const auto& audit = sim.audit();
  std::map<Tti, FeedbackEvent> fb;
  for (const auto& f : audit.feedback_events) fb[f.origin_tti] = f;

  ASSERT_GT(seen.size(), 2900u);
  int retx = 0;
  for (const auto& e : seen) {
    const Tti t = e.origin_tti;
    const auto& tx = audit.transmissions.at(static_cast<std::size_t>(t + cfg.d_tx));
    const auto& f = fb.at(t + cfg.d_tx);
    ASSERT_EQ(f.tti_delivered, t + cfg.d_tx + cfg.d_ack);
    ASSERT_EQ(e.a, tx.mcs);
    ASSERT_EQ(f.rtx_count, tx.n_tx);
    ASSERT_DOUBLE_EQ(e.r, reward(tx.tb_bits, tx.n_tx, cfg.n_rb, f.ack));
    if (tx.n_tx > 1) ++retx;
    // s_next overlaps s shifted by d_tx + d_ack
    for (int k = 0; k + cfg.d_tx + cfg.d_ack <= h.history; ++k)
      ASSERT_EQ(e.s_next.frames[k + cfg.d_tx + cfg.d_ack], e.s.frames[k]);
  }
  EXPECT_GT(retx, 0);
}

TEST(ReplayBuffer, EvictsOldestFirst) {
  ReplayBuffer<int> b(3);
  for (int i = 0; i < 5; ++i) b.push(i);
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(b.at(0), 2);
  EXPECT_EQ(b.at(2), 4);
  EXPECT_THROW(ReplayBuffer<int>(0), std::invalid_argument);
}

TEST(ReplayBuffer, SamplesWithoutReplacement) {
  ReplayBuffer<int> b(100);
  for (int i = 0; i < 100; ++i) b.push(i);
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    auto s = b.sample(64, rng);
    std::set<int> uniq;
    for (auto* p : s) uniq.insert(*p);
    ASSERT_EQ(uniq.size(), 64u);
  }
  EXPECT_THROW(b.sample(101, rng), std::invalid_argument);
}

TEST(ReplayBuffer, UniformOverFullBuffer) {
  constexpr int kCap = 100;
  ReplayBuffer<int> b(kCap);
  for (int i = 0; i < kCap + 37; ++i) b.push(i);
  std::mt19937_64 rng(11);
  std::vector<long> hits(kCap + 37, 0);
  constexpr int kDraws = 1000000;
  constexpr int kBatch = 10;
  for (int i = 0; i < kDraws / kBatch; ++i)
    for (auto* p : b.sample(kBatch, rng)) ++hits[*p];
  const double p = 1.0 / kCap;
  const double expect = kDraws * p;
  const double sigma = std::sqrt(kDraws * p * (1 - p));
  for (int i = 0; i < 37; ++i) EXPECT_EQ(hits[i], 0);
  for (int i = 37; i < kCap + 37; ++i) EXPECT_NEAR(hits[i], expect, 3 * sigma) << i;
}
