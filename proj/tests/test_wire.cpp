#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "dcla/transport.hpp"
#include "dcla/wire.hpp"

using namespace dcla;
using namespace std::chrono_literals;

namespace {

Experience sample_experience(Tti t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Experience e;
  e.origin_tti = t;
  e.a = McsIndex{static_cast<int>(t % 28)};
  e.r = u(rng) * 300.0;
  for (int i = 0; i < 21; ++i) {
    e.s.frames.push_back({u(rng), 1.0, u(rng), u(rng)});
    e.s_next.frames.push_back({u(rng), 0.0, u(rng), u(rng)});
  }
  return e;
}

}  // namespace

TEST(Framing, ByteLayout) {
  const Frame f{MsgType::kExperience, {0xAA, 0xBB}};
  const auto bytes = encode_frame(f);
  EXPECT_EQ(bytes, (std::vector<std::uint8_t>{3, 0, 0, 0, 2, 0xAA, 0xBB}));
  std::size_t used = 0;
  const auto back = decode_frame(bytes, used);
  ASSERT_TRUE(back);
  EXPECT_EQ(used, bytes.size());
  EXPECT_EQ(back->type, MsgType::kExperience);
  EXPECT_EQ(back->payload, f.payload);
}

TEST(Framing, PartialAndBadInput) {
  const auto bytes = encode_frame({MsgType::kControl, {1, 2, 3, 4}});
  std::size_t used = 99;
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    EXPECT_FALSE(decode_frame(std::span(bytes).first(n), used));
    EXPECT_EQ(used, 0u);
  }
  std::vector<std::uint8_t> bad_type = {1, 0, 0, 0, 9};
  EXPECT_THROW(decode_frame(bad_type, used), WireError);
  std::vector<std::uint8_t> zero_len = {0, 0, 0, 0};
  EXPECT_THROW(decode_frame(zero_len, used), WireError);
}

TEST(Framing, BackToBackFrames) {
  auto a = encode_frame({MsgType::kParams, {7}});
  const auto b = encode_frame({MsgType::kControl, {}});
  a.insert(a.end(), b.begin(), b.end());
  std::size_t used = 0;
  const auto f1 = decode_frame(a, used);
  ASSERT_TRUE(f1);
  EXPECT_EQ(f1->type, MsgType::kParams);
  const auto f2 = decode_frame(std::span(a).subspan(used), used);
  ASSERT_TRUE(f2);
  EXPECT_EQ(f2->type, MsgType::kControl);
  EXPECT_TRUE(f2->payload.empty());
}

TEST(ParamMsg, LayoutAndRoundTrip) {
  std::mt19937_64 rng(1);
  const auto p = QNetParams<float>::random(8, rng);
  const auto msg = make_param_msg(42, p);
  ByteReader r(msg.payload);
  r.u32();
  EXPECT_EQ(r.u32(), 15u);
  EXPECT_EQ(r.str(), "gru.w_z");
  EXPECT_EQ(r.u32(), 8u);
  EXPECT_EQ(r.u32(), 4u);

  const auto frame = to_frame(msg);
  const auto back = param_msg_from_frame(frame);
  EXPECT_EQ(back.version, 42u);
  const auto q = decode_params<float>(back);
  for (int i = 0; i < QNetParams<float>::kCount; ++i) EXPECT_EQ(q.tensor(i), p.tensor(i));
}

TEST(ParamMsg, CorruptionIsDetected) {
  std::mt19937_64 rng(2);
  const auto p = QNetParams<float>::random(8, rng);
  auto msg = make_param_msg(1, p);
  msg.payload.back() ^= 0x01;
  EXPECT_THROW(decode_params<float>(msg), WireError);

  auto truncated = make_param_msg(1, p);
  truncated.payload.resize(truncated.payload.size() - 4);
  EXPECT_THROW(decode_params<float>(truncated), WireError);

  auto renamed = make_param_msg(1, p);
  renamed.payload[10] = 'X';  // inside the first tensor name
  EXPECT_THROW(decode_params<float>(renamed), WireError);
}

TEST(Experiences, RoundTripBitExact) {
  std::mt19937_64 rng(3);
  std::vector<Experience> batch;
  for (Tti t = 0; t < 5; ++t) batch.push_back(sample_experience(t, rng));
  const auto back = decode_experiences(encode_experiences(batch));
  ASSERT_EQ(back.size(), batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(back[i].origin_tti, batch[i].origin_tti);
    EXPECT_EQ(back[i].a, batch[i].a);
    EXPECT_EQ(back[i].r, batch[i].r);
    EXPECT_EQ(back[i].s, batch[i].s);
    EXPECT_EQ(back[i].s_next, batch[i].s_next);
  }
  auto f = encode_experiences(batch);
  f.payload.push_back(0);
  EXPECT_THROW(decode_experiences(f), WireError);
}

TEST(Control, RoundTrip) {
  const auto c = decode_control(encode_control({ControlMsg::Kind::kStop, 123456789012LL}));
  EXPECT_EQ(c.kind, ControlMsg::Kind::kStop);
  EXPECT_EQ(c.tti, 123456789012LL);
  EXPECT_THROW(decode_control(Frame{MsgType::kControl, {9, 0, 0, 0, 0, 0, 0, 0, 0}}), WireError);
}

TEST(InProcessChannel, OrderTimeoutAndClose) {
  InProcessChannel ch;
  EXPECT_FALSE(ch.receive(1ms));
  for (std::uint8_t i = 0; i < 5; ++i) ch.send({MsgType::kControl, {i}});
  for (std::uint8_t i = 0; i < 5; ++i) EXPECT_EQ(ch.receive(1ms)->payload[0], i);
  ch.send({MsgType::kControl, {9}});
  ch.close();
  EXPECT_EQ(ch.receive(1ms)->payload[0], 9);  // drained before reporting closed
  EXPECT_THROW(ch.receive(1ms), ChannelClosed);
  EXPECT_THROW(ch.send({}), ChannelClosed);
}

TEST(TcpChannel, LoopbackPreservesOrderAndContent) {
  auto [tx, rx] = tcp_loopback_pair();
  std::mt19937_64 rng(4);
  const auto p = QNetParams<float>::random(64, rng);
  std::vector<Experience> batch;
  for (Tti t = 0; t < 40; ++t) batch.push_back(sample_experience(t, rng));

  std::thread sender([&, &tx = tx] {
    for (std::uint64_t v = 1; v <= 5; ++v) tx->send(to_frame(make_param_msg(v, p)));
    tx->send(encode_experiences(batch));
    tx->send(encode_control({ControlMsg::Kind::kStop, 7}));
  });
  for (std::uint64_t v = 1; v <= 5; ++v) {
    const auto f = rx->receive(2000ms);
    ASSERT_TRUE(f);
    const auto msg = param_msg_from_frame(*f);
    EXPECT_EQ(msg.version, v);
    EXPECT_EQ(decode_params<float>(msg).tensor(QNetParams<float>::kOutW), p[QNetParams<float>::kOutW]);
  }
  const auto e = decode_experiences(*rx->receive(2000ms));
  EXPECT_EQ(e.size(), 40u);
  EXPECT_EQ(e[39].s, batch[39].s);
  EXPECT_EQ(decode_control(*rx->receive(2000ms)).tti, 7);
  sender.join();
  EXPECT_FALSE(rx->receive(5ms));
  tx->close();
  EXPECT_THROW(rx->receive(500ms), ChannelClosed);
}

TEST(TcpChannel, ConnectRetriesThenGivesUp) {
  std::uint16_t port = 0;
  {
    TcpListener l;
    port = l.port();
  }
  EXPECT_THROW(tcp_connect(port, 3, 1ms), ChannelClosed);
}
