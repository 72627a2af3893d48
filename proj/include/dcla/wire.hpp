#pragma once

#include <boost/crc.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcla/features.hpp"
#include "dcla/qnet.hpp"

// Binary formats shared by the in-process and TCP transports. Every integer
// and float is little-endian.
//
// TCP frame:      u32 length | u8 type | payload        (length = 1 + payload size)
// N1 ParamMsg:    u64 version | u32 crc32(float data) | u32 tensor count
//                 | { u16 name len | name | u32 rows | u32 cols } * count
//                 | f32 data, tensors in manifest order, row-major
// N2 Experience:  u32 count | { i64 origin tti | u8 action | f64 reward
//                 | u16 frames | f64[4 * frames] s | f64[4 * frames] s_next } * count
// Control:        u8 kind | i64 tti

namespace dcla {

class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MsgType : std::uint8_t { kParams = 1, kExperience = 2, kControl = 3 };

struct Frame {
  MsgType type = MsgType::kControl;
  std::vector<std::uint8_t> payload;
};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void str(std::string_view s) {
    u16(static_cast<std::uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  std::vector<std::uint8_t>& buffer() { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> rest() const { return data_.subspan(pos_); }
  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw WireError("truncated message");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// --- TCP framing ------------------------------------------------------------

inline std::vector<std::uint8_t> encode_frame(const Frame& f) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(f.payload.size() + 1));
  w.u8(static_cast<std::uint8_t>(f.type));
  w.bytes(f.payload);
  return w.take();
}

// Parses one frame from the front of a byte stream; nullopt if incomplete.
inline std::optional<Frame> decode_frame(std::span<const std::uint8_t> data, std::size_t& consumed) {
  consumed = 0;
  if (data.size() < 4) return std::nullopt;
  ByteReader r(data);
  const std::uint32_t len = r.u32();
  if (len < 1) throw WireError("frame length must cover the type byte");
  if (data.size() < 4 + static_cast<std::size_t>(len)) return std::nullopt;
  const std::uint8_t type = r.u8();
  if (type < 1 || type > 3) throw WireError("unknown message type " + std::to_string(type));
  Frame f;
  f.type = static_cast<MsgType>(type);
  f.payload.assign(data.begin() + 5, data.begin() + 4 + len);
  consumed = 4 + static_cast<std::size_t>(len);
  return f;
}

// --- N1: parameter snapshots -----------------------------------------------

struct ParamMsg {
  std::uint64_t version = 0;
  std::vector<std::uint8_t> payload;  // crc | manifest | f32 data
};

inline std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

template <typename Scalar>
ParamMsg make_param_msg(std::uint64_t version, const QNetParams<Scalar>& params) {
  using P = QNetParams<Scalar>;
  ByteWriter data;
  for (int i = 0; i < P::kCount; ++i) {
    const auto& m = params.tensor(i);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.f32(static_cast<float>(m(r, c)));
  }
  ByteWriter w;
  w.u32(crc32(data.buffer()));
  w.u32(static_cast<std::uint32_t>(P::kCount));
  for (int i = 0; i < P::kCount; ++i) {
    w.str(P::kNames[i]);
    w.u32(static_cast<std::uint32_t>(params.tensor(i).rows()));
    w.u32(static_cast<std::uint32_t>(params.tensor(i).cols()));
  }
  w.bytes(data.buffer());
  return {version, w.take()};
}

// Decodes into dst, reshaping it if needed. Manifest and checksum are verified
// before dst is touched; throws WireError on failure.
template <typename Scalar>
void decode_params_into(const ParamMsg& msg, QNetParams<Scalar>& dst) {
  using P = QNetParams<Scalar>;
  ByteReader r(msg.payload);
  const std::uint32_t crc = r.u32();
  const std::uint32_t count = r.u32();
  if (count != static_cast<std::uint32_t>(P::kCount)) throw WireError("param manifest: wrong tensor count");
  std::array<std::pair<std::uint32_t, std::uint32_t>, P::kCount> dims{};
  for (int i = 0; i < P::kCount; ++i) {
    const auto name = r.str();
    dims[i].first = r.u32();
    dims[i].second = r.u32();
    if (name != P::kNames[i]) throw WireError("param manifest: unexpected tensor " + name);
  }
  const int hidden = static_cast<int>(dims[P::kUz].first);
  if (hidden < 1) throw WireError("param manifest: bad hidden width");
  for (int i = 0; i < P::kCount; ++i) {
    const auto [er, ec] = P::shape_of(static_cast<typename P::Tensor>(i), hidden);
    if (dims[i].first != er || dims[i].second != ec)
      throw WireError("param manifest: bad shape for " + std::string(P::kNames[i]));
  }
  const auto data = r.rest();
  if (crc32(data) != crc) throw WireError("param snapshot checksum mismatch");
  if (dst.empty() || dst.hidden() != hidden) dst = P(hidden);
  if (data.size() != dst.num_scalars() * 4) throw WireError("param snapshot has wrong data length");
  ByteReader d(data);
  for (int i = 0; i < P::kCount; ++i) {
    auto& m = dst.tensor(i);
    for (Eigen::Index row = 0; row < m.rows(); ++row)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(row, c) = static_cast<Scalar>(d.f32());
  }
}

template <typename Scalar = float>
QNetParams<Scalar> decode_params(const ParamMsg& msg) {
  QNetParams<Scalar> out;
  decode_params_into(msg, out);
  return out;
}

inline Frame to_frame(const ParamMsg& msg) {
  ByteWriter w;
  w.u64(msg.version);
  w.bytes(msg.payload);
  return {MsgType::kParams, w.take()};
}

inline ParamMsg param_msg_from_frame(const Frame& f) {
  if (f.type != MsgType::kParams) throw WireError("not a parameter frame");
  ByteReader r(f.payload);
  ParamMsg msg;
  msg.version = r.u64();
  const auto rest = r.rest();
  msg.payload.assign(rest.begin(), rest.end());
  return msg;
}

// --- N2: experience batches ------------------------------------------------

namespace detail {
inline void write_window(ByteWriter& w, const StateWindow& s) {
  for (const auto& z : s.frames) {
    w.f64(z.c);
    w.f64(z.ack);
    w.f64(z.m);
    w.f64(z.delta);
  }
}
inline StateWindow read_window(ByteReader& r, std::size_t frames) {
  StateWindow s;
  s.frames.resize(frames);
  for (auto& z : s.frames) {
    z.c = r.f64();
    z.ack = r.f64();
    z.m = r.f64();
    z.delta = r.f64();
  }
  return s;
}
}  // namespace detail

inline Frame encode_experiences(std::span<const Experience> batch) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(batch.size()));
  for (const auto& e : batch) {
    if (e.s.length() != e.s_next.length()) throw WireError("experience windows differ in length");
    w.i64(e.origin_tti);
    w.u8(static_cast<std::uint8_t>(e.a.value()));
    w.f64(e.r);
    w.u16(static_cast<std::uint16_t>(e.s.length()));
    detail::write_window(w, e.s);
    detail::write_window(w, e.s_next);
  }
  return {MsgType::kExperience, w.take()};
}

inline std::vector<Experience> decode_experiences(const Frame& f) {
  if (f.type != MsgType::kExperience) throw WireError("not an experience frame");
  ByteReader r(f.payload);
  const auto count = r.u32();
  std::vector<Experience> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Experience e;
    e.origin_tti = r.i64();
    const int a = r.u8();
    if (a > kMaxMcs) throw WireError("experience action out of range");
    e.a = McsIndex{a};
    e.r = r.f64();
    const auto frames = r.u16();
    e.s = detail::read_window(r, frames);
    e.s_next = detail::read_window(r, frames);
    out.push_back(std::move(e));
  }
  if (!r.at_end()) throw WireError("trailing bytes in experience batch");
  return out;
}

// --- control ---------------------------------------------------------------

struct ControlMsg {
  enum class Kind : std::uint8_t { kTick = 1, kStop = 2 };
  Kind kind = Kind::kTick;
  Tti tti = 0;
};

inline Frame encode_control(const ControlMsg& c) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(c.kind));
  w.i64(c.tti);
  return {MsgType::kControl, w.take()};
}

inline ControlMsg decode_control(const Frame& f) {
  if (f.type != MsgType::kControl) throw WireError("not a control frame");
  ByteReader r(f.payload);
  ControlMsg c;
  const auto kind = r.u8();
  if (kind != 1 && kind != 2) throw WireError("unknown control kind");
  c.kind = static_cast<ControlMsg::Kind>(kind);
  c.tti = r.i64();
  return c;
}

}  // namespace dcla
