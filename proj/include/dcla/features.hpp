#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcla/link_adapter.hpp"
#include "dcla/types.hpp"

namespace dcla {

// z = [c/15, ack, m/27, delta_c/15]
struct FeatureFrame {
  double c = 0.0;
  double ack = 0.0;
  double m = 0.0;
  double delta = 0.0;

  friend bool operator==(const FeatureFrame&, const FeatureFrame&) = default;
};

inline constexpr int kFeatureDim = 4;

inline FeatureFrame build_frame(CqiValue c, bool ack, McsIndex m, CqiValue prev_c) {
  return {c.value() / 15.0, ack ? 1.0 : 0.0, m.value() / 27.0, (c.value() - prev_c.value()) / 15.0};
}

// Frames newest first: frames[0] = z_t, frames[l] = z_{t-l}.
struct StateWindow {
  std::vector<FeatureFrame> frames;

  std::size_t length() const { return frames.size(); }
  friend bool operator==(const StateWindow&, const StateWindow&) = default;
};

inline double reward(std::int64_t tb_bits, int rtx, int rb, bool ack) {
  if (rtx < 1) throw std::invalid_argument("reward: rtx must be >= 1");
  if (rb < 1) throw std::invalid_argument("reward: rb must be >= 1");
  if (ack) return static_cast<double>(tb_bits) / (static_cast<double>(rtx) * rb);
  return -static_cast<double>(rtx) / rb;
}

struct Experience {
  StateWindow s;
  McsIndex a;
  double r = 0.0;
  StateWindow s_next;
  Tti origin_tti = 0;  // TTI of s
};

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-TTI feature frames plus feedback keyed by transmission TTI, bounded to
// the horizon experience alignment needs.
class ObservationLog {
 public:
  ObservationLog(int history, int d_tx, int d_ack, int rb)
      : history_(history), d_tx_(d_tx), d_ack_(d_ack), rb_(rb) {
    if (history < 0) throw std::invalid_argument("history length must be >= 0");
  }

  int history() const { return history_; }
  int d_tx() const { return d_tx_; }
  int d_ack() const { return d_ack_; }

  void record_frame(Tti t, const FeatureFrame& z) {
    if (!frames_.empty() && t != first_ + static_cast<Tti>(frames_.size()))
      throw AlignmentError("frames must be recorded for consecutive TTIs");
    if (frames_.empty()) first_ = t;
    frames_.push_back(z);
    const auto keep = static_cast<std::size_t>(history_ + d_tx_ + d_ack_ + 2);
    while (frames_.size() > keep) {
      frames_.pop_front();
      ++first_;
    }
  }

  void record_feedback(const FeedbackEvent& fb) {
    feedback_[fb.origin_tti] = fb;
    while (!feedback_.empty() && feedback_.begin()->first < first_ - d_ack_ - 1) feedback_.erase(feedback_.begin());
  }

  bool has_frame(Tti t) const { return !frames_.empty() && t >= first_ && t < first_ + static_cast<Tti>(frames_.size()); }

  // s_t; frames before the start of the log are zero.
  StateWindow window(Tti t) const {
    if (!has_frame(t)) throw AlignmentError("no frame recorded for TTI " + std::to_string(t));
    StateWindow s;
    s.frames.resize(static_cast<std::size_t>(history_ + 1));
    for (int k = 0; k <= history_; ++k) {
      const Tti tk = t - k;
      if (tk >= first_) s.frames[k] = frames_[static_cast<std::size_t>(tk - first_)];
    }
    return s;
  }

  const FeedbackEvent* feedback_for(Tti origin) const {
    auto it = feedback_.find(origin);
    return it == feedback_.end() ? nullptr : &it->second;
  }

  int rb() const { return rb_; }

 private:
  int history_;
  int d_tx_;
  int d_ack_;
  int rb_;
  Tti first_ = 0;
  std::deque<FeatureFrame> frames_;
  std::map<Tti, FeedbackEvent> feedback_;
};

// [s_t, a_{t+d_tx}, r_{t+d_tx+d_ack}, s_{t+d_tx+d_ack}]
inline Experience align_experience(const ObservationLog& log, Tti t, int d_tx, int d_ack) {
  const Tti tx_tti = t + d_tx;
  const Tti fb_tti = tx_tti + d_ack;
  const FeedbackEvent* fb = log.feedback_for(tx_tti);
  if (fb == nullptr) throw AlignmentError("no feedback for transmission at TTI " + std::to_string(tx_tti));
  if (fb->tti_delivered != fb_tti)
    throw AlignmentError("feedback for TTI " + std::to_string(tx_tti) + " delivered at " +
                         std::to_string(fb->tti_delivered) + ", expected " + std::to_string(fb_tti));
  Experience e;
  e.s = log.window(t);
  e.a = fb->mcs;
  e.r = reward(fb->tb_bits, fb->rtx_count, log.rb(), fb->ack);
  e.s_next = log.window(fb_tti);
  e.origin_tti = t;
  return e;
}

}  // namespace dcla
