#pragma once

#include <cstdint>
#include <string>

#include "dcla/types.hpp"

namespace dcla {

struct CqiReport {
  Tti measured_tti = 0;
  Tti delivered_tti = 0;
  CqiValue cqi;
};

// ACK/NACK for one transmission of a TB, delivered d_ack TTIs after it went out.
struct FeedbackEvent {
  Tti tti_delivered = 0;
  bool ack = false;
  McsIndex mcs;
  std::int64_t tb_bits = 0;
  int rtx_count = 1;  // transmission count of the TB, 1 for a first transmission
  Tti origin_tti = 0;
};

struct Decision {
  McsIndex mcs;
  bool fallback = false;
};

// Contract between the simulator and an MCS-selection agent. Per TTI t the
// simulator calls, in order: on_feedback / on_cqi for everything due at t,
// on_tti(t), decide(t) when a decision is requested, then on_tti_end(t).
// A decision requested at t applies to a new TB transmitted at t + d_tx.
class LinkAdapter {
 public:
  virtual ~LinkAdapter() = default;

  virtual std::string name() const = 0;
  virtual void on_cqi(const CqiReport&) {}
  virtual void on_feedback(const FeedbackEvent&) {}
  virtual void on_tti(Tti) {}
  virtual Decision decide(Tti t) = 0;
  virtual void on_tti_end(Tti) {}
};

}  // namespace dcla
