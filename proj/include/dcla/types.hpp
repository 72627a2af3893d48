#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dcla {

// One TTI is 1 ms throughout the library.
using Tti = std::int64_t;

inline constexpr int kNumMcs = 28;
inline constexpr int kMaxMcs = kNumMcs - 1;
inline constexpr int kMaxCqi = 15;

class McsIndex {
 public:
  constexpr McsIndex() = default;
  constexpr explicit McsIndex(int value) : value_(value) {
    if (value < 0 || value > kMaxMcs) {
      throw std::out_of_range("MCS index out of range: " + std::to_string(value));
    }
  }

  constexpr int value() const { return value_; }

  friend constexpr bool operator==(McsIndex, McsIndex) = default;
  friend constexpr auto operator<=>(McsIndex, McsIndex) = default;

 private:
  int value_ = 0;
};

class CqiValue {
 public:
  constexpr CqiValue() = default;
  constexpr explicit CqiValue(int value) : value_(value) {
    if (value < 0 || value > kMaxCqi) {
      throw std::out_of_range("CQI out of range: " + std::to_string(value));
    }
  }

  constexpr int value() const { return value_; }

  friend constexpr bool operator==(CqiValue, CqiValue) = default;
  friend constexpr auto operator<=>(CqiValue, CqiValue) = default;

 private:
  int value_ = 0;
};

}  // namespace dcla
