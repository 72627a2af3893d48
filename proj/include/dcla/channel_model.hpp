#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "dcla/types.hpp"

namespace dcla {

// SNR <-> CQI <-> MCS <-> BLER tables. All SNR values are in dB.
struct LinkTables {
  double cqi_snr_base = -6.7;
  double cqi_snr_step = 1.9;
  std::array<double, kNumMcs> mcs_thr{};
  std::array<double, kNumMcs> mcs_eff{};  // bits per resource element
  int re_per_rb = 150;
  double bler_steepness = 2.0;  // 1/dB

  static LinkTables defaults() {
    LinkTables t;
    for (int m = 0; m < kNumMcs; ++m) {
      t.mcs_thr[m] = -6.5 + 1.0 * m;
      t.mcs_eff[m] = 0.15 + 0.2 * m;
    }
    return t;
  }

  void validate() const {
    if (!(cqi_snr_step > 0.0)) throw std::invalid_argument("cqi_snr_step must be positive");
    if (!(bler_steepness > 0.0)) throw std::invalid_argument("bler_steepness must be positive");
    if (re_per_rb < 1) throw std::invalid_argument("re_per_rb must be >= 1");
    for (int m = 0; m < kNumMcs; ++m) {
      if (!std::isfinite(mcs_thr[m]) || !std::isfinite(mcs_eff[m]))
        throw std::invalid_argument("link tables must be finite");
      if (mcs_eff[m] <= 0.0) throw std::invalid_argument("mcs_eff must be positive");
      if (m > 0 && mcs_thr[m] <= mcs_thr[m - 1])
        throw std::invalid_argument("mcs_thr must be strictly increasing");
      if (m > 0 && mcs_eff[m] <= mcs_eff[m - 1])
        throw std::invalid_argument("mcs_eff must be strictly increasing");
    }
  }
};

namespace detail {
// Absorbs representation error at exact table boundaries.
inline constexpr double kBoundaryEps = 1e-9;
}  // namespace detail

inline CqiValue snr_to_cqi(double snr_db, const LinkTables& tables) {
  if (snr_db < tables.cqi_snr_base - detail::kBoundaryEps) return CqiValue{0};
  const double steps = (snr_db - tables.cqi_snr_base) / tables.cqi_snr_step;
  const double c = std::floor(steps + detail::kBoundaryEps) + 1.0;
  if (c >= kMaxCqi) return CqiValue{kMaxCqi};
  return CqiValue{static_cast<int>(c)};
}

inline double cqi_to_snr(CqiValue c, const LinkTables& tables) {
  if (c.value() == 0) return tables.cqi_snr_base - tables.cqi_snr_step;
  return tables.cqi_snr_base + (c.value() - 1) * tables.cqi_snr_step;
}

// Logistic waterfall centred on the MCS threshold.
inline double bler(McsIndex m, double effective_snr_db, const LinkTables& tables) {
  const double x = tables.bler_steepness * (effective_snr_db - tables.mcs_thr[m.value()]);
  return 1.0 / (1.0 + std::exp(x));
}

inline std::int64_t tbs(McsIndex m, int n_rb, const LinkTables& tables) {
  if (n_rb < 1) throw std::invalid_argument("n_rb must be >= 1");
  const double bits = tables.mcs_eff[m.value()] * n_rb * tables.re_per_rb;
  return static_cast<std::int64_t>(std::floor(bits + detail::kBoundaryEps));
}

// Chase combining: n_tx identical copies add up coherently.
inline double harq_effective_snr(double snr_db, int n_tx) {
  if (n_tx < 1) throw std::invalid_argument("n_tx must be >= 1");
  return snr_db + 10.0 * std::log10(static_cast<double>(n_tx));
}

// Largest MCS whose threshold does not exceed snr_db, or 0.
inline McsIndex mcs_for_snr(double snr_db, const LinkTables& tables) {
  int best = 0;
  for (int m = 0; m < kNumMcs; ++m) {
    if (tables.mcs_thr[m] <= snr_db + detail::kBoundaryEps) best = m;
  }
  return McsIndex{best};
}

}  // namespace dcla
