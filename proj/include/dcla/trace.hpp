#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcla/types.hpp"

namespace dcla {

enum class TraceKind { kStatic, kMobile, kMobileToStatic, kFile };

inline std::string_view to_string(TraceKind kind) {
  switch (kind) {
    case TraceKind::kStatic: return "static";
    case TraceKind::kMobile: return "mobile";
    case TraceKind::kMobileToStatic: return "mobile-to-static";
    case TraceKind::kFile: return "file";
  }
  return "unknown";
}

inline TraceKind parse_trace_kind(std::string_view s) {
  if (s == "static") return TraceKind::kStatic;
  if (s == "mobile") return TraceKind::kMobile;
  if (s == "mobile-to-static") return TraceKind::kMobileToStatic;
  throw std::invalid_argument("unknown trace kind: " + std::string(s));
}

struct TraceParams {
  double static_mean_db = 14.0;
  double static_jitter_db = 0.5;

  // Mobile: reflected random walk for the large-scale mean, plus a Rayleigh
  // envelope from a complex Gauss-Markov process.
  double mobile_mean_db = 12.0;
  double mobile_mean_lo_db = 4.0;
  double mobile_mean_hi_db = 20.0;
  double mobile_walk_sigma_db = 0.05;
  double fading_corr = 0.98;
  double fading_floor_db = -30.0;

  Tti switch_tti = 70000;
};

struct SnrTrace {
  std::vector<double> samples;
  std::string label;
  std::uint64_t seed = 0;

  std::size_t size() const { return samples.size(); }
  double operator[](Tti t) const { return samples[static_cast<std::size_t>(t)]; }
};

namespace detail {

inline void fill_static(std::vector<double>& out, std::size_t begin, std::size_t end,
                        const TraceParams& p, std::mt19937_64& rng) {
  std::normal_distribution<double> jitter(0.0, p.static_jitter_db);
  for (std::size_t i = begin; i < end; ++i) out[i] = p.static_mean_db + jitter(rng);
}

inline void fill_mobile(std::vector<double>& out, std::size_t begin, std::size_t end,
                        const TraceParams& p, std::mt19937_64& rng) {
  std::normal_distribution<double> walk(0.0, p.mobile_walk_sigma_db);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  const double rho = p.fading_corr;
  const double innov = std::sqrt(1.0 - rho * rho);
  double mean = std::clamp(p.mobile_mean_db, p.mobile_mean_lo_db, p.mobile_mean_hi_db);
  std::complex<double> h(gauss(rng), gauss(rng));
  for (std::size_t i = begin; i < end; ++i) {
    mean += walk(rng);
    if (mean > p.mobile_mean_hi_db) mean = 2.0 * p.mobile_mean_hi_db - mean;
    if (mean < p.mobile_mean_lo_db) mean = 2.0 * p.mobile_mean_lo_db - mean;
    h = rho * h + innov * std::complex<double>(gauss(rng), gauss(rng));
    const double fade_db = std::max(10.0 * std::log10(std::norm(h)), p.fading_floor_db);
    out[i] = mean + fade_db;
  }
}

}  // namespace detail

inline SnrTrace generate_trace(TraceKind kind, Tti length, std::uint64_t seed,
                               const TraceParams& params = {}) {
  if (length < 1) throw std::invalid_argument("trace length must be >= 1");
  SnrTrace trace;
  trace.samples.assign(static_cast<std::size_t>(length), 0.0);
  trace.seed = seed;
  trace.label = std::string(to_string(kind));
  std::mt19937_64 rng(seed);
  const auto n = static_cast<std::size_t>(length);
  switch (kind) {
    case TraceKind::kStatic:
      detail::fill_static(trace.samples, 0, n, params, rng);
      break;
    case TraceKind::kMobile:
      detail::fill_mobile(trace.samples, 0, n, params, rng);
      break;
    case TraceKind::kMobileToStatic: {
      const auto cut = static_cast<std::size_t>(std::clamp<Tti>(params.switch_tti, 0, length));
      detail::fill_mobile(trace.samples, 0, cut, params, rng);
      detail::fill_static(trace.samples, cut, n, params, rng);
      break;
    }
    case TraceKind::kFile:
      throw std::invalid_argument("file traces are loaded with read_trace_csv");
  }
  return trace;
}

inline void write_trace_csv(std::ostream& os, const SnrTrace& trace) {
  os << "tti,snr_db\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    line.str({});
    line << i << ',' << trace.samples[i] << '\n';
    os << line.str();
  }
}

inline void write_trace_csv(const std::string& path, const SnrTrace& trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open trace for writing: " + path);
  write_trace_csv(os, trace);
}

inline SnrTrace read_trace_csv(std::istream& is, std::string label = "file") {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("trace file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "tti,snr_db") throw std::runtime_error("trace header must be 'tti,snr_db', got '" + line + "'");
  SnrTrace trace;
  trace.label = std::move(label);
  Tti expected = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("malformed trace row: " + line);
    const Tti tti = std::stoll(line.substr(0, comma));
    const double snr = std::stod(line.substr(comma + 1));
    if (tti != expected)
      throw std::runtime_error("trace TTIs must be contiguous from 0; expected " + std::to_string(expected) +
                               ", got " + std::to_string(tti));
    if (!std::isfinite(snr)) throw std::runtime_error("non-finite SNR at TTI " + std::to_string(tti));
    trace.samples.push_back(snr);
    ++expected;
  }
  if (trace.samples.empty()) throw std::runtime_error("trace has no samples");
  return trace;
}

inline SnrTrace read_trace_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open trace: " + path);
  return read_trace_csv(is, path);
}

}  // namespace dcla
