#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcla/features.hpp"
#include "dcla/types.hpp"

namespace dcla {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parameters of the Q-network: GRU(4 -> H) -> FC(H -> H) -> ReLU -> FC(H -> H)
// -> ReLU -> linear head (H -> 28). Biases are stored as H x 1 matrices so every
// tensor shares one type.
template <typename Scalar>
class QNetParams {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  enum Tensor : int {
    kWz, kUz, kBz,
    kWr, kUr, kBr,
    kWn, kUn, kBn,
    kFc1W, kFc1B,
    kFc2W, kFc2B,
    kOutW, kOutB,
    kCount
  };

  static constexpr std::array<std::string_view, kCount> kNames = {
      "gru.w_z", "gru.u_z", "gru.b_z", "gru.w_r", "gru.u_r", "gru.b_r", "gru.w_n", "gru.u_n",
      "gru.b_n", "fc1.w",   "fc1.b",   "fc2.w",   "fc2.b",   "out.w",   "out.b"};

  QNetParams() = default;

  explicit QNetParams(int hidden) : hidden_(hidden) {
    if (hidden < 1) throw std::invalid_argument("hidden width must be >= 1");
    for (int i = 0; i < kCount; ++i) {
      const auto [rows, cols] = shape_of(static_cast<Tensor>(i), hidden);
      tensors_[i] = Matrix::Zero(rows, cols);
    }
  }

  // Glorot-uniform weights, zero biases.
  template <typename Rng>
  static QNetParams random(int hidden, Rng& rng) {
    QNetParams p(hidden);
    for (int i = 0; i < kCount; ++i) {
      auto& m = p.tensors_[i];
      if (m.cols() == 1) continue;
      const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<Scalar>(u(rng));
    }
    return p;
  }

  static std::pair<Eigen::Index, Eigen::Index> shape_of(Tensor t, int h) {
    switch (t) {
      case kWz: case kWr: case kWn: return {h, kFeatureDim};
      case kUz: case kUr: case kUn: case kFc1W: case kFc2W: return {h, h};
      case kBz: case kBr: case kBn: case kFc1B: case kFc2B: return {h, 1};
      case kOutW: return {kNumMcs, h};
      case kOutB: return {kNumMcs, 1};
      case kCount: break;
    }
    throw std::invalid_argument("bad tensor id");
  }

  int hidden() const { return hidden_; }
  bool empty() const { return hidden_ == 0; }

  Matrix& operator[](Tensor t) { return tensors_[t]; }
  const Matrix& operator[](Tensor t) const { return tensors_[t]; }
  Matrix& tensor(int i) { return tensors_[i]; }
  const Matrix& tensor(int i) const { return tensors_[i]; }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& m : tensors_) n += static_cast<std::size_t>(m.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& m : tensors_)
      if (!m.allFinite()) return false;
    return true;
  }

  bool same_shape(const QNetParams& other) const { return hidden_ == other.hidden_; }

  template <typename To>
  QNetParams<To> cast() const {
    QNetParams<To> out(hidden_);
    for (int i = 0; i < kCount; ++i) out.tensor(i) = tensors_[i].template cast<To>();
    return out;
  }

  // Row-major within each tensor, tensors in kNames order.
  std::vector<Scalar> flatten() const {
    std::vector<Scalar> out;
    out.reserve(num_scalars());
    for (const auto& m : tensors_)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
  }

  void unflatten(std::span<const Scalar> flat) {
    if (flat.size() != num_scalars()) throw std::invalid_argument("flat parameter vector has wrong length");
    std::size_t k = 0;
    for (auto& m : tensors_)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat[k++];
  }

  void set_zero() {
    for (auto& m : tensors_) m.setZero();
  }

 private:
  int hidden_ = 0;
  std::array<Matrix, kCount> tensors_;
};

// Copies src into dst. dst is independent of src afterwards.
template <typename Scalar>
void sync(const QNetParams<Scalar>& src, QNetParams<Scalar>& dst) {
  if (!dst.empty() && !src.same_shape(dst)) throw std::invalid_argument("sync: shape mismatch");
  dst = src;
}

template <typename Scalar>
struct ForwardCache {
  using Matrix = typename QNetParams<Scalar>::Matrix;
  struct Step {
    Matrix x, h_prev, z, r, n, rh;
  };
  std::vector<Step> steps;
  Matrix h_last, pre1, a1, pre2, a2;
};

namespace detail {

template <typename Scalar>
using Mat = typename QNetParams<Scalar>::Matrix;

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (S(1) / (S(1) + (-x.array()).exp())).matrix();
}

template <typename Scalar>
Mat<Scalar> pack_step(std::span<const StateWindow* const> batch, std::size_t frame) {
  Mat<Scalar> x(kFeatureDim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& z = batch[b]->frames[frame];
    x(0, b) = static_cast<Scalar>(z.c);
    x(1, b) = static_cast<Scalar>(z.ack);
    x(2, b) = static_cast<Scalar>(z.m);
    x(3, b) = static_cast<Scalar>(z.delta);
  }
  return x;
}

}  // namespace detail

// Q-values for a batch of windows, one column per window (28 x B). The GRU
// consumes frames oldest to newest from a zero hidden state.
template <typename Scalar>
typename QNetParams<Scalar>::Matrix q_forward_batch(const QNetParams<Scalar>& p,
                                                    std::span<const StateWindow* const> batch,
                                                    ForwardCache<Scalar>* cache = nullptr) {
  using P = QNetParams<Scalar>;
  using Matrix = typename P::Matrix;
  if (batch.empty()) throw std::invalid_argument("q_forward: empty batch");
  const std::size_t len = batch.front()->length();
  if (len == 0) throw std::invalid_argument("q_forward: empty state window");
  for (const auto* s : batch)
    if (s->length() != len) throw std::invalid_argument("q_forward: windows differ in length");

  const auto cols = static_cast<Eigen::Index>(batch.size());
  Matrix h = Matrix::Zero(p.hidden(), cols);
  if (cache) cache->steps.resize(len);

  for (std::size_t k = 0; k < len; ++k) {
    Matrix x = detail::pack_step<Scalar>(batch, len - 1 - k);
    Matrix z = detail::sigmoid(((p[P::kWz] * x + p[P::kUz] * h).colwise() + p[P::kBz].col(0)).eval());
    Matrix r = detail::sigmoid(((p[P::kWr] * x + p[P::kUr] * h).colwise() + p[P::kBr].col(0)).eval());
    Matrix rh = r.cwiseProduct(h);
    Matrix n = ((p[P::kWn] * x + p[P::kUn] * rh).colwise() + p[P::kBn].col(0)).array().tanh().matrix();
    Matrix h_next = h + z.cwiseProduct(n - h);
    if (cache) {
      auto& st = cache->steps[k];
      st.x = std::move(x);
      st.h_prev = std::move(h);
      st.z = std::move(z);
      st.r = std::move(r);
      st.n = std::move(n);
      st.rh = std::move(rh);
    }
    h = std::move(h_next);
  }

  Matrix pre1 = (p[P::kFc1W] * h).colwise() + p[P::kFc1B].col(0);
  Matrix a1 = pre1.cwiseMax(Scalar(0));
  Matrix pre2 = (p[P::kFc2W] * a1).colwise() + p[P::kFc2B].col(0);
  Matrix a2 = pre2.cwiseMax(Scalar(0));
  Matrix q = (p[P::kOutW] * a2).colwise() + p[P::kOutB].col(0);
  if (cache) {
    cache->h_last = std::move(h);
    cache->pre1 = std::move(pre1);
    cache->a1 = std::move(a1);
    cache->pre2 = std::move(pre2);
    cache->a2 = std::move(a2);
  }
  return q;
}

template <typename Scalar>
std::array<Scalar, kNumMcs> q_forward(const QNetParams<Scalar>& p, const StateWindow& s) {
  if (!p.all_finite()) throw NumericError("q_forward: non-finite parameter");
  const StateWindow* one[] = {&s};
  const auto q = q_forward_batch<Scalar>(p, one);
  std::array<Scalar, kNumMcs> out{};
  for (int a = 0; a < kNumMcs; ++a) out[a] = q(a, 0);
  return out;
}

// Writes dLoss/dParams into grad given dLoss/dQ (28 x B) and the forward cache.
template <typename Scalar>
void q_backward(const QNetParams<Scalar>& p, const ForwardCache<Scalar>& c,
                const typename QNetParams<Scalar>::Matrix& dq, QNetParams<Scalar>& grad) {
  using P = QNetParams<Scalar>;
  using Matrix = typename P::Matrix;
  if (grad.empty() || !grad.same_shape(p)) grad = P(p.hidden());

  grad[P::kOutW].noalias() = dq * c.a2.transpose();
  grad[P::kOutB] = dq.rowwise().sum();
  Matrix dpre2 = (p[P::kOutW].transpose() * dq).cwiseProduct((c.pre2.array() > Scalar(0)).template cast<Scalar>().matrix());
  grad[P::kFc2W].noalias() = dpre2 * c.a1.transpose();
  grad[P::kFc2B] = dpre2.rowwise().sum();
  Matrix dpre1 = (p[P::kFc2W].transpose() * dpre2).cwiseProduct((c.pre1.array() > Scalar(0)).template cast<Scalar>().matrix());
  grad[P::kFc1W].noalias() = dpre1 * c.h_last.transpose();
  grad[P::kFc1B] = dpre1.rowwise().sum();
  Matrix dh = p[P::kFc1W].transpose() * dpre1;

  for (auto t : {P::kWz, P::kUz, P::kBz, P::kWr, P::kUr, P::kBr, P::kWn, P::kUn, P::kBn}) grad[t].setZero();

  for (std::size_t k = c.steps.size(); k-- > 0;) {
    const auto& st = c.steps[k];
    // h' = h + z (n - h)
    Matrix dz = dh.cwiseProduct(st.n - st.h_prev);
    Matrix dn = dh.cwiseProduct(st.z);
    Matrix dh_prev = dh - dh.cwiseProduct(st.z);

    Matrix dn_pre = dn.cwiseProduct((Scalar(1) - st.n.array().square()).matrix());
    grad[P::kWn].noalias() += dn_pre * st.x.transpose();
    grad[P::kUn].noalias() += dn_pre * st.rh.transpose();
    grad[P::kBn] += dn_pre.rowwise().sum();
    Matrix drh = p[P::kUn].transpose() * dn_pre;
    dh_prev += drh.cwiseProduct(st.r);

    Matrix dr_pre = drh.cwiseProduct(st.h_prev).cwiseProduct((st.r.array() * (Scalar(1) - st.r.array())).matrix());
    grad[P::kWr].noalias() += dr_pre * st.x.transpose();
    grad[P::kUr].noalias() += dr_pre * st.h_prev.transpose();
    grad[P::kBr] += dr_pre.rowwise().sum();
    dh_prev.noalias() += p[P::kUr].transpose() * dr_pre;

    Matrix dz_pre = dz.cwiseProduct((st.z.array() * (Scalar(1) - st.z.array())).matrix());
    grad[P::kWz].noalias() += dz_pre * st.x.transpose();
    grad[P::kUz].noalias() += dz_pre * st.h_prev.transpose();
    grad[P::kBz] += dz_pre.rowwise().sum();
    dh_prev.noalias() += p[P::kUz].transpose() * dz_pre;

    dh = std::move(dh_prev);
  }
}

template <typename Scalar>
int argmax_q(const std::array<Scalar, kNumMcs>& q) {
  int best = 0;
  for (int a = 1; a < kNumMcs; ++a)
    if (q[a] > q[best]) best = a;
  return best;
}

}  // namespace dcla
