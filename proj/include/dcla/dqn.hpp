#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "dcla/features.hpp"
#include "dcla/qnet.hpp"

namespace dcla {

struct Hyperparams {
  double gamma = 0.9;
  double learning_rate = 0.001;
  int batch_size = 64;
  int train_interval = 50;    // T, in TTIs
  int update_interval = 500;  // U, in TTIs
  int history = 20;           // l; windows hold l + 1 frames
  int hidden = 64;
  std::size_t buffer_capacity = 4096;

  double eps_start = 1.0;
  double eps_end = 0.01;
  Tti eps_decay_ttis = 10000;

  // Rewards enter the TD target multiplied by this factor; argmax is unaffected.
  double reward_scale = 0.001;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in (0,1)");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (static_cast<std::size_t>(batch_size) > buffer_capacity)
      throw std::invalid_argument("batch_size must not exceed buffer capacity");
    if (train_interval < 1 || update_interval < 1) throw std::invalid_argument("intervals must be >= 1");
    if (history < 0 || hidden < 1) throw std::invalid_argument("bad network shape");
    if (!(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0))
      throw std::invalid_argument("epsilon must be in [0,1]");
    if (!(reward_scale > 0.0)) throw std::invalid_argument("reward_scale must be positive");
  }
};

// Linear anneal from eps_start to eps_end over the first eps_decay_ttis TTIs.
inline double epsilon_at(const Hyperparams& h, Tti t) {
  if (h.eps_decay_ttis <= 0 || t >= h.eps_decay_ttis) return h.eps_end;
  const double frac = static_cast<double>(std::max<Tti>(t, 0)) / static_cast<double>(h.eps_decay_ttis);
  return h.eps_start + (h.eps_end - h.eps_start) * frac;
}

template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(int hidden, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(hidden), v_(hidden) {}

  void step(QNetParams<Scalar>& params, const QNetParams<Scalar>& grad) {
    using P = QNetParams<Scalar>;
    ++t_;
    const Scalar b1 = static_cast<Scalar>(beta1_);
    const Scalar b2 = static_cast<Scalar>(beta2_);
    const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(beta1_, static_cast<double>(t_)));
    const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(beta2_, static_cast<double>(t_)));
    const Scalar lr = static_cast<Scalar>(lr_);
    const Scalar eps = static_cast<Scalar>(eps_);
    for (int i = 0; i < P::kCount; ++i) {
      auto& m = m_.tensor(i);
      auto& v = v_.tensor(i);
      const auto& g = grad.tensor(i);
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
      params.tensor(i).array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_ = 0.001;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  QNetParams<Scalar> m_;
  QNetParams<Scalar> v_;
};

// y_i = reward_scale * r_i + gamma * max_a Q_target(s'_i, a)
template <typename Scalar>
std::vector<Scalar> td_targets(const QNetParams<Scalar>& target, std::span<const Experience* const> batch,
                               double gamma, double reward_scale) {
  std::vector<const StateWindow*> next;
  next.reserve(batch.size());
  for (const auto* e : batch) next.push_back(&e->s_next);
  const auto qn = q_forward_batch<Scalar>(target, next);
  std::vector<Scalar> y(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    y[i] = static_cast<Scalar>(reward_scale * batch[i]->r) +
           static_cast<Scalar>(gamma) * qn.col(static_cast<Eigen::Index>(i)).maxCoeff();
  }
  return y;
}

// Mean squared TD error; writes dLoss/dMain into grad when given.
template <typename Scalar>
Scalar td_loss(const QNetParams<Scalar>& main, const QNetParams<Scalar>& target,
               std::span<const Experience* const> batch, double gamma, double reward_scale,
               QNetParams<Scalar>* grad = nullptr) {
  using Matrix = typename QNetParams<Scalar>::Matrix;
  if (batch.empty()) throw std::invalid_argument("td_loss: empty batch");
  const auto y = td_targets(target, batch, gamma, reward_scale);

  std::vector<const StateWindow*> states;
  states.reserve(batch.size());
  for (const auto* e : batch) states.push_back(&e->s);
  ForwardCache<Scalar> cache;
  const Matrix q = q_forward_batch<Scalar>(main, states, grad ? &cache : nullptr);

  const auto n = static_cast<Scalar>(batch.size());
  Scalar loss = 0;
  Matrix dq = Matrix::Zero(q.rows(), q.cols());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const int a = batch[i]->a.value();
    const Scalar err = y[i] - q(a, col);
    loss += err * err;
    dq(a, col) = Scalar(-2) * err / n;
  }
  loss /= n;
  if (grad) q_backward(main, cache, dq, *grad);
  return loss;
}

// One optimizer update of main on the batch. Returns the loss before the
// update. Throws NumericError (leaving main untouched) on a non-finite loss
// or gradient.
template <typename Scalar>
Scalar train_step(QNetParams<Scalar>& main, const QNetParams<Scalar>& target,
                  std::span<const Experience* const> batch, const Hyperparams& h, Adam<Scalar>& opt) {
  QNetParams<Scalar> grad(main.hidden());
  const Scalar loss = td_loss(main, target, batch, h.gamma, h.reward_scale, &grad);
  if (!std::isfinite(static_cast<double>(loss))) throw NumericError("train_step: non-finite loss");
  if (!grad.all_finite()) throw NumericError("train_step: non-finite gradient");
  opt.step(main, grad);
  return loss;
}

// Epsilon-greedy over the decision network; ties resolve to the lowest MCS.
template <typename Scalar, typename Rng>
McsIndex select_action(const QNetParams<Scalar>& decision, const StateWindow& s, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must be in [0,1]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < epsilon) {
    std::uniform_int_distribution<int> pick(0, kMaxMcs);
    return McsIndex{pick(rng)};
  }
  const StateWindow* one[] = {&s};
  const auto q = q_forward_batch<Scalar>(decision, one);
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < q.rows(); ++a)
    if (q(a, 0) > q(best, 0)) best = a;
  return McsIndex{static_cast<int>(best)};
}

}  // namespace dcla
