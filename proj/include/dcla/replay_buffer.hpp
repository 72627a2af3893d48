#pragma once

#include <cstddef>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace dcla {

// Fixed-capacity ring; the oldest entry is overwritten first.
template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
    data_.reserve(capacity);
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return data_.empty(); }

  void push(T item) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(item));
    } else {
      data_[head_] = std::move(item);
      head_ = (head_ + 1) % capacity_;
    }
  }

  // Index 0 is the oldest stored entry.
  const T& at(std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

  // Uniform without replacement (partial Fisher-Yates over slot indices).
  template <typename Rng>
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    if (n > data_.size()) throw std::invalid_argument("sample larger than buffer");
    std::vector<std::size_t> idx(data_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(n);
    return idx;
  }

  template <typename Rng>
  std::vector<const T*> sample(std::size_t n, Rng& rng) const {
    std::vector<const T*> out;
    out.reserve(n);
    for (auto i : sample_indices(n, rng)) out.push_back(&data_[i]);
    return out;
  }

  // Raw slot access, in storage order.
  const T& slot(std::size_t i) const { return data_[i]; }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<T> data_;
};

}  // namespace dcla
