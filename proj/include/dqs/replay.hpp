#pragma once

#include <unordered_set>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/errors.hpp"
#include "dqs/rng.hpp"

namespace dqs {

struct Transition {
  DenseArray state;
  DenseArray action;
  double reward = 0.0;
  DenseArray next_state;
  bool terminal = false;
};

// Fixed-capacity ring with FIFO overwrite and uniform without-replacement
// batch sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 250000) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
    storage_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return storage_.size(); }

  void push(Transition t) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  const Transition& at(std::size_t i) const { return storage_[i]; }

  // Pointers stay valid until the next push.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
    if (n > storage_.size())
      throw NotReadyError("ReplayBuffer: fewer stored transitions than requested batch");
    std::vector<const Transition*> out;
    out.reserve(n);
    if (n * 2 >= storage_.size()) {
      // dense case: partial Fisher-Yates over an index vector
      std::vector<std::size_t> idx(storage_.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(idx.size() - i));
        std::swap(idx[i], idx[j]);
        out.push_back(&storage_[idx[i]]);
      }
    } else {
      std::unordered_set<std::size_t> seen;
      seen.reserve(n * 2);
      while (out.size() < n) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_index(storage_.size()));
        if (seen.insert(j).second) out.push_back(&storage_[j]);
      }
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> storage_;
};

}  // namespace dqs
