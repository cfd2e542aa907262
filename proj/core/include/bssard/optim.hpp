#pragma once

#include <cmath>
#include <vector>

#include "bssard/autograd.hpp"

namespace bssard {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay, bound to one ParamStore. Each parameter group
/// owns its own instance so a frozen group's moments never advance.
template <typename T>
class AdamW {
 public:
  AdamW(ag::ParamStore<T>& store, AdamWConfig config) : store_(&store), config_(config) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_.push_back(ag::Mat<T>::Zero(store[i].value.rows(), store[i].value.cols()));
      v_.push_back(ag::Mat<T>::Zero(store[i].value.rows(), store[i].value.cols()));
    }
  }

  /// Applies one update from the accumulated gradients, then zeroes them.
  void step() {
    ++steps_;
    const T lr = static_cast<T>(config_.lr);
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T eps = static_cast<T>(config_.eps);
    const T wd = static_cast<T>(config_.weight_decay);
    const T c1 = T(1) - static_cast<T>(std::pow(config_.beta1, static_cast<double>(steps_)));
    const T c2 = T(1) - static_cast<T>(std::pow(config_.beta2, static_cast<double>(steps_)));
    for (std::size_t i = 0; i < store_->size(); ++i) {
      auto& p = (*store_)[i];
      m_[i] = b1 * m_[i] + (T(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
      if (lr == T(0)) continue;
      p.value -= lr * wd * p.value;
      p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
    store_->zero_grad();
  }

  long long steps() const { return steps_; }
  void set_steps(long long s) { steps_ = s; }
  std::vector<ag::Mat<T>>& first_moments() { return m_; }
  std::vector<ag::Mat<T>>& second_moments() { return v_; }
  const std::vector<ag::Mat<T>>& first_moments() const { return m_; }
  const std::vector<ag::Mat<T>>& second_moments() const { return v_; }
  const AdamWConfig& config() const { return config_; }

 private:
  ag::ParamStore<T>* store_;
  AdamWConfig config_;
  std::vector<ag::Mat<T>> m_;
  std::vector<ag::Mat<T>> v_;
  long long steps_ = 0;
};

}  // namespace bssard
