#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "clinembed/error.hpp"
#include "clinembed/tensor.hpp"

namespace clinembed {

// Ordered, named parameter collection. Order is fixed at construction and is
// what aligns optimizer state, gradient vectors, and checkpoint layout.
template <typename T>
struct Params {
  struct Item {
    std::string name;
    Tensor<T> tensor;
  };
  std::vector<Item> items;

  void add(std::string name, Tensor<T> t) {
    t.requires_grad = true;
    items.push_back({std::move(name), std::move(t)});
  }

  Tensor<T>* find(const std::string& name) {
    for (auto& it : items) {
      if (it.name == name) return &it.tensor;
    }
    return nullptr;
  }

  const Tensor<T>* find(const std::string& name) const {
    return const_cast<Params*>(this)->find(name);
  }

  size_t total_values() const {
    size_t n = 0;
    for (const auto& it : items) n += it.tensor.numel();
    return n;
  }
};

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <typename T>
double clip_global_norm(std::vector<std::vector<T>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& g : grads) {
      for (T& v : g) v *= factor;
    }
  }
  return norm;
}

template <typename T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// Adam with bias correction. Moment accumulators are lazily shaped on the
// first step and stay aligned with the parameter order.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

  int64_t step_count() const { return step_; }

  void step(Params<T>& params, const std::vector<std::vector<T>>& grads) {
    const size_t count = params.items.size();
    if (grads.size() != count) {
      throw ShapeError("adam: " + std::to_string(grads.size()) +
                       " gradients for " + std::to_string(count) +
                       " parameters");
    }
    if (m_.empty()) {
      m_.resize(count);
      v_.resize(count);
      for (size_t i = 0; i < count; ++i) {
        m_[i].assign(params.items[i].tensor.numel(), T(0));
        v_[i].assign(params.items[i].tensor.numel(), T(0));
      }
    }

    for (size_t i = 0; i < count; ++i) {
      const auto& item = params.items[i];
      if (grads[i].size() != item.tensor.numel()) {
        throw ShapeError("adam: gradient size mismatch for parameter '" +
                         item.name + "'");
      }
      if (!all_finite(grads[i])) {
        throw TrainingError("non-finite gradient for parameter '" + item.name +
                            "'");
      }
    }

    ++step_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_));
    for (size_t i = 0; i < count; ++i) {
      std::vector<T>& p = params.items[i].tensor.data;
      const std::vector<T>& g = grads[i];
      std::vector<T>& m = m_[i];
      std::vector<T>& v = v_[i];
      for (size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig<T> cfg_;
  std::vector<std::vector<T>> m_, v_;
  int64_t step_ = 0;
};

}  // namespace clinembed
