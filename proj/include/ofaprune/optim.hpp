#pragma once

#include <map>
#include <string>
#include <vector>

#include "ofaprune/tensor.hpp"

namespace ofp {

// One trainable tensor paired with its gradient accumulator.
template <class T>
struct ParamSlot {
  std::string name;
  Tensor<T>* value = nullptr;
  const Tensor<T>* grad = nullptr;
  bool decay = true;  // weight decay applies (conv/linear kernels only)
};

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Classic momentum SGD:  v <- mu v + (g + wd w);  w <- w - lr v.
// Velocity buffers are keyed by parameter name so views of different width can
// share them.
template <class T>
class Sgd {
 public:
  void step(const std::vector<ParamSlot<T>>& params, const SgdConfig& cfg) {
    for (const auto& p : params) {
      if (!p.grad->all_finite()) throw NonFiniteError("non-finite gradient for parameter '" + p.name + "'");
    }
    for (const auto& p : params) {
      Tensor<T>& w = *p.value;
      const Tensor<T>& g = *p.grad;
      if (g.shape() != w.shape()) throw ShapeError("sgd: gradient shape mismatch for '" + p.name + "'");
      const T lr = static_cast<T>(cfg.lr), mu = static_cast<T>(cfg.momentum);
      const T wd = p.decay ? static_cast<T>(cfg.weight_decay) : T{0};
      if (cfg.momentum == 0.0) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + wd * w[i]);
        continue;
      }
      auto [it, fresh] = velocity_.try_emplace(p.name, w.shape());
      Tensor<T>& v = it->second;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T d = g[i] + wd * w[i];
        v[i] = fresh ? d : mu * v[i] + d;
        w[i] -= lr * v[i];
      }
      require_finite(w, "parameter '" + p.name + "' after update");
    }
  }

  const std::map<std::string, Tensor<T>>& velocity() const { return velocity_; }
  void reset() { velocity_.clear(); }

 private:
  std::map<std::string, Tensor<T>> velocity_;
};

}  // namespace ofp
