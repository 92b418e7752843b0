#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ofaprune/store.hpp"

namespace ofp {

// Activations saved by a forward pass for the matching backward pass.
template <class T>
struct ForwardTape {
  std::vector<Tensor<T>> inputs;  // input of each layer (relu: after the skip add)
  std::vector<BnCache<T>> bn;
  BnMode mode = BnMode::train;
};

// A masked sub-network over a SharedWeightStore. Holds no parameters of its
// own: kernels are read by absolute channel index and gradients are written
// back into the matching slices of a Gradients accumulator.
//
// BN selection: per-structure affine/stats when the store uses per-structure
// BN; in eval mode, calibrated (structure_id, resolution) stats take
// precedence. A view with structure_id < 0 always uses the shared parameters.
template <class T>
class SubnetView {
 public:
  SubnetView(SharedWeightStore<T>& store, ChannelMask mask, int structure_id = -1)
      : store_(&store), mask_(std::move(mask)), structure_id_(structure_id) {
    check_mask(store.topo, mask_);
    if (uses_private_bn() && !store.structure_bn.count(structure_id_)) {
      throw Error("no per-structure BN parameters for structure " + std::to_string(structure_id_));
    }
  }

  const ChannelMask& mask() const { return mask_; }
  int structure_id() const { return structure_id_; }
  const SharedWeightStore<T>& store() const { return *store_; }

  // Logits N x num_classes. `batch` must already be at `resolution`.
  Tensor<T> forward(const Tensor<T>& batch, std::size_t resolution, BnMode mode, ForwardTape<T>* tape = nullptr) {
    const auto& spec = store_->spec;
    const auto& topo = store_->topo;
    require_rank(batch, 4, "network input");
    if (batch.dim(1) != spec.input_channels || batch.dim(2) != resolution || batch.dim(3) != resolution) {
      throw ShapeError("network input " + shape_str(batch.shape()) + " does not match resolution " +
                       std::to_string(resolution));
    }
    spatial_extents(spec, resolution);  // rejects too-small inputs
    const std::size_t L = spec.layers.size();
    std::vector<BnStats<T>>* calib = nullptr;
    if (mode != BnMode::train && structure_id_ >= 0) {
      auto it = store_->calibrated.find({structure_id_, static_cast<int>(resolution)});
      if (it != store_->calibrated.end()) calib = &it->second;
      if (mode == BnMode::accumulate && !calib) {
        throw StageError("accumulate mode needs a calibration slot for structure " + std::to_string(structure_id_) +
                         " at resolution " + std::to_string(resolution));
      }
      if (mode == BnMode::eval && !calib && !uses_private_bn()) {
        throw StageError("structure " + std::to_string(structure_id_) + " at resolution " + std::to_string(resolution) +
                         " has no calibrated BN statistics (run calibrate first)");
      }
    }
    if (tape) {
      tape->inputs.assign(L, {});
      tape->bn.assign(L, {});
      tape->mode = mode;
    }
    std::vector<Tensor<T>> outs(L);
    for (std::size_t i = 0; i < L; ++i) {
      const Tensor<T>& x = i == 0 ? batch : outs[i - 1];
      auto& p = store_->layers[i];
      switch (p.kind) {
        case LayerKind::conv2d:
          if (tape) tape->inputs[i] = x;
          outs[i] = conv2d_forward(x, p.weight, &p.bias, p.stride, p.padding, in_bits(topo, mask_, i), out_bits(topo, mask_, i));
          break;
        case LayerKind::batchnorm: {
          const Tensor<T>& gamma = uses_private_bn() ? store_->structure_bn.at(structure_id_).gamma[i] : p.gamma;
          const Tensor<T>& beta = uses_private_bn() ? store_->structure_bn.at(structure_id_).beta[i] : p.beta;
          BnStats<T>& stats = calib ? (*calib)[i] : (uses_private_bn() ? store_->structure_bn.at(structure_id_).running[i] : p.running);
          outs[i] = batchnorm_forward(x, gamma, beta, stats, mode, out_bits(topo, mask_, i), tape ? &tape->bn[i] : nullptr);
          break;
        }
        case LayerKind::relu: {
          const auto skip = store_->spec.layers[i].skip_from;
          if (skip) {
            Tensor<T> sum = x;
            add_into(sum, outs[*skip]);
            outs[i] = relu_forward(sum);
            if (tape) tape->inputs[i] = std::move(sum);
          } else {
            outs[i] = relu_forward(x);
            if (tape) tape->inputs[i] = x;
          }
          break;
        }
        case LayerKind::globalavgpool:
          if (tape) tape->inputs[i] = x;
          outs[i] = global_avg_pool_forward(x);
          break;
        case LayerKind::linear:
          if (tape) tape->inputs[i] = x;
          outs[i] = linear_forward(x, p.weight, &p.bias, in_bits(topo, mask_, i));
          break;
      }
      if (!outs[i].all_finite()) {
        throw NonFiniteError("non-finite activation after layer " + std::to_string(i) + " (" + to_string(p.kind) + ")");
      }
      if (i > 0 && !tape && !is_skip_source(i - 1)) outs[i - 1] = Tensor<T>();
    }
    return std::move(outs[L - 1]);
  }

  // Accumulates parameter gradients of this view into `grads`.
  void backward(const ForwardTape<T>& tape, const Tensor<T>& grad_logits, Gradients<T>& grads) const {
    const auto& topo = store_->topo;
    const std::size_t L = store_->layers.size();
    if (tape.inputs.size() != L) throw Error("backward: tape does not belong to this network");
    std::vector<Tensor<T>> g(L);
    g[L - 1] = grad_logits;
    for (std::size_t ii = L; ii-- > 0;) {
      if (g[ii].empty()) continue;
      const auto& p = store_->layers[ii];
      auto& lg = grads.layers[ii];
      Tensor<T> gin;
      switch (p.kind) {
        case LayerKind::conv2d:
          gin = conv2d_backward(tape.inputs[ii], p.weight, p.stride, p.padding, g[ii], lg.weight, &lg.bias,
                                in_bits(topo, mask_, ii), out_bits(topo, mask_, ii), ii > 0);
          break;
        case LayerKind::batchnorm: {
          const bool priv = uses_private_bn();
          const Tensor<T>& gamma = priv ? store_->structure_bn.at(structure_id_).gamma[ii] : p.gamma;
          auto& target = priv ? grads.structure_bn.at(structure_id_)[ii] : lg;
          gin = batchnorm_backward(g[ii], tape.bn[ii], gamma, target.gamma, target.beta, out_bits(topo, mask_, ii),
                                   tape.mode != BnMode::eval);
          break;
        }
        case LayerKind::relu:
          gin = relu_backward(tape.inputs[ii], g[ii]);
          if (const auto skip = store_->spec.layers[ii].skip_from) accumulate(g[*skip], gin);
          break;
        case LayerKind::globalavgpool:
          gin = global_avg_pool_backward(tape.inputs[ii].shape(), g[ii]);
          break;
        case LayerKind::linear:
          gin = linear_backward(tape.inputs[ii], p.weight, g[ii], lg.weight, &lg.bias, in_bits(topo, mask_, ii));
          break;
      }
      if (ii > 0) accumulate(g[ii - 1], gin);
      g[ii] = Tensor<T>();
    }
  }

 private:
  bool uses_private_bn() const { return structure_id_ >= 0 && store_->bn_sharing == BnSharing::per_structure; }

  static void accumulate(Tensor<T>& into, const Tensor<T>& g) {
    if (into.empty()) into = g;
    else add_into(into, g);
  }

  bool is_skip_source(std::size_t j) const {
    for (const auto& l : store_->spec.layers)
      if (l.skip_from && *l.skip_from == j) return true;
    return false;
  }

  SharedWeightStore<T>* store_;
  ChannelMask mask_;
  int structure_id_;
};

}  // namespace ofp
