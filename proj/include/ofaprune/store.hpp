#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ofaprune/arch.hpp"
#include "ofaprune/mask.hpp"
#include "ofaprune/optim.hpp"

namespace ofp {

enum class BnSharing { shared, per_structure };

inline const char* to_string(BnSharing s) { return s == BnSharing::shared ? "shared" : "per_structure"; }

// Private BN affine parameters and running statistics of one structure.
// Vectors are indexed by layer; non-BN layers hold empty entries.
template <class T>
struct StructureBn {
  std::vector<Tensor<T>> gamma;
  std::vector<Tensor<T>> beta;
  std::vector<BnStats<T>> running;

  bool operator==(const StructureBn&) const = default;
};

// The single full-width parameter set every sub-network reads and writes.
// Sub-networks address channels by absolute index into these tensors.
template <class T>
struct SharedWeightStore {
  ArchSpec spec;
  Topology topo;
  std::vector<LayerParams<T>> layers;
  BnSharing bn_sharing = BnSharing::shared;
  std::map<int, StructureBn<T>> structure_bn;
  // Post-hoc calibrated BN statistics keyed by (structure_id, resolution),
  // indexed by layer like StructureBn::running.
  std::map<std::pair<int, int>, std::vector<BnStats<T>>> calibrated;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size() + l.gamma.size() + l.beta.size();
    return n;
  }

  StructureBn<T> copy_shared_bn() const {
    StructureBn<T> s;
    s.gamma.resize(layers.size());
    s.beta.resize(layers.size());
    s.running.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].kind != LayerKind::batchnorm) continue;
      s.gamma[i] = layers[i].gamma;
      s.beta[i] = layers[i].beta;
      s.running[i] = layers[i].running;
    }
    return s;
  }

  // Switches to private per-structure BN, seeded from the shared parameters.
  void enable_per_structure_bn(const std::vector<int>& structure_ids) {
    bn_sharing = BnSharing::per_structure;
    for (int id : structure_ids) structure_bn.try_emplace(id, copy_shared_bn());
  }

  std::vector<BnStats<T>> fresh_bn_stats() const {
    std::vector<BnStats<T>> v(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].kind == LayerKind::batchnorm) v[i] = BnStats<T>::fresh(topo.layers[i].out_channels);
    return v;
  }

  bool operator==(const SharedWeightStore& o) const {
    return spec == o.spec && layers == o.layers && bn_sharing == o.bn_sharing && structure_bn == o.structure_bn &&
           calibrated == o.calibrated;
  }
};

// He-uniform kernels, zero biases, gamma = gamma_init, beta = 0.
template <class T>
SharedWeightStore<T> build_network(const ArchSpec& spec, std::uint64_t seed, double gamma_init = 1.0) {
  SharedWeightStore<T> store;
  store.spec = spec;
  store.topo = analyze(spec);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    const LayerInfo& info = store.topo.layers[i];
    LayerParams<T> p;
    p.kind = ls.kind;
    p.stride = ls.stride;
    p.padding = ls.padding;
    const auto he_uniform = [&](Tensor<T>& w, std::size_t fan_in) {
      std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / static_cast<double>(fan_in)),
                                                  std::sqrt(6.0 / static_cast<double>(fan_in)));
      for (auto& v : w.data()) v = static_cast<T>(dist(rng));
    };
    switch (ls.kind) {
      case LayerKind::conv2d:
        p.weight = Tensor<T>({ls.out_channels, info.in_channels, ls.kernel, ls.kernel});
        he_uniform(p.weight, info.in_channels * ls.kernel * ls.kernel);
        if (ls.bias) p.bias = Tensor<T>({ls.out_channels});
        break;
      case LayerKind::linear:
        p.weight = Tensor<T>({ls.out_channels, info.in_channels});
        he_uniform(p.weight, info.in_channels);
        p.bias = Tensor<T>({ls.out_channels});
        break;
      case LayerKind::batchnorm:
        p.gamma = Tensor<T>({info.in_channels}, static_cast<T>(gamma_init));
        p.beta = Tensor<T>({info.in_channels});
        p.running = BnStats<T>::fresh(info.in_channels);
        break;
      default:
        break;
    }
    store.layers.push_back(std::move(p));
  }
  return store;
}

template <class T>
struct LayerGrads {
  Tensor<T> weight, bias, gamma, beta;
};

// Gradient accumulator mirroring a SharedWeightStore.
template <class T>
struct Gradients {
  std::vector<LayerGrads<T>> layers;
  std::map<int, std::vector<LayerGrads<T>>> structure_bn;  // gamma/beta only

  explicit Gradients(const SharedWeightStore<T>& store) {
    layers.resize(store.layers.size());
    for (std::size_t i = 0; i < store.layers.size(); ++i) {
      const auto& p = store.layers[i];
      layers[i] = {zeros_like(p.weight), zeros_like(p.bias), zeros_like(p.gamma), zeros_like(p.beta)};
    }
    for (const auto& [id, sb] : store.structure_bn) {
      auto& v = structure_bn[id];
      v.resize(store.layers.size());
      for (std::size_t i = 0; i < store.layers.size(); ++i) {
        v[i].gamma = zeros_like(sb.gamma[i]);
        v[i].beta = zeros_like(sb.beta[i]);
      }
    }
  }

  void zero() {
    for (auto& l : layers)
      for (auto* t : {&l.weight, &l.bias, &l.gamma, &l.beta}) t->fill(T{0});
    for (auto& [id, v] : structure_bn)
      for (auto& l : v) {
        l.gamma.fill(T{0});
        l.beta.fill(T{0});
      }
  }

  void add(const Gradients& o) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      add_into(layers[i].weight, o.layers[i].weight);
      add_into(layers[i].bias, o.layers[i].bias);
      add_into(layers[i].gamma, o.layers[i].gamma);
      add_into(layers[i].beta, o.layers[i].beta);
    }
    for (auto& [id, v] : structure_bn)
      for (std::size_t i = 0; i < v.size(); ++i) {
        add_into(v[i].gamma, o.structure_bn.at(id)[i].gamma);
        add_into(v[i].beta, o.structure_bn.at(id)[i].beta);
      }
  }

  // Flattened view in parameter-slot order (for comparisons in tests).
  std::vector<T> flat() const {
    std::vector<T> out;
    for (const auto& l : layers)
      for (const auto* t : {&l.weight, &l.bias, &l.gamma, &l.beta}) out.insert(out.end(), t->vec().begin(), t->vec().end());
    for (const auto& [id, v] : structure_bn)
      for (const auto& l : v) {
        out.insert(out.end(), l.gamma.vec().begin(), l.gamma.vec().end());
        out.insert(out.end(), l.beta.vec().begin(), l.beta.vec().end());
      }
    return out;
  }
};

// Every trainable tensor of the store with its gradient, in a fixed order.
template <class T>
std::vector<ParamSlot<T>> parameter_slots(SharedWeightStore<T>& store, const Gradients<T>& grads) {
  std::vector<ParamSlot<T>> slots;
  for (std::size_t i = 0; i < store.layers.size(); ++i) {
    auto& p = store.layers[i];
    const auto& g = grads.layers[i];
    const std::string base = "L" + std::to_string(i) + ".";
    if (!p.weight.empty()) slots.push_back({base + "weight", &p.weight, &g.weight, true});
    if (!p.bias.empty()) slots.push_back({base + "bias", &p.bias, &g.bias, false});
    if (!p.gamma.empty()) slots.push_back({base + "gamma", &p.gamma, &g.gamma, false});
    if (!p.beta.empty()) slots.push_back({base + "beta", &p.beta, &g.beta, false});
  }
  for (auto& [id, sb] : store.structure_bn) {
    const auto& g = grads.structure_bn.at(id);
    for (std::size_t i = 0; i < sb.gamma.size(); ++i) {
      if (sb.gamma[i].empty()) continue;
      const std::string base = "S" + std::to_string(id) + ".L" + std::to_string(i) + ".";
      slots.push_back({base + "gamma", &sb.gamma[i], &g[i].gamma, false});
      slots.push_back({base + "beta", &sb.beta[i], &g[i].beta, false});
    }
  }
  return slots;
}

// One optimizer step over the whole store. Aborts on non-finite gradients.
template <class T>
void sgd_update(SharedWeightStore<T>& store, const Gradients<T>& grads, Sgd<T>& sgd, const SgdConfig& cfg) {
  sgd.step(parameter_slots(store, grads), cfg);
}

}  // namespace ofp
