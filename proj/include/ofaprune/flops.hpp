#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "ofaprune/mask.hpp"

namespace ofp {

struct FlopsEntry {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::conv2d;
  std::size_t kernel = 0;
  std::size_t h_out = 0, w_out = 0;
  std::size_t c_in_kept = 0, c_out_kept = 0;
  std::uint64_t flops = 0;
};

struct FlopsReport {
  std::vector<FlopsEntry> entries;
  std::uint64_t total = 0;
};

// Cost of one layer, counting a multiply-add as 2 FLOPs:
//   conv2d: 2 K^2 H_out W_out C_in C_out     linear: 2 C_in C_out
// BN, ReLU and pooling are free.
inline std::uint64_t layer_flops(const LayerSpec& layer, std::size_t c_in_kept, std::size_t c_out_kept,
                                 std::size_t input_hw) {
  switch (layer.kind) {
    case LayerKind::conv2d: {
      if (c_in_kept == 0 || c_out_kept == 0) throw Error("layer_flops: kept channel counts must be >= 1");
      if (input_hw + 2 * layer.padding < layer.kernel || layer.stride == 0) {
        throw ShapeError("layer_flops: non-positive output size for input " + std::to_string(input_hw));
      }
      const std::uint64_t out = (input_hw + 2 * layer.padding - layer.kernel) / layer.stride + 1;
      const std::uint64_t k2 = static_cast<std::uint64_t>(layer.kernel) * layer.kernel;
      return 2 * k2 * out * out * c_in_kept * c_out_kept;
    }
    case LayerKind::linear:
      if (c_in_kept == 0 || c_out_kept == 0) throw Error("layer_flops: kept channel counts must be >= 1");
      return 2ULL * c_in_kept * c_out_kept;
    default:
      return 0;
  }
}

// Kept channel count per unit, from a mask or from uniform per-unit counts.
inline FlopsReport network_flops_kept(const ArchSpec& spec, const Topology& topo, const std::vector<std::size_t>& kept,
                                      std::size_t resolution) {
  FlopsReport r;
  std::size_t hw = resolution;
  const auto count = [&](int unit, std::size_t full) { return unit < 0 ? full : kept.at(unit); };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    const LayerInfo& info = topo.layers[i];
    if (ls.kind == LayerKind::conv2d || ls.kind == LayerKind::linear) {
      FlopsEntry e;
      e.layer = i;
      e.kind = ls.kind;
      e.kernel = ls.kind == LayerKind::conv2d ? ls.kernel : 1;
      e.c_in_kept = count(info.in_unit, info.in_channels);
      e.c_out_kept = count(info.out_unit, info.out_channels);
      e.flops = layer_flops(ls, e.c_in_kept, e.c_out_kept, ls.kind == LayerKind::conv2d ? hw : 1);
      if (ls.kind == LayerKind::conv2d) hw = (hw + 2 * ls.padding - ls.kernel) / ls.stride + 1;
      e.h_out = e.w_out = ls.kind == LayerKind::conv2d ? hw : 1;
      r.total += e.flops;
      r.entries.push_back(e);
    } else if (ls.kind == LayerKind::globalavgpool) {
      hw = 1;
    }
  }
  return r;
}

inline FlopsReport network_flops(const ArchSpec& spec, const ChannelMask& mask, std::size_t resolution) {
  const Topology topo = analyze(spec);
  check_mask(topo, mask);
  std::vector<std::size_t> kept(topo.units.size());
  for (std::size_t u = 0; u < kept.size(); ++u) kept[u] = mask.kept(u);
  return network_flops_kept(spec, topo, kept, resolution);
}

struct DeviceBudget {
  std::string device;
  double cap_mflops = 0.0;
  std::vector<std::size_t> resolutions;

  std::uint64_t cap_flops() const { return cap_mflops <= 0.0 ? 0 : static_cast<std::uint64_t>(std::llround(cap_mflops * 1e6)); }
  bool operator==(const DeviceBudget&) const = default;
};

struct BudgetSolution {
  std::string device;
  std::size_t resolution = 0;
  double cap_mflops = 0.0;
  double rho = 0.0;
  bool feasible = false;
  std::uint64_t achieved_flops = 0;  // at rho when feasible, else the minimum achievable
};

// Channels kept in a unit of `channels` at grid rate k/100: ceil((100-k) C / 100).
inline std::size_t uniform_kept(std::size_t channels, int k) {
  const std::size_t kept = ((100 - static_cast<std::size_t>(k)) * channels + 99) / 100;
  return std::max<std::size_t>(kept, 1);
}

inline std::uint64_t uniform_flops(const ArchSpec& spec, const Topology& topo, int k, std::size_t resolution) {
  std::vector<std::size_t> kept(topo.units.size());
  for (std::size_t u = 0; u < kept.size(); ++u) kept[u] = uniform_kept(topo.units[u].channels, k);
  return network_flops_kept(spec, topo, kept, resolution).total;
}

// Smallest rate on the 0.01 grid whose uniform pruning meets the cap.
inline BudgetSolution solve_pruning_rate(const ArchSpec& spec, const DeviceBudget& budget, std::size_t resolution) {
  const Topology topo = analyze(spec);
  BudgetSolution s;
  s.device = budget.device;
  s.resolution = resolution;
  s.cap_mflops = budget.cap_mflops;
  const std::uint64_t cap = budget.cap_flops();
  for (int k = 0; k < 100; ++k) {
    const std::uint64_t f = uniform_flops(spec, topo, k, resolution);
    if (f <= cap) {
      s.rho = k / 100.0;
      s.feasible = true;
      s.achieved_flops = f;
      return s;
    }
  }
  s.feasible = false;
  s.rho = 0.99;
  s.achieved_flops = network_flops_kept(spec, topo, std::vector<std::size_t>(topo.units.size(), 1), resolution).total;
  return s;
}

// Budgets ordered by descending cap (ties by name) for reporting.
inline std::vector<DeviceBudget> sorted_budgets(std::vector<DeviceBudget> b) {
  std::stable_sort(b.begin(), b.end(), [](const DeviceBudget& x, const DeviceBudget& y) {
    return x.cap_mflops != y.cap_mflops ? x.cap_mflops > y.cap_mflops : x.device < y.device;
  });
  return b;
}

inline void to_json(nlohmann::json& j, const DeviceBudget& b) {
  j = nlohmann::json{{"device", b.device}, {"cap_mflops", b.cap_mflops}, {"resolutions", b.resolutions}};
}
inline void from_json(const nlohmann::json& j, DeviceBudget& b) {
  b.device = j.at("device").get<std::string>();
  b.cap_mflops = j.at("cap_mflops").get<double>();
  b.resolutions = j.value("resolutions", std::vector<std::size_t>{});
}

}  // namespace ofp
