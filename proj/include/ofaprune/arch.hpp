#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ofaprune/layers.hpp"
#include "ofaprune/util.hpp"

namespace ofp {

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out_channels = 0;  // conv2d and linear only
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool prunable = false;              // conv2d only: output channels may be masked
  std::optional<int> residual_group;  // convs in one group share one mask
  std::optional<std::size_t> skip_from;  // relu only: add that layer's output before activating
  bool bias = false;                  // conv2d: has bias; linear always has one

  bool operator==(const LayerSpec&) const = default;
};

struct ArchSpec {
  std::string name;
  std::size_t input_channels = 3;
  std::size_t num_classes = 10;
  std::vector<LayerSpec> layers;

  bool operator==(const ArchSpec&) const = default;
};

// A set of output channels that is pruned as one: a standalone prunable conv,
// or every conv of a residual group.
struct MaskUnit {
  std::size_t channels = 0;
  std::vector<std::size_t> convs;
  std::vector<std::size_t> batchnorms;  // BN layers normalizing this unit's channels
  std::optional<int> group;
};

struct LayerInfo {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  int in_unit = -1;   // mask unit governing the input channels (-1: never pruned)
  int out_unit = -1;  // mask unit governing the output channels
};

struct Topology {
  std::vector<LayerInfo> layers;
  std::vector<MaskUnit> units;

  std::size_t total_prunable() const {
    std::size_t n = 0;
    for (const auto& u : units) n += u.channels;
    return n;
  }
};

inline Topology analyze(const ArchSpec& spec) {
  const auto fail = [&](std::size_t i, const std::string& msg) -> void {
    throw Error("arch '" + spec.name + "' layer " + std::to_string(i) + ": " + msg);
  };
  const std::size_t L = spec.layers.size();
  if (L < 3) throw Error("arch '" + spec.name + "': needs at least one conv plus globalavgpool and linear");
  if (spec.layers[L - 2].kind != LayerKind::globalavgpool || spec.layers[L - 1].kind != LayerKind::linear) {
    throw Error("arch '" + spec.name + "': last two layers must be globalavgpool then linear");
  }
  if (spec.input_channels == 0 || spec.num_classes < 2) throw Error("arch '" + spec.name + "': bad input/class count");

  Topology topo;
  topo.layers.resize(L);
  std::map<int, int> group_unit;
  std::size_t channels = spec.input_channels;
  int unit = -1;
  for (std::size_t i = 0; i < L; ++i) {
    const LayerSpec& ls = spec.layers[i];
    LayerInfo& info = topo.layers[i];
    info.in_channels = channels;
    info.in_unit = unit;
    if (ls.kind != LayerKind::conv2d && (ls.prunable || ls.residual_group)) fail(i, "only conv2d layers can be prunable");
    if (ls.kind != LayerKind::relu && ls.skip_from) fail(i, "skip_from is only valid on relu layers");
    if ((ls.kind == LayerKind::globalavgpool || ls.kind == LayerKind::linear) && i < L - 2) {
      fail(i, "globalavgpool/linear may only appear as the final two layers");
    }
    switch (ls.kind) {
      case LayerKind::conv2d: {
        if (ls.out_channels == 0) fail(i, "conv2d needs out_channels >= 1");
        if (ls.kernel == 0) fail(i, "conv2d kernel must be >= 1");
        if (ls.stride == 0) fail(i, "conv2d stride must be >= 1");
        if (ls.residual_group && !ls.prunable) fail(i, "residual_group requires prunable");
        if (ls.prunable) {
          if (ls.residual_group) {
            auto it = group_unit.find(*ls.residual_group);
            if (it == group_unit.end()) {
              it = group_unit.emplace(*ls.residual_group, static_cast<int>(topo.units.size())).first;
              topo.units.push_back({ls.out_channels, {}, {}, ls.residual_group});
            } else if (topo.units[it->second].channels != ls.out_channels) {
              fail(i, "residual group " + std::to_string(*ls.residual_group) + " mixes channel counts");
            }
            unit = it->second;
          } else {
            unit = static_cast<int>(topo.units.size());
            topo.units.push_back({ls.out_channels, {}, {}, std::nullopt});
          }
          topo.units[unit].convs.push_back(i);
        } else {
          unit = -1;
        }
        channels = ls.out_channels;
        break;
      }
      case LayerKind::batchnorm:
        if (unit >= 0) topo.units[unit].batchnorms.push_back(i);
        break;
      case LayerKind::relu:
        if (ls.skip_from) {
          const std::size_t j = *ls.skip_from;
          if (j >= i) fail(i, "skip_from must reference an earlier layer");
          if (topo.layers[j].out_channels != channels) fail(i, "skip connection channel count mismatch");
          if (topo.layers[j].out_unit != unit) fail(i, "skip connection joins channels with different masks; use a residual_group");
        }
        break;
      case LayerKind::globalavgpool:
        break;
      case LayerKind::linear:
        if (ls.out_channels != spec.num_classes) fail(i, "linear out_channels must equal num_classes");
        channels = ls.out_channels;
        unit = -1;
        break;
    }
    info.out_channels = channels;
    info.out_unit = unit;
  }
  return topo;
}

// Spatial extent after every layer for a square input of `resolution`.
// Throws when the arithmetic yields a non-positive size.
inline std::vector<std::size_t> spatial_extents(const ArchSpec& spec, std::size_t resolution) {
  std::vector<std::size_t> ext(spec.layers.size());
  std::size_t hw = resolution;
  if (hw == 0) throw ShapeError("resolution must be positive");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& ls = spec.layers[i];
    if (ls.kind == LayerKind::conv2d) {
      if (hw + 2 * ls.padding < ls.kernel) {
        throw ShapeError("resolution " + std::to_string(resolution) + " is below the minimum input of arch '" +
                         spec.name + "' (layer " + std::to_string(i) + ")");
      }
      hw = (hw + 2 * ls.padding - ls.kernel) / ls.stride + 1;
    } else if (ls.kind == LayerKind::globalavgpool || ls.kind == LayerKind::linear) {
      hw = 1;
    }
    ext[i] = hw;
  }
  return ext;
}

// ---- JSON ----------------------------------------------------------------

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json{{"kind", to_string(l.kind)}};
  if (l.kind == LayerKind::conv2d || l.kind == LayerKind::linear) j["out_channels"] = l.out_channels;
  if (l.kind == LayerKind::conv2d) {
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["padding"] = l.padding;
    j["prunable"] = l.prunable;
    j["bias"] = l.bias;
    if (l.residual_group) j["residual_group"] = *l.residual_group;
  }
  if (l.skip_from) j["skip_from"] = *l.skip_from;
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  l = LayerSpec{};
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.out_channels = j.value("out_channels", std::size_t{0});
  l.kernel = j.value("kernel", std::size_t{1});
  l.stride = j.value("stride", std::size_t{1});
  l.padding = j.value("padding", std::size_t{0});
  l.prunable = j.value("prunable", false);
  l.bias = j.value("bias", false);
  if (j.contains("residual_group")) l.residual_group = j.at("residual_group").get<int>();
  if (j.contains("skip_from")) l.skip_from = j.at("skip_from").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const ArchSpec& a) {
  j = nlohmann::json{{"name", a.name},
                     {"input_channels", a.input_channels},
                     {"num_classes", a.num_classes},
                     {"layers", a.layers}};
}

inline void from_json(const nlohmann::json& j, ArchSpec& a) {
  a.name = j.value("name", std::string("unnamed"));
  a.input_channels = j.value("input_channels", std::size_t{3});
  a.num_classes = j.at("num_classes").get<std::size_t>();
  a.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

inline std::string arch_hash(const ArchSpec& a) {
  Fnv1a h;
  h.update(nlohmann::json(a).dump());
  return hex64(h.digest());
}

inline ArchSpec load_arch(const std::filesystem::path& path) {
  ArchSpec a;
  try {
    a = nlohmann::json::parse(read_file(path)).get<ArchSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("arch spec " + path.string() + ": " + e.what());
  }
  analyze(a);
  return a;
}

// Builder for the common conv -> BN -> ReLU stacks.
class ArchBuilder {
 public:
  ArchBuilder(std::string name, std::size_t input_channels, std::size_t num_classes) {
    spec_.name = std::move(name);
    spec_.input_channels = input_channels;
    spec_.num_classes = num_classes;
  }

  ArchBuilder& conv(std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, bool prunable = true,
                    std::optional<int> group = std::nullopt, bool bias = false) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.out_channels = out;
    l.kernel = k;
    l.stride = stride;
    l.padding = pad;
    l.prunable = prunable;
    l.residual_group = group;
    l.bias = bias;
    spec_.layers.push_back(l);
    return *this;
  }
  ArchBuilder& bn() { return push(LayerKind::batchnorm); }
  ArchBuilder& relu(std::optional<std::size_t> skip_from = std::nullopt) {
    push(LayerKind::relu);
    spec_.layers.back().skip_from = skip_from;
    return *this;
  }
  // conv + bn + relu
  ArchBuilder& block(std::size_t out, std::size_t k, std::size_t stride, bool prunable = true) {
    return conv(out, k, stride, k / 2, prunable).bn().relu();
  }
  ArchSpec finish() {
    push(LayerKind::globalavgpool);
    LayerSpec l;
    l.kind = LayerKind::linear;
    l.out_channels = spec_.num_classes;
    spec_.layers.push_back(l);
    analyze(spec_);
    return spec_;
  }
  std::size_t size() const { return spec_.layers.size(); }

 private:
  ArchBuilder& push(LayerKind k) {
    LayerSpec l;
    l.kind = k;
    spec_.layers.push_back(l);
    return *this;
  }
  ArchSpec spec_;
};

}  // namespace ofp
