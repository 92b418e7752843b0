#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ofaprune/search.hpp"

namespace ofp {

// On-disk layout: <stem>.bin holds every tensor as a flat little-endian array,
// back to back; <stem>.json lists (name, shape, byte offset) plus the
// architecture, BN layout and dtype. f32 stores write 4-byte floats, f64
// stores 8-byte doubles.

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

namespace detail {

template <class T>
void append_le(std::string& out, const Tensor<T>& t) {
  const std::size_t start = out.size();
  out.resize(start + t.size() * sizeof(T));
  std::memcpy(out.data() + start, t.ptr(), t.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < t.size(); ++i) std::reverse(out.begin() + start + i * sizeof(T), out.begin() + start + (i + 1) * sizeof(T));
  }
}

template <class S>
std::vector<double> read_le(const std::string& bytes, std::size_t offset, std::size_t count) {
  if (offset + count * sizeof(S) > bytes.size()) throw FormatError("checkpoint: tensor extends past end of data file");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    char buf[sizeof(S)];
    std::memcpy(buf, bytes.data() + offset + i * sizeof(S), sizeof(S));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(S));
    S v;
    std::memcpy(&v, buf, sizeof(S));
    out[i] = static_cast<double>(v);
  }
  return out;
}

inline std::string layer_name(std::size_t i) { return "L" + std::to_string(i); }

// Every tensor of a store under its checkpoint name, in a fixed order.
template <class Store, class Fn>
void for_each_tensor(Store& store, Fn&& fn) {
  for (std::size_t i = 0; i < store.layers.size(); ++i) {
    auto& p = store.layers[i];
    const std::string b = layer_name(i) + ".";
    if (!p.weight.empty()) fn(b + "weight", p.weight);
    if (!p.bias.empty()) fn(b + "bias", p.bias);
    if (p.kind == LayerKind::batchnorm) {
      fn(b + "gamma", p.gamma);
      fn(b + "beta", p.beta);
      fn(b + "running_mean", p.running.mean);
      fn(b + "running_var", p.running.var);
    }
  }
  for (auto& [id, sb] : store.structure_bn)
    for (std::size_t i = 0; i < sb.gamma.size(); ++i) {
      if (sb.gamma[i].empty()) continue;
      const std::string b = "S" + std::to_string(id) + "." + layer_name(i) + ".";
      fn(b + "gamma", sb.gamma[i]);
      fn(b + "beta", sb.beta[i]);
      fn(b + "running_mean", sb.running[i].mean);
      fn(b + "running_var", sb.running[i].var);
    }
  for (auto& [key, stats] : store.calibrated)
    for (std::size_t i = 0; i < stats.size(); ++i) {
      if (stats[i].mean.empty()) continue;
      const std::string b = "C" + std::to_string(key.first) + "@" + std::to_string(key.second) + "." + layer_name(i) + ".";
      fn(b + "mean", stats[i].mean);
      fn(b + "var", stats[i].var);
    }
}

// Every BN statistics record under the prefix its tensors use.
template <class Store, class Fn>
void for_each_stats(Store& store, Fn&& fn) {
  for (std::size_t i = 0; i < store.layers.size(); ++i)
    if (store.layers[i].kind == LayerKind::batchnorm) fn(layer_name(i), store.layers[i].running);
  for (auto& [id, sb] : store.structure_bn)
    for (std::size_t i = 0; i < sb.running.size(); ++i)
      if (!sb.running[i].mean.empty()) fn("S" + std::to_string(id) + "." + layer_name(i), sb.running[i]);
  for (auto& [key, stats] : store.calibrated)
    for (std::size_t i = 0; i < stats.size(); ++i)
      if (!stats[i].mean.empty())
        fn("C" + std::to_string(key.first) + "@" + std::to_string(key.second) + "." + layer_name(i), stats[i]);
}

}  // namespace detail

template <class T>
void save_checkpoint(const SharedWeightStore<T>& store, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  detail::for_each_tensor(store, [&](const std::string& name, const Tensor<T>& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}});
    detail::append_le(blob, t);
  });
  nlohmann::json structures = nlohmann::json::array();
  for (const auto& [id, sb] : store.structure_bn) structures.push_back(id);
  nlohmann::json calibrated = nlohmann::json::array();
  for (const auto& [key, stats] : store.calibrated) calibrated.push_back({{"structure_id", key.first}, {"resolution", key.second}});
  nlohmann::json counts = nlohmann::json::object();
  detail::for_each_stats(store, [&](const std::string& name, const BnStats<T>& s) { counts[name] = s.count; });
  const nlohmann::json manifest{{"format", "ofaprune-checkpoint"},
                                {"version", kFormatVersion},
                                {"dtype", dtype_name<T>()},
                                {"data_file", stem + ".bin"},
                                {"data_bytes", blob.size()},
                                {"arch", store.spec},
                                {"bn_sharing", to_string(store.bn_sharing)},
                                {"per_structure_bn", structures},
                                {"calibrated", calibrated},
                                {"bn_batches", counts},
                                {"tensors", tensors}};
  write_file(dir / (stem + ".bin"), blob);
  write_file(dir / (stem + ".json"), manifest.dump(2) + "\n");
}

template <class T>
SharedWeightStore<T> load_checkpoint(const std::filesystem::path& dir, const std::string& stem) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / (stem + ".json")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / (stem + ".json")).string() + ": " + e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != "ofaprune-checkpoint") throw FormatError("not a checkpoint manifest");
    if (manifest.at("version").get<int>() != kFormatVersion) throw FormatError("unsupported checkpoint version");
    const std::string dtype = manifest.at("dtype").get<std::string>();
    if (dtype != "f32" && dtype != "f64") throw FormatError("unknown checkpoint dtype '" + dtype + "'");
    const std::string blob = read_file(dir / manifest.at("data_file").get<std::string>());
    if (blob.size() != manifest.at("data_bytes").get<std::size_t>()) throw FormatError("checkpoint data file has the wrong size");

    SharedWeightStore<T> store = build_network<T>(manifest.at("arch").get<ArchSpec>(), 0);
    store.bn_sharing = manifest.at("bn_sharing").get<std::string>() == "per_structure" ? BnSharing::per_structure
                                                                                       : BnSharing::shared;
    for (const auto& id : manifest.at("per_structure_bn")) store.structure_bn.emplace(id.get<int>(), store.copy_shared_bn());
    for (const auto& c : manifest.at("calibrated"))
      store.calibrated[{c.at("structure_id").get<int>(), c.at("resolution").get<int>()}] = store.fresh_bn_stats();
    const auto& counts = manifest.at("bn_batches");
    detail::for_each_stats(store, [&](const std::string& name, BnStats<T>& s) { s.count = counts.at(name).get<std::int64_t>(); });

    std::map<std::string, std::pair<Shape, std::size_t>> index;
    for (const auto& t : manifest.at("tensors"))
      index[t.at("name").get<std::string>()] = {t.at("shape").get<Shape>(), t.at("offset").get<std::size_t>()};
    std::size_t used = 0;
    detail::for_each_tensor(store, [&](const std::string& name, Tensor<T>& t) {
      const auto it = index.find(name);
      if (it == index.end()) throw FormatError("checkpoint is missing tensor " + name);
      if (it->second.first != t.shape()) throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(it->second.first) + ", expected " + shape_str(t.shape()));
      const auto values = dtype == "f32" ? detail::read_le<float>(blob, it->second.second, t.size())
                                         : detail::read_le<double>(blob, it->second.second, t.size());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(values[i]);
      ++used;
    });
    if (used != index.size()) throw FormatError("checkpoint contains tensors that do not belong to its architecture");
    return store;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

// ---- dense export ----------------------------------------------------------------

// Parameter count of the dense network a mask describes.
inline std::size_t subnet_parameter_count(const ArchSpec& spec, const ChannelMask& mask) {
  const Topology topo = analyze(spec);
  check_mask(topo, mask);
  const auto kept = [&](int unit, std::size_t full) { return unit < 0 ? full : mask.kept(static_cast<std::size_t>(unit)); };
  std::size_t n = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& ls = spec.layers[i];
    const auto& info = topo.layers[i];
    const std::size_t cin = kept(info.in_unit, info.in_channels), cout = kept(info.out_unit, info.out_channels);
    switch (ls.kind) {
      case LayerKind::conv2d: n += cout * cin * ls.kernel * ls.kernel + (ls.bias ? cout : 0); break;
      case LayerKind::batchnorm: n += 2 * cout; break;
      case LayerKind::linear: n += cout * cin + cout; break;
      default: break;
    }
  }
  return n;
}

namespace detail {

template <class T>
Tensor<T> gather1(const Tensor<T>& v, const std::vector<std::size_t>& keep) {
  Tensor<T> out({keep.size()});
  for (std::size_t k = 0; k < keep.size(); ++k) out[k] = v[keep[k]];
  return out;
}

template <class T>
BnStats<T> gather_stats(const BnStats<T>& s, const std::vector<std::size_t>& keep) {
  return {gather1(s.mean, keep), gather1(s.var, keep), s.count};
}

}  // namespace detail

// Materializes a structure as a dense network with its pruned channels
// physically removed. BN parameters come from the structure's private set when
// it has one; calibrated statistics of the structure carry over under the same
// (structure_id, resolution) keys.
template <class T>
SharedWeightStore<T> export_structure(const SharedWeightStore<T>& store, const PnpEntry& entry) {
  const auto& topo = store.topo;
  check_mask(topo, entry.mask);
  const int sid = entry.structure_id;
  const bool priv = store.bn_sharing == BnSharing::per_structure && store.structure_bn.count(sid);

  ArchSpec cspec = store.spec;
  for (std::size_t i = 0; i < cspec.layers.size(); ++i)
    if (cspec.layers[i].kind == LayerKind::conv2d && topo.layers[i].out_unit >= 0)
      cspec.layers[i].out_channels = entry.mask.kept(static_cast<std::size_t>(topo.layers[i].out_unit));
  SharedWeightStore<T> out = build_network<T>(cspec, 0);

  std::vector<std::vector<std::size_t>> keep_out(store.layers.size());
  for (std::size_t i = 0; i < store.layers.size(); ++i) {
    const auto& src = store.layers[i];
    auto& dst = out.layers[i];
    const auto kout = kept_indices(out_bits(topo, entry.mask, i), topo.layers[i].out_channels);
    const auto kin = kept_indices(in_bits(topo, entry.mask, i), topo.layers[i].in_channels);
    keep_out[i] = kout;
    switch (src.kind) {
      case LayerKind::conv2d: {
        const std::size_t K = src.weight.dim(2), kk = K * K, cin = src.weight.dim(1);
        for (std::size_t a = 0; a < kout.size(); ++a)
          for (std::size_t b = 0; b < kin.size(); ++b)
            for (std::size_t s = 0; s < kk; ++s) dst.weight[(a * kin.size() + b) * kk + s] = src.weight[(kout[a] * cin + kin[b]) * kk + s];
        if (!src.bias.empty()) dst.bias = detail::gather1(src.bias, kout);
        break;
      }
      case LayerKind::linear: {
        const std::size_t cin = src.weight.dim(1);
        for (std::size_t a = 0; a < kout.size(); ++a)
          for (std::size_t b = 0; b < kin.size(); ++b) dst.weight[a * kin.size() + b] = src.weight[kout[a] * cin + kin[b]];
        dst.bias = src.bias;
        break;
      }
      case LayerKind::batchnorm: {
        const auto& gamma = priv ? store.structure_bn.at(sid).gamma[i] : src.gamma;
        const auto& beta = priv ? store.structure_bn.at(sid).beta[i] : src.beta;
        const auto& running = priv ? store.structure_bn.at(sid).running[i] : src.running;
        dst.gamma = detail::gather1(gamma, kout);
        dst.beta = detail::gather1(beta, kout);
        dst.running = detail::gather_stats(running, kout);
        break;
      }
      default:
        break;
    }
  }
  if (priv) {
    out.bn_sharing = BnSharing::per_structure;
    out.structure_bn.emplace(sid, out.copy_shared_bn());
  }
  for (const auto& [key, stats] : store.calibrated) {
    if (key.first != sid) continue;
    auto& cs = out.calibrated[key];
    cs.resize(stats.size());
    for (std::size_t i = 0; i < stats.size(); ++i)
      if (!stats[i].mean.empty()) cs[i] = detail::gather_stats(stats[i], keep_out[i]);
  }
  return out;
}

// The pool entry that evaluates an exported network: its own full mask under
// the original structure id.
template <class T>
PnpEntry exported_entry(const SharedWeightStore<T>& exported, const PnpEntry& source) {
  PnpEntry e = source;
  e.mask = full_mask(exported.topo);
  e.mask.structure_id = source.structure_id;
  e.mask.rate = source.rho;
  e.mask.protections.clear();
  e.verified_flops.clear();
  return e;
}

}  // namespace ofp
