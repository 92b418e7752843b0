#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "ofaprune/arch.hpp"

namespace ofp {

// A channel the global cut wanted to prune but that was kept because it was
// the last survivor of its unit.
struct Protection {
  std::size_t unit = 0;
  std::size_t channel = 0;

  bool operator==(const Protection&) const = default;
};

// Keep bits for every mask unit of a topology (1 = keep). Layers outside any
// unit are never pruned.
struct ChannelMask {
  std::vector<BitVec> units;
  double rate = 0.0;  // nominal pruning rate
  int structure_id = -1;
  std::vector<Protection> protections;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& u : units) n += u.size();
    return n;
  }
  std::size_t kept() const {
    std::size_t n = 0;
    for (const auto& u : units)
      for (auto b : u) n += b ? 1 : 0;
    return n;
  }
  std::size_t kept(std::size_t unit) const {
    std::size_t n = 0;
    for (auto b : units.at(unit)) n += b ? 1 : 0;
    return n;
  }
  double realized_rate() const {
    const auto t = total();
    return t ? static_cast<double>(t - kept()) / static_cast<double>(t) : 0.0;
  }
  // Flattened keep bits in unit order.
  std::vector<double> flat() const {
    std::vector<double> v;
    v.reserve(total());
    for (const auto& u : units)
      for (auto b : u) v.push_back(b ? 1.0 : 0.0);
    return v;
  }

  bool same_bits(const ChannelMask& o) const { return units == o.units; }
  bool operator==(const ChannelMask&) const = default;
};

inline ChannelMask full_mask(const Topology& topo) {
  ChannelMask m;
  for (const auto& u : topo.units) m.units.emplace_back(u.channels, std::uint8_t{1});
  return m;
}

// Mask bits of the output channels of layer `i` (empty = all kept).
inline std::span<const std::uint8_t> out_bits(const Topology& topo, const ChannelMask& m, std::size_t i) {
  const int u = topo.layers[i].out_unit;
  return u < 0 ? std::span<const std::uint8_t>{} : std::span<const std::uint8_t>(m.units[u]);
}
inline std::span<const std::uint8_t> in_bits(const Topology& topo, const ChannelMask& m, std::size_t i) {
  const int u = topo.layers[i].in_unit;
  return u < 0 ? std::span<const std::uint8_t>{} : std::span<const std::uint8_t>(m.units[u]);
}

inline void check_mask(const Topology& topo, const ChannelMask& m) {
  if (m.units.size() != topo.units.size()) {
    throw ShapeError("mask has " + std::to_string(m.units.size()) + " units, topology has " +
                     std::to_string(topo.units.size()));
  }
  for (std::size_t u = 0; u < m.units.size(); ++u) {
    if (m.units[u].size() != topo.units[u].channels) throw ShapeError("mask unit " + std::to_string(u) + " has wrong length");
    if (m.kept(u) == 0) throw ShapeError("mask unit " + std::to_string(u) + " keeps no channel");
  }
}

// Bits packed MSB-first into hex nibbles; the tail nibble is zero-padded.
inline std::string bits_to_hex(const BitVec& bits) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  for (std::size_t i = 0; i < bits.size(); i += 4) {
    unsigned nib = 0;
    for (std::size_t b = 0; b < 4; ++b) nib = (nib << 1) | ((i + b < bits.size() && bits[i + b]) ? 1u : 0u);
    s.push_back(kDigits[nib]);
  }
  return s;
}

inline BitVec hex_to_bits(const std::string& hex, std::size_t length) {
  if (hex.size() != (length + 3) / 4) throw FormatError("hex mask '" + hex + "' does not encode " + std::to_string(length) + " bits");
  BitVec bits(length);
  for (std::size_t d = 0; d < hex.size(); ++d) {
    const char c = hex[d];
    unsigned nib;
    if (c >= '0' && c <= '9') nib = static_cast<unsigned>(c - '0');
    else if (c >= 'a' && c <= 'f') nib = static_cast<unsigned>(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F') nib = static_cast<unsigned>(c - 'A' + 10);
    else throw FormatError("bad hex digit in mask '" + hex + "'");
    for (std::size_t b = 0; b < 4; ++b) {
      const std::size_t i = d * 4 + b;
      const bool on = (nib >> (3 - b)) & 1u;
      if (i < length) bits[i] = on;
      else if (on) throw FormatError("non-zero padding bits in mask '" + hex + "'");
    }
  }
  return bits;
}

inline void to_json(nlohmann::json& j, const ChannelMask& m) {
  j = nlohmann::json::array();
  for (std::size_t u = 0; u < m.units.size(); ++u)
    j.push_back({{"unit", u}, {"channels", m.units[u].size()}, {"hex", bits_to_hex(m.units[u])}});
}

inline ChannelMask mask_from_json(const nlohmann::json& j) {
  ChannelMask m;
  for (const auto& e : j) m.units.push_back(hex_to_bits(e.at("hex").get<std::string>(), e.at("channels").get<std::size_t>()));
  return m;
}

}  // namespace ofp
