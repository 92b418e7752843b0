#pragma once

// Shared fixtures and independent reference implementations for the tests.

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ofaprune/ofaprune.hpp"

namespace testing_support {

using namespace ofp;

template <class T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

inline std::vector<double> to_double(std::span<const double> s) { return {s.begin(), s.end()}; }

// Direct (loop-nest) convolution over all channels, no masks.
template <class T>
Tensor<T> direct_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  Tensor<T> y({N, O, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double s = bias && !bias->empty() ? static_cast<double>((*bias)[o]) : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t kh = 0; kh < K; ++kh)
              for (std::size_t kw = 0; kw < K; ++kw) {
                const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
                const long iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                s += static_cast<double>(x.at(n, c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw))) *
                     static_cast<double>(w[((o * C + c) * K + kh) * K + kw]);
              }
          y.at(n, o, oh, ow) = static_cast<T>(s);
        }
  return y;
}

// Reference forward of a whole network in train-mode BN, with no mask
// machinery at all: plain loops over every channel.
template <class T>
Tensor<T> reference_forward(const SharedWeightStore<T>& store, const Tensor<T>& input) {
  std::vector<Tensor<T>> outs;
  Tensor<T> x = input;
  for (std::size_t i = 0; i < store.layers.size(); ++i) {
    const auto& p = store.layers[i];
    const auto& ls = store.spec.layers[i];
    Tensor<T> y;
    switch (p.kind) {
      case LayerKind::conv2d: y = direct_conv(x, p.weight, &p.bias, p.stride, p.padding); break;
      case LayerKind::batchnorm: {
        y = Tensor<T>(x.shape());
        const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        for (std::size_t c = 0; c < C; ++c) {
          double m = 0, v = 0;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < HW; ++k) m += static_cast<double>(x[(n * C + c) * HW + k]);
          m /= static_cast<double>(N * HW);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < HW; ++k) v += std::pow(static_cast<double>(x[(n * C + c) * HW + k]) - m, 2);
          v /= static_cast<double>(N * HW);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < HW; ++k)
              y[(n * C + c) * HW + k] = static_cast<T>(static_cast<double>(p.gamma[c]) * (static_cast<double>(x[(n * C + c) * HW + k]) - m) /
                                                           std::sqrt(v + kBnEpsilon) +
                                                       static_cast<double>(p.beta[c]));
        }
        break;
      }
      case LayerKind::relu: {
        y = x;
        if (ls.skip_from)
          for (std::size_t k = 0; k < y.size(); ++k) y[k] += outs[*ls.skip_from][k];
        for (auto& v : y.data()) v = v > 0 ? v : T{0};
        break;
      }
      case LayerKind::globalavgpool: {
        const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        y = Tensor<T>({N, C});
        for (std::size_t k = 0; k < N * C; ++k) {
          double s = 0;
          for (std::size_t q = 0; q < HW; ++q) s += static_cast<double>(x[k * HW + q]);
          y[k] = static_cast<T>(s / static_cast<double>(HW));
        }
        break;
      }
      case LayerKind::linear: {
        const std::size_t N = x.dim(0), I = x.dim(1), O = p.weight.dim(0);
        y = Tensor<T>({N, O});
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t o = 0; o < O; ++o) {
            double s = static_cast<double>(p.bias[o]);
            for (std::size_t k = 0; k < I; ++k) s += static_cast<double>(p.weight[o * I + k]) * static_cast<double>(x[n * I + k]);
            y[n * O + o] = static_cast<T>(s);
          }
        break;
      }
    }
    outs.push_back(y);
    x = y;
  }
  return x;
}

// Shape-walking FLOPs counter: simulates every layer's output extent by
// stepping the kernel window across the padded input and counts two FLOPs per
// multiply-add of each window position.
inline std::uint64_t brute_force_flops(const ArchSpec& spec, const std::vector<std::size_t>& kept_per_unit,
                                       std::size_t resolution) {
  const Topology topo = analyze(spec);
  std::size_t h = resolution;
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const auto& info = topo.layers[i];
    const std::size_t cin = info.in_unit < 0 ? info.in_channels : kept_per_unit[static_cast<std::size_t>(info.in_unit)];
    const std::size_t cout = info.out_unit < 0 ? info.out_channels : kept_per_unit[static_cast<std::size_t>(info.out_unit)];
    if (l.kind == LayerKind::conv2d) {
      std::size_t positions = 0;
      for (std::size_t start = 0; start + l.kernel <= h + 2 * l.padding; start += l.stride) ++positions;
      for (std::size_t oy = 0; oy < positions; ++oy)
        for (std::size_t ox = 0; ox < positions; ++ox)
          for (std::size_t tap = 0; tap < l.kernel * l.kernel; ++tap) total += 2ULL * cin * cout;
      h = positions;
    } else if (l.kind == LayerKind::linear) {
      for (std::size_t o = 0; o < cout; ++o) total += 2ULL * cin;
    }
  }
  return total;
}

// Random plain conv stacks for property tests; every draw accepts inputs of
// at least `min_resolution`.
inline ArchSpec random_spec(std::mt19937_64& rng, std::size_t classes = 4, std::size_t min_resolution = 12) {
  std::uniform_int_distribution<int> nconv(1, 4), width(1, 12), kernel(0, 2), stride(1, 2), coin(0, 1);
  for (;;) {
    ArchBuilder b("rand", 3, classes);
    const int n = nconv(rng);
    for (int i = 0; i < n; ++i) {
      const std::size_t k = static_cast<std::size_t>(2 * kernel(rng) + 1);
      b.conv(static_cast<std::size_t>(width(rng)), k, static_cast<std::size_t>(stride(rng)), coin(rng) ? k / 2 : 0,
             coin(rng) || i == 0);
      if (coin(rng)) b.bn();
      b.relu();
    }
    ArchSpec spec = b.finish();
    try {
      spatial_extents(spec, min_resolution);
      return spec;
    } catch (const ShapeError&) {
    }
  }
}

// Four-conv desk network used across the integration tests.
inline ArchSpec tiny_spec(std::size_t classes = 4) {
  return ArchBuilder("tiny", 3, classes).block(4, 3, 1).block(6, 3, 2).block(6, 3, 1).block(8, 3, 2, false).finish();
}

// stem(4) -> [conv 4 -> conv 4 (+stem)] -> head; the stem and the second conv
// of the block share one residual mask.
inline ArchSpec tiny_residual_spec(std::size_t classes = 4) {
  ArchBuilder b("tiny-res", 3, classes);
  b.conv(4, 3, 1, 1, true, 0).bn().relu();   // 0 1 2
  b.conv(5, 3, 1, 1, true).bn().relu();      // 3 4 5
  b.conv(4, 3, 1, 1, true, 0).bn().relu(2);  // 6 7 8
  return b.finish();
}

inline ChannelMask random_mask(const Topology& topo, std::uint64_t seed, double keep = 0.6) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution d(keep);
  ChannelMask m = full_mask(topo);
  for (auto& u : m.units) {
    for (auto& b : u) b = d(rng) ? 1 : 0;
    if (std::find(u.begin(), u.end(), 1) == u.end()) u[0] = 1;
  }
  return m;
}

// CE loss of a view plus its backward pass accumulated into `grads`.
template <class T>
T loss_and_grad(SharedWeightStore<T>& store, const ChannelMask& mask, const Tensor<T>& x, const std::vector<int>& y,
                Gradients<T>& grads) {
  SubnetView<T> view(store, mask);
  ForwardTape<T> tape;
  const auto logits = view.forward(x, x.dim(2), BnMode::train, &tape);
  const auto ce = cross_entropy_loss(logits, y);
  view.backward(tape, ce.grad, grads);
  return ce.loss;
}

inline std::vector<std::size_t> kept_counts(const ChannelMask& m) {
  std::vector<std::size_t> k(m.units.size());
  for (std::size_t u = 0; u < k.size(); ++u) k[u] = m.kept(u);
  return k;
}

// Exhaustive oracle over the 0.01 grid: counts kept channels with its own
// ceiling arithmetic and walks shapes with the brute-force counter.
inline double grid_sweep_rate(const ArchSpec& spec, std::uint64_t cap, std::size_t res, bool& feasible) {
  const auto topo = analyze(spec);
  for (int k = 0; k < 100; ++k) {
    std::vector<std::size_t> kept;
    for (const auto& u : topo.units) {
      const double want = std::ceil((1.0 - k / 100.0) * static_cast<double>(u.channels) - 1e-9);
      kept.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(want)));
    }
    if (brute_force_flops(spec, kept, res) <= cap) {
      feasible = true;
      return k / 100.0;
    }
  }
  feasible = false;
  return 0.99;
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("ofaprune_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace testing_support
