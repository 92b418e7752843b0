#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ofaprune/tensor.hpp"
#include "ofaprune/util.hpp"

namespace ofp {

// Deterministic generator for a tuple of seed components.
inline std::mt19937_64 seeded_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

struct Dataset {
  std::string split;
  std::size_t channels = 3, height = 32, width = 32;
  std::size_t classes = 10;
  std::vector<float> images;  // N x C x H x W, normalized
  std::vector<int> labels;
  std::vector<float> norm_mean;  // per channel, applied before storage
  std::vector<float> norm_std;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }

  std::uint64_t checksum() const {
    Fnv1a h;
    h.update(images.data(), images.size() * sizeof(float));
    h.update(labels.data(), labels.size() * sizeof(int));
    return h.digest();
  }

  void validate() const {
    if (labels.empty()) throw Error("dataset '" + split + "' is empty");
    if (images.size() != labels.size() * image_size()) throw ShapeError("dataset '" + split + "' image buffer size mismatch");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= classes) throw Error("dataset '" + split + "' label out of range");
  }
};

// ---- CIFAR-10 binary format ------------------------------------------------
// Each record: 1 label byte, then 3072 bytes (R plane, G plane, B plane, each
// 32x32 row-major).

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
inline constexpr std::array<float, 3> kCifarMean = {0.4914f, 0.4822f, 0.4465f};
inline constexpr std::array<float, 3> kCifarStd = {0.2470f, 0.2435f, 0.2616f};

struct CifarRecords {
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // records x 3072
  std::size_t size() const { return labels.size(); }
};

inline CifarRecords parse_cifar_records(const std::string& bytes, const std::string& origin = "buffer") {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError(origin + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                      std::to_string(kCifarRecord) + "-byte CIFAR-10 records");
  }
  CifarRecords r;
  const std::size_t n = bytes.size() / kCifarRecord;
  r.labels.resize(n);
  r.pixels.resize(n * kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = reinterpret_cast<const std::uint8_t*>(bytes.data()) + i * kCifarRecord;
    if (rec[0] > 9) throw FormatError(origin + ": record " + std::to_string(i) + " has label byte " + std::to_string(rec[0]));
    r.labels[i] = rec[0];
    std::copy(rec + 1, rec + kCifarRecord, r.pixels.begin() + static_cast<std::ptrdiff_t>(i * kCifarPixels));
  }
  return r;
}

inline void append_records(CifarRecords& into, const CifarRecords& more) {
  into.labels.insert(into.labels.end(), more.labels.begin(), more.labels.end());
  into.pixels.insert(into.pixels.end(), more.pixels.begin(), more.pixels.end());
}

// Normalizes with the fixed published CIFAR-10 channel statistics.
inline Dataset cifar_dataset(const CifarRecords& r, std::string split) {
  Dataset d;
  d.split = std::move(split);
  d.channels = 3;
  d.height = d.width = kCifarSide;
  d.classes = 10;
  d.norm_mean.assign(kCifarMean.begin(), kCifarMean.end());
  d.norm_std.assign(kCifarStd.begin(), kCifarStd.end());
  d.labels.assign(r.labels.begin(), r.labels.end());
  d.images.resize(r.pixels.size());
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    const std::size_t c = (i / plane) % 3;
    d.images[i] = (static_cast<float>(r.pixels[i]) / 255.0f - kCifarMean[c]) / kCifarStd[c];
  }
  d.validate();
  return d;
}

inline Dataset load_cifar10_file(const std::filesystem::path& path, std::string split) {
  return cifar_dataset(parse_cifar_records(read_file(path), path.string()), std::move(split));
}

// Reads data_batch_1..5.bin and test_batch.bin from `dir`.
inline std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  CifarRecords train;
  for (int b = 1; b <= 5; ++b) {
    const auto p = dir / ("data_batch_" + std::to_string(b) + ".bin");
    append_records(train, parse_cifar_records(read_file(p), p.string()));
  }
  const auto tp = dir / "test_batch.bin";
  return {cifar_dataset(train, "train"), cifar_dataset(parse_cifar_records(read_file(tp), tp.string()), "test")};
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(127.5f + 63.75f * v), 0L, 255L));
}

// Writes a 3-channel 32x32 dataset in CIFAR-10 record format, quantizing with
// to_byte (values in [-2, 2] map onto [0, 255]).
inline std::string export_cifar_records(const Dataset& d) {
  if (d.channels != 3 || d.height != kCifarSide || d.width != kCifarSide || d.classes > 10) {
    throw Error("export_cifar_records: dataset must be 3x32x32 with at most 10 classes");
  }
  std::string out;
  out.reserve(d.size() * kCifarRecord);
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.push_back(static_cast<char>(d.labels[i]));
    for (std::size_t k = 0; k < kCifarPixels; ++k) out.push_back(static_cast<char>(to_byte(d.images[i * kCifarPixels + k])));
  }
  return out;
}

// ---- synthetic benchmark ---------------------------------------------------

struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t n_per_class = 250;
  std::size_t classes = 8;
  std::size_t resolution = 32;
  std::size_t channels = 3;
  double noise_sigma = 1.2;
  int max_shift = 4;  // per-sample integer translation in [-max_shift, max_shift]
  std::size_t blobs = 2;

  bool operator==(const SyntheticConfig&) const = default;
};

// Class-conditional templates: a sum of Gaussian blobs with class-specific
// centres, widths and colours.
struct BlobTemplate {
  struct Blob {
    double cy, cx, radius;
    std::vector<double> color;
  };
  std::vector<Blob> blobs;

  std::vector<float> render(std::size_t channels, std::size_t res, int dy, int dx) const {
    std::vector<float> img(channels * res * res, 0.0f);
    for (const auto& b : blobs) {
      for (std::size_t y = 0; y < res; ++y) {
        for (std::size_t x = 0; x < res; ++x) {
          const double ry = static_cast<double>(y) - (b.cy + dy), rx = static_cast<double>(x) - (b.cx + dx);
          const double w = std::exp(-(ry * ry + rx * rx) / (2.0 * b.radius * b.radius));
          for (std::size_t c = 0; c < channels; ++c) img[(c * res + y) * res + x] += static_cast<float>(b.color[c] * w);
        }
      }
    }
    return img;
  }
};

inline std::vector<BlobTemplate> synthetic_templates(const SyntheticConfig& cfg) {
  auto rng = seeded_rng({cfg.seed, 0x7e3a11ULL});
  const double r = static_cast<double>(cfg.resolution);
  std::uniform_real_distribution<double> pos(0.25 * r, 0.75 * r);
  std::uniform_real_distribution<double> rad(0.08 * r, 0.16 * r);
  std::uniform_real_distribution<double> col(-1.0, 1.0);
  std::vector<BlobTemplate> t(cfg.classes);
  for (auto& tp : t) {
    for (std::size_t b = 0; b < cfg.blobs; ++b) {
      BlobTemplate::Blob blob{pos(rng), pos(rng), rad(rng), {}};
      for (std::size_t c = 0; c < cfg.channels; ++c) blob.color.push_back(col(rng));
      tp.blobs.push_back(blob);
    }
  }
  return t;
}

// Returns (train, test): per class, the first 80% of samples go to train.
inline std::pair<Dataset, Dataset> synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.classes < 2) throw Error("synthetic_dataset: need at least 2 classes");
  if (cfg.n_per_class < 5) throw Error("synthetic_dataset: need at least 5 samples per class");
  const auto templates = synthetic_templates(cfg);
  auto rng = seeded_rng({cfg.seed, 0x5a3b1eULL});
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> shift(-cfg.max_shift, cfg.max_shift);
  const std::size_t n_train = cfg.n_per_class * 4 / 5;
  Dataset train, test;
  for (Dataset* d : {&train, &test}) {
    d->channels = cfg.channels;
    d->height = d->width = cfg.resolution;
    d->classes = cfg.classes;
    d->norm_mean.assign(cfg.channels, 0.0f);
    d->norm_std.assign(cfg.channels, 1.0f);
  }
  train.split = "train";
  test.split = "test";
  for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      const int dy = shift(rng), dx = shift(rng);
      auto img = templates[c].render(cfg.channels, cfg.resolution, dy, dx);
      for (auto& v : img) v += static_cast<float>(cfg.noise_sigma * noise(rng));
      Dataset& d = i < n_train ? train : test;
      d.images.insert(d.images.end(), img.begin(), img.end());
      d.labels.push_back(static_cast<int>(c));
    }
  }
  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

// ---- resizing ----------------------------------------------------------------

enum class ResizeMethod { bilinear, nearest };

// Downsamples N x C x S x S to N x C x R x R. Sample positions use half-pixel
// centres: src = (dst + 0.5) * S / R - 0.5, clamped to [0, S - 1]; the right/
// bottom neighbour index is clamped to S - 1. Nearest picks floor((dst + 0.5) * S / R).
template <class T>
Tensor<T> resize_batch(const Tensor<T>& batch, std::size_t target, ResizeMethod method = ResizeMethod::bilinear) {
  require_rank(batch, 4, "resize_batch");
  const std::size_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  if (target > H || target > W) {
    throw Error("resize_batch: upscaling " + std::to_string(H) + " -> " + std::to_string(target) + " is not supported");
  }
  if (target == 0) throw Error("resize_batch: target resolution must be positive");
  if (target == H && target == W) return batch;
  Tensor<T> out({N, C, target, target});
  const double sy = static_cast<double>(H) / static_cast<double>(target);
  const double sx = static_cast<double>(W) / static_cast<double>(target);
  struct Tap {
    std::size_t i0, i1;
    T frac;
  };
  const auto taps = [&](std::size_t in, double scale) {
    std::vector<Tap> t(target);
    for (std::size_t d = 0; d < target; ++d) {
      if (method == ResizeMethod::nearest) {
        const auto i = std::min(static_cast<std::size_t>(std::floor((static_cast<double>(d) + 0.5) * scale)), in - 1);
        t[d] = {i, i, T{0}};
        continue;
      }
      double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      t[d] = {i0, std::min(i0 + 1, in - 1), static_cast<T>(src - static_cast<double>(i0))};
    }
    return t;
  };
  const auto ty = taps(H, sy), tx = taps(W, sx);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* src = batch.ptr() + nc * H * W;
    T* dst = out.ptr() + nc * target * target;
    for (std::size_t y = 0; y < target; ++y) {
      const T* r0 = src + ty[y].i0 * W;
      const T* r1 = src + ty[y].i1 * W;
      const T fy = ty[y].frac;
      for (std::size_t x = 0; x < target; ++x) {
        const T fx = tx[x].frac;
        const T top = (T{1} - fx) * r0[tx[x].i0] + fx * r0[tx[x].i1];
        const T bot = (T{1} - fx) * r1[tx[x].i0] + fx * r1[tx[x].i1];
        dst[y * target + x] = (T{1} - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

// ---- batching ------------------------------------------------------------------

// Epoch e's sample order is a pure function of (seed, e).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = seeded_rng({seed, epoch, 0x0dd5eedULL});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

struct Augment {
  bool flip = false;
  std::size_t crop_pad = 0;  // 0 disables random crop

  bool operator==(const Augment&) const = default;
};

template <class T>
struct Batch {
  Tensor<T> images;
  std::vector<int> labels;
};

template <class T>
Batch<T> make_batch(const Dataset& d, std::span<const std::size_t> indices, const Augment& aug = {},
                    std::uint64_t aug_seed = 0) {
  const std::size_t C = d.channels, H = d.height, W = d.width, sz = d.image_size();
  Batch<T> b{Tensor<T>({indices.size(), C, H, W}), {}};
  b.labels.reserve(indices.size());
  auto rng = seeded_rng({aug_seed, 0xa06ULL});
  const int pad = static_cast<int>(aug.crop_pad);
  std::uniform_int_distribution<int> off(-pad, pad);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const float* src = d.images.data() + indices[k] * sz;
    T* dst = b.images.ptr() + k * sz;
    b.labels.push_back(d.labels[indices[k]]);
    const bool flip = aug.flip && coin(rng);
    const int dy = pad ? off(rng) : 0, dx = pad ? off(rng) : 0;
    if (!flip && dy == 0 && dx == 0) {
      for (std::size_t i = 0; i < sz; ++i) dst[i] = static_cast<T>(src[i]);
      continue;
    }
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const long sy = static_cast<long>(y) + dy;
          long sx = static_cast<long>(x) + dx;
          if (flip) sx = static_cast<long>(W) - 1 - sx;
          const bool inside = sy >= 0 && sy < static_cast<long>(H) && sx >= 0 && sx < static_cast<long>(W);
          dst[(c * H + y) * W + x] = inside ? static_cast<T>(src[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)]) : T{0};
        }
  }
  return b;
}

// Splits an epoch order into batches; a trailing remainder smaller than two
// samples is dropped (batch statistics need at least two).
inline std::vector<std::vector<std::size_t>> batch_indices(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    if (end - i < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace ofp
