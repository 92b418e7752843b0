#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "ofaprune/data.hpp"
#include "ofaprune/flops.hpp"
#include "ofaprune/losses.hpp"
#include "ofaprune/subnet.hpp"

namespace ofp {

enum class SimilarityMetric { cosine, overlap, dice };

inline const char* to_string(SimilarityMetric m) {
  switch (m) {
    case SimilarityMetric::cosine: return "cosine";
    case SimilarityMetric::overlap: return "overlap";
    case SimilarityMetric::dice: return "dice";
  }
  return "?";
}

inline SimilarityMetric similarity_metric_from_string(const std::string& s) {
  if (s == "cosine") return SimilarityMetric::cosine;
  if (s == "overlap") return SimilarityMetric::overlap;
  if (s == "dice") return SimilarityMetric::dice;
  throw FormatError("unknown similarity metric '" + s + "'");
}

struct SearchConfig {
  std::vector<double> rates{0.3, 0.5, 0.7, 0.8};
  double tau = 0.9;
  SimilarityMetric metric = SimilarityMetric::cosine;
  // A rate freezes once its masks at `consecutive` successive epochs are
  // pairwise (adjacent) more similar than tau.
  std::size_t consecutive = 2;
  double sparsity = 1e-4;  // lambda of the L1 penalty on BN gamma
  double lr = 0.5;
  // The step actually used is lr * batch_size / lr_reference_batch.
  std::size_t lr_reference_batch = 256;
  std::size_t max_epochs = 15;
  std::size_t batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double gamma_init = 0.5;
  std::uint64_t seed = 1;
  Augment augment{};

  bool operator==(const SearchConfig&) const = default;

  double effective_lr() const {
    return lr * static_cast<double>(batch_size) / static_cast<double>(lr_reference_batch);
  }

  void validate() const {
    if (rates.empty()) throw Error("search: at least one pruning rate is required");
    for (std::size_t i = 0; i < rates.size(); ++i) {
      if (rates[i] < 0.0 || rates[i] >= 1.0) throw Error("search: pruning rates must lie in [0, 1)");
      if (i && rates[i] <= rates[i - 1]) throw Error("search: pruning rates must be strictly increasing");
    }
    if (!(tau >= 0.0 && tau <= 1.0)) throw Error("search: tau must lie in [0, 1]");
    if (sparsity < 0.0) throw Error("search: sparsity factor must be >= 0");
    if (consecutive < 2) throw Error("search: consecutive window must be >= 2 epochs");
    if (batch_size < 2) throw Error("search: batch size must be >= 2");
    if (max_epochs < 1) throw Error("search: max_epochs must be >= 1");
  }
};

// lambda * sum |gamma| over the BN layers of every mask unit. When `grads` is
// given, adds the subgradient lambda * sign(gamma) (0 at 0) to it.
template <class T>
double sparsity_penalty(const SharedWeightStore<T>& store, double lambda, Gradients<T>* grads = nullptr) {
  double total = 0.0;
  if (lambda == 0.0) return 0.0;
  for (const auto& unit : store.topo.units) {
    for (std::size_t l : unit.batchnorms) {
      const auto& gamma = store.layers[l].gamma;
      for (std::size_t c = 0; c < gamma.size(); ++c) {
        const double g = static_cast<double>(gamma[c]);
        total += std::abs(g);
        if (grads) {
          const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
          grads->layers[l].gamma[c] += static_cast<T>(lambda * s);
        }
      }
    }
  }
  return lambda * total;
}

// Importance of each channel of each unit: mean |gamma| over the unit's BN
// layers, or the mean L1 norm of the unit's filters when it has no BN.
template <class T>
std::vector<std::vector<double>> channel_scores(const SharedWeightStore<T>& store) {
  std::vector<std::vector<double>> scores;
  for (const auto& unit : store.topo.units) {
    std::vector<double> s(unit.channels, 0.0);
    if (!unit.batchnorms.empty()) {
      for (std::size_t l : unit.batchnorms)
        for (std::size_t c = 0; c < unit.channels; ++c) s[c] += std::abs(static_cast<double>(store.layers[l].gamma[c]));
      for (auto& v : s) v /= static_cast<double>(unit.batchnorms.size());
    } else {
      for (std::size_t l : unit.convs) {
        const auto& w = store.layers[l].weight;
        const std::size_t per = w.size() / unit.channels;
        for (std::size_t c = 0; c < unit.channels; ++c)
          for (std::size_t k = 0; k < per; ++k) s[c] += std::abs(static_cast<double>(w[c * per + k]));
      }
      for (auto& v : s) v /= static_cast<double>(unit.convs.size());
    }
    scores.push_back(std::move(s));
  }
  return scores;
}

// Global-rank cut: sort every prunable channel by score (ties by unit, then
// channel, ascending) and prune the first floor(rate * total), skipping any
// channel that is the last survivor of its unit. Skipped channels are listed
// in the mask's protections and the cut moves on to the next-smallest one.
inline ChannelMask extract_mask_from_scores(const std::vector<std::vector<double>>& scores, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw Error("extract_mask: rate must lie in [0, 1)");
  ChannelMask m;
  m.rate = rate;
  std::vector<std::tuple<double, std::size_t, std::size_t>> order;
  std::vector<std::size_t> kept;
  for (std::size_t u = 0; u < scores.size(); ++u) {
    m.units.emplace_back(scores[u].size(), std::uint8_t{1});
    kept.push_back(scores[u].size());
    for (std::size_t c = 0; c < scores[u].size(); ++c) order.emplace_back(scores[u][c], u, c);
  }
  std::sort(order.begin(), order.end());
  const auto target = static_cast<std::size_t>(std::floor(rate * static_cast<double>(order.size()) + 1e-9));
  std::size_t pruned = 0;
  for (const auto& [score, u, c] : order) {
    if (pruned == target) break;
    if (kept[u] <= 1) {
      m.protections.push_back({u, c});
      continue;
    }
    m.units[u][c] = 0;
    --kept[u];
    ++pruned;
  }
  return m;
}

template <class T>
ChannelMask extract_mask(const SharedWeightStore<T>& store, double rate) {
  return extract_mask_from_scores(channel_scores(store), rate);
}

// Similarity of two masks flattened to bit vectors a, b:
//   cosine       a.b / (|a| |b|)
//   overlap      a.b / (a.a + b.b)      (identical masks give 0.5)
//   dice         2 a.b / (a.a + b.b)
// An all-zero operand yields 0.
inline double mask_similarity(const ChannelMask& a, const ChannelMask& b, SimilarityMetric metric) {
  if (a.units.size() != b.units.size()) throw ShapeError("mask_similarity: masks have different topologies");
  for (std::size_t u = 0; u < a.units.size(); ++u)
    if (a.units[u].size() != b.units[u].size()) throw ShapeError("mask_similarity: masks have different topologies");
  const auto va = a.flat(), vb = b.flat();
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    ab += va[i] * vb[i];
    aa += va[i] * va[i];
    bb += vb[i] * vb[i];
  }
  if (aa == 0.0 || bb == 0.0) {
    std::cerr << "warning: mask_similarity on an all-zero mask; returning 0\n";
    return 0.0;
  }
  switch (metric) {
    case SimilarityMetric::cosine: return ab / std::sqrt(aa * bb);
    case SimilarityMetric::overlap: return ab / (aa + bb);
    case SimilarityMetric::dice: return 2.0 * ab / (aa + bb);
  }
  return 0.0;
}

// ---- pruned network pool -------------------------------------------------------

struct PnpEntry {
  int structure_id = 0;
  double rho = 0.0;
  ChannelMask mask;
  std::size_t freeze_epoch = 0;
  bool forced = false;  // hit max_epochs without converging
  std::vector<double> similarity_history;
  std::map<std::size_t, std::uint64_t> verified_flops;  // resolution -> FLOPs

  bool operator==(const PnpEntry&) const = default;
};

struct PrunedNetworkPool {
  std::string arch_hash;
  std::string metric = "cosine";
  double tau = 0.9;
  std::vector<PnpEntry> entries;  // ascending rho

  std::size_t size() const { return entries.size(); }
  bool operator==(const PrunedNetworkPool&) const = default;
};

inline void annotate_flops(PrunedNetworkPool& pnp, const ArchSpec& spec, const std::vector<std::size_t>& resolutions) {
  for (auto& e : pnp.entries) {
    e.verified_flops.clear();
    for (auto r : resolutions) e.verified_flops[r] = network_flops(spec, e.mask, r).total;
  }
}

inline nlohmann::json pnp_to_json(const PrunedNetworkPool& pnp) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : pnp.entries) {
    nlohmann::json prot = nlohmann::json::array();
    for (const auto& p : e.mask.protections) prot.push_back({{"unit", p.unit}, {"channel", p.channel}});
    nlohmann::json flops = nlohmann::json::object();
    for (const auto& [r, f] : e.verified_flops) flops[std::to_string(r)] = f;
    entries.push_back({{"structure_id", e.structure_id},
                       {"rho", e.rho},
                       {"realized_rate", e.mask.realized_rate()},
                       {"freeze_epoch", e.freeze_epoch},
                       {"forced", e.forced},
                       {"similarity_history", e.similarity_history},
                       {"masks", e.mask},
                       {"protections", prot},
                       {"verified_flops", flops}});
  }
  return {{"format", "ofaprune-pnp"},
          {"version", kFormatVersion},
          {"arch_hash", pnp.arch_hash},
          {"metric", pnp.metric},
          {"tau", pnp.tau},
          {"entries", entries}};
}

inline PrunedNetworkPool pnp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "ofaprune-pnp") throw FormatError("not a PNP file");
    if (j.at("version").get<int>() != kFormatVersion) throw FormatError("unsupported PNP version");
    PrunedNetworkPool pnp;
    pnp.arch_hash = j.at("arch_hash").get<std::string>();
    pnp.metric = j.at("metric").get<std::string>();
    pnp.tau = j.at("tau").get<double>();
    for (const auto& je : j.at("entries")) {
      PnpEntry e;
      e.structure_id = je.at("structure_id").get<int>();
      e.rho = je.at("rho").get<double>();
      e.mask = mask_from_json(je.at("masks"));
      e.mask.rate = e.rho;
      e.mask.structure_id = e.structure_id;
      for (const auto& p : je.at("protections")) e.mask.protections.push_back({p.at("unit").get<std::size_t>(), p.at("channel").get<std::size_t>()});
      e.freeze_epoch = je.at("freeze_epoch").get<std::size_t>();
      e.forced = je.at("forced").get<bool>();
      e.similarity_history = je.at("similarity_history").get<std::vector<double>>();
      for (const auto& [k, v] : je.at("verified_flops").items()) e.verified_flops[std::stoul(k)] = v.get<std::uint64_t>();
      pnp.entries.push_back(std::move(e));
    }
    return pnp;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("PNP file: ") + e.what());
  }
}

inline void save_pnp(const PrunedNetworkPool& pnp, const std::filesystem::path& path) {
  write_file(path, pnp_to_json(pnp).dump(2) + "\n");
}

inline PrunedNetworkPool load_pnp(const std::filesystem::path& path, const ArchSpec& spec) {
  PrunedNetworkPool pnp;
  try {
    pnp = pnp_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (pnp.arch_hash != arch_hash(spec)) throw FormatError(path.string() + ": PNP was searched on a different architecture");
  const Topology topo = analyze(spec);
  for (const auto& e : pnp.entries) check_mask(topo, e.mask);
  return pnp;
}

// ---- search loop ---------------------------------------------------------------

struct SearchEpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean cross-entropy
  double penalty = 0.0;
  double train_accuracy = 0.0;
  std::vector<std::optional<double>> similarity;  // per rate; empty at epoch 1
};

template <class T>
struct SearchResult {
  PrunedNetworkPool pnp;
  std::vector<SearchEpochLog> epochs;
  SharedWeightStore<T> store;
};

// Sparsity-regularized training of the full model; after every epoch the mask
// of each unfrozen rate is extracted and compared with the previous epoch's.
template <class T>
SearchResult<T> run_search(const ArchSpec& spec, const SearchConfig& cfg, const Dataset& train) {
  cfg.validate();
  train.validate();
  if (train.channels != spec.input_channels) throw ShapeError("search: dataset channels do not match the architecture");
  SearchResult<T> result{{}, {}, build_network<T>(spec, cfg.seed, cfg.gamma_init)};
  auto& store = result.store;
  result.pnp.arch_hash = arch_hash(spec);
  result.pnp.metric = to_string(cfg.metric);
  result.pnp.tau = cfg.tau;

  const std::size_t R = cfg.rates.size();
  const std::size_t res = train.height;
  SubnetView<T> view(store, full_mask(store.topo));
  Gradients<T> grads(store);
  Sgd<T> sgd;
  const SgdConfig sgd_cfg{cfg.effective_lr(), cfg.momentum, cfg.weight_decay};

  std::vector<std::optional<ChannelMask>> prev(R);
  std::vector<std::optional<PnpEntry>> frozen(R);
  std::vector<std::size_t> streak(R, 0);
  std::vector<std::vector<double>> history(R);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    const auto batches = batch_indices(order, cfg.batch_size);
    double loss_sum = 0.0, pen_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      auto batch = make_batch<T>(train, batches[bi], cfg.augment, cfg.seed * 1000003ULL + epoch * 7919ULL + bi);
      grads.zero();
      ForwardTape<T> tape;
      const auto logits = view.forward(batch.images, res, BnMode::train, &tape);
      const auto ce = cross_entropy_loss(logits, std::span<const int>(batch.labels));
      if (!std::isfinite(static_cast<double>(ce.loss))) {
        throw NonFiniteError("search diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi));
      }
      view.backward(tape, ce.grad, grads);
      pen_sum += sparsity_penalty(store, cfg.sparsity, &grads);
      sgd_update(store, grads, sgd, sgd_cfg);
      loss_sum += static_cast<double>(ce.loss);
      const std::size_t K = logits.dim(1);
      for (std::size_t n = 0; n < batch.labels.size(); ++n) {
        const T* z = logits.ptr() + n * K;
        correct += static_cast<std::size_t>(std::max_element(z, z + K) - z) == static_cast<std::size_t>(batch.labels[n]);
      }
      seen += batch.labels.size();
    }
    SearchEpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(batches.size());
    log.penalty = pen_sum / static_cast<double>(batches.size());
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    log.similarity.resize(R);

    const auto scores = channel_scores(store);
    for (std::size_t r = 0; r < R; ++r) {
      ChannelMask m = extract_mask_from_scores(scores, cfg.rates[r]);
      if (prev[r]) {
        const double s = mask_similarity(*prev[r], m, cfg.metric);
        log.similarity[r] = s;
        if (!frozen[r]) {
          history[r].push_back(s);
          streak[r] = s > cfg.tau ? streak[r] + 1 : 0;
          if (streak[r] + 1 >= cfg.consecutive) frozen[r] = PnpEntry{0, cfg.rates[r], m, epoch, false, history[r], {}};
        }
      }
      prev[r] = std::move(m);
    }
    result.epochs.push_back(std::move(log));
    if (std::all_of(frozen.begin(), frozen.end(), [](const auto& f) { return f.has_value(); })) break;
  }

  for (std::size_t r = 0; r < R; ++r) {
    if (!frozen[r]) {
      std::cerr << "warning: rate " << cfg.rates[r] << " did not converge within " << cfg.max_epochs
                << " epochs; freezing its final mask\n";
      frozen[r] = PnpEntry{0, cfg.rates[r], *prev[r], result.epochs.size(), true, history[r], {}};
    }
    PnpEntry e = std::move(*frozen[r]);
    e.structure_id = static_cast<int>(r);
    e.mask.structure_id = e.structure_id;
    e.mask.rate = e.rho;
    result.pnp.entries.push_back(std::move(e));
  }
  return result;
}

// Fig.-4 style matrix: one row per epoch from 2 on, one column per rate.
inline void write_similarity_csv(const std::filesystem::path& path, const SearchConfig& cfg,
                                 const std::vector<SearchEpochLog>& epochs) {
  std::vector<std::string> header{"epoch"};
  for (double r : cfg.rates) header.push_back("rho_" + fmt_real(r, 2));
  CsvWriter csv(path, "similarity", header);
  for (const auto& e : epochs) {
    if (e.epoch < 2) continue;
    std::vector<std::string> row{std::to_string(e.epoch)};
    for (const auto& s : e.similarity) row.push_back(s ? fmt_real(*s) : "");
    csv.row(row);
  }
}

inline void write_search_log_csv(const std::filesystem::path& path, const std::vector<SearchEpochLog>& epochs,
                                 double lr) {
  CsvWriter csv(path, "search", {"epoch", "loss", "sparsity_penalty", "train_top1", "lr"});
  for (const auto& e : epochs)
    csv.row({std::to_string(e.epoch), fmt_real(e.loss), fmt_real(e.penalty), fmt_real(e.train_accuracy), fmt_real(lr)});
}

}  // namespace ofp
