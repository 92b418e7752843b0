#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ofaprune/search.hpp"

namespace ofp {

enum class DistillMode { ta_chain, plain_teacher, none };

inline const char* to_string(DistillMode d) {
  switch (d) {
    case DistillMode::ta_chain: return "ta_chain";
    case DistillMode::plain_teacher: return "plain_teacher";
    case DistillMode::none: return "none";
  }
  return "?";
}

inline DistillMode distill_mode_from_string(const std::string& s) {
  if (s == "ta_chain") return DistillMode::ta_chain;
  if (s == "plain_teacher") return DistillMode::plain_teacher;
  if (s == "none") return DistillMode::none;
  throw FormatError("unknown distill mode '" + s + "'");
}

// Joint training starts either from fresh weights drawn with the run seed or
// from the weights the search stage ended with.
enum class InitMode { reinit, inherit };

inline const char* to_string(InitMode m) { return m == InitMode::reinit ? "reinit" : "inherit"; }

inline InitMode init_mode_from_string(const std::string& s) {
  if (s == "reinit") return InitMode::reinit;
  if (s == "inherit") return InitMode::inherit;
  throw FormatError("unknown init mode '" + s + "'");
}

struct TrainConfig {
  std::vector<std::size_t> resolutions{32, 28, 24, 20};  // descending
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 0.1;  // peak of the cosine schedule
  double momentum = 0.9;
  double weight_decay = 5e-4;
  DistillMode distill = DistillMode::ta_chain;
  std::string bn_mode = "auto";  // auto | shared | per_structure
  std::size_t calibration_batches = 8;
  std::uint64_t seed = 1;
  Augment augment{};
  InitMode init = InitMode::reinit;

  bool operator==(const TrainConfig&) const = default;

  std::size_t max_resolution() const { return resolutions.front(); }

  void validate() const {
    if (resolutions.empty()) throw Error("train: resolution list is empty");
    for (std::size_t i = 1; i < resolutions.size(); ++i)
      if (resolutions[i] >= resolutions[i - 1]) throw Error("train: resolutions must be strictly descending");
    if (batch_size < 2) throw Error("train: batch size must be >= 2 for batch normalization");
    if (epochs < 1) throw Error("train: epochs must be >= 1");
    if (calibration_batches < 1) throw Error("train: calibration_batches must be >= 1");
    if (bn_mode != "auto" && bn_mode != "shared" && bn_mode != "per_structure")
      throw FormatError("train: bn_mode must be auto, shared or per_structure");
  }

  // per_structure for pools of at most 8 structures unless set explicitly.
  BnSharing resolve_bn_sharing(std::size_t pool_size) const {
    if (bn_mode == "shared") return BnSharing::shared;
    if (bn_mode == "per_structure") return BnSharing::per_structure;
    return pool_size <= 8 ? BnSharing::per_structure : BnSharing::shared;
  }

  double lr_at(std::size_t epoch) const {
    return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
  }
};

struct Pick {
  std::size_t entry = 0;  // index into the pool, which is sorted by rho
  std::size_t resolution = 0;
  bool operator==(const Pick&) const = default;
};

struct IterationPlan {
  std::vector<Pick> picks;  // teacher first, student last
};

// Teacher: least-pruned entry at the largest resolution. Student: most-pruned
// entry. Up to two assistants drawn without replacement from the interior and
// ordered by rho. Non-teacher resolutions are uniform over the set.
inline IterationPlan sample_iteration_plan(const PrunedNetworkPool& pnp, const TrainConfig& cfg, std::mt19937_64& rng) {
  const std::size_t n = pnp.size();
  if (n == 0) throw Error("sample_iteration_plan: pruned network pool is empty");
  if (cfg.resolutions.empty()) throw Error("sample_iteration_plan: no resolutions");
  std::uniform_int_distribution<std::size_t> res_pick(0, cfg.resolutions.size() - 1);
  IterationPlan plan;
  plan.picks.push_back({0, cfg.max_resolution()});
  if (n == 1) return plan;
  std::vector<std::size_t> middle;
  const std::size_t interior = n - 2;
  if (interior == 1) {
    middle.push_back(1);
  } else if (interior >= 2) {
    const std::size_t a = std::uniform_int_distribution<std::size_t>(0, interior - 1)(rng);
    std::size_t b = std::uniform_int_distribution<std::size_t>(0, interior - 2)(rng);
    if (b >= a) ++b;
    middle = {1 + std::min(a, b), 1 + std::max(a, b)};
  }
  for (std::size_t m : middle) plan.picks.push_back({m, cfg.resolutions[res_pick(rng)]});
  plan.picks.push_back({n - 1, cfg.resolutions[res_pick(rng)]});
  return plan;
}

struct LossTerms {
  double loss_T = 0.0, loss_TA1 = 0.0, loss_TA2 = 0.0, loss_S = 0.0;
  double loss_total = 0.0;
  std::vector<double> per_pick;
};

// Places per-pick losses into the named terms: the first pick is the teacher,
// the last (when distinct) the student, the rest assistants in order.
inline LossTerms assign_loss_terms(const std::vector<double>& per_pick) {
  LossTerms t;
  t.per_pick = per_pick;
  const std::size_t k = per_pick.size();
  if (k >= 1) t.loss_T = per_pick[0];
  if (k >= 2) t.loss_S = per_pick[k - 1];
  if (k >= 3) t.loss_TA1 = per_pick[1];
  if (k >= 4) t.loss_TA2 = per_pick[2];
  t.loss_total = t.loss_T + t.loss_TA1 + t.loss_TA2 + t.loss_S;
  return t;
}

inline void check_chain_order(const PrunedNetworkPool& pnp, const IterationPlan& plan) {
  for (std::size_t k = 1; k < plan.picks.size(); ++k)
    if (pnp.entries.at(plan.picks[k].entry).rho < pnp.entries.at(plan.picks[k - 1].entry).rho)
      throw std::logic_error("iteration plan is not ordered by pruning rate");
}

// Runs every pick of the plan on one batch and accumulates all parameter
// gradients into `grads` (which the caller zeroes). Each pick after the first
// is distilled from a detached copy of an earlier pick's probabilities.
template <class T>
LossTerms compute_step_gradients(SharedWeightStore<T>& store, const PrunedNetworkPool& pnp, const IterationPlan& plan,
                                 const Batch<T>& batch, DistillMode distill, Gradients<T>& grads) {
  if (plan.picks.empty()) throw Error("training step: empty iteration plan");
  check_chain_order(pnp, plan);
  std::vector<double> losses;
  Tensor<T> teacher_probs, previous_probs;
  const std::span<const int> labels(batch.labels);
  for (std::size_t k = 0; k < plan.picks.size(); ++k) {
    const Pick& pick = plan.picks[k];
    const PnpEntry& entry = pnp.entries.at(pick.entry);
    SubnetView<T> view(store, entry.mask, entry.structure_id);
    const Tensor<T> x = resize_batch(batch.images, pick.resolution);
    ForwardTape<T> tape;
    const Tensor<T> logits = view.forward(x, pick.resolution, BnMode::train, &tape);
    LossResult<T> loss;
    if (k == 0 || distill == DistillMode::none) {
      loss = cross_entropy_loss(logits, labels);
    } else {
      loss = kl_distill_loss(logits, distill == DistillMode::ta_chain ? previous_probs : teacher_probs);
    }
    if (!std::isfinite(static_cast<double>(loss.loss))) {
      throw NonFiniteError("non-finite loss at pick " + std::to_string(k) + " (structure " +
                           std::to_string(entry.structure_id) + ", resolution " + std::to_string(pick.resolution) + ")");
    }
    losses.push_back(static_cast<double>(loss.loss));
    previous_probs = softmax(logits);
    if (k == 0) teacher_probs = previous_probs;
    view.backward(tape, loss.grad, grads);
  }
  return assign_loss_terms(losses);
}

// One iteration: all picks' gradients summed, then a single optimizer step.
template <class T>
LossTerms training_step(SharedWeightStore<T>& store, const PrunedNetworkPool& pnp, const IterationPlan& plan,
                        const Batch<T>& batch, DistillMode distill, Gradients<T>& grads, Sgd<T>& sgd,
                        const SgdConfig& sgd_cfg) {
  grads.zero();
  LossTerms t = compute_step_gradients(store, pnp, plan, batch, distill, grads);
  sgd_update(store, grads, sgd, sgd_cfg);
  return t;
}

// Recomputes BN statistics for (structure, resolution) from scratch by
// streaming `n_batches` batches through the view in accumulate mode. The
// batches are the first ones of a fixed seeded order over `data`.
template <class T>
void calibrate_bn(SharedWeightStore<T>& store, const PnpEntry& entry, std::size_t resolution, const Dataset& data,
                  std::size_t n_batches, std::size_t batch_size, std::uint64_t seed) {
  if (n_batches == 0) throw Error("calibrate_bn: n_batches must be >= 1");
  store.calibrated[{entry.structure_id, static_cast<int>(resolution)}] = store.fresh_bn_stats();
  SubnetView<T> view(store, entry.mask, entry.structure_id);
  const auto batches = batch_indices(epoch_order(data.size(), seed, 0xca11b8ULL), batch_size);
  for (std::size_t b = 0; b < std::min(n_batches, batches.size()); ++b) {
    const auto batch = make_batch<T>(data, batches[b]);
    view.forward(resize_batch(batch.images, resolution), resolution, BnMode::accumulate);
  }
}

struct EvalResult {
  int structure_id = 0;
  double rho = 0.0;
  std::size_t resolution = 0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::uint64_t flops = 0;
};

inline constexpr std::size_t kEvalBatch = 250;

template <class T>
EvalResult evaluate(SharedWeightStore<T>& store, const PnpEntry& entry, std::size_t resolution, const Dataset& test) {
  test.validate();
  SubnetView<T> view(store, entry.mask, entry.structure_id);
  EvalResult r{entry.structure_id, entry.rho, resolution, 0.0, 0.0, network_flops(store.spec, entry.mask, resolution).total};
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(test.size(), start + kEvalBatch); ++i) idx.push_back(i);
    const auto batch = make_batch<T>(test, idx);
    const auto logits = view.forward(resize_batch(batch.images, resolution), resolution, BnMode::eval);
    loss_sum += static_cast<double>(cross_entropy_loss(logits, std::span<const int>(batch.labels)).loss) *
                static_cast<double>(idx.size());
    const std::size_t K = logits.dim(1);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const T* z = logits.ptr() + n * K;
      correct += static_cast<std::size_t>(std::max_element(z, z + K) - z) == static_cast<std::size_t>(batch.labels[n]);
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  r.mean_loss = loss_sum / static_cast<double>(test.size());
  return r;
}

// Per epoch, per (structure, resolution) pair: mean loss of that pick and how
// often it was sampled, alongside the epoch's mean loss terms.
struct TrainEpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_T = 0.0, loss_TA1 = 0.0, loss_TA2 = 0.0, loss_S = 0.0, loss_total = 0.0;
  std::map<std::pair<int, std::size_t>, std::pair<double, std::size_t>> pick_loss;
};

template <class T>
std::vector<TrainEpochLog> joint_train(SharedWeightStore<T>& store, const PrunedNetworkPool& pnp, const Dataset& train,
                                       const TrainConfig& cfg) {
  cfg.validate();
  train.validate();
  if (pnp.size() == 0) throw Error("joint_train: pruned network pool is empty");
  if (cfg.resolve_bn_sharing(pnp.size()) == BnSharing::per_structure) {
    std::vector<int> ids;
    for (const auto& e : pnp.entries) ids.push_back(e.structure_id);
    store.enable_per_structure_bn(ids);
  }
  Gradients<T> grads(store);
  Sgd<T> sgd;
  auto plan_rng = seeded_rng({cfg.seed, 0x91a2ULL});
  std::vector<TrainEpochLog> logs;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    TrainEpochLog log;
    log.epoch = epoch + 1;
    log.lr = cfg.lr_at(epoch);
    const SgdConfig sgd_cfg{log.lr, cfg.momentum, cfg.weight_decay};
    const auto batches = batch_indices(epoch_order(train.size(), cfg.seed, 1000 + epoch), cfg.batch_size);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto batch = make_batch<T>(train, batches[bi], cfg.augment, cfg.seed * 1000003ULL + (1000 + epoch) * 7919ULL + bi);
      const auto plan = sample_iteration_plan(pnp, cfg, plan_rng);
      const LossTerms t = training_step(store, pnp, plan, batch, cfg.distill, grads, sgd, sgd_cfg);
      log.loss_T += t.loss_T;
      log.loss_TA1 += t.loss_TA1;
      log.loss_TA2 += t.loss_TA2;
      log.loss_S += t.loss_S;
      log.loss_total += t.loss_total;
      for (std::size_t k = 0; k < plan.picks.size(); ++k) {
        auto& slot = log.pick_loss[{pnp.entries[plan.picks[k].entry].structure_id, plan.picks[k].resolution}];
        slot.first += t.per_pick[k];
        ++slot.second;
      }
    }
    const double nb = static_cast<double>(batches.size());
    for (double* v : {&log.loss_T, &log.loss_TA1, &log.loss_TA2, &log.loss_S, &log.loss_total}) *v /= nb;
    logs.push_back(std::move(log));
  }
  return logs;
}

// One row per (epoch, structure, resolution) that was sampled that epoch. The
// loss_* columns carry the epoch means of the chain terms; pick_loss is the
// mean loss of that particular pair.
inline void write_train_csv(const std::filesystem::path& path, const std::vector<TrainEpochLog>& logs) {
  CsvWriter csv(path, "train",
                {"epoch", "structure_id", "resolution", "picks", "pick_loss", "loss_T", "loss_TA1", "loss_TA2", "loss_S",
                 "loss_total", "lr"});
  for (const auto& l : logs)
    for (const auto& [key, v] : l.pick_loss)
      csv.row({std::to_string(l.epoch), std::to_string(key.first), std::to_string(key.second), std::to_string(v.second),
               fmt_real(v.first / static_cast<double>(v.second)), fmt_real(l.loss_T), fmt_real(l.loss_TA1),
               fmt_real(l.loss_TA2), fmt_real(l.loss_S), fmt_real(l.loss_total), fmt_real(l.lr)});
}

inline void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalResult>& results) {
  CsvWriter csv(path, "eval", {"structure_id", "rho", "resolution", "flops", "flops_div2", "top1", "mean_loss"});
  for (const auto& r : results)
    csv.row({std::to_string(r.structure_id), fmt_real(r.rho, 4), std::to_string(r.resolution), std::to_string(r.flops),
             std::to_string(r.flops / 2), fmt_real(r.accuracy), fmt_real(r.mean_loss)});
}

}  // namespace ofp
