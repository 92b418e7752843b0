#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ofaprune/checkpoint.hpp"
#include "ofaprune/config.hpp"

namespace ofp {

enum class Stage { budget, search, train, calibrate, eval, export_, report };

inline constexpr Stage kPipelineStages[] = {Stage::budget, Stage::search, Stage::train, Stage::calibrate,
                                            Stage::eval,   Stage::export_, Stage::report};

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::budget: return "budget";
    case Stage::search: return "search";
    case Stage::train: return "train";
    case Stage::calibrate: return "calibrate";
    case Stage::eval: return "eval";
    case Stage::export_: return "export";
    case Stage::report: return "report";
  }
  return "?";
}

inline Stage stage_from_string(const std::string& s) {
  for (Stage st : kPipelineStages)
    if (s == to_string(st)) return st;
  throw Error("unknown stage '" + s + "'");
}

// One row of the deployment plan: for a device at one resolution, the
// structure its solved rate maps to (smallest searched rate >= the solved
// one) with a re-check of its real FLOPs, and the most accurate structure
// that fits the cap.
struct DeploymentRow {
  BudgetSolution solution;
  std::optional<int> assigned;
  std::uint64_t assigned_flops = 0;
  bool within_cap = false;
  std::optional<EvalResult> best;
};

inline std::vector<DeploymentRow> deployment_plan(const ArchSpec& spec, const RunConfig& cfg,
                                                  const PrunedNetworkPool& pnp, const std::vector<EvalResult>& results) {
  std::vector<DeploymentRow> rows;
  for (const auto& sol : solve_budgets(spec, cfg)) {
    DeploymentRow row{sol, std::nullopt, 0, false, std::nullopt};
    const std::uint64_t cap = DeviceBudget{sol.device, sol.cap_mflops, {}}.cap_flops();
    if (sol.feasible) {
      for (const auto& e : pnp.entries) {
        if (e.rho + 1e-9 < sol.rho) continue;
        row.assigned = e.structure_id;
        row.assigned_flops = network_flops(spec, e.mask, sol.resolution).total;
        row.within_cap = row.assigned_flops <= cap;
        break;
      }
    }
    for (const auto& r : results) {
      if (r.resolution != sol.resolution || r.flops > cap) continue;
      if (!row.best || r.accuracy > row.best->accuracy || (r.accuracy == row.best->accuracy && r.rho < row.best->rho))
        row.best = r;
    }
    if (row.assigned && !row.within_cap)
      std::cerr << "warning: structure " << *row.assigned << " exceeds the cap of '" << sol.device << "' at resolution "
                << sol.resolution << " (" << row.assigned_flops << " > " << cap << " FLOPs)\n";
    rows.push_back(row);
  }
  return rows;
}

inline void write_budget_csv(const std::filesystem::path& path, const std::vector<BudgetSolution>& sols) {
  CsvWriter csv(path, "budget", {"device", "resolution", "cap_mflops", "rho", "achieved_flops", "feasible", "achieved_flops_div2"});
  for (const auto& s : sols)
    csv.row({s.device, std::to_string(s.resolution), fmt_real(s.cap_mflops), fmt_real(s.rho, 4),
             std::to_string(s.achieved_flops), s.feasible ? "true" : "false", std::to_string(s.achieved_flops / 2)});
}

inline void write_deployment_csv(const std::filesystem::path& path, const std::vector<DeploymentRow>& rows) {
  CsvWriter csv(path, "deployment",
                {"device", "cap_mflops", "resolution", "solved_rho", "feasible", "assigned_structure", "assigned_flops",
                 "within_cap", "best_structure", "best_flops", "best_top1"});
  for (const auto& r : rows)
    csv.row({r.solution.device, fmt_real(r.solution.cap_mflops), std::to_string(r.solution.resolution),
             fmt_real(r.solution.rho, 4), r.solution.feasible ? "true" : "false",
             r.assigned ? std::to_string(*r.assigned) : "", r.assigned ? std::to_string(r.assigned_flops) : "",
             r.assigned ? (r.within_cap ? "true" : "false") : "", r.best ? std::to_string(r.best->structure_id) : "",
             r.best ? std::to_string(r.best->flops) : "", r.best ? fmt_real(r.best->accuracy) : ""});
}

inline nlohmann::json eval_to_json(const std::vector<EvalResult>& results) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : results)
    a.push_back({{"structure_id", r.structure_id},
                 {"rho", r.rho},
                 {"resolution", r.resolution},
                 {"top1", r.accuracy},
                 {"mean_loss", r.mean_loss},
                 {"flops", r.flops}});
  return {{"format", "ofaprune-eval"}, {"version", kFormatVersion}, {"results", a}};
}

inline std::vector<EvalResult> eval_from_json(const nlohmann::json& j) {
  std::vector<EvalResult> out;
  for (const auto& r : j.at("results"))
    out.push_back({r.at("structure_id").get<int>(), r.at("rho").get<double>(), r.at("resolution").get<std::size_t>(),
                   r.at("top1").get<double>(), r.at("mean_loss").get<double>(), r.at("flops").get<std::uint64_t>()});
  return out;
}

// Orchestrates the stages over one run directory. Every stage reads its
// inputs from files written by earlier stages, so any stage can be rerun on
// its own.
template <class T>
class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    spec_ = load_arch(cfg_.arch_path());
    cfg_.search.rates = resolve_rates(spec_, cfg_);
    cfg_.search.validate();
    dir_ = cfg_.run_dir();
  }

  const RunConfig& config() const { return cfg_; }
  const ArchSpec& spec() const { return spec_; }
  const std::filesystem::path& dir() const { return dir_; }

  // Runs every stage in order. With `resume`, stages already completed under
  // the same configuration are skipped.
  void run_all(bool resume) {
    for (Stage s : kPipelineStages) run(s, resume);
  }

  void run(Stage s, bool resume = false, std::optional<int> structure = std::nullopt) {
    std::filesystem::create_directories(dir_ / "stages");
    write_run_manifest();
    const auto marker = dir_ / "stages" / (std::string(to_string(s)) + ".done");
    if (resume && !structure && std::filesystem::exists(marker) && read_file(marker) == fingerprint()) {
      std::cout << "[" << to_string(s) << "] up to date, skipped\n";
      return;
    }
    std::cout << "[" << to_string(s) << "] running\n";
    try {
      switch (s) {
        case Stage::budget: stage_budget(); break;
        case Stage::search: stage_search(); break;
        case Stage::train: stage_train(); break;
        case Stage::calibrate: stage_calibrate(); break;
        case Stage::eval: stage_eval(); break;
        case Stage::export_: stage_export(structure); break;
        case Stage::report: stage_report(); break;
      }
    } catch (const std::exception& e) {
      const nlohmann::json failure{{"stage", to_string(s)}, {"error", e.what()}};
      write_file(dir_ / "failure.json", failure.dump(2) + "\n");
      throw StageError(std::string("stage '") + to_string(s) + "' failed: " + e.what());
    }
    if (!structure) write_file(marker, fingerprint());
    std::filesystem::remove(dir_ / "failure.json");
  }

  const Dataset& train_data() { return load_data().first; }
  const Dataset& test_data() { return load_data().second; }

 private:
  std::string fingerprint() const {
    Fnv1a h;
    const std::string s = config_to_json(cfg_).dump() + arch_hash(spec_);
    h.update(s.data(), s.size());
    return hex64(h.digest()) + "\n";
  }

  void write_run_manifest() {
    const nlohmann::json j{{"format", "ofaprune-run"},
                           {"version", kFormatVersion},
                           {"tool", kToolName},
                           {"config", config_to_json(cfg_)},
                           {"arch", spec_},
                           {"arch_hash", arch_hash(spec_)},
                           {"rates", cfg_.search.rates}};
    write_file(dir_ / "run.json", j.dump(2) + "\n");
  }

  std::pair<Dataset, Dataset>& load_data() {
    if (!data_) {
      if (cfg_.data.kind == "cifar10") data_ = load_cifar10(cfg_.resolve(cfg_.data.cifar_dir));
      else data_ = synthetic_dataset(cfg_.data.synthetic);
      const Dataset& d = data_->first;
      if (d.channels != spec_.input_channels) throw ShapeError("dataset channels do not match the architecture input");
      if (d.classes != spec_.num_classes) throw ShapeError("dataset class count does not match the architecture head");
      if (d.height != d.width || d.height < cfg_.train.max_resolution())
        throw ShapeError("dataset resolution is below the largest training resolution");
    }
    return *data_;
  }

  PrunedNetworkPool load_pool() const {
    if (!std::filesystem::exists(dir_ / "pnp.json")) throw StageError("no pruned network pool; run the search stage first");
    return load_pnp(dir_ / "pnp.json", spec_);
  }

  SharedWeightStore<T> load_stage_checkpoint(const std::string& stem, const char* producer) const {
    if (!std::filesystem::exists(dir_ / (stem + ".json")))
      throw StageError(std::string("no ") + stem + " checkpoint; run the " + producer + " stage first");
    return load_checkpoint<T>(dir_, stem);
  }

  void stage_budget() {
    const auto sols = solve_budgets(spec_, cfg_);
    write_budget_csv(dir_ / "budget.csv", sols);
    for (const auto& s : sols)
      std::cout << "  " << s.device << " @" << s.resolution << ": rho " << fmt_real(s.rho, 2)
                << (s.feasible ? "" : " (infeasible)") << ", " << s.achieved_flops << " FLOPs\n";
  }

  void stage_search() {
    auto result = run_search<T>(spec_, cfg_.search, train_data());
    annotate_flops(result.pnp, spec_, cfg_.train.resolutions);
    save_pnp(result.pnp, dir_ / "pnp.json");
    write_similarity_csv(dir_ / "similarity.csv", cfg_.search, result.epochs);
    write_search_log_csv(dir_ / "search.csv", result.epochs, cfg_.search.effective_lr());
    save_checkpoint(result.store, dir_, "searched");
    for (const auto& e : result.pnp.entries)
      std::cout << "  rho " << fmt_real(e.rho, 2) << ": frozen at epoch " << e.freeze_epoch << (e.forced ? " (forced)" : "")
                << ", realized " << fmt_real(e.mask.realized_rate(), 3) << "\n";
  }

  void stage_train() {
    const auto pnp = load_pool();
    SharedWeightStore<T> store = cfg_.train.init == InitMode::inherit ? load_stage_checkpoint("searched", "search")
                                                                      : build_network<T>(spec_, cfg_.seed, 1.0);
    const auto logs = joint_train(store, pnp, train_data(), cfg_.train);
    write_train_csv(dir_ / "train.csv", logs);
    save_checkpoint(store, dir_, "trained");
    const auto& last = logs.back();
    std::cout << "  final epoch loss_total " << fmt_real(last.loss_total, 4) << "\n";
  }

  void stage_calibrate() {
    const auto pnp = load_pool();
    auto store = load_stage_checkpoint("trained", "train");
    store.calibrated.clear();
    for (const auto& e : pnp.entries)
      for (std::size_t r : cfg_.train.resolutions)
        calibrate_bn(store, e, r, train_data(), cfg_.train.calibration_batches, cfg_.train.batch_size, cfg_.seed);
    save_checkpoint(store, dir_, "calibrated");
  }

  SharedWeightStore<T> evaluation_store() const {
    if (std::filesystem::exists(dir_ / "calibrated.json")) return load_checkpoint<T>(dir_, "calibrated");
    auto store = load_stage_checkpoint("trained", "train");
    if (store.bn_sharing == BnSharing::shared)
      throw StageError("eval needs calibrated BN statistics in shared BN mode; run the calibrate stage first");
    return store;
  }

  void stage_eval() {
    const auto pnp = load_pool();
    auto store = evaluation_store();
    std::vector<EvalResult> results;
    for (const auto& e : pnp.entries)
      for (std::size_t r : cfg_.train.resolutions) {
        results.push_back(evaluate(store, e, r, test_data()));
        std::cout << "  structure " << e.structure_id << " @" << r << ": top1 " << fmt_real(results.back().accuracy, 4)
                  << ", " << results.back().flops << " FLOPs\n";
      }
    write_eval_csv(dir_ / "eval.csv", results);
    write_file(dir_ / "eval.json", eval_to_json(results).dump(2) + "\n");
  }

  void stage_export(std::optional<int> structure) {
    const auto pnp = load_pool();
    const auto store = evaluation_store();
    bool found = false;
    for (const auto& e : pnp.entries) {
      if (structure && e.structure_id != *structure) continue;
      found = true;
      const auto compact = export_structure(store, e);
      const auto out = dir_ / "export" / ("structure_" + std::to_string(e.structure_id));
      save_checkpoint(compact, out, "model");
      write_file(out / "arch.json", nlohmann::json(compact.spec).dump(2) + "\n");
      const nlohmann::json meta{{"format", "ofaprune-export"},
                                {"version", kFormatVersion},
                                {"structure_id", e.structure_id},
                                {"rho", e.rho},
                                {"parameters", compact.parameter_count()},
                                {"source_arch_hash", arch_hash(spec_)}};
      write_file(out / "export.json", meta.dump(2) + "\n");
    }
    if (!found) throw Error("unknown structure id " + std::to_string(structure.value_or(-1)));
  }

  void stage_report() {
    const auto pnp = load_pool();
    if (!std::filesystem::exists(dir_ / "eval.json")) throw StageError("no evaluation results; run the eval stage first");
    const auto results = eval_from_json(nlohmann::json::parse(read_file(dir_ / "eval.json")));
    CsvWriter csv(dir_ / "report.csv", "report",
                  {"structure_id", "rho", "realized_rate", "freeze_epoch", "resolution", "flops", "flops_div2", "top1"});
    for (const auto& r : results) {
      const auto& e = pnp.entries.at(static_cast<std::size_t>(r.structure_id));
      csv.row({std::to_string(r.structure_id), fmt_real(r.rho, 4), fmt_real(e.mask.realized_rate(), 4),
               std::to_string(e.freeze_epoch), std::to_string(r.resolution), std::to_string(r.flops),
               std::to_string(r.flops / 2), fmt_real(r.accuracy)});
    }
    write_deployment_csv(dir_ / "deployment.csv", deployment_plan(spec_, cfg_, pnp, results));
  }

  RunConfig cfg_;
  ArchSpec spec_;
  std::filesystem::path dir_;
  std::optional<std::pair<Dataset, Dataset>> data_;
};

}  // namespace ofp
