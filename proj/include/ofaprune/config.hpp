#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ofaprune/trainer.hpp"

namespace ofp {

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | cifar10
  std::string cifar_dir;
  SyntheticConfig synthetic;

  bool operator==(const DataConfig&) const = default;
};

// Everything a run needs. `search.rates` is used verbatim when `explicit_rates`
// is set; otherwise the rates are the solved budget rates (see resolve_rates).
// In single-network mode the rates are the band {r - 0.05, r, r + 0.05}.
struct RunConfig {
  std::string name = "run";
  std::string arch;  // path, relative to the config file's directory
  DataConfig data;
  SearchConfig search;
  bool explicit_rates = true;
  std::optional<double> single_network_rate;
  TrainConfig train;
  std::vector<DeviceBudget> budgets;
  std::string output_dir = "runs/run";
  std::uint64_t seed = 1;
  std::string precision = "f32";
  std::filesystem::path base_dir;  // directory of the config file; not serialized

  bool operator==(const RunConfig& o) const {
    return name == o.name && arch == o.arch && data == o.data && search == o.search &&
           explicit_rates == o.explicit_rates && single_network_rate == o.single_network_rate && train == o.train &&
           budgets == o.budgets && output_dir == o.output_dir && seed == o.seed && precision == o.precision;
  }

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
  std::filesystem::path arch_path() const { return resolve(arch); }
  std::filesystem::path run_dir() const { return resolve(output_dir); }

  // The run seed drives initialization, shuffling and plan sampling.
  void set_seed(std::uint64_t s) {
    seed = s;
    search.seed = s;
    train.seed = s;
  }

  void validate() const {
    if (arch.empty()) throw Error("config: 'arch' is required");
    if (precision != "f32" && precision != "f64") throw Error("config: precision must be f32 or f64");
    if (data.kind != "synthetic" && data.kind != "cifar10") throw Error("config: data.kind must be synthetic or cifar10");
    if (data.kind == "cifar10" && data.cifar_dir.empty()) throw Error("config: data.cifar_dir is required for cifar10");
    if (!explicit_rates && !single_network_rate && budgets.empty())
      throw Error("config: rates must be given explicitly or derived from at least one device budget");
    if (single_network_rate && (*single_network_rate < 0.05 || *single_network_rate >= 0.95))
      throw Error("config: single-network rate must lie in [0.05, 0.95)");
    for (const auto& b : budgets)
      if (b.cap_mflops < 0.0) throw Error("config: budget cap for '" + b.device + "' is negative");
    if (explicit_rates) search.validate();
    train.validate();
  }
};

// Resolutions a budget is evaluated at: its own list, else the training set.
inline std::vector<std::size_t> budget_resolutions(const DeviceBudget& b, const TrainConfig& t) {
  return b.resolutions.empty() ? t.resolutions : b.resolutions;
}

inline std::vector<BudgetSolution> solve_budgets(const ArchSpec& spec, const RunConfig& cfg) {
  std::vector<BudgetSolution> out;
  for (const auto& b : sorted_budgets(cfg.budgets))
    for (std::size_t r : budget_resolutions(b, cfg.train)) out.push_back(solve_pruning_rate(spec, b, r));
  return out;
}

// The pruning rates searched for. Budget-derived rates use each device's
// solution at its largest allowed resolution; duplicates collapse.
inline std::vector<double> resolve_rates(const ArchSpec& spec, const RunConfig& cfg) {
  if (cfg.single_network_rate) {
    const double r = *cfg.single_network_rate;
    return {std::round((r - 0.05) * 100.0) / 100.0, r, std::round((r + 0.05) * 100.0) / 100.0};
  }
  if (cfg.explicit_rates) return cfg.search.rates;
  std::set<int> grid;
  for (const auto& b : cfg.budgets) {
    const auto res = budget_resolutions(b, cfg.train);
    const auto s = solve_pruning_rate(spec, b, *std::max_element(res.begin(), res.end()));
    if (!s.feasible) {
      std::cerr << "warning: budget '" << b.device << "' is infeasible; it contributes no pruning rate\n";
      continue;
    }
    grid.insert(static_cast<int>(std::lround(s.rho * 100.0)));
  }
  if (grid.empty()) throw Error("no feasible device budget to derive pruning rates from");
  std::vector<double> rates;
  for (int k : grid) rates.push_back(k / 100.0);
  return rates;
}

// ---- JSON schema ---------------------------------------------------------------

inline nlohmann::json augment_to_json(const Augment& a) { return {{"flip", a.flip}, {"crop_pad", a.crop_pad}}; }
inline Augment augment_from_json(const nlohmann::json& j) {
  Augment a;
  a.flip = j.value("flip", a.flip);
  a.crop_pad = j.value("crop_pad", a.crop_pad);
  return a;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  const auto& s = c.search;
  const auto& t = c.train;
  const auto& y = c.data.synthetic;
  nlohmann::json search{{"tau", s.tau},
                        {"metric", to_string(s.metric)},
                        {"consecutive", s.consecutive},
                        {"sparsity", s.sparsity},
                        {"lr", s.lr},
                        {"lr_reference_batch", s.lr_reference_batch},
                        {"max_epochs", s.max_epochs},
                        {"batch_size", s.batch_size},
                        {"momentum", s.momentum},
                        {"weight_decay", s.weight_decay},
                        {"gamma_init", s.gamma_init},
                        {"augment", augment_to_json(s.augment)}};
  if (c.explicit_rates) search["rates"] = s.rates;
  nlohmann::json j{
      {"format", "ofaprune-config"},
      {"version", kFormatVersion},
      {"name", c.name},
      {"arch", c.arch},
      {"seed", c.seed},
      {"precision", c.precision},
      {"output_dir", c.output_dir},
      {"data",
       {{"kind", c.data.kind},
        {"cifar_dir", c.data.cifar_dir},
        {"synthetic",
         {{"seed", y.seed},
          {"n_per_class", y.n_per_class},
          {"classes", y.classes},
          {"resolution", y.resolution},
          {"channels", y.channels},
          {"noise_sigma", y.noise_sigma},
          {"max_shift", y.max_shift},
          {"blobs", y.blobs}}}}},
      {"search", search},
      {"train",
       {{"resolutions", t.resolutions},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr", t.lr},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"distill", to_string(t.distill)},
        {"bn_mode", t.bn_mode},
        {"calibration_batches", t.calibration_batches},
        {"init", to_string(t.init)},
        {"augment", augment_to_json(t.augment)}}},
      {"budgets", c.budgets}};
  if (c.single_network_rate) j["single_network"] = {{"rate", *c.single_network_rate}};
  return j;
}

// Missing keys take their defaults; "seed" is mandatory.
inline RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  try {
    RunConfig c;
    c.base_dir = base_dir;
    if (j.contains("format") && j.at("format").get<std::string>() != "ofaprune-config")
      throw FormatError("config: not an ofaprune config");
    if (j.value("version", kFormatVersion) != kFormatVersion) throw FormatError("config: unsupported version");
    if (!j.contains("seed")) throw FormatError("config: 'seed' is mandatory");
    c.name = j.value("name", c.name);
    c.arch = j.at("arch").get<std::string>();
    c.precision = j.value("precision", c.precision);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.kind = d.value("kind", c.data.kind);
      c.data.cifar_dir = d.value("cifar_dir", c.data.cifar_dir);
      if (d.contains("synthetic")) {
        const auto& y = d.at("synthetic");
        auto& o = c.data.synthetic;
        o.seed = y.value("seed", o.seed);
        o.n_per_class = y.value("n_per_class", o.n_per_class);
        o.classes = y.value("classes", o.classes);
        o.resolution = y.value("resolution", o.resolution);
        o.channels = y.value("channels", o.channels);
        o.noise_sigma = y.value("noise_sigma", o.noise_sigma);
        o.max_shift = y.value("max_shift", o.max_shift);
        o.blobs = y.value("blobs", o.blobs);
      }
    }
    if (j.contains("search")) {
      const auto& s = j.at("search");
      auto& o = c.search;
      c.explicit_rates = s.contains("rates");
      if (c.explicit_rates) o.rates = s.at("rates").get<std::vector<double>>();
      o.tau = s.value("tau", o.tau);
      o.metric = similarity_metric_from_string(s.value("metric", std::string(to_string(o.metric))));
      o.consecutive = s.value("consecutive", o.consecutive);
      o.sparsity = s.value("sparsity", o.sparsity);
      o.lr = s.value("lr", o.lr);
      o.lr_reference_batch = s.value("lr_reference_batch", o.lr_reference_batch);
      o.max_epochs = s.value("max_epochs", o.max_epochs);
      o.batch_size = s.value("batch_size", o.batch_size);
      o.momentum = s.value("momentum", o.momentum);
      o.weight_decay = s.value("weight_decay", o.weight_decay);
      o.gamma_init = s.value("gamma_init", o.gamma_init);
      if (s.contains("augment")) o.augment = augment_from_json(s.at("augment"));
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      auto& o = c.train;
      o.resolutions = t.value("resolutions", o.resolutions);
      o.epochs = t.value("epochs", o.epochs);
      o.batch_size = t.value("batch_size", o.batch_size);
      o.lr = t.value("lr", o.lr);
      o.momentum = t.value("momentum", o.momentum);
      o.weight_decay = t.value("weight_decay", o.weight_decay);
      o.distill = distill_mode_from_string(t.value("distill", std::string(to_string(o.distill))));
      o.bn_mode = t.value("bn_mode", o.bn_mode);
      o.calibration_batches = t.value("calibration_batches", o.calibration_batches);
      o.init = init_mode_from_string(t.value("init", std::string(to_string(o.init))));
      if (t.contains("augment")) o.augment = augment_from_json(t.at("augment"));
    }
    if (j.contains("budgets")) c.budgets = j.at("budgets").get<std::vector<DeviceBudget>>();
    if (j.contains("single_network")) {
      c.single_network_rate = j.at("single_network").at("rate").get<double>();
      c.explicit_rates = false;
    }
    c.set_seed(j.at("seed").get<std::uint64_t>());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

}  // namespace ofp
