// Command-line driver: one subcommand per pipeline stage plus `run`.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ofaprune/ofaprune.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<std::string> stage;
  std::optional<int> structure;
  bool resume = false;
};

template <class T>
void execute(const ofp::RunConfig& cfg, const std::string& command, const Options& o) {
  ofp::Pipeline<T> pipeline(cfg);
  if (command == "run") {
    if (o.stage) pipeline.run(ofp::stage_from_string(*o.stage), o.resume);
    else pipeline.run_all(o.resume);
    return;
  }
  pipeline.run(ofp::stage_from_string(command), o.resume, o.structure);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budgeted once-for-all channel pruning"};
  app.require_subcommand(1);
  Options o;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the run seed");
    sub->add_option("--precision", o.precision, "Arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
    sub->add_flag("--resume", o.resume, "Skip stages already completed with this configuration");
  };
  const char* stages[][2] = {{"budget", "Solve per-device pruning rates"},
                             {"search", "Search structures and build the pruned network pool"},
                             {"train", "Jointly train every pooled structure"},
                             {"calibrate", "Recompute BN statistics per structure and resolution"},
                             {"eval", "Evaluate every structure at every resolution"},
                             {"export", "Write dense compact checkpoints"},
                             {"report", "Write the final report and deployment plan"}};
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    if (std::string(name) == "export") sub->add_option("--structure", o.structure, "Export only this structure id");
  }
  auto* run = app.add_subcommand("run", "Run the whole pipeline");
  add_common(run);
  run->add_option("--stage", o.stage, "Run only this stage")
      ->check(CLI::IsMember({"budget", "search", "train", "calibrate", "eval", "export", "report"}));

  CLI11_PARSE(app, argc, argv);
  ofp::configure_allocator();
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    ofp::RunConfig cfg = ofp::load_config(o.config);
    if (o.seed) cfg.set_seed(*o.seed);
    if (o.precision) cfg.precision = *o.precision;
    if (cfg.precision == "f64") execute<double>(cfg, command, o);
    else execute<float>(cfg, command, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
