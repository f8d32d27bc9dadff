// Command-line driver: gen-data, train, probe, report.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "avdis/errors.hpp"
#include "avdis/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumerical = 3;

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
};

avdis::ExperimentConfig resolve(const Overrides& o) {
  avdis::ExperimentConfig cfg =
      o.config.empty() ? avdis::standard_benchmark() : avdis::load_config(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.workers) cfg.workers = *o.workers;
  if (o.seed) cfg.seeds = {*o.seed};
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual emotion/identity multitask training with embedding disentanglement"};
  app.require_subcommand(1);

  Overrides o;
  auto add_common = [&o](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Experiment config (JSON); defaults if omitted");
    cmd->add_option("--out", o.out, "Output directory (overrides output_dir)");
    cmd->add_option("--workers", o.workers, "Parallel sweep cells")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o.seed, "Run a single sweep seed");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "Train every sweep cell");
  auto* probe = app.add_subcommand("probe", "Re-run leakage probes on trained cells");
  auto* report = app.add_subcommand("report", "Write CSV tables and significance tests");
  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
  for (auto* cmd : {gen, train, probe, report, show}) add_common(cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    const avdis::ExperimentConfig cfg = resolve(o);
    if (gen->parsed()) {
      avdis::cmd_gen_data(cfg, std::cout);
    } else if (train->parsed()) {
      const auto s = avdis::cmd_train(cfg, std::cout);
      std::cout << s.completed << " cells trained, " << s.skipped << " skipped\n";
    } else if (probe->parsed()) {
      avdis::cmd_probe(cfg, std::cout);
    } else if (report->parsed()) {
      avdis::cmd_report(cfg.output_dir, std::cout);
    } else if (show->parsed()) {
      std::cout << avdis::config_to_json(cfg);
    }
    return kOk;
  } catch (const avdis::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const avdis::DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const avdis::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const avdis::Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  }
}
