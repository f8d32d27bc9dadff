#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "avdis/errors.hpp"
#include "avdis/experiment.hpp"
#include "support.hpp"

using namespace avdis;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// A sweep that trains in well under a second per cell.
std::string quick_config_json(const fs::path& out, const std::string& strategies = "[\"MTL\", \"GR\"]",
                              double rho = 0.8) {
  nlohmann::json j;
  j["output_dir"] = out.string();
  j["synthetic"] = {{"num_speakers", 4},     {"num_emotions", 3}, {"clips_per_speaker", 15},
                    {"audio_dim", 4},        {"video_dim", 5},    {"rho", rho},
                    {"train_fraction", 0.4}, {"seed", 11}};
  j["model"] = {{"audio_widths", {8}}, {"video_widths", {8}}, {"emotion_emb_dim", 6}};
  j["strategies"] = nlohmann::json::parse(strategies);
  j["speaker_dims"] = {16};
  j["seeds"] = {1};
  j["training"] = {{"epochs", 2}, {"batch_size", 8}};
  j["probe"] = {{"epochs", 5}};
  return j.dump(2);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AVDIS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig defaults = parse_config("{}");
  CHECK(defaults.strategies.size() == 5);
  CHECK(defaults.synthetic.rho == 0.8);
  CHECK(defaults.synthetic.num_speakers == 20);
  CHECK(defaults.dataset_path() == defaults.output_dir / "dataset.jsonl");

  const ExperimentConfig c = parse_config(quick_config_json("/tmp/x"));
  CHECK(c.synthetic.num_speakers == 4);
  CHECK(c.training.epochs == 2);
  CHECK(c.probe.epochs == 5);
  CHECK(c.probe.hidden_dim == 32);
  CHECK(sweep_cells(c).size() == 2);
  CHECK(sweep_cells(c)[1].name() == "GR_d16_s1");

  const ExperimentConfig back = parse_config(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));

  CHECK_THROWS_AS(parse_config("{\"epochs\": 3}"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"training\": {\"lr\": 3}}"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"strategies\": []}"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"strategies\": [\"DANN\"]}"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"synthetic\": {\"rho\": 2}}"), ConfigError);
  CHECK_THROWS_AS(parse_config("not json"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);

  ExperimentConfig seeded = c;
  seeded.seeds = {1, 2};
  seeded.speaker_dims = {16, 8};
  CHECK(sweep_cells(seeded).size() == 8);
  CHECK(cell_probe_config(seeded, sweep_cells(seeded)[1]).seed != cell_probe_config(seeded, sweep_cells(seeded)[0]).seed);
}

TEST_CASE("gen-data writes a reproducible dataset") {
  const fs::path dir = avdis::testing::scratch_dir("gen");
  ExperimentConfig c = parse_config(quick_config_json(dir / "a"));
  std::ostringstream log;
  cmd_gen_data(c, log);
  const std::string first = slurp(c.dataset_path());
  CHECK(log.str().find("label joint distribution") != std::string::npos);
  cmd_gen_data(c, log);
  CHECK(slurp(c.dataset_path()) == first);
  const Dataset ds = load_dataset(c.dataset_path());
  CHECK(ds.header.num_speakers == 4);
  CHECK(ds.clips.size() == 60);

  ExperimentConfig locked = parse_config(quick_config_json(dir / "b", "[\"MTL\"]", 1.0));
  const Dataset one = generate(locked.synthetic);
  const std::string table = label_joint_summary(one);
  // each speaker row has a single nonzero emotion count
  std::istringstream rows(table);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    std::istringstream cells(line);
    int speaker, nonzero = 0;
    std::size_t v;
    cells >> speaker;
    while (cells >> v) nonzero += v > 0;
    CHECK(nonzero == 1);
  }
}

TEST_CASE("train produces one cell per sweep entry and resumes") {
  const fs::path dir = avdis::testing::scratch_dir("train");
  const ExperimentConfig c = parse_config(quick_config_json(dir));
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_train(c, log), DataError);

  cmd_gen_data(c, log);
  const TrainSummary first = cmd_train(c, log);
  CHECK(first.completed == 2);
  CHECK(first.skipped == 0);
  for (const auto& cell : sweep_cells(c)) {
    CHECK(fs::exists(cell_dir(dir, cell) / "checkpoint.bin"));
    CHECK(fs::exists(cell_dir(dir, cell) / "trace.jsonl"));
    CHECK(fs::exists(cell_dir(dir, cell) / "eval.json"));
  }

  fs::remove(cell_dir(dir, sweep_cells(c)[1]) / "eval.json");
  const TrainSummary again = cmd_train(c, log);
  CHECK(again.completed == 1);
  CHECK(again.skipped == 1);

  CHECK(cmd_probe(c, log) == 2);
}

TEST_CASE("report tables and significance tests") {
  const fs::path dir = avdis::testing::scratch_dir("report");
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_report(dir, log), DataError);

  const ExperimentConfig baseline = parse_config(quick_config_json(dir, "[\"MTL\"]"));
  cmd_gen_data(baseline, log);
  cmd_train(baseline, log);
  cmd_report(dir, log);
  CHECK(slurp(dir / "report" / "emotion_f.csv").starts_with("speaker_dim,seed,MTL\n16,1,"));
  CHECK(slurp(dir / "report" / "stuart_maxwell.csv") == "model,baseline,statistic,dof,p_value,decision\n");

  // a disentangled cell whose predictions equal the baseline's
  const CellId mtl{Strategy::MTL, 16, 1}, alt{Strategy::ALT, 16, 1};
  auto eval = nlohmann::json::parse(slurp(cell_dir(dir, mtl) / "eval.json"));
  eval["cell"] = alt.name();
  eval["strategy"] = "ALT";
  fs::create_directories(cell_dir(dir, alt));
  spit(cell_dir(dir, alt) / "eval.json", eval.dump());
  cmd_report(dir, log);
  const auto summary = nlohmann::json::parse(slurp(dir / "report" / "summary.json"));
  REQUIRE(summary.at("stuart_maxwell").size() == 1);
  const auto& t = summary.at("stuart_maxwell")[0];
  CHECK(t.at("p_value").get<double>() == 1.0);
  CHECK(t.at("decision") == "not different");
  CHECK(slurp(dir / "report" / "emotion_f.csv").starts_with("speaker_dim,seed,MTL,ALT\n"));

  const std::string before = slurp(dir / "report" / "summary.json");
  cmd_report(dir, log);
  CHECK(slurp(dir / "report" / "summary.json") == before);
}

TEST_CASE("command line exit codes") {
  const fs::path dir = avdis::testing::scratch_dir("exit");
  spit(dir / "good.json", quick_config_json(dir / "out", "[\"MTL\"]"));
  spit(dir / "bad.json", "{\"unknown\": 1}");
  const std::string good = "--config " + (dir / "good.json").string();

  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("train --config " + (dir / "bad.json").string()) == 1);
  CHECK(run_cli("train " + good) == 2);
  CHECK(run_cli("report " + good) == 2);
  CHECK(run_cli("gen-data " + good) == 0);
  CHECK(run_cli("train " + good) == 0);
  CHECK(run_cli("report " + good) == 0);
  CHECK(run_cli("show-config " + good + " --seed 4") == 0);
  CHECK(fs::exists(dir / "out" / "report" / "leakage_f.csv"));

  spit(dir / "nowhere.json", quick_config_json("/proc/avdis_cannot_write", "[\"MTL\"]"));
  CHECK(run_cli("gen-data --config " + (dir / "nowhere.json").string()) == 2);
}
