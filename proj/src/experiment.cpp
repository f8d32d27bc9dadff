#include "avdis/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "avdis/errors.hpp"
#include "avdis/evaluation.hpp"

namespace avdis {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---- configuration --------------------------------------------------------

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                std::string_view section) {
  if (!j.is_object()) throw ConfigError("config: '" + std::string(section) + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("config: unknown key '" + key + "' in " + std::string(section));
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_synthetic(const json& j, SyntheticSpec& s) {
  check_keys(j,
             {"num_speakers", "num_emotions", "clips_per_speaker", "min_segments", "max_segments",
              "audio_dim", "video_dim", "rho", "noise_sigma", "train_fraction",
              "validation_fraction", "seed"},
             "synthetic");
  read(j, "num_speakers", s.num_speakers);
  read(j, "num_emotions", s.num_emotions);
  read(j, "clips_per_speaker", s.clips_per_speaker);
  read(j, "min_segments", s.min_segments);
  read(j, "max_segments", s.max_segments);
  read(j, "audio_dim", s.audio_dim);
  read(j, "video_dim", s.video_dim);
  read(j, "rho", s.rho);
  read(j, "noise_sigma", s.noise_sigma);
  read(j, "train_fraction", s.train_fraction);
  read(j, "validation_fraction", s.validation_fraction);
  read(j, "seed", s.seed);
}

void read_model(const json& j, ModelConfig& m) {
  check_keys(j, {"audio_widths", "video_widths", "emotion_emb_dim", "aux_hidden"}, "model");
  read(j, "audio_widths", m.audio_widths);
  read(j, "video_widths", m.video_widths);
  read(j, "emotion_emb_dim", m.emotion_emb_dim);
  read(j, "aux_hidden", m.aux_hidden);
}

void read_training(const json& j, StrategyConfig& t) {
  check_keys(j,
             {"epochs", "batch_size", "grl_lambda", "conf_weight", "alt_adv_weight", "weights",
              "optim"},
             "training");
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  read(j, "grl_lambda", t.grl_lambda);
  read(j, "conf_weight", t.conf_weight);
  read(j, "alt_adv_weight", t.alt_adv_weight);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    check_keys(w, {"em_prim", "spk_prim", "em_aux", "spk_aux"}, "training.weights");
    read(w, "em_prim", t.weights.em_prim);
    read(w, "spk_prim", t.weights.spk_prim);
    read(w, "em_aux", t.weights.em_aux);
    read(w, "spk_aux", t.weights.spk_aux);
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    check_keys(o, {"lr_primary", "lr_auxiliary", "gamma", "adam_beta1", "adam_beta2", "adam_eps"},
               "training.optim");
    read(o, "lr_primary", t.optim.lr_primary);
    read(o, "lr_auxiliary", t.optim.lr_auxiliary);
    read(o, "gamma", t.optim.gamma);
    read(o, "adam_beta1", t.optim.adam_beta1);
    read(o, "adam_beta2", t.optim.adam_beta2);
    read(o, "adam_eps", t.optim.adam_eps);
  }
}

void read_probe(const json& j, ProbeConfig& p) {
  check_keys(j, {"hidden_dim", "epochs", "lr", "batch_size", "train_fraction", "seed"}, "probe");
  read(j, "hidden_dim", p.hidden_dim);
  read(j, "epochs", p.epochs);
  read(j, "lr", p.lr);
  read(j, "batch_size", p.batch_size);
  read(j, "train_fraction", p.train_fraction);
  read(j, "seed", p.seed);
}

}  // namespace

fs::path ExperimentConfig::dataset_path() const {
  return dataset.empty() ? output_dir / "dataset.jsonl" : dataset;
}

void ExperimentConfig::validate() const {
  synthetic.validate();
  training.validate();
  probe.validate();
  if (strategies.empty() || speaker_dims.empty() || seeds.empty()) {
    throw ConfigError("config: the sweep (strategies x speaker_dims x seeds) is empty");
  }
  for (auto d : speaker_dims) {
    if (d == 0) throw ConfigError("config: speaker_dims must be positive");
  }
  if (workers == 0) throw ConfigError("config: workers must be >= 1");
  if (filter_percentile && !(*filter_percentile >= 0.0 && *filter_percentile < 100.0)) {
    throw ConfigError("config: filter_percentile must lie in [0, 100)");
  }
  if (output_dir.empty()) throw ConfigError("config: output_dir is empty");
}

ExperimentConfig parse_config(const std::string& json_text) {
  ExperimentConfig c = standard_benchmark();
  try {
    const json j = json::parse(json_text);
    check_keys(j,
               {"output_dir", "dataset", "synthetic", "model", "strategies", "speaker_dims",
                "seeds", "training", "probe", "filter_percentile", "workers"},
               "top level");
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("synthetic")) read_synthetic(j.at("synthetic"), c.synthetic);
    if (j.contains("model")) read_model(j.at("model"), c.model);
    if (j.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : j.at("strategies")) c.strategies.push_back(parse_strategy(s.get<std::string>()));
    }
    read(j, "speaker_dims", c.speaker_dims);
    read(j, "seeds", c.seeds);
    if (j.contains("training")) read_training(j.at("training"), c.training);
    if (j.contains("probe")) read_probe(j.at("probe"), c.probe);
    if (j.contains("filter_percentile")) c.filter_percentile = j.at("filter_percentile").get<double>();
    read(j, "workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["output_dir"] = c.output_dir.string();
  if (!c.dataset.empty()) j["dataset"] = c.dataset.string();
  const auto& s = c.synthetic;
  j["synthetic"] = {{"num_speakers", s.num_speakers},
                    {"num_emotions", s.num_emotions},
                    {"clips_per_speaker", s.clips_per_speaker},
                    {"min_segments", s.min_segments},
                    {"max_segments", s.max_segments},
                    {"audio_dim", s.audio_dim},
                    {"video_dim", s.video_dim},
                    {"rho", s.rho},
                    {"noise_sigma", s.noise_sigma},
                    {"train_fraction", s.train_fraction},
                    {"validation_fraction", s.validation_fraction},
                    {"seed", s.seed}};
  j["model"] = {{"audio_widths", c.model.audio_widths},
                {"video_widths", c.model.video_widths},
                {"emotion_emb_dim", c.model.emotion_emb_dim},
                {"aux_hidden", c.model.aux_hidden}};
  std::vector<std::string> names;
  for (auto st : c.strategies) names.emplace_back(strategy_name(st));
  j["strategies"] = names;
  j["speaker_dims"] = c.speaker_dims;
  j["seeds"] = c.seeds;
  const auto& t = c.training;
  j["training"] = {{"epochs", t.epochs},
                   {"batch_size", t.batch_size},
                   {"grl_lambda", t.grl_lambda},
                   {"conf_weight", t.conf_weight},
                   {"alt_adv_weight", t.alt_adv_weight},
                   {"weights",
                    {{"em_prim", t.weights.em_prim},
                     {"spk_prim", t.weights.spk_prim},
                     {"em_aux", t.weights.em_aux},
                     {"spk_aux", t.weights.spk_aux}}},
                   {"optim",
                    {{"lr_primary", t.optim.lr_primary},
                     {"lr_auxiliary", t.optim.lr_auxiliary},
                     {"gamma", t.optim.gamma},
                     {"adam_beta1", t.optim.adam_beta1},
                     {"adam_beta2", t.optim.adam_beta2},
                     {"adam_eps", t.optim.adam_eps}}}};
  j["probe"] = {{"hidden_dim", c.probe.hidden_dim}, {"epochs", c.probe.epochs},
                {"lr", c.probe.lr},                 {"batch_size", c.probe.batch_size},
                {"train_fraction", c.probe.train_fraction}, {"seed", c.probe.seed}};
  if (c.filter_percentile) j["filter_percentile"] = *c.filter_percentile;
  j["workers"] = c.workers;
  return j.dump(2) + "\n";
}

ExperimentConfig standard_benchmark() {
  ExperimentConfig c;
  c.training.epochs = 30;
  c.training.batch_size = 16;
  c.training.optim.lr_primary = 3e-3;
  c.training.optim.lr_auxiliary = 3e-2;
  // 16 test clips per speaker so each probe scores 64 held-out embeddings
  c.synthetic.train_fraction = 0.4;
  return c;
}

std::string CellId::name() const {
  return std::string(strategy_name(strategy)) + "_d" + std::to_string(speaker_dim) + "_s" +
         std::to_string(seed);
}

std::vector<CellId> sweep_cells(const ExperimentConfig& config) {
  std::vector<CellId> cells;
  for (auto s : config.strategies)
    for (auto d : config.speaker_dims)
      for (auto seed : config.seeds) cells.push_back({s, d, seed});
  return cells;
}

ModelConfig cell_model_config(const ExperimentConfig& config, const DatasetHeader& header,
                              const CellId& cell) {
  ModelConfig m = config.model;
  m.audio_dim = header.audio_dim;
  m.video_dim = header.video_dim;
  m.num_emotions = header.num_emotions;
  m.num_speakers = header.num_speakers;
  m.speaker_emb_dim = cell.speaker_dim;
  m.validate();
  return m;
}

StrategyConfig cell_strategy_config(const ExperimentConfig& config, const CellId& cell) {
  StrategyConfig s = config.training;
  s.strategy = cell.strategy;
  s.seed = cell.seed;
  return s;
}

ProbeConfig cell_probe_config(const ExperimentConfig& config, const CellId& cell) {
  ProbeConfig p = config.probe;
  p.seed = config.probe.seed + cell.seed;
  return p;
}

fs::path cell_dir(const fs::path& output_dir, const CellId& cell) {
  return output_dir / "cells" / cell.name();
}

// ---- commands -------------------------------------------------------------

namespace {

void write_file(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " to " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

ordered_json metrics_json(const MetricsReport& r) {
  ordered_json j;
  j["macro_f"] = r.macro_f;
  j["accuracy"] = r.accuracy;
  std::vector<double> f;
  for (const auto& c : r.per_class) f.push_back(c.f);
  j["per_class_f"] = f;
  return j;
}

std::string evaluation_json(const CellId& cell, const TrainResult* trained,
                            const EvaluationReport& test, const fs::path& checkpoint_file) {
  ordered_json j;
  j["cell"] = cell.name();
  j["strategy"] = strategy_name(cell.strategy);
  j["speaker_dim"] = cell.speaker_dim;
  j["seed"] = cell.seed;
  j["checkpoint"] = checkpoint_file.filename().string();
  if (trained) {
    j["best_epoch"] = trained->best_epoch;
    j["epochs_run"] = trained->trace.epochs.size();
  }
  j["test_emotion"] = metrics_json(test.emotion);
  j["test_speaker"] = metrics_json(test.speaker);
  j["probe_emotion_from_speaker"] = metrics_json(test.emotion_from_speaker);
  j["probe_speaker_from_emotion"] = metrics_json(test.speaker_from_emotion);
  j["disentanglement"] = test.disentanglement;
  j["emotion_truth"] = test.emotion_truth;
  j["emotion_predictions"] = test.emotion_predictions;
  return j.dump() + "\n";
}

}  // namespace

std::string label_joint_summary(const Dataset& dataset) {
  const auto& h = dataset.header;
  std::vector<std::size_t> counts(h.num_speakers * h.num_emotions, 0);
  for (const auto& c : dataset.clips) {
    counts[static_cast<std::size_t>(c.speaker) * h.num_emotions +
           static_cast<std::size_t>(c.emotion)] += 1;
  }
  std::ostringstream out;
  out << "speaker";
  for (std::size_t e = 0; e < h.num_emotions; ++e) out << "\te" << e;
  out << '\n';
  for (std::size_t s = 0; s < h.num_speakers; ++s) {
    out << s;
    for (std::size_t e = 0; e < h.num_emotions; ++e) out << '\t' << counts[s * h.num_emotions + e];
    out << '\n';
  }
  return out.str();
}

Dataset load_experiment_dataset(const ExperimentConfig& config) {
  const fs::path path = config.dataset_path();
  if (!fs::exists(path)) throw DataError("dataset " + path.string() + " does not exist");
  Dataset ds = load_dataset(path);
  if (config.filter_percentile) ds = filter_bottom_percentile(ds, *config.filter_percentile);
  return ds;
}

void cmd_gen_data(const ExperimentConfig& config, std::ostream& log) {
  const Dataset ds = generate(config.synthetic);
  const fs::path path = config.dataset_path();
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ostringstream text;
  write_dataset(text, ds);
  write_file(path, text.str());
  log << "wrote " << ds.clips.size() << " clips to " << path.string() << "\n";
  log << "label joint distribution (clips per speaker x emotion):\n" << label_joint_summary(ds);
}

TrainSummary cmd_train(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const Dataset ds = load_experiment_dataset(config);
  const auto train_set = ds.split(Split::train);
  const auto val_set = ds.split(Split::validation);
  const auto test_set = ds.split(Split::test);
  if (train_set.empty() || val_set.empty() || test_set.empty()) {
    throw DataError("dataset needs clips in train, validation and test splits");
  }
  const auto cells = sweep_cells(config);

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  TrainSummary summary;
  std::exception_ptr first_error;

  auto run_cell = [&](const CellId& cell) {
    const fs::path dir = cell_dir(config.output_dir, cell);
    if (fs::exists(dir / "eval.json")) {
      std::lock_guard lock(mu);
      ++summary.skipped;
      log << cell.name() << ": already complete, skipped\n";
      return;
    }
    ensure_dir(dir);
    MultitaskModel model(cell_model_config(config, ds.header, cell), cell.seed);
    const TrainResult result = train(model, train_set, val_set, cell_strategy_config(config, cell));
    const fs::path ck = dir / "checkpoint.bin";
    write_file(ck, encode_checkpoint(result.best));
    write_file(dir / "trace.jsonl", trace_to_jsonl(result.trace));
    const EvaluationReport test = evaluate_model(model, test_set, cell_probe_config(config, cell));
    write_file(dir / "eval.json", evaluation_json(cell, &result, test, ck));
    std::lock_guard lock(mu);
    ++summary.completed;
    log << cell.name() << ": best epoch " << result.best_epoch << ", test emotion F "
        << fmt(test.emotion.macro_f) << ", leakage F " << fmt(test.emotion_from_speaker.macro_f)
        << "\n";
  };

  auto worker = [&]() {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        run_cell(cells[i]);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
        log << cells[i].name() << ": failed\n";
      }
    }
  };

  const std::size_t n_threads = std::min(config.workers, cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
  return summary;
}

std::size_t cmd_probe(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const Dataset ds = load_experiment_dataset(config);
  const auto test_set = ds.split(Split::test);
  std::size_t done = 0;
  for (const auto& cell : sweep_cells(config)) {
    const fs::path dir = cell_dir(config.output_dir, cell);
    const fs::path ck = dir / "checkpoint.bin";
    if (!fs::exists(ck)) continue;
    const MultitaskModel model = MultitaskModel::from_checkpoint(load_checkpoint(ck));
    const EvaluationReport test = evaluate_model(model, test_set, cell_probe_config(config, cell));
    write_file(dir / "eval.json", evaluation_json(cell, nullptr, test, ck));
    log << cell.name() << ": leakage F " << fmt(test.emotion_from_speaker.macro_f)
        << ", speaker-from-emotion accuracy " << fmt(test.speaker_from_emotion.accuracy) << "\n";
    ++done;
  }
  if (done == 0) throw DataError("probe: no trained cells under " + config.output_dir.string());
  return done;
}

void cmd_report(const fs::path& output_dir, std::ostream& log) {
  struct CellResult {
    CellId id;
    json eval;
  };
  std::vector<CellResult> cells;
  const fs::path root = output_dir / "cells";
  if (fs::is_directory(root)) {
    for (const auto& entry : fs::directory_iterator(root)) {
      const fs::path file = entry.path() / "eval.json";
      if (!fs::exists(file)) continue;
      std::ifstream in(file);
      json j;
      try {
        j = json::parse(in);
        CellId id{parse_strategy(j.at("strategy").get<std::string>()),
                  j.at("speaker_dim").get<std::size_t>(), j.at("seed").get<std::uint64_t>()};
        cells.push_back({id, std::move(j)});
      } catch (const json::exception& e) {
        throw DataError("report: malformed " + file.string() + ": " + e.what());
      }
    }
  }
  if (cells.empty()) throw DataError("report: no completed cells under " + root.string());

  auto order = [](const CellId& c) {
    return std::tuple(static_cast<int>(c.strategy), -static_cast<long long>(c.speaker_dim), c.seed);
  };
  std::sort(cells.begin(), cells.end(),
            [&](const CellResult& a, const CellResult& b) { return order(a.id) < order(b.id); });

  std::vector<Strategy> strategies;
  std::vector<std::pair<std::size_t, std::uint64_t>> rows;
  for (const auto& c : cells) {
    if (std::find(strategies.begin(), strategies.end(), c.id.strategy) == strategies.end())
      strategies.push_back(c.id.strategy);
    const auto row = std::pair(c.id.speaker_dim, c.id.seed);
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  auto find = [&](Strategy s, std::size_t dim, std::uint64_t seed) -> const json* {
    for (const auto& c : cells)
      if (c.id.strategy == s && c.id.speaker_dim == dim && c.id.seed == seed) return &c.eval;
    return nullptr;
  };

  auto table = [&](const char* section, const char* field) {
    std::ostringstream out;
    out << "speaker_dim,seed";
    for (auto s : strategies) out << ',' << strategy_name(s);
    out << '\n';
    for (const auto& [dim, seed] : rows) {
      out << dim << ',' << seed;
      for (auto s : strategies) {
        out << ',';
        if (const json* e = find(s, dim, seed)) out << fmt(e->at(section).at(field).get<double>());
      }
      out << '\n';
    }
    return out.str();
  };

  const fs::path dir = output_dir / "report";
  ensure_dir(dir);
  write_file(dir / "emotion_f.csv", table("test_emotion", "macro_f"));
  write_file(dir / "leakage_f.csv", table("probe_emotion_from_speaker", "macro_f"));
  write_file(dir / "speaker_accuracy.csv", table("test_speaker", "accuracy"));

  constexpr double kAlpha = 0.01;
  std::ostringstream sm;
  sm << "model,baseline,statistic,dof,p_value,decision\n";
  ordered_json tests = json::array();
  for (const auto& c : cells) {
    if (!disentangles(c.id.strategy)) continue;
    const json* base = find(Strategy::MTL, c.id.speaker_dim, c.id.seed);
    if (!base) continue;
    const CellId base_id{Strategy::MTL, c.id.speaker_dim, c.id.seed};
    const auto a = c.eval.at("emotion_predictions").get<std::vector<int>>();
    const auto b = base->at("emotion_predictions").get<std::vector<int>>();
    if (a.size() != b.size()) {
      throw DataError("report: " + c.id.name() + " and its baseline were scored on different items");
    }
    const std::size_t k = c.eval.at("test_emotion").at("per_class_f").size();
    ordered_json t;
    t["model"] = c.id.name();
    t["baseline"] = base_id.name();
    sm << c.id.name() << ',' << base_id.name() << ',';
    try {
      const auto r = stuart_maxwell(a, b, k);
      const char* decision = r.reject(kAlpha) ? "different" : "not different";
      sm << fmt(r.statistic) << ',' << r.dof << ',' << fmt(r.p_value) << ',' << decision << '\n';
      t["statistic"] = r.statistic;
      t["dof"] = r.dof;
      t["p_value"] = r.p_value;
      t["decision"] = decision;
    } catch (const NumericalError&) {
      sm << ",,,degenerate\n";
      t["decision"] = "degenerate";
    }
    tests.push_back(std::move(t));
  }
  write_file(dir / "stuart_maxwell.csv", sm.str());

  ordered_json summary;
  summary["alpha"] = kAlpha;
  ordered_json list = json::array();
  for (const auto& c : cells) {
    ordered_json e;
    e["cell"] = c.id.name();
    e["emotion_macro_f"] = c.eval.at("test_emotion").at("macro_f");
    e["speaker_accuracy"] = c.eval.at("test_speaker").at("accuracy");
    e["leakage_macro_f"] = c.eval.at("probe_emotion_from_speaker").at("macro_f");
    e["speaker_from_emotion_accuracy"] = c.eval.at("probe_speaker_from_emotion").at("accuracy");
    e["disentanglement"] = c.eval.at("disentanglement");
    list.push_back(std::move(e));
  }
  summary["cells"] = std::move(list);
  summary["stuart_maxwell"] = std::move(tests);
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  log << "report for " << cells.size() << " cells written to " << dir.string() << "\n";
}

}  // namespace avdis
