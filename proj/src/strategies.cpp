#include "avdis/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "avdis/errors.hpp"

namespace avdis {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::STL: return "STL";
    case Strategy::MTL: return "MTL";
    case Strategy::GR: return "GR";
    case Strategy::ALT: return "ALT";
    case Strategy::CONF: return "CONF";
  }
  return "MTL";
}

Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::STL, Strategy::MTL, Strategy::GR, Strategy::ALT, Strategy::CONF}) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

bool disentangles(Strategy s) {
  return s == Strategy::GR || s == Strategy::ALT || s == Strategy::CONF;
}

void StrategyConfig::validate() const {
  weights.validate();
  optim.validate();
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (strategy == Strategy::GR && !(grl_lambda > 0.0)) {
    throw ConfigError("GR: grl_lambda must be positive");
  }
  if (strategy == Strategy::CONF && !(conf_weight >= 0.0)) {
    throw ConfigError("CONF: conf_weight must be non-negative");
  }
  if (strategy == Strategy::ALT && !(alt_adv_weight >= 0.0)) {
    throw ConfigError("ALT: alt_adv_weight must be non-negative");
  }
}

LrKind lr_kind(ParamGroup group) {
  return group == ParamGroup::emotion_aux || group == ParamGroup::speaker_aux ? LrKind::auxiliary
                                                                              : LrKind::primary;
}

namespace {

constexpr ParamGroup kPrimaryGroups[] = {ParamGroup::trunk, ParamGroup::emotion_head,
                                         ParamGroup::speaker_head};
constexpr ParamGroup kAuxGroups[] = {ParamGroup::emotion_aux, ParamGroup::speaker_aux};

void update(MultitaskModel& model, const std::vector<DenseArray>& grads,
            std::span<const ParamGroup> groups, const StrategyConfig& cfg, int epoch) {
  for (auto g : groups) adam_step(model.params(), g, grads, cfg.optim, epoch, lr_kind(g));
}

void require(bool ok, const char* what) {
  if (!ok) throw ConfigError(what);
}

LossReport auxiliary_phase(MultitaskModel& model, const ClipBatch& batch,
                           const StrategyConfig& cfg, int epoch) {
  ForwardPass pass = run_forward(model, batch);
  const LossTerms terms = compute_losses(pass.tape, pass.out, batch, cfg.weights);
  pass.tape.backward(terms.auxiliary);
  const auto grads = model.params().gradients(pass.tape, pass.bound);
  const ScopedFreeze freeze(model.params(), kPrimaryGroups);
  update(model, grads, kAllGroups, cfg, epoch);
  return read_losses(pass.tape, terms);
}

}  // namespace

LossReport step_mtl(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                    int epoch) {
  require(cfg.strategy == Strategy::STL || cfg.strategy == Strategy::MTL,
          "step_mtl: strategy must be STL or MTL");
  LossWeights w = cfg.weights;
  const bool single_task = cfg.strategy == Strategy::STL;
  if (single_task) w.spk_prim = 0.0;
  ForwardPass pass = run_forward(model, batch);
  const LossTerms terms = compute_losses(pass.tape, pass.out, batch, w);
  pass.tape.backward(terms.primary);
  const auto grads = model.params().gradients(pass.tape, pass.bound);
  const ParamGroup speaker[] = {ParamGroup::speaker_head};
  const ScopedFreeze freeze(model.params(),
                            single_task ? std::span<const ParamGroup>(speaker)
                                        : std::span<const ParamGroup>());
  update(model, grads, kPrimaryGroups, cfg, epoch);
  return read_losses(pass.tape, terms);
}

LossReport step_gr(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                   int epoch) {
  require(cfg.strategy == Strategy::GR, "step_gr: strategy must be GR");
  ForwardPass pass = run_forward(model, batch, cfg.grl_lambda);
  const LossTerms terms = compute_losses(pass.tape, pass.out, batch, cfg.weights);
  pass.tape.backward(pass.tape.add(terms.primary, terms.auxiliary));
  const auto grads = model.params().gradients(pass.tape, pass.bound);
  update(model, grads, kPrimaryGroups, cfg, epoch);
  update(model, grads, kAuxGroups, cfg, epoch);
  return read_losses(pass.tape, terms);
}

LossReport step_alt(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                    int epoch, AltPhase phase) {
  require(cfg.strategy == Strategy::ALT, "step_alt: strategy must be ALT");
  if (phase == AltPhase::auxiliary) return auxiliary_phase(model, batch, cfg, epoch);
  if (phase != AltPhase::primary) throw ConfigError("step_alt: invalid phase");

  ForwardPass pass = run_forward(model, batch);
  const LossTerms terms = compute_losses(pass.tape, pass.out, batch, cfg.weights);
  auto& tape = pass.tape;
  tape.backward(tape.sub(terms.primary, tape.scale(terms.auxiliary, cfg.alt_adv_weight)));
  const auto grads = model.params().gradients(tape, pass.bound);
  const ScopedFreeze freeze(model.params(), kAuxGroups);
  update(model, grads, kAllGroups, cfg, epoch);
  return read_losses(tape, terms);
}

LossReport step_conf(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                     int epoch) {
  require(cfg.strategy == Strategy::CONF, "step_conf: strategy must be CONF");
  const LossReport before = auxiliary_phase(model, batch, cfg, epoch);

  ForwardPass pass = run_forward(model, batch);
  const LossTerms terms = compute_losses(pass.tape, pass.out, batch, cfg.weights);
  auto& tape = pass.tape;
  const Var confusion =
      tape.add(confusion_loss(tape, pass.out.e_aux), confusion_loss(tape, pass.out.s_aux));
  tape.backward(tape.add(terms.primary, tape.scale(confusion, cfg.conf_weight)));
  const auto grads = model.params().gradients(tape, pass.bound);
  const ScopedFreeze freeze(model.params(), kAuxGroups);
  update(model, grads, kAllGroups, cfg, epoch);
  return before;
}

LossReport train_step(MultitaskModel& model, const ClipBatch& batch, const StrategyConfig& cfg,
                      int epoch) {
  switch (cfg.strategy) {
    case Strategy::STL:
    case Strategy::MTL: return step_mtl(model, batch, cfg, epoch);
    case Strategy::GR: return step_gr(model, batch, cfg, epoch);
    case Strategy::ALT: {
      const LossReport before = step_alt(model, batch, cfg, epoch, AltPhase::auxiliary);
      step_alt(model, batch, cfg, epoch, AltPhase::primary);
      return before;
    }
    case Strategy::CONF: return step_conf(model, batch, cfg, epoch);
  }
  throw ConfigError("train_step: unknown strategy");
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t count, std::size_t batch_size,
                                                  Rng& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

TrainResult train(MultitaskModel& model, std::span<const Clip> train_set,
                  std::span<const Clip> val_set, const StrategyConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (val_set.empty()) throw DataError("train: empty validation set");
  const auto& mc = model.config();
  std::size_t n_max = 0;
  for (auto set : {train_set, val_set}) {
    for (const auto& c : set) {
      n_max = std::max(n_max, c.segments());
      if (static_cast<std::size_t>(c.emotion) >= mc.num_emotions ||
          static_cast<std::size_t>(c.speaker) >= mc.num_speakers || c.emotion < 0 ||
          c.speaker < 0) {
        throw LabelError("train: clip labels exceed the model's label spaces");
      }
    }
  }

  TrainResult result;
  result.best = model.checkpoint();
  const bool by_leakage = disentangles(cfg.strategy);
  double best_score = 0.0;
  Rng rng(cfg.seed);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum_primary = 0.0, sum_aux = 0.0;
    const auto batches = minibatches(train_set.size(), cfg.batch_size, rng);
    for (const auto& idx : batches) {
      std::vector<const Clip*> clips;
      clips.reserve(idx.size());
      for (auto i : idx) clips.push_back(&train_set[i]);
      const ClipBatch batch = make_batch(std::span<const Clip* const>(clips), n_max);
      const LossReport losses = train_step(model, batch, cfg, epoch);
      sum_primary += losses.primary;
      sum_aux += losses.auxiliary;
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss_primary = sum_primary / static_cast<double>(batches.size());
    rec.loss_auxiliary = sum_aux / static_cast<double>(batches.size());
    rec.validation = head_metrics(predict(model, val_set), mc.num_emotions, mc.num_speakers);
    rec.disentanglement = rec.validation.leakage_proxy;
    if (!std::isfinite(rec.loss_primary) || !std::isfinite(rec.loss_auxiliary)) {
      throw NumericalError("train: non-finite loss in epoch " + std::to_string(rec.epoch));
    }

    const double score = by_leakage ? rec.disentanglement : rec.validation.emotion.macro_f;
    const bool better = result.best_epoch == 0 ||
                        (by_leakage ? score < best_score : score > best_score);
    if (better) {
      best_score = score;
      result.best_epoch = rec.epoch;
      result.best = model.checkpoint();
    }
    result.trace.epochs.push_back(std::move(rec));
  }
  model.load(result.best);
  return result;
}

std::string trace_to_jsonl(const TrainTrace& trace) {
  std::ostringstream out;
  for (const auto& r : trace.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["L_primary"] = r.loss_primary;
    j["L_auxiliary"] = r.loss_auxiliary;
    j["val_emotion_macro_f"] = r.validation.emotion.macro_f;
    j["val_speaker_accuracy"] = r.validation.speaker.accuracy;
    j["val_aux_emotion_macro_f"] = r.validation.aux_emotion.macro_f;
    j["val_aux_speaker_accuracy"] = r.validation.aux_speaker.accuracy;
    j["disentanglement"] = r.disentanglement;
    out << j.dump() << '\n';
  }
  return out.str();
}

}  // namespace avdis
