#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "avdis/errors.hpp"
#include "avdis/evaluation.hpp"
#include "avdis/experiment.hpp"
#include "avdis/strategies.hpp"
#include "support.hpp"

using namespace avdis;
using avdis::testing::random_batch;
using avdis::testing::tiny_model_config;

namespace {

StrategyConfig config_for(Strategy s) {
  StrategyConfig cfg;
  cfg.strategy = s;
  cfg.optim.lr_primary = 1e-2;
  cfg.optim.lr_auxiliary = 5e-2;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  return cfg;
}

bool same_params(const MultitaskModel& a, const MultitaskModel& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (!(a.params()[i].value == b.params()[i].value)) return false;
  return true;
}

bool same_group(const MultitaskModel& a, const MultitaskModel& b, ParamGroup g) {
  return a.params().snapshot(g) == b.params().snapshot(g);
}

ModelConfig model_for(const Dataset& ds) {
  ModelConfig c;
  c.audio_dim = ds.header.audio_dim;
  c.video_dim = ds.header.video_dim;
  c.num_emotions = ds.header.num_emotions;
  c.num_speakers = ds.header.num_speakers;
  c.audio_widths = {8};
  c.video_widths = {8};
  c.emotion_emb_dim = 8;
  c.speaker_emb_dim = 6;
  return c;
}

// Gradient of each parameter for `loss_of` on a forward pass with optional reversal.
template <typename LossFn>
std::vector<DenseArray> grads_of(const MultitaskModel& m, const ClipBatch& b,
                                 std::optional<double> lambda, LossFn loss_of) {
  ForwardPass pass = run_forward(m, b, lambda);
  pass.tape.backward(loss_of(pass));
  return m.params().gradients(pass.tape, pass.bound);
}

}  // namespace

TEST_CASE("strategy names and validation") {
  for (auto s : {Strategy::STL, Strategy::MTL, Strategy::GR, Strategy::ALT, Strategy::CONF})
    CHECK(parse_strategy(strategy_name(s)) == s);
  CHECK_THROWS_AS(parse_strategy("DANN"), ConfigError);
  CHECK_FALSE(disentangles(Strategy::MTL));
  CHECK(disentangles(Strategy::ALT));

  StrategyConfig cfg = config_for(Strategy::GR);
  cfg.grl_lambda = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.strategy = Strategy::MTL;
  CHECK_NOTHROW(cfg.validate());  // GR-only field ignored elsewhere
  cfg.conf_weight = -1.0;
  CHECK_NOTHROW(cfg.validate());
  cfg.strategy = Strategy::CONF;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = config_for(Strategy::ALT);
  cfg.alt_adv_weight = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = config_for(Strategy::MTL);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("step functions check their strategy") {
  const ModelConfig c = tiny_model_config();
  MultitaskModel m(c, 1);
  const ClipBatch b = random_batch(c, {2, 3}, 3, 1);
  CHECK_THROWS_AS(step_gr(m, b, config_for(Strategy::MTL), 0), ConfigError);
  CHECK_THROWS_AS(step_mtl(m, b, config_for(Strategy::GR), 0), ConfigError);
  CHECK_THROWS_AS(step_alt(m, b, config_for(Strategy::CONF), 0, AltPhase::primary), ConfigError);
  CHECK_THROWS_AS(step_alt(m, b, config_for(Strategy::ALT), 0, static_cast<AltPhase>(7)),
                  ConfigError);
  CHECK_THROWS_AS(step_conf(m, b, config_for(Strategy::ALT), 0), ConfigError);
}

TEST_CASE("STL leaves the speaker head and auxiliary heads alone") {
  const ModelConfig c = tiny_model_config();
  MultitaskModel m(c, 2);
  const MultitaskModel before(c, 2);
  const ClipBatch b = random_batch(c, {2, 3, 1}, 3, 4);
  const LossReport r = step_mtl(m, b, config_for(Strategy::STL), 0);
  CHECK(same_group(m, before, ParamGroup::speaker_head));
  CHECK(same_group(m, before, ParamGroup::emotion_aux));
  CHECK(same_group(m, before, ParamGroup::speaker_aux));
  CHECK_FALSE(same_group(m, before, ParamGroup::trunk));
  CHECK(r.spk_prim == 0.0);
  CHECK(r.primary == doctest::Approx(r.em_prim + r.spk_prim).epsilon(1e-12));
  CHECK_FALSE(m.params().frozen(ParamGroup::speaker_head));
}

TEST_CASE("MTL overfits one batch") {
  const ModelConfig c = tiny_model_config();
  MultitaskModel m(c, 3);
  const MultitaskModel before(c, 3);
  const ClipBatch b = random_batch(c, {2, 3, 1, 3}, 3, 8);
  const StrategyConfig cfg = config_for(Strategy::MTL);
  const double first = step_mtl(m, b, cfg, 0).primary;
  double last = first;
  for (int i = 1; i < 20; ++i) last = step_mtl(m, b, cfg, 0).primary;
  CHECK(last < first);
  CHECK(same_group(m, before, ParamGroup::emotion_aux));
  CHECK(same_group(m, before, ParamGroup::speaker_aux));
}

TEST_CASE("gradient reversal scales the trunk's auxiliary gradient by -lambda") {
  const ModelConfig c = tiny_model_config();
  const MultitaskModel m(c, 4);
  const ClipBatch b = random_batch(c, {3, 1, 2}, 3, 6);
  const LossWeights w;
  auto aux = [&](ForwardPass& p) { return auxiliary_loss(p.tape, p.out, b, w); };
  const auto plain = grads_of(m, b, std::nullopt, aux);
  for (double lambda : {0.5, 1.0}) {
    const auto rev = grads_of(m, b, lambda, aux);
    for (std::size_t i = 0; i < plain.size(); ++i) {
      const auto g = m.params()[i].group;
      for (std::size_t k = 0; k < plain[i].size(); ++k) {
        if (g == ParamGroup::emotion_aux || g == ParamGroup::speaker_aux)
          CHECK(rev[i][k] == plain[i][k]);
        else
          CHECK(std::abs(rev[i][k] + lambda * plain[i][k]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("GR with a vanishing lambda matches the primary-only trunk gradient") {
  const ModelConfig c = tiny_model_config();
  const MultitaskModel m(c, 4);
  const ClipBatch b = random_batch(c, {3, 1, 2}, 3, 6);
  const LossWeights w;
  const auto primary = grads_of(m, b, std::nullopt, [&](ForwardPass& p) {
    return primary_loss(p.tape, p.out, b, w);
  });
  const auto combined = grads_of(m, b, 1e-9, [&](ForwardPass& p) {
    const LossTerms t = compute_losses(p.tape, p.out, b, w);
    return p.tape.add(t.primary, t.auxiliary);
  });
  for (std::size_t i = 0; i < primary.size(); ++i) {
    if (m.params()[i].group != ParamGroup::trunk) continue;
    for (std::size_t k = 0; k < primary[i].size(); ++k)
      CHECK(std::abs(combined[i][k] - primary[i][k]) < 1e-8);
  }
}

TEST_CASE("GR step updates every group") {
  const ModelConfig c = tiny_model_config();
  MultitaskModel m(c, 5);
  const MultitaskModel before(c, 5);
  step_gr(m, random_batch(c, {2, 2, 3}, 3, 7), config_for(Strategy::GR), 0);
  for (auto g : {ParamGroup::trunk, ParamGroup::emotion_head, ParamGroup::speaker_head,
                 ParamGroup::emotion_aux, ParamGroup::speaker_aux})
    CHECK_FALSE(same_group(m, before, g));
}

TEST_CASE("ALT phases freeze the right groups") {
  const ModelConfig c = tiny_model_config();
  MultitaskModel m(c, 6);
  const ClipBatch b = random_batch(c, {2, 3, 1}, 3, 9);
  const StrategyConfig cfg = config_for(Strategy::ALT);

  const MultitaskModel start(c, 6);
  step_alt(m, b, cfg, 0, AltPhase::auxiliary);
  for (auto g : {ParamGroup::trunk, ParamGroup::emotion_head, ParamGroup::speaker_head})
    CHECK(same_group(m, start, g));
  CHECK_FALSE(same_group(m, start, ParamGroup::emotion_aux));
  CHECK_FALSE(same_group(m, start, ParamGroup::speaker_aux));

  const auto aux_e = m.params().snapshot(ParamGroup::emotion_aux);
  const auto aux_s = m.params().snapshot(ParamGroup::speaker_aux);
  const auto trunk = m.params().snapshot(ParamGroup::trunk);
  step_alt(m, b, cfg, 0, AltPhase::primary);
  CHECK(m.params().snapshot(ParamGroup::emotion_aux) == aux_e);
  CHECK(m.params().snapshot(ParamGroup::speaker_aux) == aux_s);
  CHECK_FALSE(m.params().snapshot(ParamGroup::trunk) == trunk);
  for (auto g : kAllGroups) CHECK_FALSE(m.params().frozen(g));
}

TEST_CASE("ALT primary phase with beta zero is an MTL step") {
  const ModelConfig c = tiny_model_config();
  MultitaskModel alt(c, 7), mtl(c, 7);
  const ClipBatch b = random_batch(c, {1, 3, 2}, 3, 2);
  StrategyConfig alt_cfg = config_for(Strategy::ALT);
  alt_cfg.alt_adv_weight = 0.0;
  const StrategyConfig mtl_cfg = config_for(Strategy::MTL);
  for (int i = 0; i < 3; ++i) {
    step_alt(alt, b, alt_cfg, i, AltPhase::primary);
    step_mtl(mtl, b, mtl_cfg, i);
  }
  CHECK(same_params(alt, mtl));
}

TEST_CASE("CONF with zero weight matches ALT with zero beta") {
  const ModelConfig c = tiny_model_config();
  MultitaskModel conf(c, 8), alt(c, 8);
  StrategyConfig conf_cfg = config_for(Strategy::CONF);
  conf_cfg.conf_weight = 0.0;
  StrategyConfig alt_cfg = config_for(Strategy::ALT);
  alt_cfg.alt_adv_weight = 0.0;
  for (int i = 0; i < 3; ++i) {
    const ClipBatch b = random_batch(c, {2, 1, 3}, 3, 20 + i);
    train_step(conf, b, conf_cfg, 0);
    train_step(alt, b, alt_cfg, 0);
  }
  CHECK(same_params(conf, alt));
}

TEST_CASE("CONF freezes the auxiliary heads in its confusion step") {
  const ModelConfig c = tiny_model_config();
  MultitaskModel m(c, 9);
  const ClipBatch b = random_batch(c, {2, 3}, 3, 3);
  StrategyConfig cfg = config_for(Strategy::CONF);
  cfg.conf_weight = 1.0;

  // replaying the auxiliary phase on a copy isolates the confusion step
  MultitaskModel aux_only(c, 9);
  StrategyConfig alt_cfg = config_for(Strategy::ALT);
  step_alt(aux_only, b, alt_cfg, 0, AltPhase::auxiliary);
  step_conf(m, b, cfg, 0);
  CHECK(same_group(m, aux_only, ParamGroup::emotion_aux));
  CHECK(same_group(m, aux_only, ParamGroup::speaker_aux));
  CHECK_FALSE(same_group(m, aux_only, ParamGroup::trunk));
}

TEST_CASE("confusion terms give no trunk gradient at uniform auxiliary predictions") {
  const ModelConfig c = tiny_model_config();
  MultitaskModel m(c, 10);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto& p = m.params()[i];
    if (p.group == ParamGroup::emotion_aux || p.group == ParamGroup::speaker_aux)
      for (auto& v : p.value.data()) v = 0.0;
  }
  const ClipBatch b = random_batch(c, {2, 3, 1}, 3, 5);
  const auto grads = grads_of(m, b, std::nullopt, [&](ForwardPass& p) {
    return p.tape.add(confusion_loss(p.tape, p.out.e_aux), confusion_loss(p.tape, p.out.s_aux));
  });
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (m.params()[i].group == ParamGroup::trunk)
      for (double v : grads[i].data()) CHECK(v == 0.0);

  const std::size_t target = *m.params().find("audio_encoder.0.weight");
  ScalarFn f = [&](Tape& t, Var x) {
    auto bound = m.params().bind(t);
    bound[target] = x;
    const ModelOutputs out = m.forward(t, bound, b);
    return t.add(confusion_loss(t, out.e_aux), confusion_loss(t, out.s_aux));
  };
  CHECK(finite_diff_check(f, m.params()[target].value, 1e-6) < 1e-8);
}

TEST_CASE("minibatches cover each index once") {
  Rng rng(3);
  const auto batches = minibatches(37, 8, rng);
  CHECK(batches.size() == 5);
  CHECK(batches.back().size() == 5);
  std::set<std::size_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 37);
  CHECK(*seen.rbegin() == 36);
}

TEST_CASE("train with zero epochs returns the initial model") {
  const Dataset ds = generate(avdis::testing::small_synthetic());
  const auto tr = ds.split(Split::train), va = ds.split(Split::validation);
  MultitaskModel m(model_for(ds), 1);
  const std::string before = encode_checkpoint(m.checkpoint());
  StrategyConfig cfg = config_for(Strategy::GR);
  cfg.epochs = 0;
  const TrainResult r = train(m, tr, va, cfg);
  CHECK(r.trace.epochs.empty());
  CHECK(r.best_epoch == 0);
  CHECK(encode_checkpoint(r.best) == before);
  CHECK(encode_checkpoint(m.checkpoint()) == before);
}

TEST_CASE("train input errors") {
  const Dataset ds = generate(avdis::testing::small_synthetic());
  const auto tr = ds.split(Split::train), va = ds.split(Split::validation);
  MultitaskModel m(model_for(ds), 1);
  const std::vector<Clip> none;
  CHECK_THROWS_AS(train(m, none, va, config_for(Strategy::MTL)), DataError);
  CHECK_THROWS_AS(train(m, tr, none, config_for(Strategy::MTL)), DataError);
  ModelConfig fewer = model_for(ds);
  fewer.num_speakers = 2;
  MultitaskModel small(fewer, 1);
  CHECK_THROWS_AS(train(small, tr, va, config_for(Strategy::MTL)), LabelError);
}

TEST_CASE("training is deterministic and keeps the selected epoch") {
  const Dataset ds = generate(avdis::testing::small_synthetic());
  const auto tr = ds.split(Split::train), va = ds.split(Split::validation);
  for (auto s : {Strategy::MTL, Strategy::GR, Strategy::ALT, Strategy::CONF}) {
    StrategyConfig cfg = config_for(s);
    cfg.epochs = 4;
    MultitaskModel a(model_for(ds), 2), b(model_for(ds), 2);
    const TrainResult ra = train(a, tr, va, cfg);
    const TrainResult rb = train(b, tr, va, cfg);
    CHECK(trace_to_jsonl(ra.trace) == trace_to_jsonl(rb.trace));
    CHECK(encode_checkpoint(ra.best) == encode_checkpoint(rb.best));
    REQUIRE(ra.trace.epochs.size() == 4);
    CHECK(encode_checkpoint(a.checkpoint()) == encode_checkpoint(ra.best));

    std::vector<double> scores;
    for (const auto& e : ra.trace.epochs) {
      CHECK(std::isfinite(e.loss_primary));
      CHECK(std::isfinite(e.disentanglement));
      CHECK(e.disentanglement == e.validation.leakage_proxy);
      scores.push_back(disentangles(s) ? e.disentanglement : -e.validation.emotion.macro_f);
    }
    const auto best = std::min_element(scores.begin(), scores.end()) - scores.begin();
    CHECK(ra.best_epoch == best + 1);

    const HeadMetrics hm = head_metrics(predict(a, va), ds.header.num_emotions,
                                        ds.header.num_speakers);
    CHECK(hm.leakage_proxy == ra.trace.epochs[ra.best_epoch - 1].disentanglement);

    std::istringstream lines(trace_to_jsonl(ra.trace));
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) ++count;
    CHECK(count == 4);
  }
}

TEST_CASE("STL learns separable emotions") {
  SyntheticSpec spec;
  spec.rho = 0.0;
  const Dataset ds = generate(spec);
  const auto tr = ds.split(Split::train), va = ds.split(Split::validation);
  ModelConfig mc;
  mc.audio_dim = ds.header.audio_dim;
  mc.video_dim = ds.header.video_dim;
  mc.num_speakers = ds.header.num_speakers;
  mc.num_emotions = ds.header.num_emotions;
  MultitaskModel m(mc, 1);
  StrategyConfig cfg;
  cfg.strategy = Strategy::STL;
  cfg.epochs = 50;
  cfg.optim.lr_primary = 3e-3;
  train(m, tr, va, cfg);
  const HeadMetrics hm = head_metrics(predict(m, tr), mc.num_emotions, mc.num_speakers);
  CHECK(hm.emotion.macro_f >= 0.95);
}

TEST_CASE("disentangling strategies leak less than MTL on the entangled benchmark") {
  const ExperimentConfig cfg = standard_benchmark();
  const Dataset ds = generate(cfg.synthetic);
  const auto train_set = ds.split(Split::train);
  const auto val_set = ds.split(Split::validation);
  // probe-based score on validation embeddings, narrowest speaker dimension
  auto score = [&](Strategy s, std::uint64_t seed) {
    const CellId cell{s, 8, seed};
    MultitaskModel m(cell_model_config(cfg, ds.header, cell), seed);
    train(m, train_set, val_set, cell_strategy_config(cfg, cell));
    return evaluate_model(m, val_set, cell_probe_config(cfg, cell)).disentanglement;
  };
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const double baseline = score(Strategy::MTL, seed);
    for (auto s : {Strategy::GR, Strategy::ALT, Strategy::CONF}) {
      CAPTURE(seed);
      CAPTURE(strategy_name(s));
      CHECK(score(s, seed) < baseline);
    }
  }
}
