#include <doctest.h>

#include <cmath>
#include <vector>

#include "avdis/errors.hpp"
#include "avdis/model.hpp"
#include "avdis/objectives.hpp"
#include "support.hpp"

using namespace avdis;
using avdis::testing::random_array;
using avdis::testing::random_batch;
using avdis::testing::tiny_model_config;

namespace {

double value_of(const Tape& t, Var v) { return t.value(v)[0]; }

// Direct evaluation of -(1/K) sum_k log p_k from probabilities.
double confusion_oracle(const std::vector<double>& probs) {
  double s = 0.0;
  for (double p : probs) s += std::log(p);
  return -s / static_cast<double>(probs.size());
}

// Outputs whose logit blocks are plain leaves, for loss-only checks.
ModelOutputs leaf_outputs(Tape& t, const DenseArray& e_prim, const DenseArray& s_prim,
                          const DenseArray& e_aux, const DenseArray& s_aux) {
  ModelOutputs out;
  out.e_prim = t.leaf(e_prim);
  out.s_prim = t.leaf(s_prim);
  out.e_aux = t.leaf(e_aux);
  out.s_aux = t.leaf(s_aux);
  return out;
}

ClipBatch labels_only(std::vector<int> emotion, std::vector<int> speaker) {
  ClipBatch b;
  b.emotion = std::move(emotion);
  b.speaker = std::move(speaker);
  return b;
}

}  // namespace

TEST_CASE("cross entropy examples") {
  Tape t;
  const int zero[] = {0};
  CHECK(value_of(t, cross_entropy(t, t.leaf(DenseArray({1, 5})), zero)) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-14));
  CHECK(value_of(t, cross_entropy(t, t.leaf(DenseArray::matrix({{1e6, 0, 0}})), zero)) ==
        doctest::Approx(0.0));
  CHECK(value_of(t, cross_entropy(t, t.leaf(DenseArray::matrix({{1, 0}})), zero)) ==
        doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
  CHECK(value_of(t, cross_entropy(t, t.leaf(DenseArray::matrix({{1, 0}})), zero)) ==
        doctest::Approx(0.31326).epsilon(1e-5));

  const int targets[] = {2, 0};
  CHECK(value_of(t, cross_entropy(t, t.leaf(DenseArray({2, 3})), targets)) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("cross entropy rejects labels out of range") {
  Tape t;
  auto logits = t.leaf(DenseArray({2, 3}));
  const int high[] = {0, 3};
  const int negative[] = {-1, 0};
  const int short_list[] = {0};
  CHECK_THROWS_AS(cross_entropy(t, logits, high), LabelError);
  CHECK_THROWS_AS(cross_entropy(t, logits, negative), LabelError);
  CHECK_THROWS_AS(cross_entropy(t, logits, short_list), DimensionError);
}

TEST_CASE("cross entropy is non-negative") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Tape t;
    Rng rng(seed);
    const int target[] = {static_cast<int>(rng.index(4))};
    CHECK(value_of(t, cross_entropy(t, t.leaf(random_array({1, 4}, seed, -6, 6)), target)) >= 0.0);
  }
}

TEST_CASE("primary loss") {
  Tape t;
  const LossWeights w;
  const ClipBatch b = labels_only({1, 4}, {0, 2});
  auto out = leaf_outputs(t, DenseArray({2, 5}), DenseArray({2, 5}), DenseArray({2, 5}),
                          DenseArray({2, 5}));
  CHECK(value_of(t, primary_loss(t, out, b, w)) == doctest::Approx(std::log(5.0)).epsilon(1e-14));

  LossWeights stl = w;
  stl.spk_prim = 0.0;
  auto mixed = leaf_outputs(t, random_array({2, 5}, 1), random_array({2, 5}, 2),
                            DenseArray({2, 5}), DenseArray({2, 5}));
  const double em = value_of(t, cross_entropy(t, mixed.e_prim, b.emotion));
  CHECK(value_of(t, primary_loss(t, mixed, b, stl)) == doctest::Approx(0.5 * em).epsilon(1e-14));

  DenseArray sure_e({2, 5}), sure_s({2, 5});
  sure_e.at(0, 1) = sure_e.at(1, 4) = 1e6;
  sure_s.at(0, 0) = sure_s.at(1, 2) = 1e6;
  auto perfect = leaf_outputs(t, sure_e, sure_s, DenseArray({2, 5}), DenseArray({2, 5}));
  CHECK(value_of(t, primary_loss(t, perfect, b, w)) == doctest::Approx(0.0));
}

TEST_CASE("auxiliary loss") {
  Tape t;
  const LossWeights w;
  const ClipBatch b = labels_only({1, 3}, {9, 0});
  auto out = leaf_outputs(t, DenseArray({2, 5}), DenseArray({2, 10}), DenseArray({2, 5}),
                          DenseArray({2, 10}));
  const double want = 0.3 * std::log(5.0) + 0.3 * std::log(10.0);
  CHECK(value_of(t, auxiliary_loss(t, out, b, w)) == doctest::Approx(want).epsilon(1e-14));

  LossWeights none = w;
  none.em_aux = none.spk_aux = 0.0;
  CHECK(value_of(t, auxiliary_loss(t, out, b, none)) == 0.0);

  DenseArray sure_e({2, 5}), sure_s({2, 10});
  sure_e.at(0, 1) = sure_e.at(1, 3) = 1e6;
  sure_s.at(0, 9) = sure_s.at(1, 0) = 1e6;
  auto perfect = leaf_outputs(t, DenseArray({2, 5}), DenseArray({2, 10}), sure_e, sure_s);
  CHECK(value_of(t, auxiliary_loss(t, perfect, b, w)) == doctest::Approx(0.0));

  // e_aux is scored against emotion labels and s_aux against speaker labels
  LossWeights only_e = none;
  only_e.spk_aux = 1.0;
  auto e_only = leaf_outputs(t, DenseArray({2, 5}), DenseArray({2, 10}), sure_e,
                             DenseArray({2, 10}));
  CHECK(value_of(t, auxiliary_loss(t, e_only, b, only_e)) == doctest::Approx(0.0));
}

TEST_CASE("loss weights are validated and enter linearly") {
  LossWeights bad;
  bad.em_aux = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  const ModelConfig c = tiny_model_config();
  const MultitaskModel model(c, 1);
  const ClipBatch batch = random_batch(c, {2, 3, 1}, 3, 4);
  LossWeights w;
  ForwardPass pass = run_forward(model, batch);
  auto& t = pass.tape;
  const LossTerms base = compute_losses(t, pass.out, batch, w);
  const LossReport r = read_losses(t, base);
  CHECK(r.primary == doctest::Approx(r.em_prim + r.spk_prim).epsilon(1e-12));
  CHECK(r.auxiliary == doctest::Approx(r.em_aux + r.spk_aux).epsilon(1e-12));

  LossWeights doubled = w;
  doubled.em_prim *= 2;
  doubled.spk_aux *= 2;
  const LossReport d = read_losses(t, compute_losses(t, pass.out, batch, doubled));
  CHECK(d.em_prim == doctest::Approx(2 * r.em_prim).epsilon(1e-12));
  CHECK(d.spk_aux == doctest::Approx(2 * r.spk_aux).epsilon(1e-12));
  CHECK(d.spk_prim == r.spk_prim);
  CHECK(d.em_aux == r.em_aux);
}

TEST_CASE("confusion loss examples") {
  Tape t;
  CHECK(value_of(t, confusion_loss(t, t.leaf(DenseArray({3, 5})))) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-14));

  const std::vector<double> probs{0.9, 0.025, 0.025, 0.025, 0.025};
  DenseArray logits({1, 5});
  for (std::size_t k = 0; k < 5; ++k) logits[k] = std::log(probs[k]);
  const double got = value_of(t, confusion_loss(t, t.leaf(logits)));
  CHECK(got == doctest::Approx(confusion_oracle(probs)).epsilon(1e-12));
  CHECK(got == doctest::Approx(2.97218).epsilon(1e-5));
}

TEST_CASE("confusion loss is bounded below by ln K") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Tape t;
    const std::size_t k = 2 + seed % 7;
    const DenseArray x = random_array({3, k}, seed, -4, 4);
    CHECK(value_of(t, confusion_loss(t, t.leaf(x))) >= std::log(static_cast<double>(k)) - 1e-12);

    // constant shifts per row keep the predictions uniform
    DenseArray flat({2, k});
    for (std::size_t i = 0; i < k; ++i) flat.at(0, i) = 3.0, flat.at(1, i) = -1.5;
    CHECK(std::abs(value_of(t, confusion_loss(t, t.leaf(flat))) - std::log(double(k))) < 1e-12);

    DenseArray nudged = flat;
    nudged.at(0, seed % k) += 1e-3;
    CHECK(value_of(t, confusion_loss(t, t.leaf(nudged))) > std::log(double(k)));
  }
}

TEST_CASE("loss gradients through the full model pass finite differences") {
  const ModelConfig c = tiny_model_config();
  const MultitaskModel model(c, 6);
  const ClipBatch batch = random_batch(c, {2, 3}, 3, 13);
  const LossWeights w;
  // differentiate with respect to the emotion projection weight
  const std::size_t target = *model.params().find("emotion_embedding.weight");

  auto through_model = [&](auto loss_of) {
    return [&, loss_of](Tape& t, Var x) {
      auto bound = model.params().bind(t);
      bound[target] = x;
      const ModelOutputs out = model.forward(t, bound, batch);
      return loss_of(t, out);
    };
  };
  const ScalarFn fns[] = {
      through_model([&](Tape& t, const ModelOutputs& o) {
        return cross_entropy(t, o.e_prim, batch.emotion);
      }),
      through_model([&](Tape& t, const ModelOutputs& o) { return primary_loss(t, o, batch, w); }),
      through_model([&](Tape& t, const ModelOutputs& o) { return auxiliary_loss(t, o, batch, w); }),
      through_model([&](Tape& t, const ModelOutputs& o) { return confusion_loss(t, o.s_aux); }),
  };
  for (const auto& f : fns)
    CHECK(finite_diff_check(f, model.params()[target].value, 1e-6) < 1e-6);
}
