#include "avdis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#include "avdis/autodiff.hpp"
#include "avdis/errors.hpp"
#include "avdis/layers.hpp"
#include "avdis/objectives.hpp"
#include "avdis/random.hpp"
#include "avdis/stats.hpp"

namespace avdis {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_pairs(std::span<const int> truth,
                                            std::span<const int> predicted,
                                            std::size_t classes) {
  if (truth.size() != predicted.size()) {
    throw DimensionError("confusion matrix: " + std::to_string(truth.size()) + " labels vs " +
                         std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

void ConfusionMatrix::add(int truth, int predicted) {
  const auto k = static_cast<int>(classes_);
  if (truth < 0 || truth >= k || predicted < 0 || predicted >= k) {
    throw LabelError("confusion matrix: pair (" + std::to_string(truth) + ", " +
                     std::to_string(predicted) + ") outside " + std::to_string(k) + " classes");
  }
  counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)] += 1;
  total_ += 1;
}

MetricsReport summarize(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  MetricsReport r;
  r.per_class.resize(k);
  std::size_t trace = 0;
  double f_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm.count(c, j);
      col += cm.count(j, c);
    }
    const double tp = static_cast<double>(cm.count(c, c));
    trace += cm.count(c, c);
    auto& s = r.per_class[c];
    s.precision = col ? tp / static_cast<double>(col) : 0.0;
    s.recall = row ? tp / static_cast<double>(row) : 0.0;
    s.f = s.precision + s.recall > 0.0
              ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
              : 0.0;
    f_sum += s.f;
  }
  r.macro_f = f_sum / static_cast<double>(k);
  r.accuracy = cm.total() ? static_cast<double>(trace) / static_cast<double>(cm.total()) : 0.0;
  return r;
}

double macro_f1(const ConfusionMatrix& cm) { return summarize(cm).macro_f; }

double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DataError("accuracy: empty confusion matrix");
  std::size_t trace = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) trace += cm.count(c, c);
  return static_cast<double>(trace) / static_cast<double>(cm.total());
}

double disentanglement_score(const MetricsReport& emotion_from_speaker,
                             const MetricsReport& speaker_from_emotion) {
  return 0.5 * (emotion_from_speaker.macro_f + speaker_from_emotion.accuracy);
}

// ---- probes ---------------------------------------------------------------

void ProbeConfig::validate() const {
  if (hidden_dim < 1) throw ConfigError("probe: hidden_dim must be >= 1");
  if (epochs < 0) throw ConfigError("probe: epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("probe: lr must be positive");
  if (batch_size < 1) throw ConfigError("probe: batch_size must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("probe: train_fraction must lie in (0, 1)");
  }
}

ProbeSplit stratified_split(std::span<const int> labels, double train_fraction,
                            std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(seed);
  ProbeSplit split;
  for (auto& [label, items] : by_class) {
    rng.shuffle(std::span<std::size_t>(items));
    const std::size_t n = items.size();
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n >= 2 ? n - 1 : 1);
    split.train.insert(split.train.end(), items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.eval.insert(split.eval.end(), items.begin() + static_cast<std::ptrdiff_t>(n_train), items.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

namespace {

DenseArray gather_rows(const DenseArray& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.extent(1);
  DenseArray out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < d; ++k) out.at(i, k) = x.at(rows[i], k);
  return out;
}


std::vector<int> argmax_rows(const DenseArray& logits) {
  std::vector<int> out(logits.extent(0));
  for (std::size_t i = 0; i < logits.extent(0); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.extent(1); ++k)
      if (logits.at(i, k) > logits.at(i, best)) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

MetricsReport train_probe(const DenseArray& train_x, std::span<const int> train_y,
                          const DenseArray& eval_x, std::span<const int> eval_y,
                          std::size_t classes, const ProbeConfig& config) {
  config.validate();
  if (train_x.rank() != 2 || eval_x.rank() != 2 || train_x.extent(0) != train_y.size() ||
      eval_x.extent(0) != eval_y.size() || train_x.extent(1) != eval_x.extent(1)) {
    throw DimensionError("probe: embeddings " + shape_to_string(train_x.shape()) + " / " +
                         shape_to_string(eval_x.shape()) + " do not match label counts");
  }
  std::vector<int> present(train_y.begin(), train_y.end());
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  if (present.size() < 2) {
    throw DataError("probe: training rows contain fewer than two classes");
  }
  if (eval_y.empty()) throw DataError("probe: no evaluation rows");


  Rng rng(config.seed);
  ParameterStore store;
  const std::size_t dims[] = {train_x.extent(1), config.hidden_dim, classes};
  const MlpEncoder mlp = make_mlp(store, "probe", ParamGroup::probe, dims, rng);
  OptimConfig adam;
  adam.lr_primary = config.lr;

  std::vector<std::size_t> order(train_y.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> y;
      for (auto r : rows) y.push_back(train_y[r]);
      Tape tape;
      const auto bound = store.bind(tape);
      const Var logits = mlp.apply(tape, bound, tape.leaf(gather_rows(train_x, rows)));
      tape.backward(cross_entropy(tape, logits, y));
      const auto grads = store.gradients(tape, bound);
      for (std::size_t i = 0; i < store.size(); ++i) adam_update(store[i], grads[i], adam, config.lr);
    }
  }

  Tape tape;
  const auto bound = store.bind(tape);
  const Var logits = mlp.apply(tape, bound, tape.leaf(eval_x));
  const auto predicted = argmax_rows(tape.value(logits));
  return summarize(ConfusionMatrix::from_pairs(eval_y, predicted, classes));
}

MetricsReport train_probe(const DenseArray& embeddings, std::span<const int> labels,
                          std::size_t classes, const ProbeConfig& config) {
  if (embeddings.rank() != 2 || embeddings.extent(0) != labels.size()) {
    throw DimensionError("probe: embeddings " + shape_to_string(embeddings.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const ProbeSplit split = stratified_split(labels, config.train_fraction, config.seed);
  std::vector<int> ytrain, yeval;
  for (auto i : split.train) ytrain.push_back(labels[i]);
  for (auto i : split.eval) yeval.push_back(labels[i]);
  return train_probe(gather_rows(embeddings, split.train), ytrain,
                     gather_rows(embeddings, split.eval), yeval, classes, config);
}

// ---- Stuart-Maxwell -------------------------------------------------------

StuartMaxwellResult stuart_maxwell(std::span<const int> preds_a, std::span<const int> preds_b,
                                   std::size_t classes) {
  if (preds_a.empty()) throw DataError("stuart_maxwell: no paired items");
  const ConfusionMatrix table = ConfusionMatrix::from_pairs(preds_a, preds_b, classes);
  const std::size_t k = classes;

  // Keep classes that take part in at least one discordant pair.
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t discordant = 0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) discordant += table.count(i, j) + table.count(j, i);
    if (discordant > 0) active.push_back(i);
  }
  StuartMaxwellResult result;
  if (active.size() < 2) return result;  // no discordance: W = 0, p = 1
  active.pop_back();

  const auto m = static_cast<Eigen::Index>(active.size());
  Eigen::VectorXd d(m);
  Eigen::MatrixXd v(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const std::size_t i = active[static_cast<std::size_t>(a)];
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row += static_cast<double>(table.count(i, j));
      col += static_cast<double>(table.count(j, i));
    }
    d(a) = row - col;
    for (Eigen::Index b = 0; b < m; ++b) {
      const std::size_t j = active[static_cast<std::size_t>(b)];
      v(a, b) = i == j ? row + col - 2.0 * static_cast<double>(table.count(i, i))
                       : -static_cast<double>(table.count(i, j) + table.count(j, i));
    }
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(v);
  if (!lu.isInvertible()) {
    throw NumericalError("stuart_maxwell: reduced covariance is singular (discordant pairs split "
                         "into disconnected class groups)");
  }
  result.statistic = std::max(0.0, d.dot(lu.solve(d)));
  result.dof = active.size();
  result.p_value = chi_square_upper_tail(result.statistic, static_cast<double>(result.dof));
  return result;
}

}  // namespace avdis
