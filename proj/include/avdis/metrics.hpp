#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "avdis/dense_array.hpp"

namespace avdis {

// K x K counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  static ConfusionMatrix from_pairs(std::span<const int> truth, std::span<const int> predicted,
                                    std::size_t classes);

  void add(int truth, int predicted);
  std::size_t count(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::size_t classes() const { return classes_; }
  std::size_t total() const { return total_; }

 private:
  std::size_t classes_;
  std::size_t total_ = 0;
  std::vector<std::size_t> counts_;
};

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

struct MetricsReport {
  std::vector<ClassScores> per_class;
  double macro_f = 0.0;
  double accuracy = 0.0;
  std::optional<double> disentanglement_score;
};

// Unweighted mean of per-class F1. A class with P + R = 0 scores 0, including
// classes that never occur.
double macro_f1(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);
MetricsReport summarize(const ConfusionMatrix& cm);

// Mean of emotion-from-speaker macro-F and speaker-from-emotion accuracy.
double disentanglement_score(const MetricsReport& emotion_from_speaker,
                             const MetricsReport& speaker_from_emotion);

struct ProbeConfig {
  std::size_t hidden_dim = 32;
  int epochs = 100;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;

  void validate() const;
};

// Index split stratified by label: per class, a seeded shuffle sends
// round(train_fraction * count) items (at least one) to the probe-training side.
struct ProbeSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};
ProbeSplit stratified_split(std::span<const int> labels, double train_fraction,
                            std::uint64_t seed);

// Trains a D -> hidden -> K relu classifier on frozen embeddings with Adam
// and cross-entropy, then scores it on the held-out rows. Throws DataError if
// fewer than two classes are present in the training rows.
MetricsReport train_probe(const DenseArray& train_x, std::span<const int> train_y,
                          const DenseArray& eval_x, std::span<const int> eval_y,
                          std::size_t classes, const ProbeConfig& config);

// Same, splitting `embeddings` [M x D] with stratified_split first.
MetricsReport train_probe(const DenseArray& embeddings, std::span<const int> labels,
                          std::size_t classes, const ProbeConfig& config);

struct StuartMaxwellResult {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;

  bool reject(double alpha = 0.01) const { return p_value < alpha; }
};

// Marginal homogeneity of paired K-class predictions on the same items.
// Classes with no discordant pair are dropped, then the last remaining class
// is dropped and W = d' V^-1 d is referred to chi-square with (remaining)
// degrees of freedom. Throws NumericalError when the reduced covariance is
// singular.
StuartMaxwellResult stuart_maxwell(std::span<const int> preds_a, std::span<const int> preds_b,
                                   std::size_t classes);

}  // namespace avdis
