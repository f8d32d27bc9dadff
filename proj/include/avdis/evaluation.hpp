#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "avdis/data.hpp"
#include "avdis/layers.hpp"
#include "avdis/metrics.hpp"
#include "avdis/model.hpp"

namespace avdis {

// Forward-only outputs over a list of clips, in clip order.
struct Predictions {
  std::vector<int> emotion_true;
  std::vector<int> speaker_true;
  std::vector<int> e_prim;
  std::vector<int> s_prim;
  std::vector<int> e_aux;
  std::vector<int> s_aux;
  DenseArray emotion_emb;  // [M x emotion_emb_dim]
  DenseArray speaker_emb;  // [M x speaker_emb_dim]
};

Predictions predict(const MultitaskModel& model, std::span<const Clip> clips,
                    std::size_t batch_size = 64);

// Metrics of the four heads. The auxiliary heads give a probe-free leakage
// estimate used for per-epoch model selection.
struct HeadMetrics {
  MetricsReport emotion;      // e_prim
  MetricsReport speaker;      // s_prim
  MetricsReport aux_emotion;  // e_aux, emotion read from the speaker embedding
  MetricsReport aux_speaker;  // s_aux, speaker read from the emotion embedding
  double leakage_proxy = 0.0;
};

HeadMetrics head_metrics(const Predictions& predictions, std::size_t num_emotions,
                         std::size_t num_speakers);

struct EvaluationReport {
  MetricsReport emotion;               // primary emotion head
  MetricsReport speaker;               // primary speaker head
  MetricsReport emotion_from_speaker;  // probe on speaker embeddings
  MetricsReport speaker_from_emotion;  // probe on emotion embeddings
  double disentanglement = 0.0;
  std::vector<int> emotion_truth;
  std::vector<int> emotion_predictions;
};

// Primary metrics from the heads, leakage from freshly trained probes on the
// extracted embeddings. The model is only read.
EvaluationReport evaluate_model(const MultitaskModel& model, std::span<const Clip> clips,
                                const ProbeConfig& probe);
EvaluationReport evaluate_model(const Checkpoint& checkpoint, std::span<const Clip> clips,
                                const ProbeConfig& probe);

}  // namespace avdis
