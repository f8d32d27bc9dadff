#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avdis/autodiff.hpp"
#include "avdis/clip_batch.hpp"
#include "avdis/layers.hpp"

namespace avdis {

struct ModelConfig {
  std::size_t audio_dim = 12;
  std::size_t video_dim = 16;
  std::vector<std::size_t> audio_widths{32};
  std::vector<std::size_t> video_widths{32};
  std::size_t emotion_emb_dim = 64;
  std::size_t speaker_emb_dim = 64;
  std::size_t num_emotions = 5;
  std::size_t num_speakers = 20;
  // Hidden widths of each auxiliary head; empty means a single affine layer.
  std::vector<std::size_t> aux_hidden;

  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Tape handles of one forward pass. Logits are [B x K], embeddings [B x dim].
struct ModelOutputs {
  Var e_prim;       // emotion from the emotion embedding
  Var s_prim;       // speaker from the speaker embedding
  Var e_aux;        // emotion from the speaker embedding
  Var s_aux;        // speaker from the emotion embedding
  Var emotion_emb;
  Var speaker_emb;
};

// Two-branch audio-visual network. Each modality has one segment encoder
// shared by both branches; segment features are relu-activated, mean-pooled
// over unmasked segments, concatenated and projected to an emotion embedding
// and a speaker embedding. Each embedding feeds its own primary classifier
// and an auxiliary classifier for the other task.
class MultitaskModel {
 public:
  MultitaskModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // `bound` is one tape var per parameter, as produced by params().bind().
  // With grl_lambda set, a gradient reversal node sits between each embedding
  // and the auxiliary head reading it.
  ModelOutputs forward(Tape& tape, std::span<const Var> bound, const ClipBatch& batch,
                       std::optional<double> grl_lambda = std::nullopt) const;

  Checkpoint checkpoint() const;
  void load(const Checkpoint& checkpoint);
  static MultitaskModel from_checkpoint(const Checkpoint& checkpoint);

 private:
  Var encode(Tape& tape, std::span<const Var> bound, const MlpEncoder& encoder,
             const DenseArray& segments, const DenseArray& mask) const;

  ModelConfig config_;
  ParameterStore params_;
  MlpEncoder audio_encoder_;
  MlpEncoder video_encoder_;
  AffineLayer emotion_projection_;
  AffineLayer speaker_projection_;
  AffineLayer emotion_classifier_;
  AffineLayer speaker_classifier_;
  MlpEncoder speaker_from_emotion_;  // group emotion_aux, yields s_aux
  MlpEncoder emotion_from_speaker_;  // group speaker_aux, yields e_aux
};

// Tape, bound parameters and outputs kept together for a training step.
struct ForwardPass {
  Tape tape;
  std::vector<Var> bound;
  ModelOutputs out;
};

ForwardPass run_forward(const MultitaskModel& model, const ClipBatch& batch,
                        std::optional<double> grl_lambda = std::nullopt);

}  // namespace avdis
