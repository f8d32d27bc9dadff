#pragma once

#include <span>

#include "avdis/autodiff.hpp"
#include "avdis/clip_batch.hpp"
#include "avdis/model.hpp"

namespace avdis {

struct LossWeights {
  double em_prim = 0.5;
  double spk_prim = 0.5;
  double em_aux = 0.3;   // speaker prediction from the emotion embedding
  double spk_aux = 0.3;  // emotion prediction from the speaker embedding

  void validate() const;
};

// Batch mean of -log softmax(logits)[target]. Throws LabelError for targets
// outside [0, K).
Var cross_entropy(Tape& tape, Var logits, std::span<const int> targets);

// w_em_prim * CE(e_prim, e) + w_spk_prim * CE(s_prim, s)
Var primary_loss(Tape& tape, const ModelOutputs& out, const ClipBatch& batch,
                 const LossWeights& w);

// w_spk_aux * CE(e_aux, e) + w_em_aux * CE(s_aux, s)
Var auxiliary_loss(Tape& tape, const ModelOutputs& out, const ClipBatch& batch,
                   const LossWeights& w);

// Cross-entropy against the uniform distribution, averaged over the batch.
// Bounded below by ln K, reached exactly at uniform predictions.
Var confusion_loss(Tape& tape, Var logits);

// Weighted loss terms of one forward pass.
struct LossTerms {
  Var em_prim;
  Var spk_prim;
  Var em_aux;
  Var spk_aux;
  Var primary;
  Var auxiliary;
};

LossTerms compute_losses(Tape& tape, const ModelOutputs& out, const ClipBatch& batch,
                         const LossWeights& w);

struct LossReport {
  double primary = 0.0;
  double auxiliary = 0.0;
  double em_prim = 0.0;
  double spk_prim = 0.0;
  double em_aux = 0.0;
  double spk_aux = 0.0;
};

LossReport read_losses(const Tape& tape, const LossTerms& terms);

}  // namespace avdis
