#include "avdis/objectives.hpp"

#include <string>

#include "avdis/errors.hpp"

namespace avdis {

void LossWeights::validate() const {
  if (em_prim < 0.0 || spk_prim < 0.0 || em_aux < 0.0 || spk_aux < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

Var cross_entropy(Tape& tape, Var logits, std::span<const int> targets) {
  const auto& v = tape.value(logits);
  if (v.rank() != 2 || v.extent(0) != targets.size()) {
    throw DimensionError("cross_entropy: logits " + shape_to_string(v.shape()) + " for " +
                         std::to_string(targets.size()) + " targets");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= v.extent(1)) {
      throw LabelError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(v.extent(1)) + ")");
    }
  }
  const Var logp = tape.log_softmax(logits);
  return tape.scale(tape.mean(tape.pick(logp, targets)), -1.0);
}

LossTerms compute_losses(Tape& tape, const ModelOutputs& out, const ClipBatch& batch,
                         const LossWeights& w) {
  LossTerms t;
  t.em_prim = tape.scale(cross_entropy(tape, out.e_prim, batch.emotion), w.em_prim);
  t.spk_prim = tape.scale(cross_entropy(tape, out.s_prim, batch.speaker), w.spk_prim);
  t.spk_aux = tape.scale(cross_entropy(tape, out.e_aux, batch.emotion), w.spk_aux);
  t.em_aux = tape.scale(cross_entropy(tape, out.s_aux, batch.speaker), w.em_aux);
  t.primary = tape.add(t.em_prim, t.spk_prim);
  t.auxiliary = tape.add(t.spk_aux, t.em_aux);
  return t;
}

Var primary_loss(Tape& tape, const ModelOutputs& out, const ClipBatch& batch,
                 const LossWeights& w) {
  const Var em = tape.scale(cross_entropy(tape, out.e_prim, batch.emotion), w.em_prim);
  const Var spk = tape.scale(cross_entropy(tape, out.s_prim, batch.speaker), w.spk_prim);
  return tape.add(em, spk);
}

Var auxiliary_loss(Tape& tape, const ModelOutputs& out, const ClipBatch& batch,
                   const LossWeights& w) {
  const Var em = tape.scale(cross_entropy(tape, out.e_aux, batch.emotion), w.spk_aux);
  const Var spk = tape.scale(cross_entropy(tape, out.s_aux, batch.speaker), w.em_aux);
  return tape.add(em, spk);
}

Var confusion_loss(Tape& tape, Var logits) {
  const Var logp = tape.log_softmax(logits);
  return tape.scale(tape.mean(tape.row_mean(logp)), -1.0);
}

LossReport read_losses(const Tape& tape, const LossTerms& terms) {
  LossReport r;
  r.em_prim = tape.value(terms.em_prim)[0];
  r.spk_prim = tape.value(terms.spk_prim)[0];
  r.em_aux = tape.value(terms.em_aux)[0];
  r.spk_aux = tape.value(terms.spk_aux)[0];
  r.primary = tape.value(terms.primary)[0];
  r.auxiliary = tape.value(terms.auxiliary)[0];
  return r;
}

}  // namespace avdis
