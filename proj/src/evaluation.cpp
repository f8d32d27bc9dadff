#include "avdis/evaluation.hpp"

#include <algorithm>

#include "avdis/errors.hpp"

namespace avdis {

namespace {

void append_argmax(const DenseArray& logits, std::vector<int>& out) {
  for (std::size_t i = 0; i < logits.extent(0); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.extent(1); ++k)
      if (logits.at(i, k) > logits.at(i, best)) best = k;
    out.push_back(static_cast<int>(best));
  }
}

void copy_rows(const DenseArray& src, DenseArray& dst, std::size_t offset) {
  std::copy(src.data().begin(), src.data().end(),
            dst.data().begin() + static_cast<std::ptrdiff_t>(offset * src.extent(1)));
}

}  // namespace

Predictions predict(const MultitaskModel& model, std::span<const Clip> clips,
                    std::size_t batch_size) {
  if (clips.empty()) throw DataError("predict: no clips");
  if (batch_size == 0) throw ConfigError("predict: batch_size must be positive");
  const auto& cfg = model.config();
  std::size_t n_max = 0;
  for (const auto& c : clips) n_max = std::max(n_max, c.segments());

  Predictions p;
  p.emotion_emb = DenseArray({clips.size(), cfg.emotion_emb_dim});
  p.speaker_emb = DenseArray({clips.size(), cfg.speaker_emb_dim});
  for (std::size_t start = 0; start < clips.size(); start += batch_size) {
    const std::size_t end = std::min(clips.size(), start + batch_size);
    const ClipBatch batch = make_batch(clips.subspan(start, end - start), n_max);
    const ForwardPass pass = run_forward(model, batch);
    append_argmax(pass.tape.value(pass.out.e_prim), p.e_prim);
    append_argmax(pass.tape.value(pass.out.s_prim), p.s_prim);
    append_argmax(pass.tape.value(pass.out.e_aux), p.e_aux);
    append_argmax(pass.tape.value(pass.out.s_aux), p.s_aux);
    copy_rows(pass.tape.value(pass.out.emotion_emb), p.emotion_emb, start);
    copy_rows(pass.tape.value(pass.out.speaker_emb), p.speaker_emb, start);
    p.emotion_true.insert(p.emotion_true.end(), batch.emotion.begin(), batch.emotion.end());
    p.speaker_true.insert(p.speaker_true.end(), batch.speaker.begin(), batch.speaker.end());
  }
  return p;
}

HeadMetrics head_metrics(const Predictions& p, std::size_t num_emotions,
                         std::size_t num_speakers) {
  HeadMetrics h;
  h.emotion = summarize(ConfusionMatrix::from_pairs(p.emotion_true, p.e_prim, num_emotions));
  h.speaker = summarize(ConfusionMatrix::from_pairs(p.speaker_true, p.s_prim, num_speakers));
  h.aux_emotion = summarize(ConfusionMatrix::from_pairs(p.emotion_true, p.e_aux, num_emotions));
  h.aux_speaker = summarize(ConfusionMatrix::from_pairs(p.speaker_true, p.s_aux, num_speakers));
  h.leakage_proxy = disentanglement_score(h.aux_emotion, h.aux_speaker);
  return h;
}

EvaluationReport evaluate_model(const MultitaskModel& model, std::span<const Clip> clips,
                                const ProbeConfig& probe) {
  const auto& cfg = model.config();
  for (const auto& c : clips) {
    if (c.audio.extent(1) != cfg.audio_dim || c.video.extent(1) != cfg.video_dim ||
        static_cast<std::size_t>(c.emotion) >= cfg.num_emotions ||
        static_cast<std::size_t>(c.speaker) >= cfg.num_speakers) {
      throw ConfigError("evaluate_model: clips are incompatible with the model configuration");
    }
  }
  const Predictions p = predict(model, clips);
  EvaluationReport r;
  r.emotion = summarize(ConfusionMatrix::from_pairs(p.emotion_true, p.e_prim, cfg.num_emotions));
  r.speaker = summarize(ConfusionMatrix::from_pairs(p.speaker_true, p.s_prim, cfg.num_speakers));
  r.emotion_from_speaker = train_probe(p.speaker_emb, p.emotion_true, cfg.num_emotions, probe);
  r.speaker_from_emotion = train_probe(p.emotion_emb, p.speaker_true, cfg.num_speakers, probe);
  r.disentanglement = disentanglement_score(r.emotion_from_speaker, r.speaker_from_emotion);
  r.emotion_from_speaker.disentanglement_score = r.disentanglement;
  r.emotion_truth = p.emotion_true;
  r.emotion_predictions = p.e_prim;
  return r;
}

EvaluationReport evaluate_model(const Checkpoint& checkpoint, std::span<const Clip> clips,
                                const ProbeConfig& probe) {
  return evaluate_model(MultitaskModel::from_checkpoint(checkpoint), clips, probe);
}

}  // namespace avdis
