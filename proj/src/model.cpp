#include "avdis/model.hpp"

#include <json.hpp>

#include "avdis/errors.hpp"

namespace avdis {

namespace {

std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden,
                               std::size_t out) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  if (out) dims.push_back(out);
  return dims;
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string("model: ") + what + " must be positive");
  };
  positive(audio_dim, "audio_dim");
  positive(video_dim, "video_dim");
  positive(emotion_emb_dim, "emotion_emb_dim");
  positive(speaker_emb_dim, "speaker_emb_dim");
  if (audio_widths.empty() || video_widths.empty()) {
    throw ConfigError("model: encoder widths must be non-empty");
  }
  for (auto w : audio_widths) positive(w, "audio encoder width");
  for (auto w : video_widths) positive(w, "video encoder width");
  for (auto w : aux_hidden) positive(w, "auxiliary hidden width");
  if (num_emotions < 2) throw ConfigError("model: need at least 2 emotion classes");
  if (num_speakers < 2) throw ConfigError("model: need at least 2 speakers");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["audio_dim"] = audio_dim;
  j["video_dim"] = video_dim;
  j["audio_widths"] = audio_widths;
  j["video_widths"] = video_widths;
  j["emotion_emb_dim"] = emotion_emb_dim;
  j["speaker_emb_dim"] = speaker_emb_dim;
  j["num_emotions"] = num_emotions;
  j["num_speakers"] = num_speakers;
  j["aux_hidden"] = aux_hidden;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.audio_dim = j.at("audio_dim").get<std::size_t>();
    c.video_dim = j.at("video_dim").get<std::size_t>();
    c.audio_widths = j.at("audio_widths").get<std::vector<std::size_t>>();
    c.video_widths = j.at("video_widths").get<std::vector<std::size_t>>();
    c.emotion_emb_dim = j.at("emotion_emb_dim").get<std::size_t>();
    c.speaker_emb_dim = j.at("speaker_emb_dim").get<std::size_t>();
    c.num_emotions = j.at("num_emotions").get<std::size_t>();
    c.num_speakers = j.at("num_speakers").get<std::size_t>();
    c.aux_hidden = j.value("aux_hidden", std::vector<std::size_t>{});
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

MultitaskModel::MultitaskModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto audio_dims = chain(config_.audio_dim, config_.audio_widths, 0);
  const auto video_dims = chain(config_.video_dim, config_.video_widths, 0);
  audio_encoder_ = make_mlp(params_, "audio_encoder", ParamGroup::trunk, audio_dims, rng);
  video_encoder_ = make_mlp(params_, "video_encoder", ParamGroup::trunk, video_dims, rng);
  const std::size_t pooled = audio_encoder_.out_dim() + video_encoder_.out_dim();
  emotion_projection_ = make_affine(params_, "emotion_embedding", ParamGroup::emotion_head, pooled,
                                    config_.emotion_emb_dim, rng);
  speaker_projection_ = make_affine(params_, "speaker_embedding", ParamGroup::speaker_head, pooled,
                                    config_.speaker_emb_dim, rng);
  emotion_classifier_ = make_affine(params_, "emotion_classifier", ParamGroup::emotion_head,
                                    config_.emotion_emb_dim, config_.num_emotions, rng);
  speaker_classifier_ = make_affine(params_, "speaker_classifier", ParamGroup::speaker_head,
                                    config_.speaker_emb_dim, config_.num_speakers, rng);
  const auto s_aux_dims = chain(config_.emotion_emb_dim, config_.aux_hidden, config_.num_speakers);
  const auto e_aux_dims = chain(config_.speaker_emb_dim, config_.aux_hidden, config_.num_emotions);
  speaker_from_emotion_ =
      make_mlp(params_, "speaker_from_emotion", ParamGroup::emotion_aux, s_aux_dims, rng);
  emotion_from_speaker_ =
      make_mlp(params_, "emotion_from_speaker", ParamGroup::speaker_aux, e_aux_dims, rng);
}

Var MultitaskModel::encode(Tape& tape, std::span<const Var> bound, const MlpEncoder& encoder,
                           const DenseArray& segments, const DenseArray& mask) const {
  const std::size_t b = segments.extent(0), n = segments.extent(1), d = segments.extent(2);
  Var x = tape.leaf(segments.reshaped({b * n, d}));
  x = tape.relu(encoder.apply(tape, bound, x));
  x = tape.reshape(x, {b, n, encoder.out_dim()});
  return tape.masked_mean_pool(x, mask);
}

ModelOutputs MultitaskModel::forward(Tape& tape, std::span<const Var> bound,
                                     const ClipBatch& batch,
                                     std::optional<double> grl_lambda) const {
  if (bound.size() != params_.size()) {
    throw DimensionError("forward: " + std::to_string(bound.size()) + " bound vars for " +
                         std::to_string(params_.size()) + " parameters");
  }
  batch.validate(config_.num_emotions, config_.num_speakers);
  if (batch.audio.extent(2) != config_.audio_dim || batch.video.extent(2) != config_.video_dim) {
    throw DimensionError("forward: batch audio " + shape_to_string(batch.audio.shape()) +
                         " / video " + shape_to_string(batch.video.shape()) +
                         " do not match model dims " + std::to_string(config_.audio_dim) + "/" +
                         std::to_string(config_.video_dim));
  }
  const Var audio = encode(tape, bound, audio_encoder_, batch.audio, batch.mask);
  const Var video = encode(tape, bound, video_encoder_, batch.video, batch.mask);
  const Var pooled = tape.concat(audio, video);

  ModelOutputs out;
  out.emotion_emb = emotion_projection_.apply(tape, bound, pooled);
  out.speaker_emb = speaker_projection_.apply(tape, bound, pooled);
  out.e_prim = emotion_classifier_.apply(tape, bound, out.emotion_emb);
  out.s_prim = speaker_classifier_.apply(tape, bound, out.speaker_emb);

  Var emotion_side = out.emotion_emb;
  Var speaker_side = out.speaker_emb;
  if (grl_lambda) {
    emotion_side = tape.grad_reverse(emotion_side, *grl_lambda);
    speaker_side = tape.grad_reverse(speaker_side, *grl_lambda);
  }
  out.s_aux = speaker_from_emotion_.apply(tape, bound, emotion_side);
  out.e_aux = emotion_from_speaker_.apply(tape, bound, speaker_side);
  return out;
}

Checkpoint MultitaskModel::checkpoint() const { return make_checkpoint(params_, config_.to_json()); }

void MultitaskModel::load(const Checkpoint& checkpoint) { restore_checkpoint(params_, checkpoint); }

MultitaskModel MultitaskModel::from_checkpoint(const Checkpoint& checkpoint) {
  MultitaskModel model(ModelConfig::from_json(checkpoint.metadata), 0);
  model.load(checkpoint);
  return model;
}

ForwardPass run_forward(const MultitaskModel& model, const ClipBatch& batch,
                        std::optional<double> grl_lambda) {
  ForwardPass pass;
  pass.bound = model.params().bind(pass.tape);
  pass.out = model.forward(pass.tape, pass.bound, batch, grl_lambda);
  return pass;
}

}  // namespace avdis
