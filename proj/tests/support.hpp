#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avdis/clip_batch.hpp"
#include "avdis/data.hpp"
#include "avdis/dense_array.hpp"
#include "avdis/model.hpp"
#include "avdis/random.hpp"

namespace avdis::testing {

inline DenseArray random_array(Shape shape, std::uint64_t seed, double lo = -1.0,
                               double hi = 1.0) {
  Rng rng(seed);
  DenseArray out(std::move(shape));
  for (auto& v : out.data()) v = rng.uniform(lo, hi);
  return out;
}

inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.audio_dim = 3;
  c.video_dim = 4;
  c.audio_widths = {5};
  c.video_widths = {4};
  c.emotion_emb_dim = 6;
  c.speaker_emb_dim = 5;
  c.num_emotions = 3;
  c.num_speakers = 4;
  return c;
}

// Batch with ragged clip lengths, lengths[b] real segments out of n_max.
inline ClipBatch random_batch(const ModelConfig& c, std::vector<std::size_t> lengths,
                              std::size_t n_max, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t b = lengths.size();
  ClipBatch batch;
  batch.audio = DenseArray({b, n_max, c.audio_dim});
  batch.video = DenseArray({b, n_max, c.video_dim});
  batch.mask = DenseArray({b, n_max});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t n = 0; n < lengths[i]; ++n) {
      batch.mask.at(i, n) = 1.0;
      for (std::size_t d = 0; d < c.audio_dim; ++d) batch.audio.at(i, n, d) = rng.uniform(-1, 1);
      for (std::size_t d = 0; d < c.video_dim; ++d) batch.video.at(i, n, d) = rng.uniform(-1, 1);
    }
    batch.emotion.push_back(static_cast<int>(rng.index(c.num_emotions)));
    batch.speaker.push_back(static_cast<int>(rng.index(c.num_speakers)));
  }
  return batch;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("avdis_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline SyntheticSpec small_synthetic(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.num_speakers = 6;
  s.num_emotions = 3;
  s.clips_per_speaker = 12;
  s.audio_dim = 4;
  s.video_dim = 5;
  s.seed = seed;
  return s;
}

}  // namespace avdis::testing
