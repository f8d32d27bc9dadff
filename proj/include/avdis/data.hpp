#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avdis/clip_batch.hpp"
#include "avdis/dense_array.hpp"

namespace avdis {

enum class Split { train, validation, test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct Clip {
  DenseArray audio;  // [n x D_a]
  DenseArray video;  // [n x D_v]
  int emotion = 0;
  int speaker = 0;
  Split split = Split::train;

  std::size_t segments() const { return audio.extent(0); }
};

struct DatasetHeader {
  static constexpr int kVersion = 1;
  std::size_t num_emotions = 5;
  std::size_t num_speakers = 0;
  std::size_t audio_dim = 0;
  std::size_t video_dim = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Clip> clips;

  std::vector<Clip> split(Split which) const;
  std::size_t max_segments() const;
};

// Recipe for the entangled synthetic corpus. Each speaker s draws emotions
// from (1 - rho) * uniform + rho * one_hot(s mod E); each segment is the sum
// of a unit-norm emotion direction, a unit-norm speaker direction and
// isotropic gaussian noise, independently for audio and video.
struct SyntheticSpec {
  std::size_t num_speakers = 20;
  std::size_t num_emotions = 5;
  std::size_t clips_per_speaker = 40;
  std::size_t min_segments = 2;  // true lengths are uniform in [min, max]
  std::size_t max_segments = 6;
  std::size_t audio_dim = 12;
  std::size_t video_dim = 16;
  double rho = 0.8;
  double noise_sigma = 0.5;
  double train_fraction = 0.5;
  double validation_fraction = 0.2;
  std::uint64_t seed = 7;

  void validate() const;
};

// Ground-truth directions used by generate(); rows are unit norm.
struct SyntheticMeans {
  DenseArray audio_emotion;  // [E x D_a]
  DenseArray audio_speaker;  // [S x D_a]
  DenseArray video_emotion;  // [E x D_v]
  DenseArray video_speaker;  // [S x D_v]
};

SyntheticMeans synthetic_means(const SyntheticSpec& spec);
// Emotion prior of one speaker.
std::vector<double> emotion_prior(const SyntheticSpec& spec, std::size_t speaker);
Dataset generate(const SyntheticSpec& spec);

struct PaddedClip {
  DenseArray audio;  // [N_max x D_a]
  DenseArray video;  // [N_max x D_v]
  DenseArray mask;   // [N_max]
};

// Throws DataError when the clip is longer than n_max; nothing is truncated.
PaddedClip pad_clip(const Clip& clip, std::size_t n_max, double pad_value = 0.0);
ClipBatch make_batch(std::span<const Clip* const> clips, std::size_t n_max,
                     double pad_value = 0.0);
ClipBatch make_batch(std::span<const Clip> clips, std::size_t n_max, double pad_value = 0.0);

// Raw label order of the eight-state teacher distribution.
enum class RawEmotion {
  neutral,
  happiness,
  surprise,
  sadness,
  anger,
  disgust,
  fear,
  contempt
};
inline constexpr std::size_t kRawEmotions = 8;

// Five collapsed classes.
enum class Emotion { neutral, happiness, sadness, anger, other };
inline constexpr std::size_t kEmotions = 5;

// Argmax of an 8-way label distribution, ties to the lowest index.
int dominant_label(std::span<const double> distribution);
// Maps a raw label onto the five classes, merging the rare ones into `other`.
int collapse_labels(int raw);

// Drops every clip of speakers whose total segment count is at or below the
// nearest-rank p-th percentile of per-speaker counts. If that would drop every
// speaker (all counts equal the percentile) nothing is removed.
Dataset filter_bottom_percentile(const Dataset& dataset, double p = 5.0);

void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace avdis
