#include "avdis/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "avdis/errors.hpp"
#include "avdis/random.hpp"

namespace avdis {

using nlohmann::json;

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "validation") return Split::validation;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + std::string(name) + "'");
}

std::vector<Clip> Dataset::split(Split which) const {
  std::vector<Clip> out;
  for (const auto& c : clips) {
    if (c.split == which) out.push_back(c);
  }
  return out;
}

std::size_t Dataset::max_segments() const {
  std::size_t n = 0;
  for (const auto& c : clips) n = std::max(n, c.segments());
  return n;
}

void SyntheticSpec::validate() const {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("synthetic: rho must lie in [0, 1]");
  if (num_emotions < 2 || num_speakers < 2) {
    throw ConfigError("synthetic: need at least 2 emotions and 2 speakers");
  }
  if (audio_dim == 0 || video_dim == 0) throw ConfigError("synthetic: dims must be positive");
  if (min_segments == 0 || min_segments > max_segments) {
    throw ConfigError("synthetic: need 1 <= min_segments <= max_segments");
  }
  if (clips_per_speaker < 3) {
    throw ConfigError("synthetic: need at least 3 clips per speaker to fill every split");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic: noise_sigma must be non-negative");
  if (!(train_fraction > 0.0) || !(validation_fraction > 0.0) ||
      !(train_fraction + validation_fraction < 1.0)) {
    throw ConfigError("synthetic: split fractions must be positive and leave room for test");
  }
}

namespace {

DenseArray unit_rows(std::size_t rows, std::size_t dim, Rng& rng) {
  DenseArray out({rows, dim});
  for (std::size_t i = 0; i < rows; ++i) {
    double norm = 0.0;
    while (norm == 0.0) {
      for (std::size_t k = 0; k < dim; ++k) out.at(i, k) = rng.normal();
      norm = 0.0;
      for (std::size_t k = 0; k < dim; ++k) norm += out.at(i, k) * out.at(i, k);
    }
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < dim; ++k) out.at(i, k) /= norm;
  }
  return out;
}

std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return probs.size() - 1;
}

DenseArray segment_features(std::size_t n, const DenseArray& emotion_means,
                            const DenseArray& speaker_means, int e, int s, double sigma,
                            Rng& rng) {
  const std::size_t dim = emotion_means.extent(1);
  DenseArray out({n, dim});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dim; ++k)
      out.at(i, k) = emotion_means.at(static_cast<std::size_t>(e), k) +
                     speaker_means.at(static_cast<std::size_t>(s), k) + sigma * rng.normal();
  return out;
}

}  // namespace

SyntheticMeans synthetic_means(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  SyntheticMeans m;
  m.audio_emotion = unit_rows(spec.num_emotions, spec.audio_dim, rng);
  m.audio_speaker = unit_rows(spec.num_speakers, spec.audio_dim, rng);
  m.video_emotion = unit_rows(spec.num_emotions, spec.video_dim, rng);
  m.video_speaker = unit_rows(spec.num_speakers, spec.video_dim, rng);
  return m;
}

std::vector<double> emotion_prior(const SyntheticSpec& spec, std::size_t speaker) {
  const double e = static_cast<double>(spec.num_emotions);
  std::vector<double> prior(spec.num_emotions, (1.0 - spec.rho) / e);
  prior[speaker % spec.num_emotions] += spec.rho;
  return prior;
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  const SyntheticMeans means = synthetic_means(spec);
  // Clip sampling uses a stream independent of the mean directions.
  Rng rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);

  Dataset ds;
  ds.header.num_emotions = spec.num_emotions;
  ds.header.num_speakers = spec.num_speakers;
  ds.header.audio_dim = spec.audio_dim;
  ds.header.video_dim = spec.video_dim;

  const std::size_t per = spec.clips_per_speaker;
  auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * per));
  auto n_val = static_cast<std::size_t>(std::llround(spec.validation_fraction * per));
  n_train = std::clamp<std::size_t>(n_train, 1, per - 2);
  n_val = std::clamp<std::size_t>(n_val, 1, per - n_train - 1);

  const std::size_t span_len = spec.max_segments - spec.min_segments + 1;
  for (std::size_t s = 0; s < spec.num_speakers; ++s) {
    const auto prior = emotion_prior(spec, s);
    std::vector<std::size_t> order(per);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<Split> splits(per, Split::test);
    for (std::size_t i = 0; i < per; ++i) {
      if (i < n_train) splits[order[i]] = Split::train;
      else if (i < n_train + n_val) splits[order[i]] = Split::validation;
    }
    for (std::size_t c = 0; c < per; ++c) {
      Clip clip;
      clip.speaker = static_cast<int>(s);
      clip.emotion = static_cast<int>(sample_categorical(prior, rng));
      clip.split = splits[c];
      const std::size_t n = spec.min_segments + rng.index(span_len);
      clip.audio = segment_features(n, means.audio_emotion, means.audio_speaker, clip.emotion,
                                    clip.speaker, spec.noise_sigma, rng);
      clip.video = segment_features(n, means.video_emotion, means.video_speaker, clip.emotion,
                                    clip.speaker, spec.noise_sigma, rng);
      ds.clips.push_back(std::move(clip));
    }
  }
  return ds;
}

PaddedClip pad_clip(const Clip& clip, std::size_t n_max, double pad_value) {
  const std::size_t n = clip.segments();
  if (n > n_max) {
    throw DataError("pad_clip: clip has " + std::to_string(n) + " segments, more than N_max " +
                    std::to_string(n_max));
  }
  const std::size_t da = clip.audio.extent(1), dv = clip.video.extent(1);
  PaddedClip out{DenseArray({n_max, da}, pad_value), DenseArray({n_max, dv}, pad_value),
                 DenseArray({n_max}, 0.0)};
  std::copy(clip.audio.data().begin(), clip.audio.data().end(), out.audio.data().begin());
  std::copy(clip.video.data().begin(), clip.video.data().end(), out.video.data().begin());
  for (std::size_t i = 0; i < n; ++i) out.mask[i] = 1.0;
  return out;
}

ClipBatch make_batch(std::span<const Clip* const> clips, std::size_t n_max, double pad_value) {
  if (clips.empty()) throw DataError("make_batch: no clips");
  const std::size_t b = clips.size();
  const std::size_t da = clips[0]->audio.extent(1), dv = clips[0]->video.extent(1);
  ClipBatch batch{DenseArray({b, n_max, da}), DenseArray({b, n_max, dv}), DenseArray({b, n_max}),
                  {}, {}};
  for (std::size_t i = 0; i < b; ++i) {
    const Clip& c = *clips[i];
    if (c.audio.extent(1) != da || c.video.extent(1) != dv) {
      throw DimensionError("make_batch: clip feature dims differ within the batch");
    }
    const PaddedClip p = pad_clip(c, n_max, pad_value);
    std::copy(p.audio.data().begin(), p.audio.data().end(),
              batch.audio.data().begin() + static_cast<std::ptrdiff_t>(i * n_max * da));
    std::copy(p.video.data().begin(), p.video.data().end(),
              batch.video.data().begin() + static_cast<std::ptrdiff_t>(i * n_max * dv));
    std::copy(p.mask.data().begin(), p.mask.data().end(),
              batch.mask.data().begin() + static_cast<std::ptrdiff_t>(i * n_max));
    batch.emotion.push_back(c.emotion);
    batch.speaker.push_back(c.speaker);
  }
  return batch;
}

ClipBatch make_batch(std::span<const Clip> clips, std::size_t n_max, double pad_value) {
  std::vector<const Clip*> ptrs;
  ptrs.reserve(clips.size());
  for (const auto& c : clips) ptrs.push_back(&c);
  return make_batch(std::span<const Clip* const>(ptrs), n_max, pad_value);
}

int dominant_label(std::span<const double> distribution) {
  if (distribution.size() != kRawEmotions) {
    throw LabelError("dominant_label: expected " + std::to_string(kRawEmotions) +
                     " probabilities, got " + std::to_string(distribution.size()));
  }
  double total = 0.0;
  for (double p : distribution) {
    if (!(p >= 0.0)) throw LabelError("dominant_label: negative or NaN probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw LabelError("dominant_label: probabilities sum to " + std::to_string(total));
  }
  // max_element returns the first maximum, which is the lowest-index tie rule.
  return static_cast<int>(std::max_element(distribution.begin(), distribution.end()) -
                          distribution.begin());
}

int collapse_labels(int raw) {
  switch (raw) {
    case static_cast<int>(RawEmotion::neutral): return static_cast<int>(Emotion::neutral);
    case static_cast<int>(RawEmotion::happiness): return static_cast<int>(Emotion::happiness);
    case static_cast<int>(RawEmotion::sadness): return static_cast<int>(Emotion::sadness);
    case static_cast<int>(RawEmotion::anger): return static_cast<int>(Emotion::anger);
    case static_cast<int>(RawEmotion::surprise):
    case static_cast<int>(RawEmotion::disgust):
    case static_cast<int>(RawEmotion::fear):
    case static_cast<int>(RawEmotion::contempt): return static_cast<int>(Emotion::other);
    default: throw LabelError("collapse_labels: raw label " + std::to_string(raw) + " out of range");
  }
}

Dataset filter_bottom_percentile(const Dataset& dataset, double p) {
  if (!(p >= 0.0 && p < 100.0)) throw ConfigError("percentile must lie in [0, 100)");
  std::map<int, std::size_t> per_speaker;
  for (const auto& c : dataset.clips) per_speaker[c.speaker] += c.segments();
  if (per_speaker.empty()) return dataset;

  std::vector<std::size_t> counts;
  for (const auto& [spk, n] : per_speaker) counts.push_back(n);
  std::sort(counts.begin(), counts.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(counts.size())));
  rank = std::clamp<std::size_t>(rank, 1, counts.size());
  const std::size_t threshold = counts[rank - 1];
  if (threshold >= counts.back()) return dataset;

  Dataset out;
  out.header = dataset.header;
  for (const auto& c : dataset.clips) {
    if (per_speaker[c.speaker] > threshold) out.clips.push_back(c);
  }
  return out;
}

// ---- line-delimited file format ------------------------------------------

namespace {

constexpr std::string_view kFormat = "avdis-dataset";

[[noreturn]] void fail_at(std::size_t line, const std::string& what) {
  throw DataError("dataset line " + std::to_string(line) + ": " + what);
}

DenseArray read_block(const json& j, const char* key, std::size_t n, std::size_t dim,
                      std::size_t line) {
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.size() != n * dim) {
    fail_at(line, std::string(key) + " must hold n x D = " + std::to_string(n * dim) + " values");
  }
  std::vector<double> data;
  data.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) fail_at(line, std::string(key) + " holds a non-numeric value");
    data.push_back(v.get<double>());
  }
  return DenseArray({n, dim}, std::move(data));
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& dataset) {
  json header;
  header["format"] = kFormat;
  header["version"] = DatasetHeader::kVersion;
  header["E"] = dataset.header.num_emotions;
  header["S"] = dataset.header.num_speakers;
  header["D_a"] = dataset.header.audio_dim;
  header["D_v"] = dataset.header.video_dim;
  header["clips"] = dataset.clips.size();
  out << header.dump() << '\n';
  for (const auto& c : dataset.clips) {
    nlohmann::ordered_json rec;
    rec["speaker_id"] = c.speaker;
    rec["emotion_label"] = c.emotion;
    rec["split"] = split_name(c.split);
    rec["n"] = c.segments();
    rec["audio"] = c.audio.values();
    rec["video"] = c.video.values();
    out << rec.dump() << '\n';
  }
}

Dataset read_dataset(std::istream& in) {
  std::string text;
  std::size_t line = 0;
  if (!std::getline(in, text)) throw DataError("dataset line 1: missing header");
  ++line;
  Dataset ds;
  std::size_t expected = 0;
  try {
    const json h = json::parse(text);
    if (h.value("format", std::string()) != kFormat) fail_at(line, "not an avdis dataset header");
    const int version = h.at("version").get<int>();
    if (version != DatasetHeader::kVersion) {
      throw DataError("dataset version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(DatasetHeader::kVersion) + ")");
    }
    ds.header.num_emotions = h.at("E").get<std::size_t>();
    ds.header.num_speakers = h.at("S").get<std::size_t>();
    ds.header.audio_dim = h.at("D_a").get<std::size_t>();
    ds.header.video_dim = h.at("D_v").get<std::size_t>();
    expected = h.at("clips").get<std::size_t>();
  } catch (const json::exception& e) {
    fail_at(line, e.what());
  }

  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    try {
      const json r = json::parse(text);
      Clip c;
      c.speaker = r.at("speaker_id").get<int>();
      if (r.contains("emotion_label")) {
        c.emotion = r.at("emotion_label").get<int>();
      } else if (r.contains("emotion_dist")) {
        const auto dist = r.at("emotion_dist").get<std::vector<double>>();
        c.emotion = collapse_labels(dominant_label(dist));
      } else {
        fail_at(line, "record needs emotion_label or emotion_dist");
      }
      c.split = parse_split(r.at("split").get<std::string>());
      const auto n = r.at("n").get<std::size_t>();
      if (n == 0) fail_at(line, "clip has zero segments");
      c.audio = read_block(r, "audio", n, ds.header.audio_dim, line);
      c.video = read_block(r, "video", n, ds.header.video_dim, line);
      if (c.speaker < 0 || static_cast<std::size_t>(c.speaker) >= ds.header.num_speakers) {
        fail_at(line, "speaker_id " + std::to_string(c.speaker) + " out of range");
      }
      if (c.emotion < 0 || static_cast<std::size_t>(c.emotion) >= ds.header.num_emotions) {
        fail_at(line, "emotion_label " + std::to_string(c.emotion) + " out of range");
      }
      ds.clips.push_back(std::move(c));
    } catch (const json::exception& e) {
      fail_at(line, e.what());
    } catch (const DataError& e) {
      const std::string what = e.what();
      if (what.rfind("dataset line", 0) == 0) throw;
      fail_at(line, what);
    }
  }
  if (ds.clips.size() != expected) {
    fail_at(line, "file ends after " + std::to_string(ds.clips.size()) + " of " +
                      std::to_string(expected) + " clips");
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write dataset " + path.string());
  write_dataset(out, dataset);
  if (!out) throw DataError("failed writing dataset " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return read_dataset(in);
}

}  // namespace avdis
