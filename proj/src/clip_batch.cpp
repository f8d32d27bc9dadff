#include "avdis/clip_batch.hpp"

#include <string>

#include "avdis/errors.hpp"

namespace avdis {

void ClipBatch::validate(std::size_t num_emotions, std::size_t num_speakers) const {
  if (audio.rank() != 3 || video.rank() != 3 || mask.rank() != 2) {
    throw DimensionError("batch: expected audio/video rank 3 and mask rank 2, got " +
                         shape_to_string(audio.shape()) + ", " + shape_to_string(video.shape()) +
                         ", " + shape_to_string(mask.shape()));
  }
  const std::size_t b = mask.extent(0), n = mask.extent(1);
  if (audio.extent(0) != b || video.extent(0) != b || audio.extent(1) != n ||
      video.extent(1) != n || emotion.size() != b || speaker.size() != b) {
    throw DimensionError("batch: audio " + shape_to_string(audio.shape()) + ", video " +
                         shape_to_string(video.shape()) + " and mask " +
                         shape_to_string(mask.shape()) + " disagree on B or N");
  }
  for (std::size_t i = 0; i < b; ++i) {
    double count = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double m = mask.at(i, s);
      if (m != 0.0 && m != 1.0) throw DataError("batch: mask entries must be 0 or 1");
      count += m;
    }
    if (count == 0.0) throw DataError("batch: clip " + std::to_string(i) + " is empty");
    if (emotion[i] < 0 || static_cast<std::size_t>(emotion[i]) >= num_emotions) {
      throw LabelError("batch: emotion label " + std::to_string(emotion[i]) + " out of range");
    }
    if (speaker[i] < 0 || static_cast<std::size_t>(speaker[i]) >= num_speakers) {
      throw LabelError("batch: speaker label " + std::to_string(speaker[i]) + " out of range");
    }
  }
}

}  // namespace avdis
