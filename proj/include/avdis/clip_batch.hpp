#pragma once

#include <cstddef>
#include <vector>

#include "avdis/dense_array.hpp"

namespace avdis {

// Padded minibatch of clips. audio [B x N x D_a], video [B x N x D_v],
// mask [B x N] with 1 for real segments and 0 for padding.
struct ClipBatch {
  DenseArray audio;
  DenseArray video;
  DenseArray mask;
  std::vector<int> emotion;
  std::vector<int> speaker;

  std::size_t batch_size() const { return emotion.size(); }
  std::size_t segments() const { return mask.rank() == 2 ? mask.extent(1) : 0; }

  // Checks shape agreement, mask values, non-empty clips and label ranges.
  void validate(std::size_t num_emotions, std::size_t num_speakers) const;
};

}  // namespace avdis
