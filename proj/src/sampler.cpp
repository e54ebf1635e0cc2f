#include "xrisk/sampler.hpp"

#include <numeric>
#include <stdexcept>

namespace xrisk {

std::vector<int> TwoLevelSampler::draw_blocks(int m) {
  if (m <= 0) throw std::invalid_argument("draw_blocks: no blocks to sample");
  std::vector<int> blocks;
  if (b1_ >= m) {
    blocks.resize(static_cast<std::size_t>(m));
    std::iota(blocks.begin(), blocks.end(), 0);
    return blocks;
  }
  blocks.reserve(static_cast<std::size_t>(b1_));
  if (strategy_ == SampleStrategy::UniformWithReplacement) {
    for (int i = 0; i < b1_; ++i)
      blocks.push_back(static_cast<int>(rng_.below(static_cast<std::size_t>(m))));
    return blocks;
  }
  // epoch shuffle: walk a per-epoch permutation
  for (int i = 0; i < b1_; ++i) {
    if (epoch_cursor_ >= epoch_order_.size() ||
        epoch_order_.size() != static_cast<std::size_t>(m)) {
      epoch_order_.resize(static_cast<std::size_t>(m));
      std::iota(epoch_order_.begin(), epoch_order_.end(), 0);
      for (std::size_t j = epoch_order_.size(); j > 1; --j)
        std::swap(epoch_order_[j - 1], epoch_order_[rng_.below(j)]);
      epoch_cursor_ = 0;
    }
    blocks.push_back(epoch_order_[epoch_cursor_++]);
  }
  return blocks;
}

std::vector<int> TwoLevelSampler::draw_inner(int set_size) {
  if (set_size <= 0) throw std::invalid_argument("draw_inner: empty reference set");
  std::vector<int> batch;
  if (b2_ >= set_size) {
    batch.resize(static_cast<std::size_t>(set_size));
    std::iota(batch.begin(), batch.end(), 0);
    return batch;
  }
  batch.reserve(static_cast<std::size_t>(b2_));
  for (int i = 0; i < b2_; ++i)
    batch.push_back(static_cast<int>(rng_.below(static_cast<std::size_t>(set_size))));
  return batch;
}

}  // namespace xrisk
