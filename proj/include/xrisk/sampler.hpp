#pragma once

#include <cstdint>
#include <vector>

#include "xrisk/rng.hpp"

namespace xrisk {

enum class SampleStrategy { UniformWithReplacement, EpochShuffle };

// Two-level sampling: B1 blocks per step, then B2 items from each sampled
// block's reference set(s). The sampler owns the only RNG stream in a run,
// so a training trajectory is a pure function of (seed, problem).
//
// Draws of B1 >= m or B2 >= set size return the full range, so full-batch
// configurations degrade to exact sums. EpochShuffle applies to the block
// level (a fresh permutation per epoch); inner draws stay uniform.
class TwoLevelSampler {
 public:
  TwoLevelSampler(int b1, int b2, std::uint64_t seed,
                  SampleStrategy strategy = SampleStrategy::UniformWithReplacement)
      : b1_(b1), b2_(b2), strategy_(strategy), rng_(mix64(seed, 0x5a3fULL)) {}

  std::vector<int> draw_blocks(int m);
  std::vector<int> draw_inner(int set_size);

  int b1() const { return b1_; }
  int b2() const { return b2_; }

 private:
  int b1_;
  int b2_;
  SampleStrategy strategy_;
  Rng rng_;
  std::vector<int> epoch_order_;
  std::size_t epoch_cursor_ = 0;
};

}  // namespace xrisk
