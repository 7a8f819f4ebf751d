#pragma once

#include <functional>
#include <vector>

#include "tgd/image.hpp"
#include "tgd/noise_model.hpp"
#include "tgd/score_model.hpp"

namespace tgd {

/// Scores a batch of patches, one conditioning level per patch.
using BatchScoreFn = std::function<std::vector<Patch>(const std::vector<Patch>&, const std::vector<double>&)>;

BatchScoreFn batch_score_fn(const ScoreFn& s);
BatchScoreFn batch_score_fn(const ScoreModel& model);

struct DenoiseConfig {
  int n_iterations = 5;
  SpatialNoiseMap noise_map;
  int tile_size = 0;   // 0: the model patch size
  int overlap = -1;    // -1: tile_size / 4
  bool iteration_indexed = false;  // sigma_k = a + b * k instead of a + b * x_k(p)
  double max_update = 5.0;         // per-pixel clamp, standardised units
  int tile_batch = 8;

  void validate() const;
};

struct DenoiseStats {
  long clamped_pixels = 0;
  int clamped_iterations = 0;
};

/// x_{k+1} = x_k + sigma_k^2 * s(x_k; mean(sigma_k)), k = 0..n-1, with sigma_k from the noise map.
Patch denoise_patch(const ScoreFn& score, const Patch& x, const DenoiseConfig& cfg, DenoiseStats* stats = nullptr);
std::vector<Patch> denoise_patches(const BatchScoreFn& score, const std::vector<Patch>& x, const DenoiseConfig& cfg,
                                   DenoiseStats* stats = nullptr);

/// Standardise, tile, denoise every tile, blend-stitch, undo the standardisation.
Micrograph denoise_micrograph(const BatchScoreFn& score, const Micrograph& m, const DenoiseConfig& cfg,
                              DenoiseStats* stats = nullptr);
Micrograph denoise_micrograph(const ScoreModel& model, const Micrograph& m, DenoiseConfig cfg,
                              DenoiseStats* stats = nullptr);

}  // namespace tgd
