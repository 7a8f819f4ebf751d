#pragma once

#include <cstdint>
#include <random>

#include "tgd/image.hpp"

namespace tgd {

using Rng = std::mt19937_64;

struct GaussianNoiseParams {
  double sigma_a = 0.0;
};

struct PoissonGaussianParams {
  double alpha = 50.0;     // electron-count gain
  double b = 0.0;          // dark offset
  double sigma_det = 0.05; // detector read-out std
};

/// sigma(p) = a + b * value(p)
struct SpatialNoiseMap {
  double a = 0.5;
  double b = 0.01;
};

struct GaussianCorruption {
  Patch x;  // y + sigma_a * u
  Patch u;  // the standard-normal draw
};

GaussianCorruption corrupt_gaussian(const Patch& y, GaussianNoiseParams p, std::uint64_t seed);
GaussianCorruption corrupt_gaussian(const Patch& y, GaussianNoiseParams p, Rng& rng);

/// Analytic score of the Gaussian corruption: -(x - y) / sigma_a^2.
Patch conditional_score(const Patch& x, const Patch& y, double sigma_a);

/// Affine map sending the lo/hi percentiles to 0/1, clamped to [0, 1].
/// A flat image maps to all zeros.
Image percentile_normalize(const Image& y, double lo_percentile = 1.0, double hi_percentile = 99.0);

/// x = Poisson(alpha * y + b) / alpha - b / alpha + N(0, sigma_det^2) on an image already
/// normalised to [0, 1]; negative inputs are clamped to zero.
Patch corrupt_poisson_gaussian(const Patch& y, const PoissonGaussianParams& p, std::uint64_t seed);
Patch corrupt_poisson_gaussian(const Patch& y, const PoissonGaussianParams& p, Rng& rng);

Patch eval_noise_map(const Patch& x, const SpatialNoiseMap& m);

}  // namespace tgd
