#include "tgd/noise_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tgd/errors.hpp"

namespace tgd {

GaussianCorruption corrupt_gaussian(const Patch& y, GaussianNoiseParams p, std::uint64_t seed) {
  Rng rng(seed);
  return corrupt_gaussian(y, p, rng);
}

GaussianCorruption corrupt_gaussian(const Patch& y, GaussianNoiseParams p, Rng& rng) {
  if (!(p.sigma_a >= 0.0)) throw ParameterError("sigma_a must be non-negative");
  if (!all_finite(y.values())) throw ParameterError("corrupt_gaussian: input not finite");
  std::normal_distribution<double> normal(0.0, 1.0);
  GaussianCorruption out{y, Patch(y.height(), y.width())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.u[i] = normal(rng);
    out.x[i] = y[i] + p.sigma_a * out.u[i];
  }
  return out;
}

Patch conditional_score(const Patch& x, const Patch& y, double sigma_a) {
  if (!(sigma_a > 0.0)) throw SingularNoiseError("conditional score requires sigma_a > 0");
  if (!x.same_shape(y)) throw ShapeError("conditional_score: shape mismatch");
  const double inv = 1.0 / (sigma_a * sigma_a);
  Patch s(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) s[i] = -(x[i] - y[i]) * inv;
  return s;
}

Image percentile_normalize(const Image& y, double lo_percentile, double hi_percentile) {
  if (y.empty()) return y;
  std::vector<double> sorted(y.values().begin(), y.values().end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double pct) {
    const double pos = pct / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const auto j = std::min(i + 1, sorted.size() - 1);
    return sorted[i] + (pos - static_cast<double>(i)) * (sorted[j] - sorted[i]);
  };
  const double lo = quantile(lo_percentile);
  const double hi = quantile(hi_percentile);
  Image out(y.height(), y.width());
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = std::clamp((y[i] - lo) / (hi - lo), 0.0, 1.0);
  return out;
}

Patch corrupt_poisson_gaussian(const Patch& y, const PoissonGaussianParams& p, std::uint64_t seed) {
  Rng rng(seed);
  return corrupt_poisson_gaussian(y, p, rng);
}

Patch corrupt_poisson_gaussian(const Patch& y, const PoissonGaussianParams& p, Rng& rng) {
  if (!(p.alpha > 0.0)) throw ParameterError("Poisson gain alpha must be positive");
  if (!(p.b >= 0.0) || !(p.sigma_det >= 0.0))
    throw ParameterError("dark offset and detector std must be non-negative");
  if (!all_finite(y.values())) throw ParameterError("corrupt_poisson_gaussian: input not finite");
  std::normal_distribution<double> normal(0.0, 1.0);
  Patch x(y.height(), y.width());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double rate = p.alpha * std::max(y[i], 0.0) + p.b;
    double counts = 0.0;
    if (rate > 0.0) {
      std::poisson_distribution<long long> poisson(rate);
      counts = static_cast<double>(poisson(rng));
    }
    x[i] = counts / p.alpha - p.b / p.alpha + p.sigma_det * normal(rng);
  }
  return x;
}

Patch eval_noise_map(const Patch& x, const SpatialNoiseMap& m) {
  Patch s(x.height(), x.width());
  double bad_lo = 0.0, bad_hi = 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s[i] = m.a + m.b * x[i];
    if (!(s[i] > 0.0)) {
      bad_lo = bad ? std::min(bad_lo, x[i]) : x[i];
      bad_hi = bad ? std::max(bad_hi, x[i]) : x[i];
      ++bad;
    }
  }
  if (bad) {
    std::ostringstream msg;
    msg << "noise map sigma = " << m.a << " + " << m.b << "*x is non-positive at " << bad
        << " pixels with values in [" << bad_lo << ", " << bad_hi << "]";
    throw InvalidMapError(msg.str());
  }
  return s;
}

}  // namespace tgd
