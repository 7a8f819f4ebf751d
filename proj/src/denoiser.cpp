#include "tgd/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "tgd/errors.hpp"
#include "tgd/tiling.hpp"
#include "tgd/trainer.hpp"

namespace tgd {

void DenoiseConfig::validate() const {
  if (n_iterations < 1) throw ParameterError("n_iterations must be >= 1 (got " + std::to_string(n_iterations) + ")");
  if (tile_size < 0) throw ParameterError("tile size must be non-negative");
  if (!(max_update > 0.0)) throw ParameterError("max_update must be positive");
  if (tile_batch < 1) throw ParameterError("tile_batch must be >= 1");
}

BatchScoreFn batch_score_fn(const ScoreFn& s) {
  return [s](const std::vector<Patch>& x, const std::vector<double>& sigma) {
    std::vector<Patch> out;
    out.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out.push_back(s(x[i], sigma[i]));
    return out;
  };
}

BatchScoreFn batch_score_fn(const ScoreModel& model) {
  return [&model](const std::vector<Patch>& x, const std::vector<double>& sigma) { return model.score(x, sigma); };
}

namespace {

void report_clamping(const DenoiseStats& local, const DenoiseConfig& cfg, DenoiseStats* stats) {
  if (local.clamped_pixels == 0) return;
  std::cerr << "warning: denoise update clamped at " << local.clamped_pixels << " pixel-iterations (|step| > "
            << cfg.max_update << ")\n";
  if (stats) {
    stats->clamped_pixels += local.clamped_pixels;
    stats->clamped_iterations += local.clamped_iterations;
  }
}

std::vector<Patch> iterate(const BatchScoreFn& score, const std::vector<Patch>& x_in, const DenoiseConfig& cfg,
                           DenoiseStats& local) {
  std::vector<Patch> x = x_in;
  const std::size_t n = x.size();
  for (int k = 0; k < cfg.n_iterations; ++k) {
    std::vector<Patch> sig(n);
    std::vector<double> level(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (cfg.iteration_indexed) {
        const double s = cfg.noise_map.a + cfg.noise_map.b * k;
        if (!(s > 0.0)) throw InvalidMapError("noise level at iteration " + std::to_string(k) + " is not positive");
        sig[i] = Patch(x[i].height(), x[i].width(), s);
      } else {
        sig[i] = eval_noise_map(x[i], cfg.noise_map);
      }
      level[i] = mean(sig[i].values());
    }
    const std::vector<Patch> s = score(x, level);
    long clamped = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < x[i].size(); ++p) {
        double d = sig[i][p] * sig[i][p] * s[i][p];
        if (std::abs(d) > cfg.max_update) {
          d = std::copysign(cfg.max_update, d);
          ++clamped;
        }
        x[i][p] += d;
      }
      if (!all_finite(x[i].values()))
        throw DivergenceError("non-finite estimate at denoising iteration " + std::to_string(k));
    }
    if (clamped > 0) {
      local.clamped_pixels += clamped;
      ++local.clamped_iterations;
    }
  }
  return x;
}

}  // namespace

std::vector<Patch> denoise_patches(const BatchScoreFn& score, const std::vector<Patch>& x, const DenoiseConfig& cfg,
                                   DenoiseStats* stats) {
  cfg.validate();
  DenoiseStats local;
  auto out = iterate(score, x, cfg, local);
  report_clamping(local, cfg, stats);
  return out;
}

Patch denoise_patch(const ScoreFn& score, const Patch& x, const DenoiseConfig& cfg, DenoiseStats* stats) {
  return denoise_patches(batch_score_fn(score), {x}, cfg, stats).front();
}

Micrograph denoise_micrograph(const BatchScoreFn& score, const Micrograph& m, const DenoiseConfig& cfg,
                              DenoiseStats* stats) {
  cfg.validate();
  validate(m);
  if (cfg.tile_size < 1) throw ParameterError("tile size must be set");
  const int overlap = cfg.overlap >= 0 ? cfg.overlap : cfg.tile_size / 4;
  if (m.data.height() < cfg.tile_size || m.data.width() < cfg.tile_size)
    throw DimensionError("micrograph " + std::to_string(m.data.height()) + "x" + std::to_string(m.data.width()) +
                         " is smaller than the tile size " + std::to_string(cfg.tile_size));
  const StandardizedPatch z = standardize(m.data);
  Tiling t = tile(z.patch, cfg.tile_size, overlap);
  std::vector<Patch> out;
  out.reserve(t.tiles.size());
  DenoiseStats local;
  for (std::size_t lo = 0; lo < t.tiles.size(); lo += static_cast<std::size_t>(cfg.tile_batch)) {
    const std::size_t hi = std::min(t.tiles.size(), lo + static_cast<std::size_t>(cfg.tile_batch));
    auto part = iterate(score, std::vector<Patch>(t.tiles.begin() + lo, t.tiles.begin() + hi), cfg, local);
    for (auto& p : part) out.push_back(std::move(p));
  }
  report_clamping(local, cfg, stats);
  Micrograph r = m;
  r.data = unstandardize(stitch(t.layout, out), z.mean, z.std);
  return r;
}

Micrograph denoise_micrograph(const ScoreModel& model, const Micrograph& m, DenoiseConfig cfg, DenoiseStats* stats) {
  if (cfg.tile_size == 0) cfg.tile_size = model.config().patch_size;
  return denoise_micrograph(batch_score_fn(model), m, cfg, stats);
}

}  // namespace tgd
