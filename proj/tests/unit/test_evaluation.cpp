#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "test_util.hpp"
#include "tgd/errors.hpp"
#include "tgd/evaluation.hpp"

using namespace tgd;

namespace {

ParticleSet points(std::vector<Point> p) { return ParticleSet{std::move(p), ""}; }

double dist(const Point& a, const Point& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

// Exhaustive maximum-cardinality one-to-one matching.
int brute_force_tp(const ParticleSet& pred, const ParticleSet& gt, double threshold) {
  const auto& p = pred.coordinates;
  const auto& g = gt.coordinates;
  std::vector<bool> used(g.size(), false);
  int best = 0;
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int count) {
    if (i == p.size()) {
      best = std::max(best, count);
      return;
    }
    rec(i + 1, count);
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!used[j] && dist(p[i], g[j]) <= threshold) {
        used[j] = true;
        rec(i + 1, count + 1);
        used[j] = false;
      }
  };
  rec(0, 0);
  return best;
}

Volume noise_volume(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Volume v(n, n, n);
  for (auto& x : v.data) x = d(rng);
  return v;
}

FSCCurve line_curve(std::vector<double> corr) {
  FSCCurve c;
  c.voxel_size = 1.0;
  for (std::size_t i = 0; i < corr.size(); ++i) c.shell_centers.push_back(0.5 * (i + 1) / corr.size());
  c.correlations = std::move(corr);
  return c;
}

}  // namespace

TEST_CASE("matching examples") {
  const auto gt = points({{100, 100}});
  CHECK(match_particles(points({{110, 100}}), gt, 32).n_tp() == 1);

  const auto two = match_particles(points({{120, 100}, {105, 100}}), gt, 32);
  REQUIRE(two.n_tp() == 1);
  CHECK(two.tp[0].pred == 1);
  CHECK(two.n_fp() == 1);
  CHECK(two.fp[0] == 0);

  CHECK(match_particles(points({{132, 100}}), gt, 32).n_tp() == 1);
  CHECK(match_particles(points({{132.001, 100}}), gt, 32).n_tp() == 0);
  CHECK(match_particles(points({}), gt, 32).n_fn() == 1);
}

TEST_CASE("matching bookkeeping and symmetry") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 200.0);
  for (int t = 0; t < 200; ++t) {
    ParticleSet p, g;
    for (int i = 0; i < 7; ++i) p.coordinates.push_back({u(rng), u(rng)});
    for (int i = 0; i < 5; ++i) g.coordinates.push_back({u(rng), u(rng)});
    const auto m = match_particles(p, g, 32);
    CHECK(m.n_tp() + m.n_fp() == 7);
    CHECK(m.n_tp() + m.n_fn() == 5);
    for (const auto& pair : m.tp) CHECK(pair.distance <= 32.0);
    CHECK(match_particles(g, p, 32).n_tp() == m.n_tp());
  }
}

TEST_CASE("greedy matches brute force when every candidate graph component is a star") {
  // Ground truth separated by more than twice the threshold: each prediction has at most one candidate.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> jitter(-40.0, 40.0);
  for (int t = 0; t < 2000; ++t) {
    ParticleSet g, p;
    const int ng = 1 + t % 3;
    for (int i = 0; i < ng; ++i) g.coordinates.push_back({100.0 + 70.0 * i, 100.0});
    const int np = 6 - ng;
    for (int i = 0; i < np; ++i) {
      const auto& c = g.coordinates[static_cast<std::size_t>(i % ng)];
      p.coordinates.push_back({c[0] + 0.5 * jitter(rng), c[1] + jitter(rng)});
    }
    CHECK(match_particles(p, g, 32).n_tp() == brute_force_tp(p, g, 32));
  }
}

TEST_CASE("greedy is not maximum-cardinality on a candidate path") {
  // p2 - g1 - p1 - g2 along a line, threshold 10: greedy takes (p1, g1) at distance 5 and strands both ends.
  const auto pred = points({{5, 0}, {-8, 0}});
  const auto gt = points({{0, 0}, {14, 0}});
  CHECK(match_particles(pred, gt, 10).n_tp() == 1);
  CHECK(brute_force_tp(pred, gt, 10) == 2);
}

TEST_CASE("picking metrics") {
  CHECK(prf_from_counts(0, 0, 0).f1 == 0.0);
  CHECK(prf_from_counts(0, 0, 4).recall == 0.0);

  MatchOutcome a, b;
  a.tp = {{0, 0, 1.0}};
  b.fp = {0};
  b.fn = {0};
  const auto m = picking_metrics({a, b});
  CHECK(m.micro.precision == 0.5);
  CHECK(m.micro.recall == 0.5);
  CHECK(m.micro.f1 == 0.5);
  CHECK(m.macro_mean.f1 == 0.5);
  CHECK(m.macro_std.f1 == 0.5);
  CHECK(m.n_micrographs == 2);

  const auto one = picking_metrics({a});
  CHECK(one.micro.f1 == one.macro_mean.f1);

  MatchOutcome none;
  none.fn = {0, 1};
  const auto z = picking_metrics({none, none});
  CHECK(z.micro.precision == 0.0);
  CHECK(z.micro.recall == 0.0);
  CHECK(z.micro.f1 == 0.0);
}

TEST_CASE("micro F1 ignores how points are split across micrographs") {
  const auto gt = points({{10, 10}, {100, 10}, {200, 10}, {300, 10}});
  const auto pred = points({{12, 10}, {150, 10}, {205, 10}});
  const auto whole = picking_metrics({match_particles(pred, gt, 32)});
  const auto split = picking_metrics({match_particles(points({{12, 10}, {150, 10}}), points({{10, 10}, {100, 10}}), 32),
                                      match_particles(points({{205, 10}}), points({{200, 10}, {300, 10}}), 32)});
  CHECK(whole.micro.f1 == doctest::Approx(split.micro.f1));
}

TEST_CASE("FSC oracles") {
  const Volume v = noise_volume(16, 1);
  Volume neg = v, scaled = v;
  for (auto& x : neg.data) x = -x;
  for (auto& x : scaled.data) x *= 3.5;
  for (double c : fsc(v, v).correlations) CHECK(c == doctest::Approx(1.0).epsilon(1e-10));
  for (double c : fsc(v, neg).correlations) CHECK(c == doctest::Approx(-1.0).epsilon(1e-10));
  const Volume w = noise_volume(16, 2);
  const auto c1 = fsc(v, w), c2 = fsc(scaled, w);
  for (std::size_t i = 0; i < c1.correlations.size(); ++i)
    CHECK(c1.correlations[i] == doctest::Approx(c2.correlations[i]).epsilon(1e-10));
  CHECK(c1.shell_centers.size() == 8);
  CHECK(c1.shell_centers.back() == doctest::Approx(0.5));
  CHECK_THROWS_AS(fsc(v, noise_volume(8, 1)), ShapeError);
}

TEST_CASE("FSC of independent noise is small on large shells") {
  const auto c = fsc(noise_volume(64, 3), noise_volume(64, 4));
  for (std::size_t i = 0; i < c.correlations.size(); ++i)
    if (c.shell_voxels[i] >= 2000) CHECK(std::abs(c.correlations[i]) < 0.1);
}

TEST_CASE("resolution from a curve") {
  const auto flat = resolution_at(line_curve(std::vector<double>(10, 1.0)));
  CHECK(flat.nyquist_limited);
  CHECK(flat.angstrom == 2.0);

  // 1 -> 0 linearly over 11 shells: c_i = 1 - i/10, crossing at i* = 10 (1 - 0.143).
  std::vector<double> lin;
  for (int i = 0; i <= 10; ++i) lin.push_back(1.0 - 0.1 * i);
  const auto curve = line_curve(lin);
  const double df = curve.shell_centers[1] - curve.shell_centers[0];
  const double expected = curve.shell_centers[0] + 10.0 * (1.0 - 0.143) * df;
  const auto r = resolution_at(curve);
  CHECK(r.frequency == doctest::Approx(expected).epsilon(1e-12));
  CHECK(r.angstrom == doctest::Approx(1.0 / expected));
  CHECK_FALSE(r.nyquist_limited);

  std::vector<double> shifted;
  for (int i = 0; i <= 10; ++i) shifted.push_back(std::min(1.0, 1.2 - 0.1 * i));
  CHECK(resolution_at(line_curve(shifted)).angstrom < r.angstrom);
}

TEST_CASE("PSNR") {
  Image ref(4, 4);
  for (int i = 0; i < 16; ++i) ref[i] = i / 15.0;
  Image est = ref;
  for (auto& v : est.values()) v += 0.1;
  CHECK(psnr(est, ref) == doctest::Approx(20.0));
  CHECK_THROWS_AS(psnr(est, Image(2, 2)), ShapeError);
}

TEST_CASE("template picker finds bright discs") {
  Image img = test::random_image(128, 128, 9, 0.05);
  const std::vector<Point> centres{{30, 30}, {90, 40}, {60, 95}};
  for (const auto& c : centres)
    for (int r = 0; r < 128; ++r)
      for (int col = 0; col < 128; ++col)
        if (std::hypot(col - c[0], r - c[1]) <= 8.0) img(r, col) += 1.0;
  PickerConfig cfg;
  cfg.particle_radius = 8;
  const auto picks = pick_particles(img, cfg);
  const auto m = match_particles(picks, points(centres), 4);
  CHECK(m.n_tp() == 3);
  CHECK(m.n_fp() == 0);
}

TEST_CASE("coordinate files") {
  test::TempDir dir("coords");
  write_coordinates(dir / "c.txt", points({{1.5, 2}, {3, 4}}));
  const auto back = read_coordinates(dir / "c.txt");
  REQUIRE(back.coordinates.size() == 2);
  CHECK(back.coordinates[0] == Point{1.5, 2});
  CHECK_THROWS_AS(read_coordinates(dir / "missing.txt"), IoError);
}
