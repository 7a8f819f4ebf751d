#include "tgd/phantom.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/algorithm/string/trim.hpp>

#include "tgd/errors.hpp"

namespace tgd {

PhantomSpec PhantomSpec::two_blob() {
  PhantomSpec s;
  s.volume_blobs = {{{13.0, 16.0, 16.0}, 3.0, 1.0}, {{21.0, 18.0, 14.0}, 2.0, 0.7}};
  return s;
}

void PhantomSpec::validate() const {
  if (volume_size < 4) throw SpecError("volume_size must be >= 4");
  if (!(voxel_size > 0.0)) throw SpecError("voxel_size must be positive");
  if (canvas_height < 1 || canvas_width < 1) throw SpecError("canvas must be non-empty");
  if (n_particles < 0) throw SpecError("n_particles must be >= 0");
  if (particle_size < 1 || particle_size > std::min(canvas_height, canvas_width))
    throw SpecError("particle_size must fit on the canvas");
  if (!(min_separation >= particle_size))
    throw SpecError("min_separation (" + std::to_string(min_separation) + ") must be >= particle_size (" +
                    std::to_string(particle_size) + ")");
  if (gaussian.sigma_a < 0.0) throw SpecError("gaussian sigma must be non-negative");
  if (volume_blobs.size() < 2) throw SpecError("at least two blobs are required for an asymmetric volume");
  for (std::size_t i = 0; i < volume_blobs.size(); ++i)
    for (std::size_t j = i + 1; j < volume_blobs.size(); ++j)
      if (volume_blobs[i].center == volume_blobs[j].center)
        throw SpecError("blobs " + std::to_string(i) + " and " + std::to_string(j) + " share a centre");
}

Volume make_volume(const PhantomSpec& spec) {
  spec.validate();
  const int n = spec.volume_size;
  Volume v(n, n, n, spec.voxel_size);
  for (std::size_t b = 0; b < spec.volume_blobs.size(); ++b) {
    const Blob& blob = spec.volume_blobs[b];
    if (!(blob.std > 0.0)) throw SpecError("blob " + std::to_string(b) + " has non-positive std");
    for (double c : blob.center)
      if (c - 4.0 * blob.std < -0.5 || c + 4.0 * blob.std > n - 0.5)
        throw SpecError("blob " + std::to_string(b) + " extends beyond the grid (centre +- 4 std must lie inside [0, " +
                        std::to_string(n - 1) + "])");
    const double inv = 1.0 / (2.0 * blob.std * blob.std);
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double dx = x - blob.center[0], dy = y - blob.center[1], dz = z - blob.center[2];
          v.at(z, y, x) += blob.amplitude * std::exp(-(dx * dx + dy * dy + dz * dz) * inv);
        }
  }
  return v;
}

GroundTruth make_micrograph(const PhantomSpec& spec) { return make_micrograph(spec, make_volume(spec)); }

GroundTruth make_micrograph(const PhantomSpec& spec, const Volume& volume) {
  spec.validate();
  Rng rng(spec.rotation_seed);
  const int H = spec.canvas_height, W = spec.canvas_width, ps = spec.particle_size, half = ps / 2;
  GroundTruth gt;
  gt.coordinates.micrograph_id = "phantom_" + std::to_string(spec.rotation_seed);

  std::uniform_int_distribution<int> ry(half, H - ps + half), rx(half, W - ps + half);
  const long budget = 10000L * std::max(spec.n_particles, 1);
  long attempts = 0;
  while (static_cast<int>(gt.coordinates.coordinates.size()) < spec.n_particles) {
    if (++attempts > budget)
      throw DensityError("could only place " + std::to_string(gt.coordinates.coordinates.size()) + " of " +
                         std::to_string(spec.n_particles) + " particles with min_separation " +
                         std::to_string(spec.min_separation) + "; use a larger canvas or fewer particles");
    const Point p{static_cast<double>(rx(rng)), static_cast<double>(ry(rng))};
    bool ok = true;
    for (const auto& q : gt.coordinates.coordinates)
      if (std::hypot(p[0] - q[0], p[1] - q[1]) < spec.min_separation) {
        ok = false;
        break;
      }
    if (ok) gt.coordinates.coordinates.push_back(p);
  }

  Image clean(H, W);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi), cosine(-1.0, 1.0);
  for (const auto& p : gt.coordinates.coordinates) {
    const EulerAngles e{angle(rng), std::acos(cosine(rng)), angle(rng)};
    gt.rotations.push_back(e);
    const Patch proj = project_volume(volume, e, ps);
    const int y0 = static_cast<int>(p[1]) - half, x0 = static_cast<int>(p[0]) - half;
    for (int y = 0; y < ps; ++y)
      for (int x = 0; x < ps; ++x) clean(y0 + y, x0 + x) += proj(y, x);
  }

  const auto [lo, hi] = std::minmax_element(clean.values().begin(), clean.values().end());
  gt.intensity_scale = *hi > *lo ? 1.0 / (*hi - *lo) : 1.0;
  gt.intensity_offset = -*lo * gt.intensity_scale;
  Image normalised(H, W);
  for (std::size_t i = 0; i < clean.size(); ++i) normalised[i] = clean[i] * gt.intensity_scale + gt.intensity_offset;
  Image noisy = spec.poisson_enabled ? corrupt_poisson_gaussian(normalised, spec.poisson, rng) : normalised;
  if (spec.gaussian.sigma_a > 0.0) noisy = corrupt_gaussian(noisy, spec.gaussian, rng).x;

  gt.clean = Micrograph{std::move(clean), spec.voxel_size, {0.0, 0.0}, "phantom clean"};
  gt.noisy = Micrograph{std::move(noisy), spec.voxel_size, {0.0, 0.0}, "phantom noisy"};
  return gt;
}

namespace {

double num(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw SpecError("phantom spec key '" + key + "': not a number: " + v);
  }
}

}  // namespace

PhantomSpec parse_phantom_spec(const std::string& text) {
  PhantomSpec s;
  std::istringstream in(text);
  std::string line;
  bool any_blob = false;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    boost::algorithm::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SpecError("phantom spec: expected key = value, got '" + line + "'");
    std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    boost::algorithm::trim(k);
    boost::algorithm::trim(v);
    if (k == "blob") {
      if (!any_blob) s.volume_blobs.clear();
      any_blob = true;
      std::istringstream bs(v);
      Blob b;
      if (!(bs >> b.center[0] >> b.center[1] >> b.center[2] >> b.std >> b.amplitude))
        throw SpecError("phantom spec: blob needs 'x y z std amplitude'");
      s.volume_blobs.push_back(b);
    } else if (k == "volume_size") s.volume_size = static_cast<int>(num(k, v));
    else if (k == "voxel_size") s.voxel_size = num(k, v);
    else if (k == "canvas_height") s.canvas_height = static_cast<int>(num(k, v));
    else if (k == "canvas_width") s.canvas_width = static_cast<int>(num(k, v));
    else if (k == "n_particles") s.n_particles = static_cast<int>(num(k, v));
    else if (k == "min_separation") s.min_separation = num(k, v);
    else if (k == "particle_size") s.particle_size = static_cast<int>(num(k, v));
    else if (k == "seed" || k == "rotation_seed") s.rotation_seed = static_cast<std::uint64_t>(num(k, v));
    else if (k == "poisson_enabled") s.poisson_enabled = num(k, v) != 0.0;
    else if (k == "poisson_alpha") s.poisson.alpha = num(k, v);
    else if (k == "poisson_b") s.poisson.b = num(k, v);
    else if (k == "poisson_sigma") s.poisson.sigma_det = num(k, v);
    else if (k == "gaussian_sigma") s.gaussian.sigma_a = num(k, v);
    else throw SpecError("phantom spec: unknown key '" + k + "'");
  }
  if (!any_blob) s.volume_blobs = PhantomSpec::two_blob().volume_blobs;
  return s;
}

std::string format_phantom_spec(const PhantomSpec& s) {
  std::ostringstream o;
  o.precision(17);
  o << "volume_size = " << s.volume_size << "\nvoxel_size = " << s.voxel_size << "\ncanvas_height = " << s.canvas_height
    << "\ncanvas_width = " << s.canvas_width << "\nn_particles = " << s.n_particles
    << "\nmin_separation = " << s.min_separation << "\nparticle_size = " << s.particle_size
    << "\nseed = " << s.rotation_seed << "\npoisson_enabled = " << (s.poisson_enabled ? 1 : 0)
    << "\npoisson_alpha = " << s.poisson.alpha << "\npoisson_b = " << s.poisson.b
    << "\npoisson_sigma = " << s.poisson.sigma_det << "\ngaussian_sigma = " << s.gaussian.sigma_a << '\n';
  for (const auto& b : s.volume_blobs)
    o << "blob = " << b.center[0] << ' ' << b.center[1] << ' ' << b.center[2] << ' ' << b.std << ' ' << b.amplitude
      << '\n';
  return o.str();
}

}  // namespace tgd
