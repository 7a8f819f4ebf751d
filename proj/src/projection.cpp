#include "tgd/projection.hpp"

#include <cmath>
#include <numbers>

#include "tgd/errors.hpp"
#include "tgd/fft.hpp"

namespace tgd {

Eigen::Matrix3d rotation_matrix(const EulerAngles& e) {
  auto rz = [](double a) {
    Eigen::Matrix3d m;
    m << std::cos(a), std::sin(a), 0, -std::sin(a), std::cos(a), 0, 0, 0, 1;
    return m;
  };
  Eigen::Matrix3d ry;
  const double c = std::cos(e.tilt), s = std::sin(e.tilt);
  ry << c, 0, -s, 0, 1, 0, s, 0, c;
  return rz(e.psi) * ry * rz(e.rot);
}

Eigen::Vector3d viewing_direction(const EulerAngles& e) {
  return rotation_matrix(e).transpose() * Eigen::Vector3d::UnitZ();
}

std::vector<EulerAngles> fibonacci_views(int n_directions, int inplane) {
  if (n_directions < 1 || inplane < 1) throw ParameterError("view counts must be positive");
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<EulerAngles> views;
  views.reserve(static_cast<std::size_t>(n_directions) * inplane);
  for (int k = 0; k < n_directions; ++k) {
    const double z = 1.0 - 2.0 * (k + 0.5) / n_directions;
    const double phi = std::fmod(golden * k, 2.0 * std::numbers::pi);
    for (int i = 0; i < inplane; ++i)
      views.push_back({phi, std::acos(z), 2.0 * std::numbers::pi * i / inplane});
  }
  return views;
}

Volume lowpass_filter(const Volume& v, double cutoff, double rolloff_fraction) {
  validate(v);
  const double nyquist = 1.0 / (2.0 * v.voxel_size_angstrom);
  if (!(cutoff > 0.0)) throw FrequencyError("low-pass cutoff must be positive");
  if (cutoff > nyquist * (1.0 + 1e-12))
    throw FrequencyError("low-pass cutoff " + std::to_string(cutoff) + " exceeds Nyquist " +
                         std::to_string(nyquist));
  if (!(rolloff_fraction >= 0.0)) throw ParameterError("rolloff fraction must be non-negative");
  const double width = rolloff_fraction * cutoff;

  Spectrum3 s = rfft3(v);
  const double a = v.voxel_size_angstrom;
  for (int z = 0; z < s.nz; ++z) {
    const double fz = signed_freq(z, s.nz) / (s.nz * a);
    for (int y = 0; y < s.ny; ++y) {
      const double fy = signed_freq(y, s.ny) / (s.ny * a);
      for (int x = 0; x < s.nx_half(); ++x) {
        const double fx = x / (s.nx * a);
        const double f = std::sqrt(fx * fx + fy * fy + fz * fz);
        double gain = 1.0;
        if (f > cutoff) {
          gain = (width > 0.0 && f < cutoff + width)
                     ? 0.5 * (1.0 + std::cos(std::numbers::pi * (f - cutoff) / width))
                     : 0.0;
        }
        s.at(z, y, x) *= gain;
      }
    }
  }
  return irfft3(s, v.voxel_size_angstrom);
}

double sample_trilinear(const Volume& v, double z, double y, double x) {
  const int z0 = static_cast<int>(std::floor(z));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  if (z0 < -1 || y0 < -1 || x0 < -1 || z0 >= v.nz || y0 >= v.ny || x0 >= v.nx) return 0.0;
  const double dz = z - z0, dy = y - y0, dx = x - x0;
  double acc = 0.0;
  for (int kz = 0; kz < 2; ++kz) {
    const int zz = z0 + kz;
    if (zz < 0 || zz >= v.nz) continue;
    const double wz = kz ? dz : 1.0 - dz;
    for (int ky = 0; ky < 2; ++ky) {
      const int yy = y0 + ky;
      if (yy < 0 || yy >= v.ny) continue;
      const double wy = ky ? dy : 1.0 - dy;
      for (int kx = 0; kx < 2; ++kx) {
        const int xx = x0 + kx;
        if (xx < 0 || xx >= v.nx) continue;
        acc += wz * wy * (kx ? dx : 1.0 - dx) * v.at(zz, yy, xx);
      }
    }
  }
  return acc;
}

Patch project_volume(const Volume& v, const EulerAngles& rotation, int out_size) {
  validate(v);
  if (!std::isfinite(rotation.rot) || !std::isfinite(rotation.tilt) || !std::isfinite(rotation.psi))
    throw ParameterError("projection angles must be finite");
  if (out_size < 1) throw ParameterError("projection size must be positive");
  const int depth = std::max({v.nz, v.ny, v.nx, out_size});
  const Eigen::Matrix3d rt = rotation_matrix(rotation).transpose();
  const Eigen::Vector3d centre(v.nx / 2, v.ny / 2, v.nz / 2);
  const double half_out = out_size / 2;
  const double half_depth = depth / 2;

  Patch out(out_size, out_size);
  for (int r = 0; r < out_size; ++r) {
    for (int c = 0; c < out_size; ++c) {
      double acc = 0.0;
      for (int k = 0; k < depth; ++k) {
        const Eigen::Vector3d p(c - half_out, r - half_out, k - half_depth);
        const Eigen::Vector3d q = rt * p + centre;
        acc += sample_trilinear(v, q.z(), q.y(), q.x());
      }
      out(r, c) = acc;
    }
  }
  return out;
}

}  // namespace tgd
