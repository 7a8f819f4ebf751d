#pragma once

#include <Eigen/Dense>
#include <vector>

#include "tgd/image.hpp"

namespace tgd {

/// ZYZ Euler angles in radians: R = Rz(psi) * Ry(tilt) * Rz(rot).
struct EulerAngles {
  double rot = 0.0;
  double tilt = 0.0;
  double psi = 0.0;
};

Eigen::Matrix3d rotation_matrix(const EulerAngles& e);

/// Unit vector along which a projection with these angles integrates, in volume coordinates.
Eigen::Vector3d viewing_direction(const EulerAngles& e);

/// Quasi-uniform orientations: Fibonacci-sphere viewing directions, each repeated with
/// `inplane` evenly spaced in-plane rotations.
std::vector<EulerAngles> fibonacci_views(int n_directions, int inplane = 1);

/// Radial low-pass: unit gain up to `cutoff` (1/Angstrom), raised-cosine rolloff of width
/// `rolloff_fraction * cutoff` above it.
Volume lowpass_filter(const Volume& v, double cutoff, double rolloff_fraction = 0.1);

/// Parallel-beam projection along z of the rotated volume, trilinear interpolation with
/// zero outside the support. The output is out_size x out_size, centred on the volume centre.
Patch project_volume(const Volume& v, const EulerAngles& rotation, int out_size);

/// Trilinear sample at fractional voxel coordinates; zero outside the grid.
double sample_trilinear(const Volume& v, double z, double y, double x);

}  // namespace tgd
