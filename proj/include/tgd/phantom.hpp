#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tgd/evaluation.hpp"
#include "tgd/image.hpp"
#include "tgd/noise_model.hpp"
#include "tgd/projection.hpp"

namespace tgd {

struct Blob {
  std::array<double, 3> center{0.0, 0.0, 0.0};  // (x, y, z) in voxels
  double std = 3.0;
  double amplitude = 1.0;  // peak value
};

struct PhantomSpec {
  std::vector<Blob> volume_blobs;
  int volume_size = 32;  // cubic grid edge
  double voxel_size = 1.0;
  int canvas_height = 256;
  int canvas_width = 256;
  int n_particles = 10;
  double min_separation = 32.0;
  int particle_size = 32;  // projection box edge
  std::uint64_t rotation_seed = 0;
  bool poisson_enabled = true;
  PoissonGaussianParams poisson;
  GaussianNoiseParams gaussian{0.5};

  /// Two unequal, off-centre blobs.
  static PhantomSpec two_blob();
  void validate() const;
};

struct GroundTruth {
  Micrograph clean;
  Micrograph noisy;
  ParticleSet coordinates;
  std::vector<EulerAngles> rotations;
  double intensity_scale = 1.0;   // clean -> normalised: v * scale + offset
  double intensity_offset = 0.0;
};

/// Sum of 3-D Gaussian blobs on a cubic grid.
Volume make_volume(const PhantomSpec& spec);

/// Poisson-disk placement of randomly rotated projections on a blank canvas, then
/// min/max normalisation, Poisson-Gaussian and additive Gaussian corruption.
GroundTruth make_micrograph(const PhantomSpec& spec);
GroundTruth make_micrograph(const PhantomSpec& spec, const Volume& volume);

/// Flat `key = value` phantom description (blob lines: blob = x y z std amplitude).
PhantomSpec parse_phantom_spec(const std::string& text);
std::string format_phantom_spec(const PhantomSpec& spec);

}  // namespace tgd
