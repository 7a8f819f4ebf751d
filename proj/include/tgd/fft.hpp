#pragma once

#include <complex>
#include <vector>

#include "tgd/image.hpp"

namespace tgd {

/// Half-complex spectrum of a real array in FFTW r2c layout: the last axis holds n/2 + 1 bins.
struct Spectrum3 {
  int nz = 0, ny = 0, nx = 0;  // real-space shape
  std::vector<std::complex<double>> bins;

  int nx_half() const { return nx / 2 + 1; }
  std::complex<double>& at(int z, int y, int x) {
    return bins[(static_cast<std::size_t>(z) * ny + y) * nx_half() + x];
  }
  const std::complex<double>& at(int z, int y, int x) const {
    return bins[(static_cast<std::size_t>(z) * ny + y) * nx_half() + x];
  }
};

Spectrum3 rfft3(const Volume& v);
/// Inverse transform, normalised so that irfft3(rfft3(v)) == v.
Volume irfft3(const Spectrum3& s, double voxel_size);

Spectrum3 rfft2(const Image& img);
Image irfft2(const Spectrum3& s);

/// Signed integer frequency index for bin k of an n-point transform.
inline int signed_freq(int k, int n) { return k <= n / 2 ? k : k - n; }

}  // namespace tgd
