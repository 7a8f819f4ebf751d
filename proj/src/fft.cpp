#include "tgd/fft.hpp"

#include <fftw3.h>

#include <memory>

namespace tgd {

namespace {

struct PlanDeleter {
  void operator()(fftw_plan p) const { fftw_destroy_plan(p); }
};
using Plan = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter>;

Spectrum3 forward(int nz, int ny, int nx, const std::vector<double>& data) {
  Spectrum3 s;
  s.nz = nz;
  s.ny = ny;
  s.nx = nx;
  s.bins.resize(static_cast<std::size_t>(nz) * ny * s.nx_half());
  std::vector<double> in(data);
  Plan plan(fftw_plan_dft_r2c_3d(nz, ny, nx, in.data(),
                                 reinterpret_cast<fftw_complex*>(s.bins.data()), FFTW_ESTIMATE));
  fftw_execute(plan.get());
  return s;
}

std::vector<double> backward(const Spectrum3& s) {
  // c2r destroys its input.
  std::vector<std::complex<double>> in(s.bins);
  std::vector<double> out(static_cast<std::size_t>(s.nz) * s.ny * s.nx);
  Plan plan(fftw_plan_dft_c2r_3d(s.nz, s.ny, s.nx, reinterpret_cast<fftw_complex*>(in.data()),
                                 out.data(), FFTW_ESTIMATE));
  fftw_execute(plan.get());
  const double norm = 1.0 / static_cast<double>(out.size());
  for (auto& v : out) v *= norm;
  return out;
}

}  // namespace

Spectrum3 rfft3(const Volume& v) { return forward(v.nz, v.ny, v.nx, v.data); }

Volume irfft3(const Spectrum3& s, double voxel_size) {
  Volume v(s.nz, s.ny, s.nx, voxel_size);
  v.data = backward(s);
  return v;
}

Spectrum3 rfft2(const Image& img) { return forward(1, img.height(), img.width(), img.vector()); }

Image irfft2(const Spectrum3& s) { return Image(s.ny, s.nx, backward(s)); }

}  // namespace tgd
