#include "tgd/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tgd/errors.hpp"

namespace tgd {

Image::Image(int height, int width, double fill)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0), fill) {
  if (height < 0 || width < 0) throw ShapeError("negative image dimensions");
}

Image::Image(int height, int width, std::vector<double> values)
    : height_(height), width_(width), data_(std::move(values)) {
  if (height < 0 || width < 0 ||
      data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw ShapeError("image buffer size does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
}

Image Image::crop(int row0, int col0, int h, int w) const {
  if (row0 < 0 || col0 < 0 || row0 + h > height_ || col0 + w > width_)
    throw DimensionError("crop window outside image");
  Image out(h, w);
  for (int r = 0; r < h; ++r)
    std::copy_n(&data_[static_cast<std::size_t>(row0 + r) * width_ + col0], w,
                &out.data_[static_cast<std::size_t>(r) * w]);
  return out;
}

Image& Image::operator+=(const Image& o) {
  if (!same_shape(o)) throw ShapeError("image shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Image& Image::operator-=(const Image& o) {
  if (!same_shape(o)) throw ShapeError("image shape mismatch in -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Image& Image::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Image operator+(Image a, const Image& b) { return a += b; }
Image operator-(Image a, const Image& b) { return a -= b; }
Image operator*(Image a, double s) { return a *= s; }
Image operator*(double s, Image a) { return a *= s; }

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("image shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void validate(const Micrograph& m) {
  if (m.data.height() < 1 || m.data.width() < 1) throw ShapeError("micrograph must be at least 1x1");
  if (!(m.pixel_size_angstrom > 0.0)) throw ParameterError("pixel size must be positive");
  if (!all_finite(m.data.values())) throw ParameterError("micrograph contains non-finite values");
}

void validate(const Volume& v) {
  if (v.nz < 1 || v.ny < 1 || v.nx < 1) throw ShapeError("volume must be at least 1x1x1");
  if (v.data.size() != static_cast<std::size_t>(v.nz) * v.ny * v.nx)
    throw ShapeError("volume buffer size mismatch");
  if (!(v.voxel_size_angstrom > 0.0)) throw ParameterError("voxel size must be positive");
  if (!all_finite(v.data)) throw ParameterError("volume contains non-finite values");
}

}  // namespace tgd
