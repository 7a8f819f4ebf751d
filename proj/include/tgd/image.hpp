#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tgd {

/// Dense row-major 2-D real array. Pixel (row, col) lives at data[row * width + col].
class Image {
public:
  Image() = default;
  Image(int height, int width, double fill = 0.0);
  Image(int height, int width, std::vector<double> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  double operator()(int row, int col) const {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& vector() const noexcept { return data_; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  Image crop(int row0, int col0, int h, int w) const;

  Image& operator+=(const Image& o);
  Image& operator-=(const Image& o);
  Image& operator*=(double s);

  bool operator==(const Image&) const = default;

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

Image operator+(Image a, const Image& b);
Image operator-(Image a, const Image& b);
Image operator*(Image a, double s);
Image operator*(double s, Image a);

/// Patches are images cut from a micrograph; the alias keeps signatures readable.
using Patch = Image;

double mean(std::span<const double> v);
/// Population standard deviation.
double stddev(std::span<const double> v);
bool all_finite(std::span<const double> v);
double max_abs_diff(const Image& a, const Image& b);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

struct Micrograph {
  Image data;
  double pixel_size_angstrom = 1.0;
  std::array<double, 2> origin{0.0, 0.0};
  std::string provenance;
};

/// Dense 3-D density. Voxel (z, y, x) lives at data[(z * ny + y) * nx + x].
struct Volume {
  int nz = 0, ny = 0, nx = 0;
  std::vector<double> data;
  double voxel_size_angstrom = 1.0;

  Volume() = default;
  Volume(int z, int y, int x, double voxel = 1.0)
      : nz(z), ny(y), nx(x), data(static_cast<std::size_t>(z) * y * x, 0.0),
        voxel_size_angstrom(voxel) {}

  double& at(int z, int y, int x) { return data[(static_cast<std::size_t>(z) * ny + y) * nx + x]; }
  double at(int z, int y, int x) const {
    return data[(static_cast<std::size_t>(z) * ny + y) * nx + x];
  }
  bool same_shape(const Volume& o) const { return nz == o.nz && ny == o.ny && nx == o.nx; }
};

/// Throws ShapeError/ParameterError if a micrograph violates its invariants.
void validate(const Micrograph& m);
void validate(const Volume& v);

}  // namespace tgd
