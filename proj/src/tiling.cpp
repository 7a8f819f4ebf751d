#include "tgd/tiling.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "tgd/errors.hpp"

namespace tgd {

std::vector<int> tile_offsets(int extent, int tile_size, int overlap) {
  if (tile_size < 1) throw DimensionError("tile size must be positive");
  if (overlap < 0 || overlap >= tile_size)
    throw DimensionError("overlap must satisfy 0 <= overlap < tile size");
  if (tile_size > extent)
    throw DimensionError("tile size " + std::to_string(tile_size) + " exceeds image extent " +
                         std::to_string(extent));
  const int stride = tile_size - overlap;
  std::vector<int> offsets{0};
  while (offsets.back() + tile_size < extent)
    offsets.push_back(std::min(offsets.back() + stride, extent - tile_size));
  return offsets;
}

TileLayout make_layout(int height, int width, int tile_size, int overlap) {
  TileLayout layout;
  layout.image_height = height;
  layout.image_width = width;
  layout.tile_size = tile_size;
  layout.overlap = overlap;
  const auto ys = tile_offsets(height, tile_size, overlap);
  const auto xs = tile_offsets(width, tile_size, overlap);
  layout.rows = static_cast<int>(ys.size());
  layout.cols = static_cast<int>(xs.size());
  for (int r = 0; r < layout.rows; ++r)
    for (int c = 0; c < layout.cols; ++c) layout.grid.push_back({r, c, ys[r], xs[c]});
  return layout;
}

Tiling tile(const Image& image, int tile_size, int overlap) {
  Tiling t;
  t.layout = make_layout(image.height(), image.width(), tile_size, overlap);
  t.tiles.reserve(t.layout.grid.size());
  for (const auto& p : t.layout.grid)
    t.tiles.push_back(image.crop(p.y_offset, p.x_offset, tile_size, tile_size));
  return t;
}

double blend_weight(int i, int tile_size, int overlap) {
  if (overlap <= 0) return 1.0;
  const int from_edge = std::min(i, tile_size - 1 - i);
  if (from_edge >= overlap) return 1.0;
  return 0.5 - 0.5 * std::cos(std::numbers::pi * (from_edge + 0.5) / overlap);
}

Image stitch(const TileLayout& layout, const std::vector<Patch>& tiles) {
  if (tiles.size() != layout.grid.size())
    throw LayoutError("stitch: layout has " + std::to_string(layout.grid.size()) + " tiles, got " +
                      std::to_string(tiles.size()));
  const int t = layout.tile_size;
  std::vector<double> w1(t);
  for (int i = 0; i < t; ++i) w1[i] = blend_weight(i, t, layout.overlap);

  Image acc(layout.image_height, layout.image_width);
  Image weight(layout.image_height, layout.image_width);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const auto& p = layout.grid[k];
    const auto& tile_img = tiles[k];
    if (tile_img.height() != t || tile_img.width() != t)
      throw LayoutError("stitch: tile " + std::to_string(k) + " is not " + std::to_string(t) + "x" +
                        std::to_string(t));
    for (int r = 0; r < t; ++r)
      for (int c = 0; c < t; ++c) {
        const double w = w1[r] * w1[c];
        acc(p.y_offset + r, p.x_offset + c) += w * tile_img(r, c);
        weight(p.y_offset + r, p.x_offset + c) += w;
      }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (!(weight[i] > 0.0)) throw LayoutError("stitch: layout leaves pixels uncovered");
    acc[i] /= weight[i];
  }
  return acc;
}

}  // namespace tgd
