#pragma once

#include <vector>

#include "tgd/image.hpp"

namespace tgd {

struct TilePlacement {
  int row = 0;
  int col = 0;
  int y_offset = 0;
  int x_offset = 0;
};

/// Sliding-window layout. Edge tiles are shifted inward so every tile is full-size.
struct TileLayout {
  int image_height = 0;
  int image_width = 0;
  int tile_size = 0;
  int overlap = 0;
  int rows = 0;
  int cols = 0;
  std::vector<TilePlacement> grid;  // row-major
};

/// Offsets along one axis: 0, stride, 2*stride, ... with the last one clamped to extent - tile.
std::vector<int> tile_offsets(int extent, int tile_size, int overlap);

TileLayout make_layout(int height, int width, int tile_size, int overlap);

struct Tiling {
  TileLayout layout;
  std::vector<Patch> tiles;
};

Tiling tile(const Image& image, int tile_size, int overlap);

/// Weight of tile pixel `i` along one axis: raised-cosine ramps of length
/// `overlap` at both ends, unity in between. Strictly positive everywhere.
double blend_weight(int i, int tile_size, int overlap);

/// Weighted average of tiles with separable raised-cosine windows, normalised
/// by the accumulated weight at every pixel.
Image stitch(const TileLayout& layout, const std::vector<Patch>& tiles);

}  // namespace tgd
