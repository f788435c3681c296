#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include "downscale/errors.hpp"
#include "downscale/grid.hpp"
#include "downscale/tensor.hpp"

namespace dsc {

// Binary PGM (P5, maxval 255) heatmap: min-max scaled, one pixel per value,
// row 0 at the top. An all-equal field renders mid-gray (128).
inline void write_pgm(const std::string& path, const Tensor<double>& field) {
  if (field.rank() != 2) throw input_error("write_pgm: expects a 2-D field");
  if (field.numel() == 0) throw input_error("write_pgm: empty field");
  double lo = field[0], hi = field[0];
  for (double x : field.v) {
    if (!std::isfinite(x)) throw input_error("write_pgm: non-finite value");
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("write_pgm: cannot open " + path);
  out << "P5\n" << field.shape[1] << " " << field.shape[0] << "\n255\n";
  for (double x : field.v) {
    unsigned char px;
    if (hi == lo)
      px = 128;
    else
      px = static_cast<unsigned char>(
          std::lround((x - lo) / (hi - lo) * 255.0));
    out.write(reinterpret_cast<const char*>(&px), 1);
  }
  if (!out) throw input_error("write_pgm: write failed: " + path);
}

// Orients a geometry-bound field so north is at the top before rendering.
inline void render_heatmap(const std::string& path, const Tensor<double>& field,
                           const GridGeometry& geometry) {
  if (field.rank() != 2 || field.shape[0] != geometry.rows() ||
      field.shape[1] != geometry.cols())
    throw input_error("render_heatmap: field does not match geometry");
  const bool ascending =
      geometry.lats.size() < 2 || geometry.lats[1] > geometry.lats[0];
  if (!ascending) {
    write_pgm(path, field);
    return;
  }
  Tensor<double> flipped(field.shape);
  const std::size_t h = field.shape[0], w = field.shape[1];
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      flipped.at2(i, j) = field.at2(h - 1 - i, j);
  write_pgm(path, flipped);
}

}  // namespace dsc
