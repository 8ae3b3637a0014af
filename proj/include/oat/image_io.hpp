#pragma once

#include <string>
#include <vector>

#include "oat/forward_model.hpp"

namespace oat {

/// Raw grayscale pixels as read from disk, rescaled to [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major
};

/// Reads an 8- or 16-bit grayscale PNG or PGM (P2/P5). Anything else is an
/// error; color images are intentionally not converted.
GrayImage read_grayscale(const std::string& path);

/// Writes a 16-bit grayscale PNG mapping [lo, hi] linearly onto the full
/// sample range (values outside are clipped). A JSON sidecar `<path>.json`
/// records the mapping so the export is invertible.
void write_png16(const std::string& path, const Image& image, double lo, double hi);

/// 8-bit variant, same mapping convention, no sidecar.
void write_png8(const std::string& path, const Image& image, double lo, double hi);

/// Binary 16-bit PGM (P5), mapping as above.
void write_pgm16(const std::string& path, const Image& image, double lo, double hi);

}  // namespace oat
