#include "oat/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace oat {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

GrayImage read_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed to decode " + path);
  }

  png_init_io(png, file.get());
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (color_type != PNG_COLOR_TYPE_GRAY || (bit_depth != 8 && bit_depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(path + ": only 8- or 16-bit grayscale PNG is supported");
  }
  if (bit_depth == 16) png_set_swap(png);  // PNG is big-endian on disk
  png_read_update_info(png, info);

  const std::size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buffer(row_bytes * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = buffer.data() + r * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  GrayImage out;
  out.width = static_cast<int>(width);
  out.height = static_cast<int>(height);
  out.pixels.resize(static_cast<std::size_t>(width) * height);
  const double peak = bit_depth == 8 ? 255.0 : 65535.0;
  for (png_uint_32 r = 0; r < height; ++r) {
    for (png_uint_32 c = 0; c < width; ++c) {
      double v;
      if (bit_depth == 8) {
        v = buffer[r * row_bytes + c];
      } else {
        std::uint16_t raw;
        std::memcpy(&raw, buffer.data() + r * row_bytes + 2 * c, 2);
        v = raw;
      }
      out.pixels[static_cast<std::size_t>(r) * width + c] = v / peak;
    }
  }
  return out;
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);

  std::string magic;
  in >> magic;
  if (magic != "P2" && magic != "P5") throw std::runtime_error(path + ": not a PGM file");

  auto next_token = [&in, &path]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw std::runtime_error(path + ": truncated PGM header");
  };

  const int width = std::stoi(next_token());
  const int height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (width <= 0 || height <= 0) throw std::runtime_error(path + ": bad PGM dimensions");
  if (maxval <= 0 || maxval > 65535) throw std::runtime_error(path + ": unsupported PGM depth");

  GrayImage out;
  out.width = width;
  out.height = height;
  out.pixels.resize(static_cast<std::size_t>(width) * height);

  if (magic == "P2") {
    for (auto& p : out.pixels) {
      long v;
      if (!(in >> v)) throw std::runtime_error(path + ": truncated PGM data");
      p = static_cast<double>(v) / maxval;
    }
  } else {
    in.get();  // single whitespace after maxval
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(out.pixels.size() * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
      throw std::runtime_error(path + ": truncated PGM data");
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
      const unsigned v = bytes == 1 ? raw[i] : (raw[2 * i] << 8 | raw[2 * i + 1]);
      out.pixels[i] = static_cast<double>(v) / maxval;
    }
  }
  return out;
}

std::vector<std::uint16_t> quantize16(const Image& image, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("image export: need hi > lo");
  std::vector<std::uint16_t> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double t = std::clamp((image.data[i] - lo) / (hi - lo), 0.0, 1.0);
    out[i] = static_cast<std::uint16_t>(std::lround(t * 65535.0));
  }
  return out;
}

void write_png_impl(const std::string& path, const Image& image, double lo, double hi,
                    int bit_depth) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed to encode " + path);
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.nx), static_cast<png_uint_32>(image.ny),
               bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const auto q = quantize16(image, lo, hi);
  if (bit_depth == 16) {
    std::vector<unsigned char> row(static_cast<std::size_t>(image.nx) * 2);
    for (int j = 0; j < image.ny; ++j) {
      for (int i = 0; i < image.nx; ++i) {
        const std::uint16_t v = q[static_cast<std::size_t>(j) * image.nx + i];
        row[2 * i] = static_cast<unsigned char>(v >> 8);
        row[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
      }
      png_write_row(png, row.data());
    }
  } else {
    std::vector<unsigned char> row(static_cast<std::size_t>(image.nx));
    for (int j = 0; j < image.ny; ++j) {
      for (int i = 0; i < image.nx; ++i)
        row[i] = static_cast<unsigned char>(q[static_cast<std::size_t>(j) * image.nx + i] >> 8);
      png_write_row(png, row.data());
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

GrayImage read_grayscale(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open " + path);
  char magic[2] = {0, 0};
  probe.read(magic, 2);
  probe.close();
  if (magic[0] == 'P' && (magic[1] == '2' || magic[1] == '5')) return read_pgm(path);
  return read_png(path);
}

void write_png16(const std::string& path, const Image& image, double lo, double hi) {
  write_png_impl(path, image, lo, hi, 16);
  std::ofstream sidecar(path + ".json");
  sidecar << "{\n  \"value_at_black\": " << lo << ",\n  \"value_at_white\": " << hi
          << ",\n  \"bit_depth\": 16\n}\n";
}

void write_png8(const std::string& path, const Image& image, double lo, double hi) {
  write_png_impl(path, image, lo, hi, 8);
}

void write_pgm16(const std::string& path, const Image& image, double lo, double hi) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << image.nx << " " << image.ny << "\n65535\n";
  const auto q = quantize16(image, lo, hi);
  for (std::uint16_t v : q) {
    const unsigned char bytes[2] = {static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v & 0xff)};
    out.write(reinterpret_cast<const char*>(bytes), 2);
  }
}

}  // namespace oat
