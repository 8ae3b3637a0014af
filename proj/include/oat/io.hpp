#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oat/forward_model.hpp"
#include "oat/network.hpp"

namespace oat {

/// Flat binary tensor container: 16-byte header (8-byte magic "OATTENSR",
/// 32-bit version, 32-bit rank, both little-endian), then the dimensions as
/// 64-bit little-endian integers, then the payload as row-major 64-bit
/// little-endian floats.
struct TensorFile {
  std::vector<std::int64_t> dims;
  std::vector<double> data;

  std::size_t element_count() const;
};

void write_tensor(const std::string& path, const TensorFile& tensor);
TensorFile read_tensor(const std::string& path);

// typed wrappers; sinograms carry (n_d, n_t) and images (ny, nx)
void save_sinogram(const std::string& path, const Sinogram& s);
Sinogram load_sinogram(const std::string& path, double dt);
void save_image(const std::string& path, const Image& img);
Image load_image(const std::string& path);

/// Checkpoints reuse the container for the flat parameter payload; a JSON
/// sidecar `<path>.json` carries the architecture and the layout table.
void save_checkpoint(const std::string& path, const ParameterSet& params,
                     const NetworkConfig& config);

struct Checkpoint {
  ParameterSet params;
  NetworkConfig config;
};

Checkpoint load_checkpoint(const std::string& path);

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_file(const std::string& path);

}  // namespace oat
