#include "oat/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace oat {

namespace {

constexpr char kMagic[8] = {'O', 'A', 'T', 'T', 'E', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "container serialization assumes a little-endian host");

template <typename T>
void write_le(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

}  // namespace

std::size_t TensorFile::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return dims.empty() ? 0 : n;
}

void write_tensor(const std::string& path, const TensorFile& tensor) {
  if (tensor.element_count() != tensor.data.size())
    throw std::invalid_argument("write_tensor: dims do not match payload size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  write_le(out, kVersion);
  write_le(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) write_le(out, d);
  out.write(reinterpret_cast<const char*>(tensor.data.data()),
            static_cast<std::streamsize>(tensor.data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write to " + path);
}

TensorFile read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path + ": not a tensor container");
  const auto version = read_le<std::uint32_t>(in);
  if (version != kVersion) throw std::runtime_error(path + ": unsupported container version");
  const auto ndim = read_le<std::uint32_t>(in);
  if (ndim > 8) throw std::runtime_error(path + ": implausible rank");

  TensorFile t;
  t.dims.resize(ndim);
  for (auto& d : t.dims) {
    d = read_le<std::int64_t>(in);
    if (d < 0) throw std::runtime_error(path + ": negative dimension");
  }
  t.data.resize(t.element_count());
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(double)))
    throw std::runtime_error(path + ": truncated payload");
  return t;
}

void save_sinogram(const std::string& path, const Sinogram& s) {
  TensorFile t;
  t.dims = {s.n_d, s.n_t};
  t.data = s.data;
  write_tensor(path, t);
}

Sinogram load_sinogram(const std::string& path, double dt) {
  TensorFile t = read_tensor(path);
  if (t.dims.size() != 2) throw std::runtime_error(path + ": expected a rank-2 sinogram");
  Sinogram s(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), dt);
  s.data = std::move(t.data);
  return s;
}

void save_image(const std::string& path, const Image& img) {
  TensorFile t;
  t.dims = {img.ny, img.nx};
  t.data = img.data;
  write_tensor(path, t);
}

Image load_image(const std::string& path) {
  TensorFile t = read_tensor(path);
  if (t.dims.size() != 2) throw std::runtime_error(path + ": expected a rank-2 image");
  Image img(static_cast<int>(t.dims[1]), static_cast<int>(t.dims[0]));
  img.data = std::move(t.data);
  return img;
}

void save_checkpoint(const std::string& path, const ParameterSet& params,
                     const NetworkConfig& config) {
  TensorFile t;
  t.dims = {static_cast<std::int64_t>(params.values.size())};
  t.data = params.values;
  write_tensor(path, t);

  nlohmann::json meta;
  meta["network"] = {{"n_scales", config.n_scales},
                     {"base_channels", config.base_channels},
                     {"dense_growth_rate", config.dense_growth_rate},
                     {"dense_layers_per_block", config.dense_layers_per_block},
                     {"input_size", config.input_size}};
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& info : params.layout)
    layout.push_back({{"name", info.name},
                      {"offset", info.offset},
                      {"shape", info.shape},
                      {"count", info.count}});
  meta["layout"] = layout;
  std::ofstream sidecar(path + ".json");
  if (!sidecar) throw std::runtime_error("cannot write " + path + ".json");
  sidecar << meta.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  TensorFile t = read_tensor(path);
  if (t.dims.size() != 1) throw std::runtime_error(path + ": expected a rank-1 checkpoint");

  std::ifstream sidecar(path + ".json");
  if (!sidecar) throw std::runtime_error("cannot open " + path + ".json");
  const auto meta = nlohmann::json::parse(sidecar);

  Checkpoint ckpt;
  const auto& net = meta.at("network");
  ckpt.config.n_scales = net.at("n_scales").get<int>();
  ckpt.config.base_channels = net.at("base_channels").get<int>();
  ckpt.config.dense_growth_rate = net.at("dense_growth_rate").get<int>();
  ckpt.config.dense_layers_per_block = net.at("dense_layers_per_block").get<int>();
  ckpt.config.input_size = net.at("input_size").get<int>();

  ckpt.params.values = std::move(t.data);
  for (const auto& item : meta.at("layout")) {
    LayerInfo info;
    info.name = item.at("name").get<std::string>();
    info.offset = item.at("offset").get<std::size_t>();
    info.shape = item.at("shape").get<std::vector<int>>();
    info.count = item.at("count").get<std::size_t>();
    ckpt.params.layout.push_back(std::move(info));
  }
  if (parameter_count(ckpt.config) != ckpt.params.values.size())
    throw std::runtime_error(path + ": payload does not match the recorded architecture");
  return ckpt;
}

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4), enough for artifact fingerprints in run manifests.

namespace {

constexpr std::array<std::uint32_t, 64> kRound = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
    0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
    0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
    0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
    0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
    0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
    0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2};

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

struct Sha256 {
  std::array<std::uint32_t, 8> h = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                    0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  std::array<unsigned char, 64> block{};
  std::size_t block_len = 0;
  std::uint64_t total = 0;

  void compress() {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = static_cast<std::uint32_t>(block[4 * i]) << 24 |
             static_cast<std::uint32_t>(block[4 * i + 1]) << 16 |
             static_cast<std::uint32_t>(block[4 * i + 2]) << 8 | block[4 * i + 3];
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    auto [a, b, c, d, e, f, g, hh] = h;
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = hh + s1 + ch + kRound[i] + w[i];
      const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      hh = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
    h[5] += f;
    h[6] += g;
    h[7] += hh;
  }

  void update(const unsigned char* data, std::size_t len) {
    total += len;
    while (len > 0) {
      const std::size_t take = std::min(len, block.size() - block_len);
      std::memcpy(block.data() + block_len, data, take);
      block_len += take;
      data += take;
      len -= take;
      if (block_len == block.size()) {
        compress();
        block_len = 0;
      }
    }
  }

  std::string finish() {
    const std::uint64_t bits = total * 8;
    const unsigned char one = 0x80;
    update(&one, 1);
    const unsigned char zero = 0x00;
    while (block_len != 56) update(&zero, 1);
    unsigned char len_be[8];
    for (int i = 0; i < 8; ++i) len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len_be, 8);

    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint32_t word : h)
      for (int i = 3; i >= 0; --i) {
        const unsigned byte = (word >> (8 * i)) & 0xff;
        out.push_back(hex[byte >> 4]);
        out.push_back(hex[byte & 0xf]);
      }
    return out;
  }
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t len) {
  Sha256 state;
  state.update(static_cast<const unsigned char*>(data), len);
  return state.finish();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  Sha256 state;
  std::array<char, 65536> buf;
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    state.update(reinterpret_cast<const unsigned char*>(buf.data()),
                 static_cast<std::size_t>(in.gcount()));
  }
  return state.finish();
}

}  // namespace oat
