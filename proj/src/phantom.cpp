#include "oat/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <stdexcept>

#include "oat/image_io.hpp"
#include "oat/parallel.hpp"
#include "oat/rng.hpp"

namespace oat {

namespace {

// seed-derivation streams
enum : std::uint64_t {
  kStreamPhantom = 0x70,
  kStreamAugment = 0x71,
  kStreamRealize = 0x72,
  kStreamNoise = 0x73,
  kStreamRetry = 0x74,
};

struct Walker {
  double x, y, angle, thickness;
  int steps_left;
};

constexpr double kMinForeground = 0.005;
constexpr double kMaxForeground = 0.30;

void draw_segment(Image& img, double x0, double y0, double x1, double y1, double thickness) {
  const double hw = thickness / 2.0;
  const int lo_i = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - hw - 1.0)));
  const int hi_i = std::min(img.nx - 1, static_cast<int>(std::ceil(std::max(x0, x1) + hw + 1.0)));
  const int lo_j = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - hw - 1.0)));
  const int hi_j = std::min(img.ny - 1, static_cast<int>(std::ceil(std::max(y0, y1) + hw + 1.0)));

  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const double len_sq = dx * dx + dy * dy;
  for (int j = lo_j; j <= hi_j; ++j) {
    for (int i = lo_i; i <= hi_i; ++i) {
      double t = 0.0;
      if (len_sq > 0.0) t = std::clamp(((i - x0) * dx + (j - y0) * dy) / len_sq, 0.0, 1.0);
      const double px = x0 + t * dx;
      const double py = y0 + t * dy;
      const double dist = std::hypot(i - px, j - py);
      // distance-based coverage gives a soft one-pixel edge
      const double cov = std::clamp(hw + 0.5 - dist, 0.0, 1.0);
      if (cov > 0.0) {
        double& v = img.at(i, j);
        v = std::max(v, cov);
      }
    }
  }
}

Image render_vessels(const ImagingGrid& grid, std::uint64_t seed, const PhantomParams& p,
                     double length_scale) {
  Image img(grid.nx, grid.ny);
  Rng rng(seed);
  const int side = std::min(grid.nx, grid.ny);
  const int base_steps = p.walk_steps > 0 ? p.walk_steps : static_cast<int>(0.9 * side);
  const int walk_steps = std::max(4, static_cast<int>(base_steps * length_scale));

  std::deque<Walker> queue;
  const int n_branches = rng.uniform_int(p.branches_min, p.branches_max);
  for (int b = 0; b < n_branches; ++b) {
    Walker w;
    w.x = rng.uniform(0.2 * grid.nx, 0.8 * grid.nx);
    w.y = rng.uniform(0.2 * grid.ny, 0.8 * grid.ny);
    w.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    w.thickness = rng.uniform(p.thickness_min, p.thickness_max);
    w.steps_left = walk_steps;
    queue.push_back(w);
  }

  int active_budget = p.max_active;
  while (!queue.empty()) {
    Walker w = queue.front();
    queue.pop_front();
    while (w.steps_left-- > 0) {
      const double nx = w.x + p.step_px * std::cos(w.angle);
      const double ny = w.y + p.step_px * std::sin(w.angle);
      draw_segment(img, w.x, w.y, nx, ny, w.thickness);
      w.x = nx;
      w.y = ny;
      w.angle += rng.gaussian(0.0, p.turn_sigma);
      if (w.x < -2.0 || w.y < -2.0 || w.x > grid.nx + 2.0 || w.y > grid.ny + 2.0) break;
      if (active_budget > 0 && w.steps_left > 4 && rng.uniform() < p.branch_prob) {
        --active_budget;
        Walker child = w;
        child.angle += (rng.uniform() < 0.5 ? 1.0 : -1.0) * rng.uniform(0.5, 1.1);
        child.thickness = std::max(p.thickness_min, w.thickness * rng.uniform(0.55, 0.85));
        child.steps_left = static_cast<int>(w.steps_left * rng.uniform(0.4, 0.8));
        queue.push_back(child);
      }
    }
  }
  return img;
}

}  // namespace

double Phantom::foreground_fraction(double threshold) const {
  if (image.data.empty()) return 0.0;
  std::size_t count = 0;
  for (double v : image.data)
    if (v > threshold) ++count;
  return static_cast<double>(count) / static_cast<double>(image.data.size());
}

Phantom generate_vessel_phantom(const ImagingGrid& grid, std::uint64_t seed,
                                const PhantomParams& params) {
  if (params.branches_min < 1)
    throw std::invalid_argument("generate_vessel_phantom: need at least one branch");
  if (params.branches_max < params.branches_min ||
      params.thickness_max < params.thickness_min || params.thickness_min <= 0.0)
    throw std::invalid_argument("generate_vessel_phantom: inconsistent parameter ranges");
  if (params.step_px <= 0.0 || params.branch_prob < 0.0 || params.branch_prob > 1.0)
    throw std::invalid_argument("generate_vessel_phantom: bad walk parameters");

  Phantom phantom;
  phantom.provenance = "procedural:" + std::to_string(seed);

  // redraw with derived sub-seeds until the vasculature density is sane;
  // walks shrink when the tree saturates the grid and grow when it is too
  // sparse, so every advertised parameter corner converges
  double length_scale = 1.0;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const std::uint64_t draw_seed =
        attempt == 0 ? seed : derive_seed(seed, kStreamRetry, static_cast<std::uint64_t>(attempt));
    phantom.image = render_vessels(grid, draw_seed, params, length_scale);
    const double frac = phantom.foreground_fraction();
    if (frac >= kMinForeground && frac <= kMaxForeground) return phantom;
    length_scale = frac > kMaxForeground ? length_scale * 0.75 : length_scale * 1.4;
    length_scale = std::clamp(length_scale, 1e-3, 64.0);
  }
  throw std::runtime_error(
      "generate_vessel_phantom: could not reach a usable foreground fraction; "
      "parameters are degenerate for this grid");
}

Phantom augment_with(const Phantom& phantom, const AugmentOp& op) {
  const Image& in = phantom.image;
  if (op.quarter_turns % 2 != 0 && in.nx != in.ny)
    throw std::invalid_argument("augment: quarter turns require a square image");

  Image img = in;
  for (int r = 0; r < ((op.quarter_turns % 4) + 4) % 4; ++r) {
    Image rot(img.ny, img.nx);
    for (int j = 0; j < rot.ny; ++j)
      for (int i = 0; i < rot.nx; ++i) rot.at(i, j) = img.at(rot.ny - 1 - j, i);
    img = std::move(rot);
  }
  if (op.flip_h) {
    Image f(img.nx, img.ny);
    for (int j = 0; j < img.ny; ++j)
      for (int i = 0; i < img.nx; ++i) f.at(i, j) = img.at(img.nx - 1 - i, j);
    img = std::move(f);
  }
  if (op.flip_v) {
    Image f(img.nx, img.ny);
    for (int j = 0; j < img.ny; ++j)
      for (int i = 0; i < img.nx; ++i) f.at(i, j) = img.at(i, img.ny - 1 - j);
    img = std::move(f);
  }
  if (op.shift_x != 0 || op.shift_y != 0) {
    Image s(img.nx, img.ny);
    for (int j = 0; j < img.ny; ++j) {
      const int src_j = j - op.shift_y;
      if (src_j < 0 || src_j >= img.ny) continue;
      for (int i = 0; i < img.nx; ++i) {
        const int src_i = i - op.shift_x;
        if (src_i < 0 || src_i >= img.nx) continue;
        s.at(i, j) = img.at(src_i, src_j);
      }
    }
    img = std::move(s);
  }

  Phantom out;
  out.image = std::move(img);
  out.provenance = phantom.provenance;
  out.augment_record = op;
  return out;
}

Phantom augment(const Phantom& phantom, std::uint64_t seed) {
  Rng rng(seed);
  AugmentOp op;
  op.quarter_turns = rng.uniform_int(0, 3);
  op.flip_h = rng.uniform_int(0, 1) == 1;
  op.flip_v = rng.uniform_int(0, 1) == 1;
  const int max_sx = phantom.image.nx / 10;
  const int max_sy = phantom.image.ny / 10;
  op.shift_x = rng.uniform_int(-max_sx, max_sx);
  op.shift_y = rng.uniform_int(-max_sy, max_sy);
  return augment_with(phantom, op);
}

Phantom import_image(const std::string& path, const ImagingGrid& grid) {
  const GrayImage src = read_grayscale(path);

  // separable area-average resampling; exact block means for integer ratios
  auto overlaps = [](int n_in, int n_out) {
    std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(n_out));
    const double scale = static_cast<double>(n_in) / n_out;
    for (int o = 0; o < n_out; ++o) {
      const double lo = o * scale;
      const double hi = (o + 1) * scale;
      for (int i = static_cast<int>(std::floor(lo)); i < n_in && i < std::ceil(hi); ++i) {
        const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
        if (overlap > 0.0) w[static_cast<std::size_t>(o)].push_back({i, overlap / scale});
      }
    }
    return w;
  };
  const auto wx = overlaps(src.width, grid.nx);
  const auto wy = overlaps(src.height, grid.ny);

  Phantom out;
  out.image = Image(grid.nx, grid.ny);
  out.provenance = "import:" + path;
  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      double acc = 0.0;
      for (const auto& [sj, fy] : wy[static_cast<std::size_t>(j)])
        for (const auto& [si, fx] : wx[static_cast<std::size_t>(i)])
          acc += fx * fy * src.pixels[static_cast<std::size_t>(sj) * src.width + si];
      out.image.at(i, j) = std::clamp(acc, 0.0, 1.0);
    }
  }
  return out;
}

DatasetSplit build_environment_dataset(const EnvironmentSpec& spec, int n_base,
                                       int augment_factor, double split_fraction,
                                       std::uint64_t seed, const ImagingGrid& grid,
                                       const NominalParams& nominal,
                                       const PhantomParams& phantom_params, int threads) {
  validate(spec);
  if (n_base < 1) throw std::invalid_argument("build_environment_dataset: n_base must be >= 1");
  if (augment_factor < 1)
    throw std::invalid_argument("build_environment_dataset: augment_factor must be >= 1");
  if (split_fraction < 0.0 || split_fraction > 1.0)
    throw std::invalid_argument("build_environment_dataset: split_fraction must be in [0, 1]");

  // the LBP operator is always the nominal one; with zero geometric
  // uncertainty it doubles as the synthesis operator
  const SensorArray nominal_sensors =
      place_sensors(spec.n_detectors, nominal.radius, spec.coverage_deg, 0.0);
  const ForwardOperator nominal_op =
      build_system_matrix(grid, nominal_sensors, nominal.vs, nominal.n_t, nominal.dt);
  const bool shared_geometry = spec.deterministic_geometry();

  const int n_items = n_base * augment_factor;
  std::vector<Sample> samples(static_cast<std::size_t>(n_items));
  parallel_for(n_items, threads, [&](int idx) {
    const int base = idx / augment_factor;
    const int variant = idx % augment_factor;
    const std::uint64_t item = static_cast<std::uint64_t>(idx);

    Phantom ph = generate_vessel_phantom(
        grid, derive_seed(seed, kStreamPhantom, static_cast<std::uint64_t>(base)),
        phantom_params);
    if (variant != 0) ph = augment(ph, derive_seed(seed, kStreamAugment, item));

    Sample& s = samples[static_cast<std::size_t>(idx)];
    s.realization_seed = derive_seed(seed, kStreamRealize, item);
    const RealizedEnvironment env =
        realize_environment(spec, nominal.vs, nominal.radius, s.realization_seed);
    s.sinogram = synthesize_sinogram(ph.image, env, grid, nominal,
                                     derive_seed(seed, kStreamNoise, item),
                                     shared_geometry ? &nominal_op : nullptr);
    LbpImage lbp = lbp_reconstruct(nominal_op, s.sinogram);
    s.lbp = std::move(lbp.image);
    s.lbp_scale = lbp.scale;
    s.phantom = std::move(ph);
  });

  const int n_train_base = static_cast<int>(std::llround(n_base * split_fraction));
  DatasetSplit split;
  split.train.reserve(static_cast<std::size_t>(n_train_base) * augment_factor);
  split.validation.reserve(static_cast<std::size_t>(n_base - n_train_base) * augment_factor);
  for (int idx = 0; idx < n_items; ++idx) {
    auto& dst = (idx / augment_factor) < n_train_base ? split.train : split.validation;
    dst.push_back(std::move(samples[static_cast<std::size_t>(idx)]));
  }
  return split;
}

}  // namespace oat
