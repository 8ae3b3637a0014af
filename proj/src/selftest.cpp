#include "oat/selftest.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "oat/metrics.hpp"
#include "oat/network.hpp"
#include "oat/rng.hpp"
#include "oat/training.hpp"

namespace oat {

double adjoint_defect(const ForwardOperator& op, int n_pairs, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int pair = 0; pair < n_pairs; ++pair) {
    Image x(op.grid.nx, op.grid.ny);
    for (double& v : x.data) v = rng.gaussian();
    Sinogram y(op.n_d, op.n_t, op.dt);
    for (double& v : y.data) v = rng.gaussian();

    const Sinogram ax = apply_forward(op, x);
    const Image aty = apply_adjoint(op, y);

    double lhs = 0.0, rhs = 0.0, norm_ax = 0.0, norm_y = 0.0;
    for (std::size_t i = 0; i < ax.size(); ++i) {
      lhs += ax.data[i] * y.data[i];
      norm_ax += ax.data[i] * ax.data[i];
      norm_y += y.data[i] * y.data[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * aty.data[i];
    const double defect =
        std::abs(lhs - rhs) / (std::sqrt(norm_ax) * std::sqrt(norm_y) + 1e-300);
    worst = std::max(worst, defect);
  }
  return worst;
}

namespace {

CheckResult check_adjoint(std::uint64_t seed) {
  const ImagingGrid grid = build_grid(32, 32, 120e-6, 120e-6);
  const SensorArray sensors = place_sensors(8, 0.01, 360.0, 0.0);
  const ForwardOperator op = build_system_matrix(grid, sensors, 1490.0, 256, 2e-8);
  const double defect = adjoint_defect(op, 20, seed);
  std::ostringstream detail;
  detail << "max relative defect " << defect << " (tolerance 1e-12)";
  return {"adjoint-identity", defect < 1e-12, detail.str()};
}

CheckResult check_single_pixel_oracle(std::uint64_t seed) {
  const ImagingGrid grid = build_grid(24, 24, 120e-6, 120e-6);
  const double vs = 1490.0;
  const double dt = 2e-8;
  const int n_t = 512;
  Rng rng(seed);
  bool pass = true;
  std::ostringstream detail;
  for (int trial = 0; trial < 50 && pass; ++trial) {
    const int i = rng.uniform_int(0, grid.nx - 1);
    const int j = rng.uniform_int(0, grid.ny - 1);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const SensorArray sensor =
        place_sensors(1, 0.01, 360.0, angle * 180.0 / std::numbers::pi);
    const ForwardOperator op = build_system_matrix(grid, sensor, vs, n_t, dt);

    const Vec2 rd = sensor.positions.front();
    const Vec2 rj = grid.pixel_center(i, j);
    const double dist = std::hypot(rd.x - rj.x, rd.y - rj.y);
    const auto k_expect = static_cast<std::int64_t>(std::llround(dist / (vs * dt)));
    const double amp_expect = 1.0 / (4.0 * std::numbers::pi * vs * vs) *
                              grid.cell_volume() / (dt * dt) / dist;

    // inspect the shell matrix column for this pixel
    const int col = grid.linear_index(i, j);
    std::int64_t k_found = -1;
    double amp_found = 0.0;
    for (int row = 0; row < op.shell.outerSize(); ++row)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(op.shell, row); it;
           ++it)
        if (it.col() == col) {
          k_found = row;
          amp_found = it.value();
        }
    if (k_found != k_expect || std::abs(amp_found - amp_expect) > 1e-12 * amp_expect) {
      pass = false;
      detail << "pixel (" << i << "," << j << "): bin " << k_found << " vs " << k_expect
             << ", amp " << amp_found << " vs " << amp_expect;
    }
  }
  if (pass) detail << "50 random pixel/sensor pairs match the closed form";
  return {"single-pixel-forward-oracle", pass, detail.str()};
}

CheckResult check_gradients(std::uint64_t seed, int threads) {
  NetworkConfig cfg;
  cfg.n_scales = 2;
  cfg.base_channels = 4;
  cfg.dense_growth_rate = 2;
  cfg.dense_layers_per_block = 1;
  cfg.input_size = 16;

  ParameterSet params = init_network(cfg, seed);
  Rng rng(derive_seed(seed, 0xC1));
  std::vector<Tensor> batch(2, Tensor(1, 16, 16));
  for (auto& t : batch)
    for (double& v : t.v) v = rng.gaussian();
  // targets near the network output keep the difference quotient accurate
  std::vector<Tensor> target = predict(params, cfg, batch, threads);
  for (auto& t : target)
    for (double& v : t.v) v += 0.05 * rng.gaussian();

  auto loss_at = [&](const ParameterSet& p) {
    const auto pred = predict(p, cfg, batch, threads);
    return mse_loss(pred, target).value;
  };

  auto fwd = forward(params, cfg, batch, true, threads);
  auto loss = mse_loss(fwd.outputs, target);
  const GradientSet analytic = backward(fwd.tape, loss.grad, threads);

  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto p = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(params.values.size()) - 1));
    ParameterSet perturbed = params;
    perturbed.values[p] += h;
    const double up = loss_at(perturbed);
    perturbed.values[p] -= 2.0 * h;
    const double down = loss_at(perturbed);
    const double fd = (up - down) / (2.0 * h);
    const double rel =
        std::abs(analytic.values[p] - fd) / std::max({std::abs(fd), std::abs(analytic.values[p]), 1e-8});
    worst = std::max(worst, rel);
  }
  std::ostringstream detail;
  detail << "max relative error " << worst << " over 40 parameters (tolerance 1e-5)";
  return {"gradient-finite-difference", worst < 1e-5, detail.str()};
}

CheckResult check_mask_oracle() {
  // d = 5: enumerate every sign pattern and compare against a brute-force
  // evaluation of the agreement rule at tau values spanning all regimes
  const int d = 5;
  bool pass = true;
  std::ostringstream detail;
  for (double tau : {0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 1.0}) {
    for (int pattern = 0; pattern < (1 << d) && pass; ++pattern) {
      std::vector<GradientSet> grads(d);
      int sign_sum = 0;
      double sum = 0.0;
      for (int e = 0; e < d; ++e) {
        const double g = (pattern >> e & 1) ? 1.0 + e : -1.0 - e;
        grads[static_cast<std::size_t>(e)].values = {g};
        sign_sum += g > 0.0 ? 1 : -1;
        sum += g;
      }
      const GradientSet out = andmask_aggregate(grads, tau);
      const double expected = tau * d <= std::abs(sign_sum) ? sum / d : 0.0;
      if (out.values[0] != expected) {
        pass = false;
        detail << "tau " << tau << " pattern " << pattern << ": got " << out.values[0]
               << ", oracle says " << expected;
      }
    }
  }
  if (pass) detail << "all 2^5 sign patterns match at 9 tau values";
  return {"andmask-exhaustive-oracle", pass, detail.str()};
}

CheckResult check_tau_zero(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradientSet> grads(4);
  const std::size_t n = 257;
  for (auto& g : grads) {
    g.values.resize(n);
    for (double& v : g.values) v = rng.gaussian();
  }
  const GradientSet out = andmask_aggregate(grads, 0.0);
  double worst = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double mean = 0.0;
    for (const auto& g : grads) mean += g.values[j];
    mean /= static_cast<double>(grads.size());
    worst = std::max(worst, std::abs(out.values[j] - mean));
  }
  std::ostringstream detail;
  detail << "max deviation from plain mean " << worst;
  return {"andmask-tau-zero-mean", worst < 1e-12, detail.str()};
}

CheckResult check_snr(std::uint64_t seed) {
  Sinogram s(32, 4096, 1e-8);
  Rng rng(seed);
  for (std::size_t i = 0; i < s.size(); ++i)
    s.data[i] = std::sin(0.01 * static_cast<double>(i)) + 0.2 * rng.gaussian();
  bool pass = true;
  std::ostringstream detail;
  for (double snr_db : {40.0, 50.0, 60.0}) {
    const Sinogram noisy = add_noise(s, snr_db, derive_seed(seed, 0xC2,
                                                            static_cast<std::uint64_t>(snr_db)));
    double p_sig = 0.0, p_noise = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      p_sig += s.data[i] * s.data[i];
      const double nz = noisy.data[i] - s.data[i];
      p_noise += nz * nz;
    }
    const double realized = 10.0 * std::log10(p_sig / p_noise);
    detail << snr_db << "->" << realized << " dB  ";
    if (std::abs(realized - snr_db) > 0.5) pass = false;
  }
  return {"snr-calibration", pass, detail.str()};
}

CheckResult check_metric_sanity(std::uint64_t seed) {
  Rng rng(seed);
  Image x(32, 32), y(32, 32);
  for (double& v : x.data) v = rng.uniform();
  for (double& v : y.data) v = rng.uniform();

  bool pass = true;
  std::ostringstream detail;
  if (std::abs(ssim(x, x) - 1.0) > 1e-12) {
    pass = false;
    detail << "ssim(x,x) != 1; ";
  }
  if (rmse(x, x) != 0.0) {
    pass = false;
    detail << "rmse(x,x) != 0; ";
  }
  Image affine = x;
  for (double& v : affine.data) v = 3.0 * v + 0.25;
  if (std::abs(pearson_correlation(x, affine) - 1.0) > 1e-12) {
    pass = false;
    detail << "PC not affine-invariant; ";
  }
  // PSNR must decrease monotonically in RMSE
  Image y_far = y;
  for (std::size_t i = 0; i < y_far.data.size(); ++i)
    y_far.data[i] = x.data[i] + 2.0 * (y.data[i] - x.data[i]);
  if (!(rmse(x, y_far) > rmse(x, y)) || !(psnr(x, y_far) < psnr(x, y))) {
    pass = false;
    detail << "PSNR/RMSE ordering broken; ";
  }
  if (pass) detail << "identity, affine and ordering relations hold";
  return {"metric-sanity", pass, detail.str()};
}

CheckResult check_bandpass() {
  const double dt = 1e-8;
  const int n_t = 1024;
  Sinogram dc(1, n_t, dt);
  for (double& v : dc.data) v = 1.0;
  const Sinogram dc_out = bandpass_filter(dc, 1e5, 1.5e7);
  double e_in = 0.0, e_out = 0.0;
  for (std::size_t i = 0; i < dc.size(); ++i) {
    e_in += dc.data[i] * dc.data[i];
    e_out += dc_out.data[i] * dc_out.data[i];
  }
  const bool dc_ok = e_out < 1e-6 * e_in;

  Sinogram tone(1, n_t, dt);
  for (int k = 0; k < n_t; ++k)
    tone.data[static_cast<std::size_t>(k)] = std::sin(2.0 * std::numbers::pi * 5e6 * k * dt);
  const Sinogram tone_out = bandpass_filter(tone, 1e5, 1.5e7);
  double rms_in = 0.0, rms_out = 0.0;
  for (int k = n_t / 4; k < 3 * n_t / 4; ++k) {
    rms_in += tone.data[static_cast<std::size_t>(k)] * tone.data[static_cast<std::size_t>(k)];
    rms_out +=
        tone_out.data[static_cast<std::size_t>(k)] * tone_out.data[static_cast<std::size_t>(k)];
  }
  const double ratio = std::sqrt(rms_out / rms_in);
  const bool passband_ok = std::abs(ratio - 1.0) < 0.05;

  std::ostringstream detail;
  detail << "DC energy ratio " << e_out / e_in << ", 5 MHz amplitude ratio " << ratio;
  return {"bandpass-response", dc_ok && passband_ok, detail.str()};
}

}  // namespace

std::vector<CheckResult> run_selftest(int threads) {
  const std::uint64_t seed = 0x5e1f7e57;
  std::vector<CheckResult> results;
  results.push_back(check_adjoint(derive_seed(seed, 1)));
  results.push_back(check_single_pixel_oracle(derive_seed(seed, 2)));
  results.push_back(check_gradients(derive_seed(seed, 3), threads));
  results.push_back(check_mask_oracle());
  results.push_back(check_tau_zero(derive_seed(seed, 4)));
  results.push_back(check_snr(derive_seed(seed, 5)));
  results.push_back(check_metric_sanity(derive_seed(seed, 6)));
  results.push_back(check_bandpass());
  return results;
}

}  // namespace oat
