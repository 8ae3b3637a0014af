#include <cmath>
#include <numbers>
#include <vector>

#include <stdexcept>

#include "doctest.h"
#include "oat/signal.hpp"

using namespace oat;

namespace {

constexpr double kDt = 1e-8;  // 100 MHz sampling
constexpr int kN = 1024;

std::vector<double> tone(double freq_hz, int n = kN) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k)
    x[static_cast<std::size_t>(k)] = std::sin(2.0 * std::numbers::pi * freq_hz * k * kDt);
  return x;
}

double central_rms(const std::vector<double>& x) {
  const std::size_t lo = x.size() / 4;
  const std::size_t hi = 3 * x.size() / 4;
  double acc = 0.0;
  for (std::size_t i = lo; i < hi; ++i) acc += x[i] * x[i];
  return std::sqrt(acc / static_cast<double>(hi - lo));
}

}  // namespace

TEST_SUITE_BEGIN("signal");

TEST_CASE("DC is rejected almost exactly") {
  const auto filt = ZeroPhaseBandpass::design(0.1e6, 15e6, 1.0 / kDt);
  std::vector<double> x(kN, 1.0);
  const double energy_in = static_cast<double>(kN);
  filt.filtfilt(x);
  double energy_out = 0.0;
  for (double v : x) energy_out += v * v;
  CHECK(energy_out < 1e-6 * energy_in);
}

TEST_CASE("5 MHz passband tone keeps its amplitude within 5%") {
  const auto filt = ZeroPhaseBandpass::design(0.1e6, 15e6, 1.0 / kDt);
  auto x = tone(5e6);
  const double rms_in = central_rms(x);
  filt.filtfilt(x);
  CHECK(central_rms(x) / rms_in == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("40 MHz stopband tone is attenuated by at least 30 dB") {
  const auto filt = ZeroPhaseBandpass::design(0.1e6, 15e6, 1.0 / kDt);
  auto x = tone(40e6);
  const double rms_in = central_rms(x);
  filt.filtfilt(x);
  const double attenuation_db = 20.0 * std::log10(rms_in / (central_rms(x) + 1e-300));
  CHECK(attenuation_db >= 30.0);
}

TEST_CASE("zero-phase application preserves a symmetric pulse center") {
  const auto filt = ZeroPhaseBandpass::design(0.1e6, 15e6, 1.0 / kDt);
  const int n = kN + 1;  // odd length puts the pulse center on a sample
  const int center = n / 2;
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  for (int k = 0; k < n; ++k) {
    const double t = (k - center) * kDt;
    x[static_cast<std::size_t>(k)] = std::exp(-t * t / (2.0 * std::pow(40.0 * kDt, 2)));
  }
  filt.filtfilt(x);

  int argmax = 0;
  for (int k = 1; k < n; ++k)
    if (std::abs(x[static_cast<std::size_t>(k)]) > std::abs(x[static_cast<std::size_t>(argmax)]))
      argmax = k;
  CHECK(std::abs(argmax - center) <= 1);

  // the response stays even about the center
  double max_sym_err = 0.0;
  double max_abs = 0.0;
  for (int d = 0; d < 100; ++d) {
    max_sym_err = std::max(max_sym_err,
                           std::abs(x[static_cast<std::size_t>(center + d)] -
                                    x[static_cast<std::size_t>(center - d)]));
    max_abs = std::max(max_abs, std::abs(x[static_cast<std::size_t>(center + d)]));
  }
  CHECK(max_sym_err < 1e-6 * max_abs);
}

TEST_CASE("short signals are handled without reading out of bounds") {
  const auto filt = ZeroPhaseBandpass::design(0.1e6, 15e6, 1.0 / kDt);
  std::vector<double> x = {0.0, 1.0, 0.0, -1.0, 0.5};
  CHECK_NOTHROW(filt.filtfilt(x));
  CHECK(x.size() == 5);
}

TEST_CASE("design rejects cutoffs outside the Nyquist range") {
  CHECK_THROWS_AS(ZeroPhaseBandpass::design(0.0, 15e6, 1e8), std::invalid_argument);
  CHECK_THROWS_AS(ZeroPhaseBandpass::design(1e5, 5e7, 1e8), std::invalid_argument);
  CHECK_THROWS_AS(ZeroPhaseBandpass::design(15e6, 1e5, 1e8), std::invalid_argument);
  CHECK_NOTHROW(ZeroPhaseBandpass::design(1e5, 15e6, 1e8));
}

TEST_CASE("cascade carries the expected section count") {
  const auto filt = ZeroPhaseBandpass::design(0.1e6, 15e6, 1e8, 4);
  CHECK(filt.sections().size() == 4);  // 8 poles as biquads
  const auto odd = ZeroPhaseBandpass::design(0.1e6, 15e6, 1e8, 3);
  CHECK(odd.sections().size() == 3);
}

TEST_SUITE_END();
