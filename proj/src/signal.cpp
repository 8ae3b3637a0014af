#include "oat/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

namespace oat {

namespace {

using cplx = std::complex<double>;

// steady-state filter state for a unit-step input (direct form II transposed)
void steady_state_zi(const Biquad& s, double& zi1, double& zi2) {
  const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  zi1 = dc - s.b0;
  zi2 = s.b2 - s.a2 * dc;
}

void run_section(const Biquad& s, std::vector<double>& x, double x0) {
  double zi1, zi2;
  steady_state_zi(s, zi1, zi2);
  double z1 = zi1 * x0;
  double z2 = zi2 * x0;
  for (double& v : x) {
    const double in = v;
    const double out = s.b0 * in + z1;
    z1 = s.b1 * in - s.a1 * out + z2;
    z2 = s.b2 * in - s.a2 * out;
    v = out;
  }
}

void run_cascade(const std::vector<Biquad>& sections, double gain, std::vector<double>& x) {
  if (x.empty()) return;
  for (double& v : x) v *= gain;
  for (const auto& s : sections) run_section(s, x, x.front());
}

}  // namespace

ZeroPhaseBandpass ZeroPhaseBandpass::design(double f_lo_hz, double f_hi_hz, double fs_hz,
                                            int order) {
  if (fs_hz <= 0.0) throw std::invalid_argument("bandpass design: sampling rate must be positive");
  if (order < 1) throw std::invalid_argument("bandpass design: order must be >= 1");
  if (!(f_lo_hz > 0.0 && f_lo_hz < f_hi_hz && f_hi_hz < 0.5 * fs_hz))
    throw std::invalid_argument(
        "bandpass design: cutoffs must satisfy 0 < f_lo < f_hi < fs/2");

  // prewarped analog band edges
  const double fs2 = 2.0 * fs_hz;
  const double w_lo = fs2 * std::tan(std::numbers::pi * f_lo_hz / fs_hz);
  const double w_hi = fs2 * std::tan(std::numbers::pi * f_hi_hz / fs_hz);
  const double w0_sq = w_lo * w_hi;
  const double bw = w_hi - w_lo;

  // analog low-pass prototype poles on the unit circle, then the band-pass
  // substitution s -> (s^2 + w0^2)/(bw*s); each prototype pole yields two
  // band-pass poles, conjugate pairs collapse to one biquad each
  ZeroPhaseBandpass f;
  auto add_pole = [&](const cplx& s_pole) {
    const cplx z = (fs2 + s_pole) / (fs2 - s_pole);  // bilinear map
    Biquad biq;
    biq.b0 = 1.0;
    biq.b1 = 0.0;
    biq.b2 = -1.0;  // one zero at z=+1 and one at z=-1 per section
    biq.a1 = -2.0 * z.real();
    biq.a2 = std::norm(z);
    f.sections_.push_back(biq);
  };
  auto add_real_pair = [&](double z1, double z2) {
    Biquad biq;
    biq.b0 = 1.0;
    biq.b1 = 0.0;
    biq.b2 = -1.0;
    biq.a1 = -(z1 + z2);
    biq.a2 = z1 * z2;
    f.sections_.push_back(biq);
  };

  for (int k = 0; k < order; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + 1.0) / (2.0 * order) +
                         std::numbers::pi / 2.0;
    const cplx proto(std::cos(theta), std::sin(theta));
    if (proto.imag() < -1e-12) continue;  // conjugates are handled implicitly

    const cplx pb = proto * bw;
    const cplx disc = std::sqrt(pb * pb - 4.0 * w0_sq);
    const cplx s1 = 0.5 * (pb + disc);
    const cplx s2 = 0.5 * (pb - disc);
    if (proto.imag() > 1e-12) {
      add_pole(s1);
      add_pole(s2);
    } else {
      // real prototype pole (odd order): its two band-pass roots are either a
      // conjugate pair or two real poles; both cases fill exactly one biquad
      if (std::abs(s1.imag()) > 1e-12) {
        add_pole(s1);
      } else {
        const cplx z1 = (fs2 + s1) / (fs2 - s1);
        const cplx z2 = (fs2 + s2) / (fs2 - s2);
        add_real_pair(z1.real(), z2.real());
      }
    }
  }

  // normalize to unit gain at the (warped) center frequency
  const double wc = 2.0 * std::atan(std::sqrt(w0_sq) / fs2);
  const cplx zc = std::polar(1.0, wc);
  const cplx zc1 = 1.0 / zc;
  const cplx zc2 = zc1 * zc1;
  cplx h(1.0, 0.0);
  for (const auto& s : f.sections_)
    h *= (s.b0 + s.b1 * zc1 + s.b2 * zc2) / (1.0 + s.a1 * zc1 + s.a2 * zc2);
  f.gain_ = 1.0 / std::abs(h);
  return f;
}

std::vector<double> ZeroPhaseBandpass::filter(const std::vector<double>& x) const {
  std::vector<double> y = x;
  run_cascade(sections_, gain_, y);
  return y;
}

namespace {

// slowest pole radius decides how long edge transients ring
double max_pole_radius(const std::vector<Biquad>& sections) {
  double worst = 0.0;
  for (const auto& s : sections) {
    const double disc = s.a1 * s.a1 - 4.0 * s.a2;
    if (disc < 0.0) {
      worst = std::max(worst, std::sqrt(s.a2));
    } else {
      const double r = std::sqrt(disc);
      worst = std::max({worst, std::abs((-s.a1 + r) / 2.0), std::abs((-s.a1 - r) / 2.0)});
    }
  }
  return worst;
}

}  // namespace

void ZeroPhaseBandpass::filtfilt(std::vector<double>& x) const {
  const std::size_t n = x.size();
  if (n < 2) return;

  // pad until the edge transient has decayed below ~1e-6 of its amplitude
  const double radius = std::min(max_pole_radius(sections_), 1.0 - 1e-9);
  const auto pad = static_cast<std::size_t>(
      std::min(14.0 / (1.0 - radius) + 1.0, 1.0e6));

  // mirror tiling of the signal, so the extension can outlast the ringing
  const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n) - 2;
  auto mirrored = [&](std::ptrdiff_t i) {
    std::ptrdiff_t j = ((i % period) + period) % period;
    if (j >= static_cast<std::ptrdiff_t>(n)) j = period - j;
    return x[static_cast<std::size_t>(j)];
  };

  // both pads fade in/out with a half-cosine, so each pass starts and ends in
  // the exact zero steady state
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    const double w =
        0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(i) /
                              static_cast<double>(pad)));
    ext[i] = w * mirrored(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(pad));
    ext[n + 2 * pad - 1 - i] =
        w * mirrored(static_cast<std::ptrdiff_t>(n) - 1 + static_cast<std::ptrdiff_t>(pad) -
                     static_cast<std::ptrdiff_t>(i));
  }
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));

  run_cascade(sections_, gain_, ext);
  std::reverse(ext.begin(), ext.end());
  run_cascade(sections_, gain_, ext);
  std::reverse(ext.begin(), ext.end());

  std::copy(ext.begin() + static_cast<std::ptrdiff_t>(pad),
            ext.begin() + static_cast<std::ptrdiff_t>(pad + n), x.begin());
}

}  // namespace oat
