#pragma once

#include <vector>

namespace oat {

/// One second-order section, normalized so a0 = 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

/// Butterworth band-pass filter held as a cascade of second-order sections,
/// applied forward-backward for exactly zero phase distortion.
class ZeroPhaseBandpass {
 public:
  /// Designs an order-`order` Butterworth band-pass (bilinear transform with
  /// prewarped cutoffs); `order` counts the low-pass prototype poles, so the
  /// band-pass cascade has 2*order poles.
  static ZeroPhaseBandpass design(double f_lo_hz, double f_hi_hz, double fs_hz,
                                  int order = 4);

  /// Forward-backward application on one channel, in place. Edge transients
  /// are suppressed with odd extension and steady-state initial conditions.
  void filtfilt(std::vector<double>& x) const;

  /// Single forward pass (transient included); exposed for response tests.
  std::vector<double> filter(const std::vector<double>& x) const;

  const std::vector<Biquad>& sections() const { return sections_; }
  double gain() const { return gain_; }

 private:
  std::vector<Biquad> sections_;
  double gain_ = 1.0;  // applied once per pass
};

}  // namespace oat
