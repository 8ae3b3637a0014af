#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oat/forward_model.hpp"
#include "oat/network.hpp"
#include "oat/phantom.hpp"

namespace oat {

/// Mean structural similarity with the canonical defaults: 11x11 Gaussian
/// window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range L = 1. Inputs may
/// lie outside [0,1] (back-projections do); the map is averaged over windows
/// that fit entirely inside the image.
double ssim(const Image& a, const Image& b);

/// Normalized covariance over all pixels; both images must be non-constant.
double pearson_correlation(const Image& a, const Image& b);

double rmse(const Image& a, const Image& b);

/// 10*log10(1 / mse) with peak 1 on the normalized scale; identical images
/// report +infinity.
double psnr(const Image& a, const Image& b);

/// Mean per-example squared-norm loss of the network over test pairs.
double environment_risk(const ParameterSet& params, const NetworkConfig& net_config,
                        const std::vector<Sample>& test_pairs, int threads = 1);

/// Worst-case environment risk over the given per-environment test sets.
double ood_risk(const ParameterSet& params, const NetworkConfig& net_config,
                const std::vector<std::vector<Sample>>& env_test_sets, int threads = 1);

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;
};

MetricStats aggregate(const std::vector<double>& values);

struct ReportRow {
  std::string environment;
  std::string algorithm;
  MetricStats ssim;
  MetricStats pc;
  MetricStats rmse;
  MetricStats psnr;
  int n_images = 0;
  std::optional<double> ood_risk;  // populated for trained models only
};

struct MetricsReport {
  std::vector<ReportRow> rows;
};

/// Lossless CSV (full double precision; empty cell for an absent OOD risk).
std::string to_csv(const MetricsReport& report);
MetricsReport from_csv(const std::string& csv);

/// Display table, one row per environment x algorithm.
std::string to_markdown(const MetricsReport& report);

}  // namespace oat
