#include "oat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "oat/training.hpp"

namespace oat {

namespace {

void check_same_shape(const Image& a, const Image& b, const char* who) {
  if (a.nx != b.nx || a.ny != b.ny)
    throw std::invalid_argument(std::string(who) + ": image shape mismatch");
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
constexpr double kRange = 1.0;

const std::vector<double>& gaussian_window() {
  static const std::vector<double> window = [] {
    std::vector<double> w(kWindow * kWindow);
    const int half = kWindow / 2;
    double sum = 0.0;
    for (int j = 0; j < kWindow; ++j)
      for (int i = 0; i < kWindow; ++i) {
        const double r2 = (i - half) * (i - half) + (j - half) * (j - half);
        w[static_cast<std::size_t>(j) * kWindow + i] = std::exp(-r2 / (2.0 * kSigma * kSigma));
        sum += w[static_cast<std::size_t>(j) * kWindow + i];
      }
    for (double& v : w) v /= sum;
    return w;
  }();
  return window;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  check_same_shape(a, b, "ssim");
  if (a.nx < kWindow || a.ny < kWindow)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  const auto& w = gaussian_window();
  const double c1 = (kK1 * kRange) * (kK1 * kRange);
  const double c2 = (kK2 * kRange) * (kK2 * kRange);

  double total = 0.0;
  std::size_t count = 0;
  for (int j0 = 0; j0 + kWindow <= a.ny; ++j0) {
    for (int i0 = 0; i0 + kWindow <= a.nx; ++i0) {
      double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
      for (int j = 0; j < kWindow; ++j) {
        for (int i = 0; i < kWindow; ++i) {
          const double wv = w[static_cast<std::size_t>(j) * kWindow + i];
          const double va = a.at(i0 + i, j0 + j);
          const double vb = b.at(i0 + i, j0 + j);
          mu_a += wv * va;
          mu_b += wv * vb;
          aa += wv * va * va;
          bb += wv * vb * vb;
          ab += wv * va * vb;
        }
      }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double pearson_correlation(const Image& a, const Image& b) {
  check_same_shape(a, b, "pearson_correlation");
  const auto n = static_cast<double>(a.size());
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mean_a += a.data[i];
    mean_b += b.data[i];
  }
  mean_a /= n;
  mean_b /= n;
  double var_a = 0.0, var_b = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.data[i] - mean_a;
    const double db = b.data[i] - mean_b;
    var_a += da * da;
    var_b += db * db;
    cov += da * db;
  }
  if (var_a == 0.0 || var_b == 0.0)
    throw std::invalid_argument("pearson_correlation: constant input, correlation undefined");
  return cov / std::sqrt(var_a * var_b);
}

double rmse(const Image& a, const Image& b) {
  check_same_shape(a, b, "rmse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

double psnr(const Image& a, const Image& b) {
  const double r = rmse(a, b);
  if (r == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / (r * r));
}

double environment_risk(const ParameterSet& params, const NetworkConfig& net_config,
                        const std::vector<Sample>& test_pairs, int threads) {
  if (test_pairs.empty()) throw std::invalid_argument("environment_risk: empty test set");
  constexpr std::size_t kChunk = 8;
  double total = 0.0;
  for (std::size_t at = 0; at < test_pairs.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, test_pairs.size() - at);
    std::vector<Tensor> in, tgt;
    in.reserve(n);
    tgt.reserve(n);
    for (std::size_t i = at; i < at + n; ++i) {
      in.push_back(sample_input(test_pairs[i]));
      tgt.push_back(sample_target(test_pairs[i]));
    }
    const auto pred = predict(params, net_config, in, threads);
    total += mse_loss(pred, tgt).value * static_cast<double>(n);
  }
  return total / static_cast<double>(test_pairs.size());
}

double ood_risk(const ParameterSet& params, const NetworkConfig& net_config,
                const std::vector<std::vector<Sample>>& env_test_sets, int threads) {
  if (env_test_sets.empty()) throw std::invalid_argument("ood_risk: no environments");
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& pairs : env_test_sets)
    worst = std::max(worst, environment_risk(params, net_config, pairs, threads));
  return worst;
}

MetricStats aggregate(const std::vector<double>& values) {
  MetricStats stats;
  if (values.empty()) return stats;
  for (double v : values) stats.mean += v;
  stats.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - stats.mean) * (v - stats.mean);
    stats.stddev = std::sqrt(acc / static_cast<double>(values.size() - 1));
  }
  return stats;
}

namespace {

std::string fmt_full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string to_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "environment,algorithm,n_images,ssim_mean,ssim_std,pc_mean,pc_std,"
         "rmse_mean,rmse_std,psnr_mean,psnr_std,ood_risk\n";
  for (const auto& r : report.rows) {
    out << r.environment << ',' << r.algorithm << ',' << r.n_images << ','
        << fmt_full(r.ssim.mean) << ',' << fmt_full(r.ssim.stddev) << ','
        << fmt_full(r.pc.mean) << ',' << fmt_full(r.pc.stddev) << ','
        << fmt_full(r.rmse.mean) << ',' << fmt_full(r.rmse.stddev) << ','
        << fmt_full(r.psnr.mean) << ',' << fmt_full(r.psnr.stddev) << ',';
    if (r.ood_risk) out << fmt_full(*r.ood_risk);
    out << '\n';
  }
  return out.str();
}

MetricsReport from_csv(const std::string& csv) {
  MetricsReport report;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    cells.resize(12);
    ReportRow row;
    row.environment = cells[0];
    row.algorithm = cells[1];
    row.n_images = std::stoi(cells[2]);
    row.ssim = {std::stod(cells[3]), std::stod(cells[4])};
    row.pc = {std::stod(cells[5]), std::stod(cells[6])};
    row.rmse = {std::stod(cells[7]), std::stod(cells[8])};
    row.psnr = {std::stod(cells[9]), std::stod(cells[10])};
    if (!cells[11].empty()) row.ood_risk = std::stod(cells[11]);
    report.rows.push_back(row);
  }
  return report;
}

std::string to_markdown(const MetricsReport& report) {
  std::ostringstream out;
  out << "| Environment | Algorithm | SSIM | PC | RMSE | PSNR |\n";
  out << "|---|---|---|---|---|---|\n";
  for (const auto& r : report.rows) {
    out << "| " << r.environment << " | " << r.algorithm << " | "
        << fmt_short(r.ssim.mean) << " ± " << fmt_short(r.ssim.stddev) << " | "
        << fmt_short(r.pc.mean) << " ± " << fmt_short(r.pc.stddev) << " | "
        << fmt_short(r.rmse.mean) << " ± " << fmt_short(r.rmse.stddev) << " | "
        << fmt_short(r.psnr.mean) << " ± " << fmt_short(r.psnr.stddev) << " |\n";
  }
  return out.str();
}

}  // namespace oat
