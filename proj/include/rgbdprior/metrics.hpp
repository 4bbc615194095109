#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "rgbdprior/common.hpp"
#include "rgbdprior/tensor.hpp"

namespace rgbdprior::eval {

// Reported instead of +inf for a zero-MSE image pair.
inline constexpr double kPsnrCap = 99.0;

// Peak signal-to-noise ratio in dB for images with values in [0,1].
double psnr(const Tensor3f& a, const Tensor3f& b);

// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5),
// computed on the channel-mean grayscale image, valid-window region only.
double ssim(const Tensor3f& a, const Tensor3f& b);

struct AverageMetric {
  double value = 0;
  bool partial = false;  // true when the perceptual component was unavailable
};

// Geometric-mean composite of 10^(-psnr/10), sqrt(1-ssim) and lpips.
// Without lpips the composite is the square root of the remaining product.
AverageMetric average_metric(double psnr_db, double ssim_value,
                             std::optional<double> lpips = {});

struct ViewMetrics {
  int view = 0;
  double psnr = 0;
  double ssim = 0;
  std::optional<double> lpips;
};

struct MetricReport {
  std::vector<ViewMetrics> views;
  double psnr = 0;  // means over views
  double ssim = 0;
  std::optional<double> lpips;
  double average = 0;
  bool partial = true;
  std::optional<double> chamfer_l1;

  nlohmann::json to_json() const;
};

// Aggregates per-view rows into means and the composite score. The lpips mean
// is formed only when every view carries a value.
MetricReport make_report(std::vector<ViewMetrics> views);

}  // namespace rgbdprior::eval
