#include "rgbdprior/metrics.hpp"

#include <cmath>

using nlohmann::json;

namespace rgbdprior::eval {

double psnr(const Tensor3f& a, const Tensor3f& b) {
  check(a.c == b.c && a.h == b.h && a.w == b.w, "psnr: image shapes disagree");
  const double mse = (a.data.cast<double>() - b.data.cast<double>()).square().mean();
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWindow = 11;

Eigen::ArrayXXd grayscale(const Tensor3f& img) {
  Eigen::ArrayXXd g = Eigen::ArrayXXd::Zero(img.h, img.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) g(y, x) += img.at(c, y, x);
  return g / double(img.c);
}

// Separable valid-mode Gaussian filter; output is (H-10) x (W-10).
Eigen::ArrayXXd gauss_valid(const Eigen::ArrayXXd& img,
                            const Eigen::Array<double, kWindow, 1>& k) {
  const Eigen::Index h = img.rows(), w = img.cols();
  Eigen::ArrayXXd rows(h, w - kWindow + 1);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x + kWindow <= w; ++x)
      rows(y, x) = (img.row(y).segment<kWindow>(x).transpose() * k).sum();
  Eigen::ArrayXXd out(h - kWindow + 1, w - kWindow + 1);
  for (Eigen::Index x = 0; x < out.cols(); ++x)
    for (Eigen::Index y = 0; y + kWindow <= h; ++y)
      out(y, x) = (rows.col(x).segment<kWindow>(y) * k).sum();
  return out;
}

}  // namespace

double ssim(const Tensor3f& a, const Tensor3f& b) {
  check(a.c == b.c && a.h == b.h && a.w == b.w, "ssim: image shapes disagree");
  check(a.h >= kWindow && a.w >= kWindow,
        "ssim: images smaller than the 11x11 window");

  Eigen::Array<double, kWindow, 1> k;
  const double sigma = 1.5;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - (kWindow - 1) / 2.0;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  k /= k.sum();

  const Eigen::ArrayXXd ga = grayscale(a), gb = grayscale(b);
  const Eigen::ArrayXXd mu_a = gauss_valid(ga, k), mu_b = gauss_valid(gb, k);
  const Eigen::ArrayXXd var_a = gauss_valid(ga * ga, k) - mu_a * mu_a;
  const Eigen::ArrayXXd var_b = gauss_valid(gb * gb, k) - mu_b * mu_b;
  const Eigen::ArrayXXd cov = gauss_valid(ga * gb, k) - mu_a * mu_b;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // dynamic range 1
  const Eigen::ArrayXXd num = (2 * mu_a * mu_b + c1) * (2 * cov + c2);
  const Eigen::ArrayXXd den =
      (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
  return (num / den).mean();
}

AverageMetric average_metric(double psnr_db, double ssim_value,
                             std::optional<double> lpips) {
  check(ssim_value <= 1.0, "average_metric: ssim above 1");
  const double p = std::pow(10.0, -psnr_db / 10.0);
  const double s = std::sqrt(1.0 - ssim_value);
  if (lpips) return {std::cbrt(p * s * *lpips), false};
  return {std::sqrt(p * s), true};
}

MetricReport make_report(std::vector<ViewMetrics> views) {
  check(!views.empty(), "metric report needs at least one view");
  MetricReport rep;
  rep.views = std::move(views);
  double lp = 0;
  bool all_lpips = true;
  for (const auto& v : rep.views) {
    rep.psnr += v.psnr;
    rep.ssim += v.ssim;
    if (v.lpips) lp += *v.lpips; else all_lpips = false;
  }
  const double n = double(rep.views.size());
  rep.psnr /= n;
  rep.ssim /= n;
  if (all_lpips) rep.lpips = lp / n;
  const AverageMetric avg = average_metric(rep.psnr, rep.ssim, rep.lpips);
  rep.average = avg.value;
  rep.partial = avg.partial;
  return rep;
}

json MetricReport::to_json() const {
  json rows = json::array();
  for (const auto& v : views) {
    json row = {{"view", v.view}, {"psnr", v.psnr}, {"ssim", v.ssim}};
    if (v.lpips) row["lpips"] = *v.lpips;
    rows.push_back(row);
  }
  json out = {{"psnr", psnr},       {"ssim", ssim},
              {"average", average}, {"partial", partial},
              {"views", rows}};
  if (lpips) out["lpips"] = *lpips;
  if (chamfer_l1) out["chamfer_l1"] = *chamfer_l1;
  return out;
}

}  // namespace rgbdprior::eval
