#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <tuple>
#include <vector>

#include "moco/data.hpp"
#include "moco/detectors.hpp"
#include "moco/tensor.hpp"

namespace moco {

constexpr double kMetricEps = 1e-10;

// ---------------------------------------------------------------------------
// PSNR / SSIM

/// 10 log10(peak^2 / MSE); +infinity when the images are identical.
inline double psnr(const Tensor& x, const Tensor& y, double peak = 1.0) {
  check_same_shape(x, y, "psnr");
  check(peak > 0.0, ErrorCode::InvalidArgument, "psnr: peak must be positive");
  double mse = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = x[i] - y[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// statistics over valid window positions via separable filtering.
inline double ssim(const Tensor& x, const Tensor& y, double peak = 1.0) {
  check_same_shape(x, y, "ssim");
  kernels::check_image(x, "ssim");
  constexpr int kWin = 11, kR = kWin / 2;
  const int64_t H = x.size(2), W = x.size(3);
  check(H >= kWin && W >= kWin, ErrorCode::InvalidArgument,
        "ssim: image smaller than the 11x11 window");

  double g[kWin];
  double gsum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kR;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  const int64_t Hv = H - 2 * kR, Wv = W - 2 * kR;
  auto filter = [&](auto&& value) {
    // horizontal then vertical pass over the valid region
    std::vector<double> tmp(static_cast<size_t>(H * Wv));
    for (int64_t yy = 0; yy < H; ++yy)
      for (int64_t xx = 0; xx < Wv; ++xx) {
        double acc = 0.0;
        for (int k = 0; k < kWin; ++k) acc += g[k] * value(yy, xx + k);
        tmp[static_cast<size_t>(yy * Wv + xx)] = acc;
      }
    std::vector<double> out(static_cast<size_t>(Hv * Wv));
    for (int64_t yy = 0; yy < Hv; ++yy)
      for (int64_t xx = 0; xx < Wv; ++xx) {
        double acc = 0.0;
        for (int k = 0; k < kWin; ++k) acc += g[k] * tmp[static_cast<size_t>((yy + k) * Wv + xx)];
        out[static_cast<size_t>(yy * Wv + xx)] = acc;
      }
    return out;
  };

  const int64_t B = x.size(0), C = x.size(1);
  double total = 0.0;
  int64_t count = 0;
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* xp = x.data() + bc * H * W;
    const double* yp = y.data() + bc * H * W;
    auto mu1 = filter([&](int64_t yy, int64_t xx) { return xp[yy * W + xx]; });
    auto mu2 = filter([&](int64_t yy, int64_t xx) { return yp[yy * W + xx]; });
    auto s11 = filter([&](int64_t yy, int64_t xx) { return xp[yy * W + xx] * xp[yy * W + xx]; });
    auto s22 = filter([&](int64_t yy, int64_t xx) { return yp[yy * W + xx] * yp[yy * W + xx]; });
    auto s12 = filter([&](int64_t yy, int64_t xx) { return xp[yy * W + xx] * yp[yy * W + xx]; });
    for (size_t i = 0; i < mu1.size(); ++i) {
      const double va = s11[i] - mu1[i] * mu1[i];
      const double vb = s22[i] - mu2[i] * mu2[i];
      const double cov = s12[i] - mu1[i] * mu2[i];
      total += ((2 * mu1[i] * mu2[i] + c1) * (2 * cov + c2)) /
               ((mu1[i] * mu1[i] + mu2[i] * mu2[i] + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Local background neighbourhood statistics (target box a x b, margin d).

struct NeighborhoodSpec {
  int a = 7;   // target extent along x (width)
  int b = 7;   // target extent along y (height)
  int d = 30;  // margin

  void validate() const {
    check(a >= 1 && b >= 1 && d >= 1, ErrorCode::InvalidArgument,
          "NeighborhoodSpec: extents and margin must be >= 1");
  }
};

struct NeighborhoodStats {
  double peak_target = 0;
  double peak_background = 0;
  double mean_target = 0;
  double mean_background = 0;
  double std_background = 0;
  int64_t target_pixels = 0;
  int64_t background_pixels = 0;
  bool clamped = false;  // neighbourhood clipped at an image border
};

inline NeighborhoodStats neighborhood_stats(const Tensor& img, const TargetAnnotation& ann,
                                            const NeighborhoodSpec& spec) {
  kernels::check_image(img, "neighborhood_stats");
  spec.validate();
  const int64_t H = img.size(2), W = img.size(3);
  const int64_t cx = std::llround(ann.x), cy = std::llround(ann.y);
  check(cx >= 0 && cx < W && cy >= 0 && cy < H, ErrorCode::OutOfBounds,
        "neighborhood_stats: annotation centroid outside the image");

  const int64_t tx0 = cx - (spec.a - 1) / 2, tx1 = tx0 + spec.a - 1;
  const int64_t ty0 = cy - (spec.b - 1) / 2, ty1 = ty0 + spec.b - 1;
  const int64_t bx0 = tx0 - spec.d, bx1 = tx1 + spec.d;
  const int64_t by0 = ty0 - spec.d, by1 = ty1 + spec.d;

  NeighborhoodStats stats;
  stats.clamped = tx0 < 0 || ty0 < 0 || tx1 >= W || ty1 >= H || bx0 < 0 || by0 < 0 ||
                  bx1 >= W || by1 >= H;

  const int64_t ctx0 = std::max<int64_t>(tx0, 0), ctx1 = std::min<int64_t>(tx1, W - 1);
  const int64_t cty0 = std::max<int64_t>(ty0, 0), cty1 = std::min<int64_t>(ty1, H - 1);
  double tsum = 0;
  for (int64_t y = cty0; y <= cty1; ++y)
    for (int64_t x = ctx0; x <= ctx1; ++x) {
      const double v = img.at(0, 0, y, x);
      stats.peak_target = stats.target_pixels == 0 ? v : std::max(stats.peak_target, v);
      tsum += v;
      ++stats.target_pixels;
    }
  check(stats.target_pixels > 0, ErrorCode::OutOfBounds,
        "neighborhood_stats: target box is empty after clamping");
  stats.mean_target = tsum / static_cast<double>(stats.target_pixels);

  double bsum = 0;
  const int64_t cbx0 = std::max<int64_t>(bx0, 0), cbx1 = std::min<int64_t>(bx1, W - 1);
  const int64_t cby0 = std::max<int64_t>(by0, 0), cby1 = std::min<int64_t>(by1, H - 1);
  for (int64_t y = cby0; y <= cby1; ++y)
    for (int64_t x = cbx0; x <= cbx1; ++x) {
      if (y >= cty0 && y <= cty1 && x >= ctx0 && x <= ctx1) continue;  // target box excluded
      const double v = img.at(0, 0, y, x);
      stats.peak_background =
          stats.background_pixels == 0 ? v : std::max(stats.peak_background, v);
      bsum += v;
      ++stats.background_pixels;
    }
  check(stats.background_pixels > 0, ErrorCode::OutOfBounds,
        "neighborhood_stats: background ring is empty after clamping");
  stats.mean_background = bsum / static_cast<double>(stats.background_pixels);
  double var = 0;
  for (int64_t y = cby0; y <= cby1; ++y)
    for (int64_t x = cbx0; x <= cbx1; ++x) {
      if (y >= cty0 && y <= cty1 && x >= ctx0 && x <= ctx1) continue;
      const double d = img.at(0, 0, y, x) - stats.mean_background;
      var += d * d;
    }
  stats.std_background = std::sqrt(var / static_cast<double>(stats.background_pixels));
  return stats;
}

inline double local_snr(const NeighborhoodStats& s) {
  return s.peak_target / (s.peak_background + kMetricEps);
}

inline double local_cr(const NeighborhoodStats& s) {
  return std::abs(s.mean_target - s.mean_background);
}

inline double local_scr(const NeighborhoodStats& s) {
  return std::abs(s.mean_target - s.mean_background) / (s.std_background + kMetricEps);
}

// ---------------------------------------------------------------------------
// Detection gain metrics: "in" on the LR image before super-resolution,
// "out" on the target image after detection.

struct DetectionGains {
  double snrg = 0;  // SNR_out / (SNR_in + eps)
  double bsf = 0;   // sigma_b_in / (sigma_b_out + eps)
  double scrg = 0;  // SCR_out / (SCR_in + eps)
  double cg = 0;    // CR_out / (CR_in + eps)
};

inline DetectionGains detection_gains(const NeighborhoodStats& in, const NeighborhoodStats& out) {
  DetectionGains g;
  g.snrg = local_snr(out) / (local_snr(in) + kMetricEps);
  g.bsf = in.std_background / (out.std_background + kMetricEps);
  g.scrg = local_scr(out) / (local_scr(in) + kMetricEps);
  g.cg = local_cr(out) / (local_cr(in) + kMetricEps);
  return g;
}

inline DetectionGains detection_gains(const Tensor& lr_img, const TargetAnnotation& lr_ann,
                                      const NeighborhoodSpec& lr_spec, const Tensor& target_img,
                                      const TargetAnnotation& hr_ann,
                                      const NeighborhoodSpec& hr_spec) {
  return detection_gains(neighborhood_stats(lr_img, lr_ann, lr_spec),
                         neighborhood_stats(target_img, hr_ann, hr_spec));
}

// ---------------------------------------------------------------------------
// Detection probability / false alarm rate over a descending threshold sweep.
// A candidate matches a ground-truth target when their distance is below tau;
// matching is greedy nearest-first with each side used at most once.

struct RocPoint {
  double threshold = 0;
  double fa = 0;  // false alarms per pixel
  double pd = 0;  // detection probability
};

struct RocCurve {
  std::vector<RocPoint> points;  // ordered by descending threshold
  int64_t total_targets = 0;
  int64_t total_pixels = 0;

  double auc_trapezoid() const {
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : points) pts.emplace_back(p.fa, p.pd);
    std::sort(pts.begin(), pts.end());
    double auc = 0.0;
    for (size_t i = 1; i < pts.size(); ++i)
      auc += 0.5 * (pts[i].second + pts[i - 1].second) * (pts[i].first - pts[i - 1].first);
    return auc;
  }
};

struct MatchCounts {
  int64_t true_detections = 0;
  int64_t false_detections = 0;
};

inline MatchCounts match_candidates(const std::vector<DetectionCandidate>& candidates,
                                    const std::vector<TargetAnnotation>& targets, double tau) {
  std::vector<std::tuple<double, size_t, size_t>> pairs;
  for (size_t c = 0; c < candidates.size(); ++c)
    for (size_t t = 0; t < targets.size(); ++t) {
      const double dx = candidates[c].x - targets[t].x;
      const double dy = candidates[c].y - targets[t].y;
      pairs.emplace_back(std::sqrt(dx * dx + dy * dy), c, t);
    }
  std::sort(pairs.begin(), pairs.end());
  std::vector<char> cand_used(candidates.size(), 0), target_used(targets.size(), 0);
  MatchCounts counts;
  for (const auto& [dist, c, t] : pairs) {
    if (dist >= tau || cand_used[c] || target_used[t]) continue;
    cand_used[c] = target_used[t] = 1;
    ++counts.true_detections;
  }
  counts.false_detections =
      static_cast<int64_t>(candidates.size()) - counts.true_detections;
  return counts;
}

inline RocCurve roc(const std::vector<Tensor>& target_images,
                    const std::vector<std::vector<TargetAnnotation>>& annotations, double tau,
                    const std::vector<double>& thresholds, int min_area = 1) {
  check(target_images.size() == annotations.size(), ErrorCode::ShapeMismatch,
        "roc: one annotation list per image required");
  check(!target_images.empty(), ErrorCode::EmptyDataset, "roc: no target images");
  check(!thresholds.empty(), ErrorCode::InvalidArgument, "roc: empty threshold sweep");
  for (size_t i = 1; i < thresholds.size(); ++i)
    check(thresholds[i] < thresholds[i - 1], ErrorCode::InvalidArgument,
          "roc: thresholds must be strictly descending");
  check(tau > 0.0, ErrorCode::InvalidArgument, "roc: tau must be positive");

  RocCurve curve;
  for (const auto& img : target_images) curve.total_pixels += img.size(2) * img.size(3);
  for (const auto& anns : annotations) curve.total_targets += static_cast<int64_t>(anns.size());

  for (double thr : thresholds) {
    int64_t td = 0, fd = 0;
    for (size_t i = 0; i < target_images.size(); ++i) {
      const auto candidates = segment(target_images[i], thr, min_area);
      const auto counts = match_candidates(candidates, annotations[i], tau);
      td += counts.true_detections;
      fd += counts.false_detections;
    }
    RocPoint p;
    p.threshold = thr;
    p.pd = curve.total_targets > 0 ? static_cast<double>(td) / curve.total_targets : 0.0;
    p.fa = static_cast<double>(fd) / static_cast<double>(curve.total_pixels);
    curve.points.push_back(p);
  }
  return curve;
}

inline void write_roc_csv(const RocCurve& curve, std::ostream& out) {
  out << "threshold,fa,pd\n";
  for (const auto& p : curve.points)
    out << p.threshold << "," << p.fa << "," << p.pd << "\n";
}

/// Evenly spaced descending sweep from the maximum down to `floor`.
inline std::vector<double> threshold_sweep(const std::vector<Tensor>& target_images, int steps,
                                           double floor = 0.0) {
  check(steps >= 2, ErrorCode::InvalidArgument, "threshold_sweep: need at least two steps");
  double top = floor;
  for (const auto& img : target_images)
    for (int64_t i = 0; i < img.numel(); ++i) top = std::max(top, img[i]);
  std::vector<double> sweep;
  for (int i = 0; i < steps; ++i)
    sweep.push_back(top - (top - floor) * static_cast<double>(i) / (steps - 1));
  // Guard against duplicate values on flat images.
  for (size_t i = 1; i < sweep.size(); ++i)
    if (sweep[i] >= sweep[i - 1]) sweep[i] = sweep[i - 1] - 1e-12;
  return sweep;
}

}  // namespace moco
