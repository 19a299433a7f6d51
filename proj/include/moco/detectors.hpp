#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "moco/kernels.hpp"
#include "moco/linalg.hpp"
#include "moco/parallel.hpp"
#include "moco/tensor.hpp"

namespace moco {

// ---------------------------------------------------------------------------
// Morphological white top-hat with a flat square structuring element.
// Borders replicate (window reads clamp to the frame).

namespace detail {

template <bool kMax>
inline Tensor sliding_extreme_1d(const Tensor& img, int se, bool horizontal) {
  const int64_t H = img.size(2), W = img.size(3);
  const int r = se / 2;
  Tensor out({1, 1, H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double m = img.at(0, 0, y, x);
      for (int d = -r; d <= r; ++d) {
        const int64_t yy = horizontal ? y : std::clamp<int64_t>(y + d, 0, H - 1);
        const int64_t xx = horizontal ? std::clamp<int64_t>(x + d, 0, W - 1) : x;
        const double v = img.at(0, 0, yy, xx);
        m = kMax ? std::max(m, v) : std::min(m, v);
      }
      out.at(0, 0, y, x) = m;
    }
  return out;
}

}  // namespace detail

inline Tensor erode(const Tensor& img, int se) {
  return detail::sliding_extreme_1d<false>(detail::sliding_extreme_1d<false>(img, se, true), se,
                                           false);
}

inline Tensor dilate(const Tensor& img, int se) {
  return detail::sliding_extreme_1d<true>(detail::sliding_extreme_1d<true>(img, se, true), se,
                                          false);
}

inline Tensor tophat(const Tensor& img, int se) {
  kernels::check_image(img, "tophat");
  check(img.size(0) == 1 && img.size(1) == 1, ErrorCode::ShapeMismatch,
        "tophat: expects [1,1,H,W]");
  check(se >= 3, ErrorCode::InvalidArgument, "tophat: structuring element must be >= 3");
  Tensor opened = dilate(erode(img, se), se);
  Tensor out({1, 1, img.size(2), img.size(3)});
  for (int64_t i = 0; i < img.numel(); ++i) out[i] = img[i] - opened[i];
  return out;
}

// ---------------------------------------------------------------------------
// Improved (mean-based) local contrast measure over a 3x3 grid of
// cell x cell cells. The window centre receives m0 * min_i(m0 / m_i);
// negative ratios floor at zero, denominators are epsilon-guarded.

inline Tensor ilcm(const Tensor& img, int cell) {
  kernels::check_image(img, "ilcm");
  check(img.size(0) == 1 && img.size(1) == 1, ErrorCode::ShapeMismatch, "ilcm: expects [1,1,H,W]");
  check(cell >= 3, ErrorCode::InvalidArgument, "ilcm: cell size must be >= 3");
  const int64_t H = img.size(2), W = img.size(3);
  check(H >= 3LL * cell && W >= 3LL * cell, ErrorCode::InvalidArgument,
        "ilcm: image smaller than the 3x3 cell window");
  const int64_t half = (3LL * cell - 1) / 2;
  const double area = static_cast<double>(cell) * cell;
  constexpr double kEps = 1e-10;

  Tensor out({1, 1, H, W});
  parallel_for(half, H - half, [&](int64_t lo, int64_t hi) {
    for (int64_t y = lo; y < hi; ++y)
      for (int64_t x = half; x < W - half; ++x) {
        double means[9];
        for (int cy = 0; cy < 3; ++cy)
          for (int cx = 0; cx < 3; ++cx) {
            const int64_t top = y - half + cy * cell;
            const int64_t left = x - half + cx * cell;
            double acc = 0.0;
            for (int64_t yy = top; yy < top + cell; ++yy)
              for (int64_t xx = left; xx < left + cell; ++xx) acc += img.at(0, 0, yy, xx);
            means[cy * 3 + cx] = acc / area;
          }
        const double m0 = means[4];
        double ratio = m0 / (means[0] + kEps);
        for (int i = 1; i < 9; ++i) {
          if (i == 4) continue;
          ratio = std::min(ratio, m0 / (means[i] + kEps));
        }
        out.at(0, 0, y, x) = ratio < 0.0 ? 0.0 : m0 * ratio;
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Infrared patch-image model: sliding-window patch matrix decomposed into a
// low-rank background plus sparse targets by inexact augmented Lagrange
// multipliers.

struct IpiParams {
  int block = 50;        // B: window side
  int stride = 10;       // S
  double weight = 1.0;   // L in lambda = L / sqrt(min(n1, n2, n3))
  double epsilon = 1e-7; // feasibility stop ||D-A-E||_F / ||D||_F
  int max_iter = 500;
  double rho = 1.5;      // mu growth

  void validate() const {
    check(block >= 2 && stride >= 1, ErrorCode::InvalidArgument, "ipi: bad block/stride");
    check(weight > 0 && epsilon > 0 && max_iter >= 1 && rho > 1.0, ErrorCode::InvalidArgument,
          "ipi: bad solver parameters");
  }
};

struct PatchImageModel {
  Tensor patch_matrix;  // D: [B^2, n3]
  Tensor low_rank;      // A
  Tensor sparse;        // E
  int block = 0;
  int stride = 0;
  std::vector<std::pair<int64_t, int64_t>> origins;  // (y, x) per window
  bool converged = false;
  double residual = 0.0;
  int iterations = 0;
};

struct DetectionCandidate {
  double x = 0, y = 0;   // intensity-weighted centroid
  double score = 0;      // component maximum
  int64_t area = 0;
};

struct DetectionResult {
  Tensor target_image;
  std::vector<DetectionCandidate> candidates;
};

namespace detail {

inline std::vector<int64_t> window_starts(int64_t extent, int block, int stride) {
  std::vector<int64_t> starts;
  for (int64_t s = 0; s + block <= extent; s += stride) starts.push_back(s);
  // Clamp a final window to the border so coverage is total.
  if (starts.empty() || starts.back() != extent - block) starts.push_back(extent - block);
  return starts;
}

}  // namespace detail

inline PatchImageModel unfold_patches(const Tensor& img, int block, int stride) {
  kernels::check_image(img, "ipi");
  const int64_t H = img.size(2), W = img.size(3);
  check(H >= block && W >= block, ErrorCode::InvalidArgument,
        "ipi: image smaller than one window");
  PatchImageModel model;
  model.block = block;
  model.stride = stride;
  const auto ys = detail::window_starts(H, block, stride);
  const auto xs = detail::window_starts(W, block, stride);
  for (int64_t y : ys)
    for (int64_t x : xs) model.origins.emplace_back(y, x);
  const int64_t n3 = static_cast<int64_t>(model.origins.size());
  model.patch_matrix = Tensor({static_cast<int64_t>(block) * block, n3});
  for (int64_t j = 0; j < n3; ++j) {
    const auto [oy, ox] = model.origins[static_cast<size_t>(j)];
    for (int64_t py = 0; py < block; ++py)
      for (int64_t px = 0; px < block; ++px)
        model.patch_matrix.at(py * block + px, j) = img.at(0, 0, oy + py, ox + px);
  }
  return model;
}

/// Folds a patch matrix back to image geometry, averaging overlaps.
inline Tensor fold_patches(const Tensor& matrix, const PatchImageModel& model, int64_t height,
                           int64_t width) {
  Tensor img({1, 1, height, width});
  Tensor counts({1, 1, height, width});
  const int block = model.block;
  for (size_t j = 0; j < model.origins.size(); ++j) {
    const auto [oy, ox] = model.origins[j];
    for (int64_t py = 0; py < block; ++py)
      for (int64_t px = 0; px < block; ++px) {
        img.at(0, 0, oy + py, ox + px) += matrix.at(py * block + px, static_cast<int64_t>(j));
        counts.at(0, 0, oy + py, ox + px) += 1.0;
      }
  }
  for (int64_t i = 0; i < img.numel(); ++i) img[i] /= counts[i];
  return img;
}

/// Robust PCA via inexact ALM: min ||A||_* + lambda ||E||_1  s.t.  D = A + E.
/// Alternates singular-value thresholding of (D - E + Y/mu) at 1/mu with
/// soft thresholding of (D - A + Y/mu) at lambda/mu; Y <- Y + mu (D - A - E),
/// mu <- rho mu. Stops when ||D-A-E||_F / ||D||_F <= epsilon.
inline void ialm_rpca(PatchImageModel& model, const IpiParams& params) {
  const Tensor& D = model.patch_matrix;
  const int64_t m = D.size(0), n = D.size(1);
  const double dnorm = frobenius_norm(D);
  if (dnorm == 0.0) {
    model.low_rank = Tensor::zeros({m, n});
    model.sparse = Tensor::zeros({m, n});
    model.converged = true;
    return;
  }
  const double lambda = params.weight / std::sqrt(static_cast<double>(std::min(m, n)));
  const double sigma2 = spectral_norm(D);
  const double dual = std::max(sigma2, D.max_abs() / lambda);

  Tensor Y = D;
  for (int64_t i = 0; i < Y.numel(); ++i) Y[i] /= dual;
  Tensor A = Tensor::zeros({m, n});
  Tensor E = Tensor::zeros({m, n});
  double mu = 1.25 / sigma2;

  Tensor work({m, n});
  for (int it = 1; it <= params.max_iter; ++it) {
    // A <- SVT_{1/mu}(D - E + Y/mu)
    for (int64_t i = 0; i < work.numel(); ++i) work[i] = D[i] - E[i] + Y[i] / mu;
    Svd s = svd(work);
    const double tau = 1.0 / mu;
    int64_t kept = 0;
    for (int64_t i = 0; i < s.sigma.numel(); ++i)
      if (s.sigma[i] > tau) ++kept;
    A.fill(0.0);
    if (kept > 0) {
      // A = U_kept * diag(sigma - tau) * V_kept^T
      for (int64_t i = 0; i < m; ++i)
        for (int64_t k = 0; k < kept; ++k) {
          const double us = s.u.at(i, k) * (s.sigma[k] - tau);
          if (us == 0.0) continue;
          double* arow = A.data() + i * n;
          for (int64_t j = 0; j < n; ++j) arow[j] += us * s.v.at(j, k);
        }
    }
    // E <- soft_{lambda/mu}(D - A + Y/mu)
    const double thr = lambda / mu;
    for (int64_t i = 0; i < E.numel(); ++i) {
      const double v = D[i] - A[i] + Y[i] / mu;
      E[i] = v > thr ? v - thr : (v < -thr ? v + thr : 0.0);
    }
    // Dual update and feasibility check.
    double znorm = 0.0;
    for (int64_t i = 0; i < Y.numel(); ++i) {
      const double z = D[i] - A[i] - E[i];
      Y[i] += mu * z;
      znorm += z * z;
    }
    mu *= params.rho;
    model.residual = std::sqrt(znorm) / dnorm;
    model.iterations = it;
    if (model.residual <= params.epsilon) {
      model.converged = true;
      break;
    }
  }
  model.low_rank = std::move(A);
  model.sparse = std::move(E);
}

/// Full IPI pipeline: unfold, decompose, fold the sparse part back.
/// Non-convergence at the iteration cap is reported through the model flag.
inline DetectionResult ipi(const Tensor& img, const IpiParams& params,
                           PatchImageModel* model_out = nullptr) {
  params.validate();
  PatchImageModel model = unfold_patches(img, params.block, params.stride);
  ialm_rpca(model, params);
  DetectionResult result;
  result.target_image = fold_patches(model.sparse, model, img.size(2), img.size(3));
  if (model_out) *model_out = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Threshold segmentation into 8-connected components.

inline std::vector<DetectionCandidate> segment(const Tensor& target_image, double threshold,
                                               int min_area = 1) {
  kernels::check_image(target_image, "segment");
  check(std::isfinite(threshold), ErrorCode::InvalidArgument, "segment: threshold must be finite");
  const int64_t H = target_image.size(2), W = target_image.size(3);
  std::vector<char> visited(static_cast<size_t>(H * W), 0);
  std::vector<DetectionCandidate> candidates;

  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      if (visited[static_cast<size_t>(y * W + x)] || target_image.at(0, 0, y, x) < threshold)
        continue;
      // Flood-fill one component.
      DetectionCandidate cand;
      double wx = 0, wy = 0, wsum = 0;
      std::deque<std::pair<int64_t, int64_t>> queue{{y, x}};
      visited[static_cast<size_t>(y * W + x)] = 1;
      while (!queue.empty()) {
        const auto [cy, cx] = queue.front();
        queue.pop_front();
        const double v = target_image.at(0, 0, cy, cx);
        cand.score = std::max(cand.score, v);
        ++cand.area;
        const double w = std::max(v, 0.0);
        wx += w * static_cast<double>(cx);
        wy += w * static_cast<double>(cy);
        wsum += w;
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const int64_t ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            if (visited[static_cast<size_t>(ny * W + nx)]) continue;
            if (target_image.at(0, 0, ny, nx) < threshold) continue;
            visited[static_cast<size_t>(ny * W + nx)] = 1;
            queue.emplace_back(ny, nx);
          }
      }
      if (cand.area < min_area) continue;
      if (wsum > 0) {
        cand.x = wx / wsum;
        cand.y = wy / wsum;
      } else {
        cand.x = static_cast<double>(x);
        cand.y = static_cast<double>(y);
      }
      candidates.push_back(cand);
    }

  std::sort(candidates.begin(), candidates.end(),
            [](const DetectionCandidate& a, const DetectionCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.y != b.y) return a.y < b.y;
              return a.x < b.x;
            });
  return candidates;
}

// ---------------------------------------------------------------------------
// Detector parameters: Table-like defaults plus the plain key = value file.

struct DetectorParams {
  int tophat_se = 5;
  int ilcm_cell = 5;
  IpiParams ipi;

  /// Published defaults for original-resolution imagery.
  static DetectorParams table_defaults() { return DetectorParams{}; }

  /// Scale-adjusted settings for 4x-downsampled imagery.
  static DetectorParams downsampled() {
    DetectorParams p;
    p.tophat_se = 3;
    p.ilcm_cell = 3;
    p.ipi.block = 15;
    p.ipi.stride = 3;
    return p;
  }

  /// Scale-adjusted settings for 4x-super-resolved imagery (sizes x4).
  static DetectorParams sr4() {
    DetectorParams p;
    p.tophat_se = 20;
    p.ilcm_cell = 20;
    p.ipi.block = 200;
    p.ipi.stride = 40;
    return p;
  }
};

inline DetectorParams load_detector_params(const std::string& path,
                                           DetectorParams base = DetectorParams::table_defaults()) {
  std::ifstream in(path);
  check(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      std::istringstream rest(line);
      std::string token;
      check(!(rest >> token), ErrorCode::ParseError,
            path + ":" + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "tophat.se")
        base.tophat_se = std::stoi(value);
      else if (key == "ilcm.cell")
        base.ilcm_cell = std::stoi(value);
      else if (key == "ipi.block")
        base.ipi.block = std::stoi(value);
      else if (key == "ipi.stride")
        base.ipi.stride = std::stoi(value);
      else if (key == "ipi.weight")
        base.ipi.weight = std::stod(value);
      else if (key == "ipi.epsilon")
        base.ipi.epsilon = std::stod(value);
      else if (key == "ipi.max_iter")
        base.ipi.max_iter = std::stoi(value);
      else
        throw Error(ErrorCode::ParseError,
                    path + ":" + std::to_string(lineno) + ": unknown key " + key);
    } catch (const std::invalid_argument&) {
      throw Error(ErrorCode::ParseError,
                  path + ":" + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  return base;
}

/// Runs one of the three detectors on a [0,1] frame. Inputs are rescaled to
/// [0,255] first so the published parameter magnitudes behave as in 8-bit
/// practice; the returned target image stays on that scale.
inline Tensor run_detector(const std::string& name, const Tensor& frame,
                           const DetectorParams& params) {
  Tensor scaled = frame;
  for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= 255.0;
  if (name == "tophat") return tophat(scaled, params.tophat_se);
  if (name == "ilcm") return ilcm(scaled, params.ilcm_cell);
  if (name == "ipi") return ipi(scaled, params.ipi).target_image;
  throw Error(ErrorCode::InvalidArgument, "unknown detector: " + name);
}

}  // namespace moco
