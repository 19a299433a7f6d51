#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "moco/parallel.hpp"
#include "moco/tensor.hpp"

// Plain tensor kernels. The autograd layer wires these into the tape;
// inference-only callers can use them directly.

namespace moco::kernels {

inline void check_image(const Tensor& t, const char* where) {
  check(t.dim() == 4, ErrorCode::ShapeMismatch,
        std::string(where) + ": expected a 4-D [B,C,H,W] tensor, got " + t.shape_str());
}

// --------------------------------------------------------------------------
// 2-D convolution (cross-correlation), stride 1, zero padding.
// x: [B,Cin,H,W], w: [Cout,Cin,k,k], bias: [Cout] or empty.
// Output spatial size: H + 2*padding - dilation*(k-1).

inline Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& bias,
                         int padding, int dilation = 1) {
  check_image(x, "conv2d");
  check(w.dim() == 4, ErrorCode::ShapeMismatch, "conv2d: weight must be 4-D");
  check(w.size(2) == w.size(3), ErrorCode::InvalidArgument, "conv2d: kernel must be square");
  check(w.size(2) % 2 == 1, ErrorCode::InvalidArgument, "conv2d: kernel size must be odd");
  check(x.size(1) == w.size(1), ErrorCode::ShapeMismatch,
        "conv2d: input channels " + std::to_string(x.size(1)) +
            " do not match weight channels " + std::to_string(w.size(1)));
  check(dilation >= 1 && padding >= 0, ErrorCode::InvalidArgument, "conv2d: bad padding/dilation");
  const int64_t B = x.size(0), Cin = x.size(1), H = x.size(2), W = x.size(3);
  const int64_t Cout = w.size(0), k = w.size(2);
  if (!bias.empty())
    check(bias.numel() == Cout, ErrorCode::ShapeMismatch, "conv2d: bias size mismatch");
  const int64_t Ho = H + 2 * padding - static_cast<int64_t>(dilation) * (k - 1);
  const int64_t Wo = W + 2 * padding - static_cast<int64_t>(dilation) * (k - 1);
  check(Ho >= 1 && Wo >= 1, ErrorCode::InvalidArgument, "conv2d: output would be empty");

  Tensor out({B, Cout, Ho, Wo});
  const double* xp = x.data();
  const double* wp = w.data();
  double* op = out.data();

  parallel_for(0, B * Cout, [&](int64_t lo, int64_t hi) {
    for (int64_t bc = lo; bc < hi; ++bc) {
      const int64_t b = bc / Cout, co = bc % Cout;
      double* oplane = op + bc * Ho * Wo;
      const double bval = bias.empty() ? 0.0 : bias[co];
      std::fill(oplane, oplane + Ho * Wo, bval);
      for (int64_t ci = 0; ci < Cin; ++ci) {
        const double* xplane = xp + (b * Cin + ci) * H * W;
        const double* wplane = wp + (co * Cin + ci) * k * k;
        for (int64_t ky = 0; ky < k; ++ky) {
          for (int64_t kx = 0; kx < k; ++kx) {
            const double wv = wplane[ky * k + kx];
            if (wv == 0.0) continue;
            const int64_t oy0 = std::max<int64_t>(0, padding - ky * dilation);
            const int64_t oy1 = std::min<int64_t>(Ho - 1, H - 1 + padding - ky * dilation);
            const int64_t ox0 = std::max<int64_t>(0, padding - kx * dilation);
            const int64_t ox1 = std::min<int64_t>(Wo - 1, W - 1 + padding - kx * dilation);
            for (int64_t oy = oy0; oy <= oy1; ++oy) {
              const int64_t iy = oy - padding + ky * dilation;
              const double* xrow = xplane + iy * W + (ox0 - padding + kx * dilation);
              double* orow = oplane + oy * Wo + ox0;
              const int64_t len = ox1 - ox0 + 1;
              for (int64_t i = 0; i < len; ++i) orow[i] += wv * xrow[i];
            }
          }
        }
      }
    }
  });
  return out;
}

inline Tensor conv2d_bwd_input(const Tensor& grad_out, const Tensor& w,
                               const std::vector<int64_t>& x_shape, int padding, int dilation) {
  const int64_t B = x_shape[0], Cin = x_shape[1], H = x_shape[2], W = x_shape[3];
  const int64_t Cout = w.size(0), k = w.size(2);
  const int64_t Ho = grad_out.size(2), Wo = grad_out.size(3);
  Tensor gx(x_shape);
  const double* gp = grad_out.data();
  const double* wp = w.data();
  double* gxp = gx.data();

  parallel_for(0, B * Cin, [&](int64_t lo, int64_t hi) {
    for (int64_t bc = lo; bc < hi; ++bc) {
      const int64_t b = bc / Cin, ci = bc % Cin;
      double* gxplane = gxp + bc * H * W;
      for (int64_t co = 0; co < Cout; ++co) {
        const double* gplane = gp + (b * Cout + co) * Ho * Wo;
        const double* wplane = wp + (co * Cin + ci) * k * k;
        for (int64_t ky = 0; ky < k; ++ky) {
          for (int64_t kx = 0; kx < k; ++kx) {
            const double wv = wplane[ky * k + kx];
            if (wv == 0.0) continue;
            const int64_t oy0 = std::max<int64_t>(0, padding - ky * dilation);
            const int64_t oy1 = std::min<int64_t>(Ho - 1, H - 1 + padding - ky * dilation);
            const int64_t ox0 = std::max<int64_t>(0, padding - kx * dilation);
            const int64_t ox1 = std::min<int64_t>(Wo - 1, W - 1 + padding - kx * dilation);
            for (int64_t oy = oy0; oy <= oy1; ++oy) {
              const int64_t iy = oy - padding + ky * dilation;
              double* gxrow = gxplane + iy * W + (ox0 - padding + kx * dilation);
              const double* grow = gplane + oy * Wo + ox0;
              const int64_t len = ox1 - ox0 + 1;
              for (int64_t i = 0; i < len; ++i) gxrow[i] += wv * grow[i];
            }
          }
        }
      }
    }
  });
  return gx;
}

inline Tensor conv2d_bwd_weight(const Tensor& grad_out, const Tensor& x,
                                const std::vector<int64_t>& w_shape, int padding, int dilation) {
  const int64_t B = x.size(0), Cin = x.size(1), H = x.size(2), W = x.size(3);
  const int64_t Cout = w_shape[0], k = w_shape[2];
  const int64_t Ho = grad_out.size(2), Wo = grad_out.size(3);
  Tensor gw(w_shape);
  const double* gp = grad_out.data();
  const double* xp = x.data();
  double* gwp = gw.data();

  parallel_for(0, Cout * Cin, [&](int64_t lo, int64_t hi) {
    for (int64_t cc = lo; cc < hi; ++cc) {
      const int64_t co = cc / Cin, ci = cc % Cin;
      double* gwplane = gwp + cc * k * k;
      for (int64_t ky = 0; ky < k; ++ky) {
        for (int64_t kx = 0; kx < k; ++kx) {
          const int64_t oy0 = std::max<int64_t>(0, padding - ky * dilation);
          const int64_t oy1 = std::min<int64_t>(Ho - 1, H - 1 + padding - ky * dilation);
          const int64_t ox0 = std::max<int64_t>(0, padding - kx * dilation);
          const int64_t ox1 = std::min<int64_t>(Wo - 1, W - 1 + padding - kx * dilation);
          double acc = 0.0;
          for (int64_t b = 0; b < B; ++b) {
            const double* gplane = gp + (b * Cout + co) * Ho * Wo;
            const double* xplane = xp + (b * Cin + ci) * H * W;
            for (int64_t oy = oy0; oy <= oy1; ++oy) {
              const int64_t iy = oy - padding + ky * dilation;
              const double* xrow = xplane + iy * W + (ox0 - padding + kx * dilation);
              const double* grow = gplane + oy * Wo + ox0;
              const int64_t len = ox1 - ox0 + 1;
              for (int64_t i = 0; i < len; ++i) acc += grow[i] * xrow[i];
            }
          }
          gwplane[ky * k + kx] = acc;
        }
      }
    }
  });
  return gw;
}

inline Tensor conv2d_bwd_bias(const Tensor& grad_out) {
  const int64_t B = grad_out.size(0), Cout = grad_out.size(1);
  const int64_t plane = grad_out.size(2) * grad_out.size(3);
  Tensor gb({Cout});
  const double* gp = grad_out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Cout; ++co) {
      const double* gplane = gp + (b * Cout + co) * plane;
      double acc = 0.0;
      for (int64_t i = 0; i < plane; ++i) acc += gplane[i];
      gb[co] += acc;
    }
  return gb;
}

// --------------------------------------------------------------------------
// Bilinear sampling. Out-of-grid reads are zero-valued virtual pixels.

inline double bilinear_at(const double* plane, int64_t H, int64_t W, double sy, double sx) {
  const int64_t y0 = static_cast<int64_t>(std::floor(sy));
  const int64_t x0 = static_cast<int64_t>(std::floor(sx));
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  auto read = [&](int64_t y, int64_t x) -> double {
    return (y >= 0 && y < H && x >= 0 && x < W) ? plane[y * W + x] : 0.0;
  };
  const double v00 = read(y0, x0), v01 = read(y0, x0 + 1);
  const double v10 = read(y0 + 1, x0), v11 = read(y0 + 1, x0 + 1);
  return v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) +
         v11 * fy * fx;
}

inline void bilinear_scatter(double* plane, int64_t H, int64_t W, double sy, double sx, double g) {
  const int64_t y0 = static_cast<int64_t>(std::floor(sy));
  const int64_t x0 = static_cast<int64_t>(std::floor(sx));
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  auto put = [&](int64_t y, int64_t x, double v) {
    if (y >= 0 && y < H && x >= 0 && x < W) plane[y * W + x] += v;
  };
  put(y0, x0, g * (1.0 - fy) * (1.0 - fx));
  put(y0, x0 + 1, g * (1.0 - fy) * fx);
  put(y0 + 1, x0, g * fy * (1.0 - fx));
  put(y0 + 1, x0 + 1, g * fy * fx);
}

/// Samples each (y,x) coordinate in every [b,c] plane; output is [B,C,N].
inline Tensor bilinear_sample_fwd(const Tensor& x,
                                  const std::vector<std::array<double, 2>>& coords) {
  check_image(x, "bilinear_sample");
  check(!coords.empty(), ErrorCode::InvalidArgument, "bilinear_sample: no coordinates");
  const int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const int64_t N = static_cast<int64_t>(coords.size());
  Tensor out({B, C, N});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = x.data() + bc * H * W;
    double* orow = out.data() + bc * N;
    for (int64_t n = 0; n < N; ++n) orow[n] = bilinear_at(plane, H, W, coords[n][0], coords[n][1]);
  }
  return out;
}

inline Tensor bilinear_sample_bwd(const Tensor& grad_out, const std::vector<int64_t>& x_shape,
                                  const std::vector<std::array<double, 2>>& coords) {
  Tensor gx(x_shape);
  const int64_t B = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
  const int64_t N = static_cast<int64_t>(coords.size());
  for (int64_t bc = 0; bc < B * C; ++bc) {
    double* plane = gx.data() + bc * H * W;
    const double* grow = grad_out.data() + bc * N;
    for (int64_t n = 0; n < N; ++n)
      bilinear_scatter(plane, H, W, coords[n][0], coords[n][1], grow[n]);
  }
  return gx;
}

// --------------------------------------------------------------------------
// Uniform translation gather: out(y,x) = in(y+dy, x+dx), zero outside.
// Integer shifts copy rows; fractional shifts blend four neighbours.

inline Tensor translate_fwd(const Tensor& x, double dy, double dx) {
  check_image(x, "translate");
  const int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  Tensor out({B, C, H, W});
  const bool integral = (dy == std::floor(dy)) && (dx == std::floor(dx));
  parallel_for(0, B * C, [&](int64_t lo, int64_t hi) {
    for (int64_t bc = lo; bc < hi; ++bc) {
      const double* plane = x.data() + bc * H * W;
      double* oplane = out.data() + bc * H * W;
      if (integral) {
        const int64_t iy = static_cast<int64_t>(dy), ix = static_cast<int64_t>(dx);
        for (int64_t y = 0; y < H; ++y) {
          const int64_t sy = y + iy;
          if (sy < 0 || sy >= H) continue;
          const int64_t x0 = std::max<int64_t>(0, -ix);
          const int64_t x1 = std::min<int64_t>(W - 1, W - 1 - ix);
          const double* srow = plane + sy * W + (x0 + ix);
          double* orow = oplane + y * W + x0;
          for (int64_t i = 0; i <= x1 - x0; ++i) orow[i] = srow[i];
        }
      } else {
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x2 = 0; x2 < W; ++x2)
            oplane[y * W + x2] = bilinear_at(plane, H, W, y + dy, x2 + dx);
      }
    }
  });
  return out;
}

inline Tensor translate_bwd(const Tensor& grad_out, double dy, double dx) {
  const int64_t B = grad_out.size(0), C = grad_out.size(1);
  const int64_t H = grad_out.size(2), W = grad_out.size(3);
  Tensor gx({B, C, H, W});
  const bool integral = (dy == std::floor(dy)) && (dx == std::floor(dx));
  parallel_for(0, B * C, [&](int64_t lo, int64_t hi) {
    for (int64_t bc = lo; bc < hi; ++bc) {
      const double* gplane = grad_out.data() + bc * H * W;
      double* gxplane = gx.data() + bc * H * W;
      if (integral) {
        const int64_t iy = static_cast<int64_t>(dy), ix = static_cast<int64_t>(dx);
        for (int64_t y = 0; y < H; ++y) {
          const int64_t sy = y + iy;
          if (sy < 0 || sy >= H) continue;
          const int64_t x0 = std::max<int64_t>(0, -ix);
          const int64_t x1 = std::min<int64_t>(W - 1, W - 1 - ix);
          double* grow = gxplane + sy * W + (x0 + ix);
          const double* orow = gplane + y * W + x0;
          for (int64_t i = 0; i <= x1 - x0; ++i) grow[i] += orow[i];
        }
      } else {
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x2 = 0; x2 < W; ++x2)
            bilinear_scatter(gxplane, H, W, y + dy, x2 + dx, gplane[y * W + x2]);
      }
    }
  });
  return gx;
}

// --------------------------------------------------------------------------
// Softmax along one axis, max-subtracted.

inline Tensor softmax_fwd(const Tensor& x, int axis) {
  check(axis >= 0 && axis < x.dim(), ErrorCode::InvalidArgument, "softmax: axis out of range");
  const auto& shape = x.shape();
  int64_t n = shape[axis];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < x.dim(); ++i) inner *= shape[i];
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  Tensor out(shape);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double m = x[base];
      for (int64_t j = 1; j < n; ++j) m = std::max(m, x[base + j * inner]);
      double z = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        double e = std::exp(x[base + j * inner] - m);
        out[base + j * inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (int64_t j = 0; j < n; ++j) out[base + j * inner] *= inv;
    }
  }
  return out;
}

inline Tensor softmax_bwd(const Tensor& grad_out, const Tensor& y, int axis) {
  const auto& shape = y.shape();
  int64_t n = shape[axis];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < y.dim(); ++i) inner *= shape[i];
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  Tensor gx(shape);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += grad_out[base + j * inner] * y[base + j * inner];
      for (int64_t j = 0; j < n; ++j)
        gx[base + j * inner] = y[base + j * inner] * (grad_out[base + j * inner] - dot);
    }
  }
  return gx;
}

// --------------------------------------------------------------------------
// Depth-to-space rearrangement: [B, C*r*r, H, W] -> [B, C, H*r, W*r].

inline Tensor pixel_shuffle_fwd(const Tensor& x, int r) {
  check_image(x, "pixel_shuffle");
  check(r >= 1, ErrorCode::InvalidArgument, "pixel_shuffle: factor must be >= 1");
  const int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  check(C % (static_cast<int64_t>(r) * r) == 0, ErrorCode::ShapeMismatch,
        "pixel_shuffle: channels not divisible by r^2");
  const int64_t Co = C / (static_cast<int64_t>(r) * r);
  Tensor out({B, Co, H * r, W * r});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t dy = 0; dy < r; ++dy)
        for (int64_t dx = 0; dx < r; ++dx) {
          const int64_t ci = (co * r + dy) * r + dx;
          const double* plane = x.data() + ((b * C + ci) * H) * W;
          for (int64_t y = 0; y < H; ++y) {
            const double* srow = plane + y * W;
            double* drow = out.data() +
                           (((b * Co + co) * (H * r) + (y * r + dy)) * (W * r)) + dx;
            for (int64_t xx = 0; xx < W; ++xx) drow[xx * r] = srow[xx];
          }
        }
  return out;
}

inline Tensor pixel_shuffle_bwd(const Tensor& grad_out, int r, const std::vector<int64_t>& x_shape) {
  const int64_t B = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
  const int64_t Co = C / (static_cast<int64_t>(r) * r);
  Tensor gx(x_shape);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t dy = 0; dy < r; ++dy)
        for (int64_t dx = 0; dx < r; ++dx) {
          const int64_t ci = (co * r + dy) * r + dx;
          double* plane = gx.data() + ((b * C + ci) * H) * W;
          for (int64_t y = 0; y < H; ++y) {
            double* drow = plane + y * W;
            const double* srow = grad_out.data() +
                                 (((b * Co + co) * (H * r) + (y * r + dy)) * (W * r)) + dx;
            for (int64_t xx = 0; xx < W; ++xx) drow[xx] = srow[xx * r];
          }
        }
  return gx;
}

}  // namespace moco::kernels
