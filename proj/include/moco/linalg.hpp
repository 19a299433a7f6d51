#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "moco/parallel.hpp"
#include "moco/tensor.hpp"

namespace moco {

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.dim() == 2 && b.dim() == 2, ErrorCode::ShapeMismatch, "matmul: need 2-D tensors");
  check(a.size(1) == b.size(0), ErrorCode::ShapeMismatch, "matmul: inner dimensions differ");
  const int64_t m = a.size(0), k = a.size(1), n = b.size(1);
  Tensor c({m, n});
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  parallel_for(0, m, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      double* crow = cp + i * n;
      for (int64_t l = 0; l < k; ++l) {
        const double av = ap[i * k + l];
        if (av == 0.0) continue;
        const double* brow = bp + l * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }, 8);
  return c;
}

inline Tensor transpose(const Tensor& a) {
  check(a.dim() == 2, ErrorCode::ShapeMismatch, "transpose: need a 2-D tensor");
  const int64_t m = a.size(0), n = a.size(1);
  Tensor t({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

inline double frobenius_norm(const Tensor& a) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a[i] * a[i];
  return std::sqrt(acc);
}

/// Largest singular value by power iteration on A^T A. Deterministic start.
inline double spectral_norm(const Tensor& a, int iters = 100, double tol = 1e-12) {
  check(a.dim() == 2, ErrorCode::ShapeMismatch, "spectral_norm: need a 2-D tensor");
  const int64_t m = a.size(0), n = a.size(1);
  std::vector<double> v(static_cast<size_t>(n), 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> av(static_cast<size_t>(m));
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    for (int64_t i = 0; i < m; ++i) {
      const double* row = a.data() + i * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += row[j] * v[static_cast<size_t>(j)];
      av[static_cast<size_t>(i)] = acc;
    }
    std::vector<double> w(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < m; ++i) {
      const double* row = a.data() + i * n;
      const double f = av[static_cast<size_t>(i)];
      for (int64_t j = 0; j < n; ++j) w[static_cast<size_t>(j)] += row[j] * f;
    }
    double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
    if (norm == 0.0) return 0.0;
    for (auto& x : w) x /= norm;
    const double next = std::sqrt(norm);
    if (std::abs(next - sigma) <= tol * std::max(1.0, next)) {
      sigma = next;
      break;
    }
    sigma = next;
    v = std::move(w);
  }
  return sigma;
}

struct Svd {
  Tensor u;        // [m, k]
  Tensor sigma;    // [k], non-negative, non-increasing
  Tensor v;        // [n, k]
};

namespace detail {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// rotations accumulated in `vecs` (columns are eigenvectors) and leaves the
/// eigenvalues on the diagonal of `g`.
inline void jacobi_eigen(Tensor& g, Tensor& vecs, int max_sweeps, double tol) {
  const int64_t n = g.size(0);
  vecs = Tensor({n, n});
  for (int64_t i = 0; i < n; ++i) vecs.at(i, i) = 1.0;
  double fro = frobenius_norm(g);
  if (fro == 0.0) return;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) off += 2.0 * g.at(p, q) * g.at(p, q);
    if (std::sqrt(off) <= tol * fro) return;

    for (int64_t p = 0; p < n - 1; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        const double apq = g.at(p, q);
        if (apq == 0.0) continue;
        const double app = g.at(p, p), aqq = g.at(q, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        double* gp = g.data() + p * n;
        double* gq = g.data() + q * n;
        for (int64_t i = 0; i < n; ++i) {
          const double gip = gp[i], giq = gq[i];
          gp[i] = c * gip - s * giq;
          gq[i] = s * gip + c * giq;
        }
        for (int64_t i = 0; i < n; ++i) {
          const double gpi = g.at(i, p), gqi = g.at(i, q);
          g.at(i, p) = c * gpi - s * gqi;
          g.at(i, q) = s * gpi + c * gqi;
        }
        double* vp0 = vecs.data();
        for (int64_t i = 0; i < n; ++i) {
          const double vip = vp0[i * n + p], viq = vp0[i * n + q];
          vp0[i * n + p] = c * vip - s * viq;
          vp0[i * n + q] = s * vip + c * viq;
        }
      }
    }
  }
  double off = 0.0;
  for (int64_t p = 0; p < n; ++p)
    for (int64_t q = p + 1; q < n; ++q) off += 2.0 * g.at(p, q) * g.at(p, q);
  if (std::sqrt(off) > tol * fro * 10.0)
    throw Error(ErrorCode::NoConvergence,
                "jacobi_eigen: off-diagonal residual " + std::to_string(std::sqrt(off) / fro) +
                    " after " + std::to_string(max_sweeps) + " sweeps");
}

}  // namespace detail

/// Thin SVD, A = U diag(S) V^T. Eigendecomposes the Gram matrix on the
/// smaller side, then recovers the long-side factors; singular values are
/// refined as |A v_i| which keeps the reconstruction residual tight.
inline Svd svd(const Tensor& a, int max_sweeps = 60, double tol = 1e-14) {
  check(a.dim() == 2, ErrorCode::ShapeMismatch, "svd: need a 2-D tensor");
  check(a.all_finite(), ErrorCode::InvalidArgument, "svd: non-finite entries");
  const int64_t m = a.size(0), n = a.size(1);
  if (m < n) {
    Svd s = svd(transpose(a), max_sweeps, tol);
    return Svd{std::move(s.v), std::move(s.sigma), std::move(s.u)};
  }

  // m >= n: G = A^T A is n x n.
  Tensor at = transpose(a);
  Tensor g = matmul(at, a);
  Tensor vecs;
  detail::jacobi_eigen(g, vecs, max_sweeps, tol);

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t i, int64_t j) { return g.at(i, i) > g.at(j, j); });

  Svd out;
  out.u = Tensor({m, n});
  out.sigma = Tensor({n});
  out.v = Tensor({n, n});

  double sigma_max = 0.0;
  for (int64_t rank = 0; rank < n; ++rank) {
    const int64_t src = order[static_cast<size_t>(rank)];
    for (int64_t i = 0; i < n; ++i) out.v.at(i, rank) = vecs.at(i, src);
    // z = A v, sigma = |z|
    double norm2 = 0.0;
    for (int64_t i = 0; i < m; ++i) {
      const double* row = a.data() + i * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += row[j] * out.v.at(j, rank);
      out.u.at(i, rank) = acc;
      norm2 += acc * acc;
    }
    const double s = std::sqrt(norm2);
    out.sigma[rank] = s;
    sigma_max = std::max(sigma_max, s);
    if (s > sigma_max * 1e-13 && s > 0.0) {
      const double inv = 1.0 / s;
      for (int64_t i = 0; i < m; ++i) out.u.at(i, rank) *= inv;
    } else {
      out.sigma[rank] = 0.0;
      // Deterministic orthonormal completion from canonical basis vectors.
      bool built = false;
      for (int64_t cand = 0; cand < m && !built; ++cand) {
        std::vector<double> u(static_cast<size_t>(m), 0.0);
        u[static_cast<size_t>(cand)] = 1.0;
        for (int64_t j = 0; j < rank; ++j) {
          double dot = 0.0;
          for (int64_t i = 0; i < m; ++i) dot += u[static_cast<size_t>(i)] * out.u.at(i, j);
          for (int64_t i = 0; i < m; ++i) u[static_cast<size_t>(i)] -= dot * out.u.at(i, j);
        }
        double norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
        if (norm > 1e-6) {
          for (int64_t i = 0; i < m; ++i) out.u.at(i, rank) = u[static_cast<size_t>(i)] / norm;
          built = true;
        }
      }
    }
  }

  // Refinement can perturb near-ties; restore the non-increasing contract.
  for (int64_t i = 1; i < n; ++i) {
    if (out.sigma[i] > out.sigma[i - 1]) {
      for (int64_t j = i; j > 0 && out.sigma[j] > out.sigma[j - 1]; --j) {
        std::swap(out.sigma[j], out.sigma[j - 1]);
        for (int64_t r = 0; r < m; ++r) std::swap(out.u.at(r, j), out.u.at(r, j - 1));
        for (int64_t r = 0; r < n; ++r) std::swap(out.v.at(r, j), out.v.at(r, j - 1));
      }
    }
  }
  return out;
}

/// || A - U S V^T ||_F / ||A||_F
inline double svd_residual(const Tensor& a, const Svd& s) {
  const int64_t m = a.size(0), n = a.size(1), k = s.sigma.numel();
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double rec = 0.0;
      for (int64_t l = 0; l < k; ++l) rec += s.u.at(i, l) * s.sigma[l] * s.v.at(j, l);
      const double d = a.at(i, j) - rec;
      num += d * d;
      den += a.at(i, j) * a.at(i, j);
    }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

inline double orthogonality_residual(const Tensor& u) {
  const int64_t m = u.size(0), k = u.size(1);
  double acc = 0.0;
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (int64_t r = 0; r < m; ++r) dot += u.at(r, i) * u.at(r, j);
      const double d = dot - (i == j ? 1.0 : 0.0);
      acc += d * d;
    }
  return std::sqrt(acc);
}

}  // namespace moco
