#pragma once

#include <array>
#include <functional>
#include <utility>
#include <vector>

#include "moco/kernels.hpp"
#include "moco/tensor.hpp"

namespace moco {

/// Handle into a Tape. idx < 0 means "no variable" (used for optional bias).
struct Var {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape. Operations append nodes in execution order, so walking
/// the node list backwards visits them in exact reverse topological order.
/// A Tape is single-threaded and must outlive every Var pointing into it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, nullptr);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return node(v).value; }

  /// Gradient of a node after backward(); zeros if the node was never touched.
  Tensor grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor::zeros(n.value.shape());
    return n.grad;
  }

  void backward(Var loss) {
    Node& ln = node(loss);
    check(ln.value.numel() == 1, ErrorCode::InvalidArgument,
          "backward: loss must be a scalar");
    accumulate(loss.idx, Tensor::full({1}, 1.0));
    for (int64_t i = loss.idx; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.live && n.back) n.back();
    }
  }

  size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return binary_linear(std::move(out), a, b, 1.0, 1.0);
  }

  Var sub(Var a, Var b) {
    check_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return binary_linear(std::move(out), a, b, 1.0, -1.0);
  }

  Var mul(Var a, Var b) {
    check_same_shape(value(a), value(b), "mul");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    bool ng = needs(a) || needs(b);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
      set_back(r, [this, r, a, b] {
        const Tensor& g = nodes_[r.idx].grad;
        if (needs(a)) {
          Tensor ga = g;
          const Tensor& bv2 = value(b);
          for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= bv2[i];
          accumulate(a.idx, std::move(ga));
        }
        if (needs(b)) {
          Tensor gb = g;
          const Tensor& av = value(a);
          for (int64_t i = 0; i < gb.numel(); ++i) gb[i] *= av[i];
          accumulate(b.idx, std::move(gb));
        }
      });
    }
    return r;
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    bool ng = needs(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a, c] {
        Tensor g = nodes_[r.idx].grad;
        for (int64_t i = 0; i < g.numel(); ++i) g[i] *= c;
        accumulate(a.idx, std::move(g));
      });
    return r;
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
    bool ng = needs(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a] {
        Tensor g = nodes_[r.idx].grad;
        const Tensor& xv = value(a);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (xv[i] <= 0.0) g[i] = 0.0;
        accumulate(a.idx, std::move(g));
      });
    return r;
  }

  // ---- reductions ----

  Var sum_all(Var a) {
    Tensor out({1});
    out[0] = value(a).sum();
    bool ng = needs(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a] {
        const double g = nodes_[r.idx].grad[0];
        accumulate(a.idx, Tensor::full(value(a).shape(), g));
      });
    return r;
  }

  Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).numel())); }

  /// Scalar sum(x .* w) against a fixed weight tensor.
  Var dot_const(Var a, Tensor w) {
    check_same_shape(value(a), w, "dot_const");
    Tensor out({1});
    const Tensor& av = value(a);
    double acc = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) acc += av[i] * w[i];
    out[0] = acc;
    bool ng = needs(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a, w = std::move(w)] {
        const double g = nodes_[r.idx].grad[0];
        Tensor ga = w;
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= g;
        accumulate(a.idx, std::move(ga));
      });
    return r;
  }

  /// Mean squared error between two same-shape tensors.
  Var mse(Var a, Var b) {
    check_same_shape(value(a), value(b), "mse");
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const double inv_n = 1.0 / static_cast<double>(av.numel());
    double acc = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) {
      const double d = av[i] - bv[i];
      acc += d * d;
    }
    Tensor out({1});
    out[0] = acc * inv_n;
    bool ng = needs(a) || needs(b);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a, b, inv_n] {
        const double g = 2.0 * inv_n * nodes_[r.idx].grad[0];
        const Tensor& av2 = value(a);
        const Tensor& bv2 = value(b);
        if (needs(a)) {
          Tensor ga(av2.shape());
          for (int64_t i = 0; i < ga.numel(); ++i) ga[i] = g * (av2[i] - bv2[i]);
          accumulate(a.idx, std::move(ga));
        }
        if (needs(b)) {
          Tensor gb(bv2.shape());
          for (int64_t i = 0; i < gb.numel(); ++i) gb[i] = g * (bv2[i] - av2[i]);
          accumulate(b.idx, std::move(gb));
        }
      });
    return r;
  }

  // ---- shape / structure ----

  Var softmax(Var a, int axis) {
    Tensor out = kernels::softmax_fwd(value(a), axis);
    bool ng = needs(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a, axis] {
        accumulate(a.idx, kernels::softmax_bwd(nodes_[r.idx].grad, value(r), axis));
      });
    return r;
  }

  Var concat_ch(const std::vector<Var>& xs) {
    check(!xs.empty(), ErrorCode::InvalidArgument, "concat_ch: empty input list");
    const Tensor& first = value(xs[0]);
    kernels::check_image(first, "concat_ch");
    const int64_t B = first.size(0), H = first.size(2), W = first.size(3);
    int64_t Ctot = 0;
    bool ng = false;
    for (Var v : xs) {
      const Tensor& t = value(v);
      check(t.dim() == 4 && t.size(0) == B && t.size(2) == H && t.size(3) == W,
            ErrorCode::ShapeMismatch, "concat_ch: incompatible shapes");
      Ctot += t.size(1);
      ng = ng || needs(v);
    }
    Tensor out({B, Ctot, H, W});
    const int64_t plane = H * W;
    for (int64_t b = 0; b < B; ++b) {
      int64_t co = 0;
      for (Var v : xs) {
        const Tensor& t = value(v);
        const int64_t c = t.size(1);
        std::copy(t.data() + b * c * plane, t.data() + (b + 1) * c * plane,
                  out.data() + (b * Ctot + co) * plane);
        co += c;
      }
    }
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, xs, B, Ctot, plane] {
        const Tensor& g = nodes_[r.idx].grad;
        int64_t co = 0;
        for (Var v : xs) {
          const int64_t c = value(v).size(1);
          if (needs(v)) {
            Tensor gv({B, c, value(v).size(2), value(v).size(3)});
            for (int64_t b = 0; b < B; ++b)
              std::copy(g.data() + (b * Ctot + co) * plane,
                        g.data() + (b * Ctot + co + c) * plane, gv.data() + b * c * plane);
            accumulate(v.idx, std::move(gv));
          }
          co += c;
        }
      });
    return r;
  }

  Var slice_ch(Var a, int64_t c0, int64_t c1) {
    const Tensor& x = value(a);
    kernels::check_image(x, "slice_ch");
    check(0 <= c0 && c0 < c1 && c1 <= x.size(1), ErrorCode::OutOfBounds,
          "slice_ch: channel range out of bounds");
    const int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const int64_t plane = H * W, c = c1 - c0;
    Tensor out({B, c, H, W});
    for (int64_t b = 0; b < B; ++b)
      std::copy(x.data() + (b * C + c0) * plane, x.data() + (b * C + c1) * plane,
                out.data() + b * c * plane);
    bool ng = needs(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a, c0, c](void) {
        const Tensor& g = nodes_[r.idx].grad;
        const Tensor& x2 = value(a);
        const int64_t B2 = x2.size(0), C2 = x2.size(1), plane2 = x2.size(2) * x2.size(3);
        Tensor gx(x2.shape());
        for (int64_t b = 0; b < B2; ++b)
          std::copy(g.data() + b * c * plane2, g.data() + (b + 1) * c * plane2,
                    gx.data() + (b * C2 + c0) * plane2);
        accumulate(a.idx, std::move(gx));
      });
    return r;
  }

  /// Sum over the channel axis: [B,C,H,W] -> [B,1,H,W].
  Var sum_ch(Var a) {
    const Tensor& x = value(a);
    kernels::check_image(x, "sum_ch");
    const int64_t B = x.size(0), C = x.size(1), plane = x.size(2) * x.size(3);
    Tensor out({B, 1, x.size(2), x.size(3)});
    for (int64_t b = 0; b < B; ++b) {
      double* orow = out.data() + b * plane;
      for (int64_t c = 0; c < C; ++c) {
        const double* xrow = x.data() + (b * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) orow[i] += xrow[i];
      }
    }
    bool ng = needs(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a, B, C, plane] {
        const Tensor& g = nodes_[r.idx].grad;
        Tensor gx(value(a).shape());
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c)
            std::copy(g.data() + b * plane, g.data() + (b + 1) * plane,
                      gx.data() + (b * C + c) * plane);
        accumulate(a.idx, std::move(gx));
      });
    return r;
  }

  /// x:[B,C,H,W] * m:[B,1,H,W], m broadcast across channels.
  Var mul_bc(Var a, Var m) {
    const Tensor& x = value(a);
    const Tensor& mv = value(m);
    kernels::check_image(x, "mul_bc");
    check(mv.dim() == 4 && mv.size(0) == x.size(0) && mv.size(1) == 1 &&
              mv.size(2) == x.size(2) && mv.size(3) == x.size(3),
          ErrorCode::ShapeMismatch, "mul_bc: mask must be [B,1,H,W]");
    const int64_t B = x.size(0), C = x.size(1), plane = x.size(2) * x.size(3);
    Tensor out(x.shape());
    for (int64_t b = 0; b < B; ++b) {
      const double* mrow = mv.data() + b * plane;
      for (int64_t c = 0; c < C; ++c) {
        const double* xrow = x.data() + (b * C + c) * plane;
        double* orow = out.data() + (b * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) orow[i] = xrow[i] * mrow[i];
      }
    }
    bool ng = needs(a) || needs(m);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a, m, B, C, plane] {
        const Tensor& g = nodes_[r.idx].grad;
        const Tensor& x2 = value(a);
        const Tensor& m2 = value(m);
        if (needs(a)) {
          Tensor gx(x2.shape());
          for (int64_t b = 0; b < B; ++b) {
            const double* mrow = m2.data() + b * plane;
            for (int64_t c = 0; c < C; ++c) {
              const double* grow = g.data() + (b * C + c) * plane;
              double* gxrow = gx.data() + (b * C + c) * plane;
              for (int64_t i = 0; i < plane; ++i) gxrow[i] = grow[i] * mrow[i];
            }
          }
          accumulate(a.idx, std::move(gx));
        }
        if (needs(m)) {
          Tensor gm(m2.shape());
          for (int64_t b = 0; b < B; ++b) {
            double* gmrow = gm.data() + b * plane;
            for (int64_t c = 0; c < C; ++c) {
              const double* grow = g.data() + (b * C + c) * plane;
              const double* xrow = x2.data() + (b * C + c) * plane;
              for (int64_t i = 0; i < plane; ++i) gmrow[i] += grow[i] * xrow[i];
            }
          }
          accumulate(m.idx, std::move(gm));
        }
      });
    return r;
  }

  // ---- image ops ----

  Var conv2d(Var x, Var w, Var b, int padding, int dilation = 1) {
    Tensor out = kernels::conv2d_fwd(value(x), value(w), b.valid() ? value(b) : Tensor{},
                                     padding, dilation);
    bool ng = needs(x) || needs(w) || (b.valid() && needs(b));
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, x, w, b, padding, dilation] {
        const Tensor& g = nodes_[r.idx].grad;
        if (needs(x))
          accumulate(x.idx,
                     kernels::conv2d_bwd_input(g, value(w), value(x).shape(), padding, dilation));
        if (needs(w))
          accumulate(w.idx,
                     kernels::conv2d_bwd_weight(g, value(x), value(w).shape(), padding, dilation));
        if (b.valid() && needs(b)) accumulate(b.idx, kernels::conv2d_bwd_bias(g));
      });
    return r;
  }

  /// Sums conv weights over their spatial support: [Co,Ci,k,k] -> [Co,Ci,1,1].
  Var sum_kernel_hw(Var w) {
    const Tensor& wv = value(w);
    kernels::check_image(wv, "sum_kernel_hw");
    const int64_t Co = wv.size(0), Ci = wv.size(1), kk = wv.size(2) * wv.size(3);
    Tensor out({Co, Ci, 1, 1});
    for (int64_t cc = 0; cc < Co * Ci; ++cc) {
      double acc = 0.0;
      const double* wrow = wv.data() + cc * kk;
      for (int64_t i = 0; i < kk; ++i) acc += wrow[i];
      out[cc] = acc;
    }
    bool ng = needs(w);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, w, kk] {
        const Tensor& g = nodes_[r.idx].grad;
        Tensor gw(value(w).shape());
        for (int64_t cc = 0; cc < g.numel(); ++cc) {
          double* grow = gw.data() + cc * kk;
          for (int64_t i = 0; i < kk; ++i) grow[i] = g[cc];
        }
        accumulate(w.idx, std::move(gw));
      });
    return r;
  }

  Var translate(Var x, double dy, double dx) {
    Tensor out = kernels::translate_fwd(value(x), dy, dx);
    bool ng = needs(x);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, x, dy, dx] {
        accumulate(x.idx, kernels::translate_bwd(nodes_[r.idx].grad, dy, dx));
      });
    return r;
  }

  Var bilinear_sample(Var x, std::vector<std::array<double, 2>> coords) {
    Tensor out = kernels::bilinear_sample_fwd(value(x), coords);
    bool ng = needs(x);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, x, coords = std::move(coords)] {
        accumulate(x.idx,
                   kernels::bilinear_sample_bwd(nodes_[r.idx].grad, value(x).shape(), coords));
      });
    return r;
  }

  Var pixel_shuffle(Var x, int factor) {
    Tensor out = kernels::pixel_shuffle_fwd(value(x), factor);
    bool ng = needs(x);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, x, factor] {
        accumulate(x.idx,
                   kernels::pixel_shuffle_bwd(nodes_[r.idx].grad, factor, value(x).shape()));
      });
    return r;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;                  // allocated on first accumulation
    bool needs_grad = false;
    bool live = false;            // grad has been touched during backward
    std::function<void()> back;
  };

  Node& node(Var v) {
    check(v.valid() && v.idx < static_cast<int32_t>(nodes_.size()), ErrorCode::OutOfBounds,
          "invalid Var");
    return nodes_[static_cast<size_t>(v.idx)];
  }
  const Node& node(Var v) const {
    check(v.valid() && v.idx < static_cast<int32_t>(nodes_.size()), ErrorCode::OutOfBounds,
          "invalid Var");
    return nodes_[static_cast<size_t>(v.idx)];
  }

  bool needs(Var v) const { return node(v).needs_grad; }

  Var push(Tensor value, bool needs_grad, std::function<void()> back) {
    nodes_.push_back(Node{std::move(value), Tensor{}, needs_grad, false, std::move(back)});
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  void set_back(Var v, std::function<void()> back) { node(v).back = std::move(back); }

  void accumulate(int32_t idx, Tensor g) {
    Node& n = nodes_[static_cast<size_t>(idx)];
    if (n.grad.empty()) {
      n.grad = std::move(g);
    } else {
      for (int64_t i = 0; i < n.grad.numel(); ++i) n.grad[i] += g[i];
    }
    n.live = true;
  }

  /// c_a * grad flows to a, c_b * grad flows to b.
  Var binary_linear(Tensor out, Var a, Var b, double ca, double cb) {
    bool ng = needs(a) || needs(b);
    Var r = push(std::move(out), ng, nullptr);
    if (ng)
      set_back(r, [this, r, a, b, ca, cb] {
        const Tensor& g = nodes_[r.idx].grad;
        auto scaled = [&](double c) {
          Tensor t = g;
          if (c != 1.0)
            for (int64_t i = 0; i < t.numel(); ++i) t[i] *= c;
          return t;
        };
        if (needs(a)) accumulate(a.idx, scaled(ca));
        if (needs(b)) accumulate(b.idx, scaled(cb));
      });
    return r;
  }

  std::vector<Node> nodes_;
};

}  // namespace moco
