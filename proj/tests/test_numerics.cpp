#include <doctest.h>

#include <cmath>

#include "moco/autograd.hpp"
#include "moco/gradcheck.hpp"
#include "moco/linalg.hpp"
#include "moco/optim.hpp"
#include "moco/rng.hpp"
#include "oracles.hpp"

using namespace moco;

TEST_CASE("tensor shape invariants") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor({2, 0}), Error);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), Error);
  CHECK(Tensor({2, 2}, {1, 2, 3, 4}).at(1, 0) == 3.0);
}

TEST_CASE("conv2d: ones kernel counts overlap") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b({1});
  Tensor y = kernels::conv2d_fwd(x, w, b, 1);
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx(9.0));
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4.0));
  CHECK(y.at(0, 0, 2, 2) == doctest::Approx(4.0));
}

TEST_CASE("conv2d: 1x1 identity kernel") {
  Rng rng(7);
  Tensor x = rng.uniform_tensor({2, 1, 4, 5}, -1, 1);
  Tensor w = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor y = kernels::conv2d_fwd(x, w, Tensor{}, 0);
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d matches the naive oracle") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor x = rng.uniform_tensor({1, 2, 5, 5}, -1, 1);
    Tensor w = rng.uniform_tensor({3, 2, 3, 3}, -1, 1);
    Tensor b = rng.uniform_tensor({3}, -1, 1);
    const int dil = seed % 2 ? 2 : 1;
    const int pad = dil;
    Tensor got = kernels::conv2d_fwd(x, w, b, pad, dil);
    Tensor want = oracle::naive_conv2d(x, w, b, pad, dil);
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor x({1, 2, 4, 4});
  Tensor w({1, 3, 3, 3});
  CHECK_THROWS_AS(kernels::conv2d_fwd(x, w, Tensor{}, 1), Error);
}

TEST_CASE("bilinear sampling") {
  SUBCASE("integer coordinates reproduce the input exactly") {
    Rng rng(3);
    Tensor x = rng.uniform_tensor({1, 2, 4, 4}, -1, 1);
    std::vector<std::array<double, 2>> coords;
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t xx = 0; xx < 4; ++xx)
        coords.push_back({static_cast<double>(y), static_cast<double>(xx)});
    Tensor s = kernels::bilinear_sample_fwd(x, coords);
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 16; ++i) CHECK(s.at(0, c, i) == x[c * 16 + i]);
  }
  SUBCASE("center of a 2x2 block averages the corners") {
    Tensor x({1, 1, 2, 2}, {0, 1, 2, 3});
    Tensor s = kernels::bilinear_sample_fwd(x, {{0.5, 0.5}});
    CHECK(s[0] == doctest::Approx(1.5).epsilon(1e-14));
  }
  SUBCASE("random coords match the blend oracle") {
    Rng rng(11);
    Tensor x = rng.uniform_tensor({2, 3, 6, 7}, -2, 2);
    std::vector<std::array<double, 2>> coords;
    for (int i = 0; i < 40; ++i)
      coords.push_back({rng.uniform(-1.5, 7.0), rng.uniform(-1.5, 8.0)});
    Tensor s = kernels::bilinear_sample_fwd(x, coords);
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t c = 0; c < 3; ++c)
        for (size_t n = 0; n < coords.size(); ++n) {
          const double want = oracle::bilinear_blend(x, b, c, coords[n][0], coords[n][1]);
          CHECK(std::abs(s.at(b, c, static_cast<int64_t>(n)) - want) <= 1e-12);
        }
  }
}

TEST_CASE("softmax") {
  SUBCASE("uniform input gives 1/n") {
    Tensor x = Tensor::full({1, 5}, 3.7);
    Tensor y = kernels::softmax_fwd(x, 1);
    for (int64_t i = 0; i < 5; ++i) CHECK(y[i] == doctest::Approx(0.2).epsilon(1e-14));
  }
  SUBCASE("closed form [0, ln 3]") {
    Tensor x({2}, {0.0, std::log(3.0)});
    Tensor y = kernels::softmax_fwd(x, 0);
    CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-13));
    CHECK(y[1] == doctest::Approx(0.75).epsilon(1e-13));
  }
  SUBCASE("shift invariance and normalization") {
    Rng rng(5);
    Tensor x = rng.uniform_tensor({3, 4, 2}, -3, 3);
    Tensor y = kernels::softmax_fwd(x, 1);
    Tensor xs = x;
    for (int64_t i = 0; i < xs.numel(); ++i) xs[i] += 17.25;
    Tensor ys = kernels::softmax_fwd(xs, 1);
    CHECK(max_abs_diff(y, ys) <= 1e-12);
    for (int64_t o = 0; o < 3; ++o)
      for (int64_t in = 0; in < 2; ++in) {
        double s = 0;
        for (int64_t j = 0; j < 4; ++j) s += y[o * 8 + j * 2 + in];
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
  }
}

TEST_CASE("svd contracts") {
  SUBCASE("identity") {
    Tensor eye({4, 4});
    for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    Svd s = svd(eye);
    for (int i = 0; i < 4; ++i) CHECK(s.sigma[i] == doctest::Approx(1.0).epsilon(1e-13));
  }
  SUBCASE("diagonal") {
    Tensor d({3, 3});
    d.at(0, 0) = 3.0;
    d.at(1, 1) = 2.0;
    d.at(2, 2) = 1.0;
    Svd s = svd(d);
    CHECK(s.sigma[0] == doctest::Approx(3.0).epsilon(1e-13));
    CHECK(s.sigma[1] == doctest::Approx(2.0).epsilon(1e-13));
    CHECK(s.sigma[2] == doctest::Approx(1.0).epsilon(1e-13));
  }
  SUBCASE("random 20x12: residuals and ordering") {
    Rng rng(19);
    Tensor a = rng.normal_tensor({20, 12});
    Svd s = svd(a);
    CHECK(svd_residual(a, s) <= 1e-10);
    CHECK(orthogonality_residual(s.u) <= 1e-10);
    CHECK(orthogonality_residual(s.v) <= 1e-10);
    for (int64_t i = 1; i < s.sigma.numel(); ++i) {
      CHECK(s.sigma[i] <= s.sigma[i - 1]);
      CHECK(s.sigma[i] >= 0.0);
    }
  }
  SUBCASE("wide matrix goes through the transposed path") {
    Rng rng(23);
    Tensor a = rng.normal_tensor({5, 9});
    Svd s = svd(a);
    CHECK(svd_residual(a, s) <= 1e-10);
    CHECK(orthogonality_residual(s.u) <= 1e-10);
    CHECK(orthogonality_residual(s.v) <= 1e-10);
  }
}

TEST_CASE("grad_check basics") {
  SUBCASE("quadratic") {
    Tensor x({2}, {1.0, 2.0});
    auto f = [](Tape& t, const std::vector<Var>& in) {
      return t.dot_const(t.mul(in[0], in[0]), Tensor::full({2}, 1.0));
    };
    auto rep = grad_check(f, {x}, 1e-5, 1e-8);
    CHECK(rep.passed);
    // analytic gradient is (2, 4)
    Tape t;
    Var v = t.leaf(x, true);
    Var loss = t.dot_const(t.mul(v, v), Tensor::full({2}, 1.0));
    t.backward(loss);
    CHECK(t.grad(v)[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(t.grad(v)[1] == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("constant function has exactly zero gradient") {
    Tensor x({3}, {1.0, -2.0, 0.5});
    auto f = [](Tape& t, const std::vector<Var>& in) {
      (void)in;
      return t.constant(Tensor::full({1}, 42.0));
    };
    Tape t;
    Var v = t.leaf(x, true);
    Var loss = t.constant(Tensor::full({1}, 42.0));
    t.backward(loss);
    Tensor g = t.grad(v);
    for (int64_t i = 0; i < 3; ++i) CHECK(g[i] == 0.0);
    auto rep = grad_check(f, {x}, 1e-5, 1e-8);
    CHECK(rep.passed);
    CHECK(rep.max_rel_err == 0.0);
  }
  SUBCASE("conv2d + softmax composite") {
    Rng rng(31);
    Tensor x = rng.uniform_tensor({1, 2, 6, 6}, -1, 1);
    Tensor w = rng.uniform_tensor({2, 2, 3, 3}, -0.5, 0.5);
    Tensor b = rng.uniform_tensor({2}, -0.1, 0.1);
    Tensor probe = rng.uniform_tensor({1, 2, 6, 6}, -1, 1);
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      Var y = t.conv2d(in[0], in[1], in[2], 1);
      Var s = t.softmax(y, 1);
      return t.dot_const(s, probe);
    };
    auto rep = grad_check(f, {x, w, b}, 1e-5, 1e-4);
    CHECK(rep.passed);
  }
}

TEST_CASE("differentiable op suite passes grad_check over ten seeds") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    Tensor x = rng.uniform_tensor({1, 4, 5, 5}, -1, 1);
    Tensor w = rng.uniform_tensor({4, 4, 3, 3}, -0.4, 0.4);
    Tensor b = rng.uniform_tensor({4}, -0.2, 0.2);
    Tensor m = rng.uniform_tensor({1, 4, 5, 5}, -1, 1);
    Tensor probe = rng.uniform_tensor({1, 2, 10, 10}, -1, 1);
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      Var c = t.conv2d(in[0], in[1], in[2], 1);
      Var r = t.relu(c);
      Var g = t.mul(r, in[3]);
      Var tr = t.translate(g, 0.75, -1.25);
      Var sm = t.softmax(tr, 1);
      Var cat = t.concat_ch({sm, t.sum_ch(tr), t.slice_ch(g, 1, 4)});
      Var ps = t.pixel_shuffle(t.mul_bc(cat, t.sum_ch(sm)), 2);
      return t.dot_const(ps, probe);
    };
    auto rep = grad_check(f, {x, w, b, m}, 1e-5, 1e-4, 40, seed + 1);
    CHECK_MESSAGE(rep.passed, "seed ", seed, " max rel err ", rep.max_rel_err);
  }
}

TEST_CASE("kernel results are independent of the thread count") {
  Rng rng(301);
  Tensor x = rng.uniform_tensor({2, 8, 16, 16}, -1, 1);
  Tensor w = rng.uniform_tensor({8, 8, 3, 3}, -1, 1);
  Tensor b = rng.uniform_tensor({8}, -1, 1);
  const int saved = thread_count();
  set_thread_count(1);
  Tensor serial = kernels::conv2d_fwd(x, w, b, 1);
  Tensor serial_t = kernels::translate_fwd(x, 0.5, -1.25);
  set_thread_count(4);
  Tensor parallel = kernels::conv2d_fwd(x, w, b, 1);
  Tensor parallel_t = kernels::translate_fwd(x, 0.5, -1.25);
  set_thread_count(saved);
  CHECK(max_abs_diff(serial, parallel) == 0.0);
  CHECK(max_abs_diff(serial_t, parallel_t) == 0.0);
}

TEST_CASE("tape details") {
  SUBCASE("untouched parameter has exactly zero gradient") {
    Tape t;
    Var used = t.leaf(Tensor::full({2}, 1.0), true);
    Var unused = t.leaf(Tensor::full({3}, 5.0), true);
    Var loss = t.sum_all(used);
    t.backward(loss);
    Tensor g = t.grad(unused);
    for (int64_t i = 0; i < 3; ++i) CHECK(g[i] == 0.0);
  }
  SUBCASE("mse value and symmetry") {
    Tensor a = Tensor::full({2, 2}, 0.5);
    Tensor bb = Tensor::full({2, 2}, 0.4);
    Tape t;
    Var loss = t.mse(t.constant(a), t.constant(bb));
    CHECK(t.value(loss)[0] == doctest::Approx(0.01).epsilon(1e-12));
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient is a fixed point") {
    ParamSet p;
    p.add("w", Tensor({2}, {1.0, -2.0}));
    AdamState adam;
    std::map<std::string, Tensor> g;
    g["w"] = Tensor::zeros({2});
    for (int i = 0; i < 5; ++i) adam_step(adam, p, g, 0.1);
    CHECK(p.at("w")[0] == 1.0);
    CHECK(p.at("w")[1] == -2.0);
  }
  SUBCASE("first bias-corrected step with unit gradient") {
    ParamSet p;
    p.add("w", Tensor({1}, {0.0}));
    AdamState adam;
    std::map<std::string, Tensor> g;
    g["w"] = Tensor({1}, {1.0});
    adam_step(adam, p, g, 0.1);
    // mhat = 1, vhat = 1: step = -lr / (1 + eps)
    CHECK(p.at("w")[0] == doctest::Approx(-0.1).epsilon(1e-7));
  }
  SUBCASE("identical parameters stay identical") {
    ParamSet p;
    p.add("a", Tensor({3}, {0.3, 0.7, -0.2}));
    p.add("b", Tensor({3}, {0.3, 0.7, -0.2}));
    AdamState adam;
    Rng rng(2);
    for (int step = 0; step < 20; ++step) {
      Tensor grad = rng.normal_tensor({3});
      std::map<std::string, Tensor> g;
      g["a"] = grad;
      g["b"] = grad;
      adam_step(adam, p, g, 0.05);
    }
    CHECK(max_abs_diff(p.at("a"), p.at("b")) == 0.0);
  }
}
