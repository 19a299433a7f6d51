#pragma once

#include <functional>
#include <string>
#include <vector>

#include "moco/autograd.hpp"
#include "moco/rng.hpp"
#include "moco/tensor.hpp"

namespace moco {

/// Maps leaf variables (one per input tensor) to a scalar loss.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckReport {
  struct PerInput {
    std::string name;
    double max_rel_err = 0.0;
    int64_t elements_checked = 0;
  };
  std::vector<PerInput> inputs;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool passed = false;
};

/// Central finite-difference check: (f(x+h) - f(x-h)) / 2h against the
/// analytic gradient from the tape. Relative error uses a small-magnitude
/// floor so that near-zero gradients are compared absolutely.
/// max_elements_per_input == 0 checks every element, otherwise a seeded
/// sample of that many elements per input tensor.
inline GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                  double step, double tol,
                                  int64_t max_elements_per_input = 0,
                                  uint64_t sample_seed = 1,
                                  std::vector<std::string> names = {}) {
  check(step > 0.0 && tol > 0.0, ErrorCode::InvalidArgument, "grad_check: bad step/tol");

  auto eval = [&](const std::vector<Tensor>& xs) -> double {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(tape.leaf(x, false));
    Var loss = f(tape, vars);
    check(tape.value(loss).numel() == 1, ErrorCode::InvalidArgument,
          "grad_check: forward must produce a scalar");
    return tape.value(loss)[0];
  };

  // Analytic gradients.
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  report.tol = tol;
  std::vector<Tensor> work = inputs;

  for (size_t k = 0; k < inputs.size(); ++k) {
    GradCheckReport::PerInput per;
    per.name = k < names.size() ? names[k] : ("input" + std::to_string(k));

    const int64_t n = inputs[k].numel();
    std::vector<int64_t> elems;
    if (max_elements_per_input > 0 && n > max_elements_per_input) {
      // Partial Fisher-Yates draw of distinct indices.
      Rng rng(sample_seed + 0x9e3779b97f4a7c15ull * (k + 1));
      std::vector<int64_t> pool(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
      for (int64_t i = 0; i < max_elements_per_input; ++i) {
        int64_t j = i + rng.uniform_int(n - i);
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
        elems.push_back(pool[static_cast<size_t>(i)]);
      }
    } else {
      for (int64_t i = 0; i < n; ++i) elems.push_back(i);
    }

    for (int64_t idx : elems) {
      const double saved = work[k][idx];
      work[k][idx] = saved + step;
      const double fp = eval(work);
      work[k][idx] = saved - step;
      const double fm = eval(work);
      work[k][idx] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[k][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      per.max_rel_err = std::max(per.max_rel_err, std::abs(a - numeric) / denom);
      ++per.elements_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, per.max_rel_err);
    report.inputs.push_back(std::move(per));
  }
  report.passed = report.max_rel_err <= tol;
  return report;
}

}  // namespace moco
