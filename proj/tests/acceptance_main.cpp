// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.
// Criterion 8 drives the CLI binary end to end; pass its path via --cli.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "moco/checkpoint.hpp"
#include "moco/data.hpp"
#include "moco/detectors.hpp"
#include "moco/gradcheck.hpp"
#include "moco/metrics.hpp"
#include "moco/network.hpp"

namespace fs = std::filesystem;
using namespace moco;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

int g_failures = 0;

void run_criterion(int id, const std::string& label, double budget_seconds,
                   const std::function<void(Outcome&)>& body) {
  Outcome outcome;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(outcome);
  } catch (const std::exception& e) {
    outcome.pass = false;
    outcome.note(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_seconds) {
    outcome.pass = false;
    outcome.note("runtime " + std::to_string(secs) + "s exceeds budget " +
                 std::to_string(budget_seconds) + "s");
  }
  if (!outcome.pass) ++g_failures;
  std::printf("[%s] criterion %d: %s (%.2fs)%s%s\n", outcome.pass ? "PASS" : "FAIL", id,
              label.c_str(), secs, outcome.detail.empty() ? "" : " -- ",
              outcome.detail.c_str());
  std::fflush(stdout);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) return "<missing:" + path.string() + ">";
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

void criterion_operator_identity(Outcome& out) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(900 + seed);
    Tensor x = rng.uniform_tensor({1, 2, 7, 7}, -1, 1);
    Tensor w = rng.uniform_tensor({3, 2, 3, 3}, -1, 1);
    Tensor b = rng.uniform_tensor({3}, -0.5, 0.5);

    Tape t;
    Var got = cd_conv(t, t.constant(x), t.constant(w), t.constant(b), 0.7);
    // Oracle: conv2d(x) - theta * (per-channel kernel sum) * x.
    Tensor want = kernels::conv2d_fwd(x, w, b, 1);
    for (int64_t bb = 0; bb < 1; ++bb)
      for (int64_t co = 0; co < 3; ++co)
        for (int64_t y = 0; y < 7; ++y)
          for (int64_t xx = 0; xx < 7; ++xx) {
            double acc = 0.0;
            for (int64_t ci = 0; ci < 2; ++ci) {
              double ks = 0.0;
              for (int64_t ky = 0; ky < 3; ++ky)
                for (int64_t kx = 0; kx < 3; ++kx) ks += w.at(co, ci, ky, kx);
              acc += ks * x.at(bb, ci, y, xx);
            }
            want.at(bb, co, y, xx) -= 0.7 * acc;
          }
    out.require(max_abs_diff(t.value(got), want) <= 1e-12,
                "identity mismatch at seed " + std::to_string(seed));

    Var degenerate = cd_conv(t, t.constant(x), t.constant(w), t.constant(b), 0.0);
    out.require(max_abs_diff(t.value(degenerate), kernels::conv2d_fwd(x, w, b, 1)) == 0.0,
                "theta=0 does not reduce to plain convolution");
  }
}

void criterion_gradient_suite(Outcome& out) {
  auto check_report = [&](const GradCheckReport& rep, const std::string& name) {
    out.require(rep.passed, name + " max rel err " + std::to_string(rep.max_rel_err));
  };
  {
    Rng rng(11);
    Tensor x = rng.uniform_tensor({1, 2, 6, 6}, -1, 1);
    Tensor w = rng.uniform_tensor({2, 2, 3, 3}, -0.5, 0.5);
    Tensor b = rng.uniform_tensor({2}, -0.2, 0.2);
    Tensor probe = rng.uniform_tensor({1, 2, 6, 6}, -1, 1);
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      return t.dot_const(cd_conv(t, in[0], in[1], in[2], 0.7), probe);
    };
    check_report(grad_check(f, {x, w, b}, 1e-5, 1e-4), "cd_conv");
  }
  {
    ResidualGroupCfg cfg{1, 2, 4, 4, true};
    Rng rng(13);
    ParamSet p;
    init_residual_group(p, "rg", cfg, rng);
    Tensor x = rng.uniform_tensor({1, 4, 5, 5}, -1, 1);
    Tensor probe = rng.uniform_tensor({1, 4, 5, 5}, -1, 1);
    std::vector<Tensor> inputs{x};
    for (const auto& [name, t] : p) inputs.push_back(t);
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      VarSet vs;
      size_t i = 1;
      for (const auto& [name, tensor] : p) vs.vars[name] = in[i++];
      return t.dot_const(residual_group(t, in[0], cfg, 0.7, vs, "rg"), probe);
    };
    check_report(grad_check(f, inputs, 1e-5, 1e-4), "residual_group");
  }
  for (double dila : {1.0, 0.5}) {
    Rng rng(17);
    LstaCfg cfg{3, dila, 8};
    ParamSet p;
    init_lsta(p, "l", cfg, 8, rng);
    Tensor ref = rng.uniform_tensor({1, 8, 5, 5}, -1, 1);
    Tensor nbr = rng.uniform_tensor({1, 8, 5, 5}, -1, 1);
    Tensor probe = rng.uniform_tensor({1, 8, 5, 5}, -1, 1);
    std::vector<Tensor> inputs{ref, nbr};
    for (const auto& [name, t] : p) inputs.push_back(t);
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      VarSet vs;
      size_t i = 2;
      for (const auto& [name, tensor] : p) vs.vars[name] = in[i++];
      return t.dot_const(lsta(t, in[0], in[1], cfg, vs, "l"), probe);
    };
    check_report(grad_check(f, inputs, 1e-5, 1e-4),
                 "lsta dila=" + std::to_string(dila));
  }
  {
    // Full toy network: C=16, T=5, 16x16 frames; sampled elements per tensor.
    MoCoPnetCfg cfg = MoCoPnetCfg::toy(16, 5, 2);
    Rng rng(19);
    ParamSet params = init_mocopnet_params(cfg, rng);
    std::vector<Tensor> frames;
    for (int i = 0; i < cfg.frames; ++i)
      frames.push_back(rng.uniform_tensor({1, 1, 16, 16}, 0, 1));
    Tensor hr = rng.uniform_tensor({1, 1, 32, 32}, 0, 1);
    std::vector<Tensor> inputs;
    for (const auto& [name, t] : params) inputs.push_back(t);
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      VarSet vs;
      size_t i = 0;
      for (const auto& [name, tensor] : params) vs.vars[name] = in[i++];
      return t.mse(mocopnet_forward(t, frames, cfg, vs), t.constant(hr));
    };
    GradCheckReport rep = grad_check(f, inputs, 1e-5, 1e-3, 5, 7);
    out.require(rep.passed,
                "full network max rel err " + std::to_string(rep.max_rel_err));
    out.note("e2e max rel err " + std::to_string(rep.max_rel_err));
  }
}

void criterion_lsta_alignment(Outcome& out) {
  for (double dila : {1.0, 3.0}) {
    LstaCfg cfg{3, dila, 1};
    const auto offsets = lsta_offsets(cfg);
    const size_t true_offset = 2;  // (dy,dx) = (-dila, +dila)
    const int dy = static_cast<int>(offsets[true_offset][0]);
    const int dx = static_cast<int>(offsets[true_offset][1]);

    // Sparse impulse field; impulses separated beyond the attention reach.
    const int64_t n = dila > 1.0 ? 128 : 64;
    Tensor ref({1, 1, n, n});
    Rng rng(23);
    std::vector<std::pair<int64_t, int64_t>> sites;
    const int64_t margin = static_cast<int64_t>(3 * dila) + 2;
    for (int64_t y = margin; y < n - margin; y += 2 * margin)
      for (int64_t x = margin; x < n - margin; x += 2 * margin) {
        ref.at(0, 0, y, x) = 3.0 + rng.uniform(0.0, 1.0);
        sites.emplace_back(y, x);
      }
    // Neighbour frame: the same field translated by the true offset.
    Tensor nbr = kernels::translate_fwd(ref, -dy, -dx);

    Tape t;
    Tensor eye({1, 1, 1, 1});
    eye[0] = 1.0;
    VarSet p;
    p.vars["l.q.w"] = t.constant(eye);
    p.vars["l.q.b"] = t.constant(Tensor::zeros({1}));
    p.vars["l.k.w"] = t.constant(eye);
    p.vars["l.k.b"] = t.constant(Tensor::zeros({1}));
    Var attn = lsta_attention(t, t.constant(ref), t.constant(nbr), cfg, p, "l");
    const Tensor& a = t.value(attn);

    int64_t correct = 0;
    for (const auto& [y, x] : sites) {
      int64_t best = 0;
      for (int64_t j = 1; j < 9; ++j)
        if (a.at(0, j, y, x) > a.at(0, best, y, x)) best = j;
      if (best == static_cast<int64_t>(true_offset)) ++correct;
    }
    const double frac = static_cast<double>(correct) / static_cast<double>(sites.size());
    out.require(frac >= 0.95, "dila " + std::to_string(dila) + ": argmax fraction " +
                                  std::to_string(frac));
    out.note("dila " + std::to_string(static_cast<int>(dila)) + ": " +
             std::to_string(correct) + "/" + std::to_string(sites.size()) + " sites correct");
  }
}

void criterion_toy_training(Outcome& out) {
  // Zero-weight network reproduces the bicubic upsample.
  {
    MoCoPnetCfg cfg = MoCoPnetCfg::toy(16, 7, 4);
    Rng rng(29);
    ParamSet params = init_mocopnet_params(cfg, rng);
    for (auto& [name, t] : params) t.fill(0.0);
    std::vector<Tensor> frames;
    for (int i = 0; i < 7; ++i) frames.push_back(rng.uniform_tensor({1, 1, 12, 12}, 0, 1));
    Tensor sr = mocopnet_infer(frames, cfg, params);
    const double diff = max_abs_diff(sr, bicubic_resize(frames[3], 4));
    out.require(diff <= 1e-10, "zero-weight forward deviates from bicubic by " +
                                   std::to_string(diff));
  }
  // Seed-pinned overfit of one synthetic 7-frame clip.
  SynthSpec spec;
  spec.height = spec.width = 64;
  spec.frames = 7;
  spec.background_level = 0.15;
  spec.clutter_blobs = 4;
  spec.clutter_amplitude = 0.35;
  spec.target_a = spec.target_b = 3;
  spec.target_peak = 0.7;
  spec.target_pos0 = {40, 28};
  spec.target_velocity = {-1, 1};
  spec.seed = 11;
  auto clips = make_clips(synth_sequence(spec), 7, 4);
  std::vector<Clip> one = {clips[0]};

  MoCoPnetCfg cfg = MoCoPnetCfg::toy(16, 7, 4);
  TrainCfg tcfg;
  tcfg.patch = 16;
  tcfg.batch = 1;
  tcfg.iterations = 800;
  tcfg.halve_at = {400, 600};
  tcfg.flip = tcfg.rotate = false;  // overfit run: fit the clip itself
  tcfg.seed = 5;
  tcfg.log_every = 100;
  TrainResult res = train(one, cfg, tcfg);
  const double initial = res.history.front().loss;
  const double final_loss = res.history.back().loss;
  out.require(final_loss <= initial / 100.0,
              "loss reduction " + std::to_string(initial / final_loss) + "x < 100x");
  out.note("loss " + std::to_string(initial) + " -> " + std::to_string(final_loss) + " (" +
           std::to_string(initial / final_loss) + "x, 800 iterations)");
}

void criterion_ipi(Outcome& out) {
  const int64_t n = 128;
  Tensor img({1, 1, n, n});
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x)
      img.at(0, 0, y, x) = (100.0 + 50.0 * std::sin(2.2 * y / 128.0)) *
                           (1.0 + 0.3 * std::cos(1.7 * x / 128.0));
  // Planted 3x3 target, contrast 20 gray levels.
  for (int64_t y = 63; y <= 65; ++y)
    for (int64_t x = 63; x <= 65; ++x) img.at(0, 0, y, x) += 20.0;

  IpiParams params;
  params.block = 15;
  params.stride = 3;
  PatchImageModel model;
  DetectionResult res = ipi(img, params, &model);
  out.require(model.converged, "IALM did not converge within the iteration cap");
  out.require(model.residual <= params.epsilon,
              "residual " + std::to_string(model.residual) + " > 1e-7");
  int64_t by = 0, bx = 0;
  double best = -1e300;
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x)
      if (res.target_image.at(0, 0, y, x) > best) {
        best = res.target_image.at(0, 0, y, x);
        by = y;
        bx = x;
      }
  out.require(std::abs(by - 64) <= 1 && std::abs(bx - 64) <= 1,
              "argmax (" + std::to_string(by) + "," + std::to_string(bx) + ") off target");
  out.note("iterations " + std::to_string(model.iterations) + ", residual " +
           std::to_string(model.residual));
}

void criterion_metric_oracles(Outcome& out) {
  // Hand fixture: background 10 with a 14 peak, 3x3 target of 20s with 26.
  Tensor img = Tensor::full({1, 1, 11, 11}, 10.0);
  for (int64_t y = 4; y <= 6; ++y)
    for (int64_t x = 4; x <= 6; ++x) img.at(0, 0, y, x) = 20.0;
  img.at(0, 0, 5, 5) = 26.0;
  img.at(0, 0, 2, 2) = 14.0;
  TargetAnnotation ann{5, 5, 3, 3};
  NeighborhoodSpec spec{3, 3, 2};
  NeighborhoodStats s = neighborhood_stats(img, ann, spec);
  out.require(s.target_pixels == 9 && s.background_pixels == 40, "mask accounting wrong");
  out.require(s.peak_target == 26.0 && s.peak_background == 14.0, "peaks wrong");
  out.require(s.mean_target == 186.0 / 9.0, "target mean wrong");
  out.require(s.mean_background == 404.0 / 40.0, "background mean wrong");
  const double want_std = std::sqrt((39.0 * 0.01 + 3.9 * 3.9) / 40.0);
  out.require(std::abs(s.std_background - want_std) <= 1e-12, "background std wrong");

  // Self-evaluation: unit gains.
  DetectionGains self = detection_gains(img, ann, spec, img, ann, spec);
  for (double g : {self.snrg, self.bsf, self.scrg, self.cg})
    out.require(std::abs(g - 1.0) <= 1e-6, "self-evaluation gain " + std::to_string(g));

  // Perfectly suppressed background: BSF lands in the 1e10 magnitude class.
  Tensor lr = Tensor::full({1, 1, 32, 32}, 10.0);
  for (int64_t y = 0; y < 32; ++y)
    for (int64_t x = 0; x < 32; ++x) lr.at(0, 0, y, x) += ((x + y) % 2 == 0) ? 2.0 : -2.0;
  for (int64_t y = 15; y <= 17; ++y)
    for (int64_t x = 15; x <= 17; ++x) lr.at(0, 0, y, x) = 40.0;
  Tensor suppressed = Tensor::zeros({1, 1, 32, 32});
  for (int64_t y = 15; y <= 17; ++y)
    for (int64_t x = 15; x <= 17; ++x) suppressed.at(0, 0, y, x) = 30.0;
  TargetAnnotation centre{16, 16, 3, 3};
  NeighborhoodSpec wide{3, 3, 5};
  DetectionGains g = detection_gains(lr, centre, wide, suppressed, centre, wide);
  out.require(g.bsf > 1e9 && g.bsf < 1e12,
              "BSF " + std::to_string(g.bsf) + " outside the 1e10 class");
  out.require(std::abs(g.bsf - 2.0 / kMetricEps) <= 1e4, "BSF mechanism mismatch");
  out.note("BSF " + std::to_string(g.bsf));
}

void criterion_roc(Outcome& out) {
  Tensor img({1, 1, 64, 64});
  auto blob = [&](int64_t y, int64_t x, double v) {
    for (int64_t dy = 0; dy < 2; ++dy)
      for (int64_t dx = 0; dx < 2; ++dx) img.at(0, 0, y + dy, x + dx) = v;
  };
  blob(10, 10, 100.0);
  blob(30, 40, 100.0);
  blob(50, 20, 100.0);
  blob(55, 55, 80.0);  // false alarm
  std::vector<TargetAnnotation> gt = {{10.5, 10.5, 2, 2}, {40.5, 30.5, 2, 2}, {20.5, 50.5, 2, 2}};
  RocCurve curve = roc({img}, {gt}, 3.0, {150.0, 90.0, 50.0});
  out.require(curve.points.size() == 3, "sweep size wrong");
  out.require(curve.points[0].pd == 0.0 && curve.points[0].fa == 0.0, "top threshold not empty");
  out.require(curve.points[1].pd == 1.0 && curve.points[1].fa == 0.0,
              "mid threshold should match all three targets");
  out.require(curve.points[2].pd == 1.0, "TD should be 3 of 3");
  out.require(curve.points[2].fa == 1.0 / 4096.0, "FD should be exactly 1 over 64*64");
  for (size_t i = 1; i < curve.points.size(); ++i) {
    out.require(curve.points[i].pd >= curve.points[i - 1].pd, "Pd not monotone");
    out.require(curve.points[i].fa >= curve.points[i - 1].fa, "Fa not monotone");
  }
}

void criterion_pipeline(Outcome& out, const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "moco_acceptance_pipeline";
  fs::remove_all(root);
  fs::create_directories(root);

  SynthSpec spec;
  spec.height = spec.width = 64;
  spec.frames = 9;
  spec.background_level = 0.12;
  spec.clutter_blobs = 3;
  spec.clutter_amplitude = 0.3;
  spec.target_a = spec.target_b = 3;
  spec.target_peak = 0.75;
  spec.target_pos0 = {24, 36};
  spec.target_velocity = {1.0, -0.75};
  spec.seed = 17;
  {
    std::ofstream f((root / "scene.json").string());
    f << nlohmann::json(spec).dump(2);
  }

  auto shell = [&](const std::string& cmd) {
    const std::string full = cmd + " >> " + (root / "log.txt").string() + " 2>&1";
    return std::system(full.c_str()) == 0;
  };

  for (const std::string run : {"r1", "r2"}) {
    const fs::path d = root / run;
    fs::create_directories(d);
    {
      std::ofstream f((d / "manifest.json").string());
      f << R"({"sequences":[{"dir":"hr","split":"train"}]})";
    }
    bool ok = true;
    ok = ok && shell(cli + " synth " + (root / "scene.json").string() + " -o " +
                     (d / "hr").string());
    ok = ok && shell(cli + " degrade " + (d / "hr").string() + " -o " + (d / "lr").string() +
                     " --scale 4");
    ok = ok && shell(cli + " train " + (d / "manifest.json").string() + " -o " +
                     (d / "toy.ckpt").string() +
                     " --preset toy --frames 7 --scale 4 --iterations 120 --batch 1"
                     " --patch 16 --seed 3 --log-every 20 --no-flip --no-rotate --loss-csv " +
                     (d / "loss.csv").string());
    ok = ok && shell(cli + " sr " + (d / "toy.ckpt").string() + " " + (d / "lr").string() +
                     " -o " + (d / "sr").string() + " --dump-internals " +
                     (d / "internals").string());
    ok = ok && shell(cli + " eval-sr " + (d / "sr").string() + " " + (d / "hr").string() +
                     " -o " + (d / "eval_sr.json").string() + " --class lr");
    for (const std::string det : {"tophat", "ilcm", "ipi"}) {
      ok = ok && shell(cli + " detect " + (d / "sr").string() + " --detector " + det +
                       " --class lr -o " + (d / ("det_" + det)).string());
      ok = ok && shell(cli + " eval-detect " + (d / "lr").string() + " " +
                       (d / ("det_" + det)).string() + " -o " + (d / ("eval_" + det)).string() +
                       " --lr-class lr --hr-class hr");
    }
    out.require(ok, run + ": a pipeline stage exited nonzero (see " +
                        (root / "log.txt").string() + ")");
    if (!ok) return;
  }

  // Byte-identical reports across the two runs.
  std::vector<fs::path> compare = {"loss.csv", "eval_sr.json"};
  for (const std::string det : {"tophat", "ilcm", "ipi"}) {
    compare.push_back(fs::path("det_" + det) / "candidates.csv");
    compare.push_back(fs::path("eval_" + det) / "gains.json");
    compare.push_back(fs::path("eval_" + det) / "roc.csv");
  }
  for (const auto& entry : fs::directory_iterator(root / "r1" / "sr"))
    compare.push_back(fs::path("sr") / entry.path().filename());
  for (const auto& rel : compare) {
    const std::string a = read_file(root / "r1" / rel);
    const std::string b = read_file(root / "r2" / rel);
    out.require(!a.empty() && a == b, rel.string() + " differs between runs");
  }
  out.note(std::to_string(compare.size()) + " artifacts byte-identical across runs");
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--cli") cli = argv[i + 1];

  run_criterion(1, "central difference convolution operator identity", 1.0,
                criterion_operator_identity);
  run_criterion(2, "finite-difference gradient suite", 120.0, criterion_gradient_suite);
  run_criterion(3, "attention alignment on translated impulse pairs", 10.0,
                criterion_lsta_alignment);
  run_criterion(4, "toy overfit training and bicubic residual identity", 600.0,
                criterion_toy_training);
  run_criterion(5, "patch-image decomposition on a planted instance", 30.0, criterion_ipi);
  run_criterion(6, "neighbourhood statistics and gain metric oracles", 10.0,
                criterion_metric_oracles);
  run_criterion(7, "ROC monotonicity and exact Pd/Fa arithmetic", 10.0, criterion_roc);
  if (cli.empty()) {
    ++g_failures;
    std::printf("[FAIL] criterion 8: end-to-end pipeline (no --cli path given)\n");
  } else {
    run_criterion(8, "end-to-end pipeline determinism", 900.0,
                  [&](Outcome& out) { criterion_pipeline(out, cli); });
  }

  std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
              g_failures);
  return g_failures == 0 ? 0 : 1;
}
