// Batch front end for the infrared small-target video SR toolkit:
// synthetic sequence generation, toy-scale training, super-resolution,
// classical detection (top-hat / ILCM / IPI), and the SR + detection
// evaluation reports.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "moco/checkpoint.hpp"
#include "moco/data.hpp"
#include "moco/detectors.hpp"
#include "moco/gradcheck.hpp"
#include "moco/metrics.hpp"
#include "moco/network.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moco;

namespace {

// Resolution classes bundle the published defaults: neighbourhood geometry,
// detector sizes, and the true-detection distance threshold tau.
struct ResolutionClass {
  NeighborhoodSpec spec;
  double tau;
  DetectorParams detectors;
};

ResolutionClass resolution_class(const std::string& name) {
  if (name == "hr") return {NeighborhoodSpec{7, 7, 30}, 10.0, DetectorParams::table_defaults()};
  if (name == "sr4") return {NeighborhoodSpec{29, 29, 120}, 40.0, DetectorParams::sr4()};
  if (name == "lr") return {NeighborhoodSpec{3, 3, 10}, 3.0, DetectorParams::downsampled()};
  throw Error(ErrorCode::InvalidArgument, "unknown resolution class: " + name);
}

SynthSpec synth_preset(const std::string& name) {
  SynthSpec spec;
  if (name == "impulse-pair") {
    // Two frames, 1x1 target, single-step diagonal shift.
    spec.height = spec.width = 32;
    spec.frames = 2;
    spec.background_level = 0.0;
    spec.target_shape = "square";
    spec.target_a = spec.target_b = 1;
    spec.target_peak = 1.0;
    spec.target_pos0 = {16, 16};
    spec.target_velocity = {-1, -1};
  } else if (name == "moving-target") {
    // Seven frames, 3x3 target with consistent sub-pixel motion.
    spec.height = spec.width = 64;
    spec.frames = 7;
    spec.background_level = 0.1;
    spec.target_a = spec.target_b = 3;
    spec.target_peak = 0.8;
    spec.target_pos0 = {24, 36};
    spec.target_velocity = {1.5, -0.5};
  } else if (name == "cluttered") {
    // Target over low-rank clutter blobs plus noise.
    spec.height = spec.width = 64;
    spec.frames = 7;
    spec.background_level = 0.15;
    spec.clutter_blobs = 4;
    spec.clutter_amplitude = 0.35;
    spec.noise_sigma = 0.01;
    spec.target_a = spec.target_b = 3;
    spec.target_peak = 0.7;
    spec.target_pos0 = {40, 28};
    spec.target_velocity = {-1, 1};
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown synth preset: " + name);
  }
  return spec;
}

void parse_spec_triplet(const std::string& s, NeighborhoodSpec& spec) {
  int a, b, d;
  if (std::sscanf(s.c_str(), "%d,%d,%d", &a, &b, &d) != 3)
    throw Error(ErrorCode::ParseError, "expected a,b,d: " + s);
  spec = NeighborhoodSpec{a, b, d};
  spec.validate();
}

Tensor scaled_255(const Tensor& img01) {
  Tensor out = img01;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= 255.0;
  return out;
}

void save_map_normalized(const std::string& path, const Tensor& map) {
  double lo = map[0], hi = map[0];
  for (int64_t i = 0; i < map.numel(); ++i) {
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  Tensor norm = map;
  const double range = hi - lo;
  for (int64_t i = 0; i < norm.numel(); ++i)
    norm[i] = range > 0 ? (norm[i] - lo) / range : 0.0;
  save_gray_image(path, norm, 16);
}

json stats_to_json(const NeighborhoodStats& s) {
  return json{{"peak_target", s.peak_target},
              {"peak_background", s.peak_background},
              {"mean_target", s.mean_target},
              {"mean_background", s.mean_background},
              {"std_background", s.std_background},
              {"clamped", s.clamped}};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  check(out.good(), ErrorCode::IoError, "cannot write " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const std::string& spec_path, const std::string& preset,
              const std::string& out_dir, std::optional<uint64_t> seed,
              const std::string& format) {
  SynthSpec spec;
  if (!preset.empty()) {
    spec = synth_preset(preset);
  } else {
    check(!spec_path.empty(), ErrorCode::InvalidArgument, "synth: need a spec file or --preset");
    std::ifstream in(spec_path);
    check(in.good(), ErrorCode::IoError, "cannot open " + spec_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, spec_path + ": " + e.what());
    }
    spec = j.get<SynthSpec>();
  }
  if (seed) spec.seed = *seed;

  FrameSequence seq = synth_sequence(spec);
  save_sequence(seq, out_dir, format, 16);
  write_json((fs::path(out_dir) / "spec.json").string(), json(spec));
  std::cout << "wrote " << seq.count() << " frames to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// degrade

int cmd_degrade(const std::string& hr_dir, const std::string& out_dir, int scale,
                const std::string& format) {
  FrameSequence hr = load_sequence(hr_dir);
  FrameSequence lr = degrade(hr, scale);
  save_sequence(lr, out_dir, format, 16);
  std::cout << "wrote " << lr.count() << " LR frames to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& manifest_path, const std::string& ckpt_path,
              const std::string& loss_csv, const std::string& resume_path,
              const std::string& preset, MoCoPnetCfg cfg, TrainCfg tcfg) {
  check(preset == "published" || preset == "toy", ErrorCode::InvalidArgument,
        "unknown training preset: " + preset);
  if (preset == "toy") cfg = MoCoPnetCfg::toy(16, cfg.frames, cfg.scale);
  cfg.validate();

  std::vector<Clip> clips;
  for (const auto& entry : load_manifest(manifest_path)) {
    if (entry.split != "train") continue;
    FrameSequence hr = load_sequence(entry.dir);
    auto more = make_clips(hr, cfg.frames, cfg.scale);
    clips.insert(clips.end(), more.begin(), more.end());
  }
  check(!clips.empty(), ErrorCode::EmptyDataset, "manifest has no train sequences");

  TrainerState start;
  if (!resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_path);
    cfg = ckpt.cfg;
    start.params = std::move(ckpt.params);
    if (ckpt.has_adam) start.adam = std::move(ckpt.adam);
    start.iteration = ckpt.meta.iteration;
    std::cout << "resuming from iteration " << start.iteration << "\n";
  }

  std::ofstream csv;
  if (!loss_csv.empty()) {
    csv.open(loss_csv);
    check(csv.good(), ErrorCode::IoError, "cannot write " + loss_csv);
    csv << "iteration,loss,lr\n";
  }
  auto logger = [&](const TrainLogEntry& e) {
    std::cout << "iter " << e.iteration << " loss " << e.loss << " lr " << e.lr << "\n";
    if (csv.is_open()) csv << e.iteration << "," << e.loss << "," << e.lr << "\n";
  };

  TrainResult result = train(clips, cfg, tcfg, std::move(start), logger);
  CheckpointMeta meta{result.state.iteration, tcfg.seed,
                      result.history.empty() ? 0.0 : result.history.back().loss};
  save_checkpoint(ckpt_path, cfg, result.state.params, meta, &result.state.adam);
  std::cout << "checkpoint written to " << ckpt_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sr

int cmd_sr(const std::string& ckpt_path, const std::string& seq_dir, const std::string& out_dir,
           const std::string& internals_dir, const std::string& format) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  FrameSequence seq = load_sequence(seq_dir);
  const int T = ckpt.cfg.frames;
  check(seq.count() >= T, ErrorCode::InvalidArgument,
        "sequence shorter than the temporal window");

  fs::create_directories(out_dir);
  const int half = (T - 1) / 2;
  FrameSequence out;
  for (int64_t centre = half; centre < seq.count() - half; ++centre) {
    std::vector<Tensor> window(seq.frames.begin() + (centre - half),
                               seq.frames.begin() + (centre + half + 1));
    MoCoPnetInternals internals;
    const bool dump = !internals_dir.empty() && centre == half;
    Tensor sr = mocopnet_infer(window, ckpt.cfg, ckpt.params, dump ? &internals : nullptr);
    for (int64_t i = 0; i < sr.numel(); ++i) sr[i] = std::clamp(sr[i], 0.0, 1.0);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05lld.%s", static_cast<long long>(centre),
                  format.c_str());
    save_gray_image((fs::path(out_dir) / name).string(), sr, 16);

    if (dump) {
      fs::create_directories(internals_dir);
      for (size_t i = 0; i < internals.feature_l2.size(); ++i)
        save_map_normalized(
            (fs::path(internals_dir) / ("feature_l2_" + std::to_string(i) + ".pgm")).string(),
            internals.feature_l2[i]);
      auto dump_attention = [&](const std::vector<Tensor>& maps, const std::string& tag) {
        for (size_t n = 0; n < maps.size(); ++n) {
          const Tensor& a = maps[n];
          for (int64_t ch = 0; ch < a.size(1); ++ch) {
            Tensor slice({1, 1, a.size(2), a.size(3)});
            for (int64_t i = 0; i < slice.numel(); ++i)
              slice[i] = a.data()[ch * a.size(2) * a.size(3) + i];
            save_map_normalized((fs::path(internals_dir) /
                                 (tag + "_n" + std::to_string(n) + "_k" + std::to_string(ch) +
                                  ".pgm"))
                                    .string(),
                                slice);
          }
        }
      };
      dump_attention(internals.attention_coarse, "attention1");
      dump_attention(internals.attention_fine, "attention2");
      for (size_t i = 0; i < internals.aligned_l2.size(); ++i)
        save_map_normalized(
            (fs::path(internals_dir) / ("aligned_l2_" + std::to_string(i) + ".pgm")).string(),
            internals.aligned_l2[i]);
    }
    out.frames.push_back(std::move(sr));
  }
  std::cout << "wrote " << out.count() << " SR frames to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval-sr

int cmd_eval_sr(const std::string& sr_dir, const std::string& gt_dir,
                const std::string& report_path, const std::string& cls, std::string spec_arg,
                double peak) {
  FrameSequence sr = load_sequence(sr_dir);
  FrameSequence gt = load_sequence(gt_dir);
  check(sr.count() > 0 && gt.count() > 0, ErrorCode::EmptyDataset, "empty sequence");
  // SR output may skip frames lacking temporal context; align at the tail set.
  const int64_t offset = gt.count() - sr.count();
  check(offset >= 0 && offset % 2 == 0, ErrorCode::InvalidArgument,
        "frame counts incompatible between SR and ground truth");
  const int64_t skip = offset / 2;

  ResolutionClass rc = resolution_class(cls);
  if (!spec_arg.empty()) parse_spec_triplet(spec_arg, rc.spec);

  json frames = json::array();
  double psnr_sum = 0, ssim_sum = 0, snr_sum = 0, cr_sum = 0;
  int64_t psnr_finite = 0, psnr_inf = 0, annotated = 0;
  for (int64_t i = 0; i < sr.count(); ++i) {
    const Tensor& a = sr.frames[i];
    const Tensor& b = gt.frames[skip + i];
    check_same_shape(a, b, "eval-sr");
    const double p = psnr(a, b, peak);
    const double s = ssim(a, b, peak);
    json row{{"frame", skip + i}, {"ssim", s}};
    if (std::isinf(p)) {
      row["psnr"] = nullptr;
      row["psnr_inf"] = true;
      ++psnr_inf;
    } else {
      row["psnr"] = p;
      psnr_sum += p;
      ++psnr_finite;
    }
    ssim_sum += s;
    if (!gt.annotations.empty() && !gt.annotations[skip + i].empty()) {
      const auto& ann = gt.annotations[skip + i][0];
      NeighborhoodStats st = neighborhood_stats(scaled_255(a), ann, rc.spec);
      row["snr"] = local_snr(st);
      row["cr"] = local_cr(st);
      snr_sum += local_snr(st);
      cr_sum += local_cr(st);
      ++annotated;
    }
    frames.push_back(row);
  }
  json report{{"frames", frames},
              {"mean",
               {{"psnr", psnr_finite ? json(psnr_sum / psnr_finite) : json(nullptr)},
                {"psnr_inf_count", psnr_inf},
                {"ssim", ssim_sum / static_cast<double>(sr.count())}}}};
  if (annotated) {
    report["mean"]["snr"] = snr_sum / static_cast<double>(annotated);
    report["mean"]["cr"] = cr_sum / static_cast<double>(annotated);
  }
  if (report_path.empty())
    std::cout << report.dump(2) << "\n";
  else
    write_json(report_path, report);
  return 0;
}

// ---------------------------------------------------------------------------
// detect

int cmd_detect(const std::string& seq_dir, const std::string& detector,
               const std::string& params_path, const std::string& cls,
               const std::string& out_dir, double seg_threshold, int min_area) {
  check(detector == "tophat" || detector == "ilcm" || detector == "ipi",
        ErrorCode::InvalidArgument, "unknown detector: " + detector);
  ResolutionClass rc = resolution_class(cls);
  DetectorParams params = rc.detectors;
  if (!params_path.empty()) params = load_detector_params(params_path, params);

  FrameSequence seq = load_sequence(seq_dir);
  fs::create_directories(out_dir);
  std::ofstream csv((fs::path(out_dir) / "candidates.csv").string());
  check(csv.good(), ErrorCode::IoError, "cannot write candidates.csv");
  csv << "frame,x,y,score,area\n";

  for (int64_t i = 0; i < seq.count(); ++i) {
    Tensor target = run_detector(detector, seq.frames[i], params);
    // Target responses live on the detector's [0,255] working scale; store
    // them normalized by 255 so the image container round-trips them.
    Tensor stored = target;
    for (int64_t k = 0; k < stored.numel(); ++k)
      stored[k] = std::clamp(stored[k] / 255.0, 0.0, 1.0);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05lld.pgm", static_cast<long long>(i));
    save_gray_image((fs::path(out_dir) / name).string(), stored, 16);
    for (const auto& cand : segment(target, seg_threshold, min_area))
      csv << i << "," << cand.x << "," << cand.y << "," << cand.score << "," << cand.area << "\n";
  }
  std::cout << "wrote " << seq.count() << " target images to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval-detect

int cmd_eval_detect(const std::string& lr_dir, const std::string& target_dir,
                    const std::string& out_dir, const std::string& lr_cls,
                    const std::string& hr_cls, std::string lr_spec_arg, std::string hr_spec_arg,
                    double tau_override, int roc_steps) {
  FrameSequence lr = load_sequence(lr_dir);
  FrameSequence targets = load_sequence(target_dir);
  check(!lr.annotations.empty(), ErrorCode::InvalidArgument,
        "eval-detect: the LR directory needs an annotation sidecar");
  const int64_t offset = lr.count() - targets.count();
  check(offset >= 0 && offset % 2 == 0, ErrorCode::InvalidArgument,
        "frame counts incompatible between LR and target images");
  const int64_t skip = offset / 2;
  const double ann_scale =
      static_cast<double>(targets.height()) / static_cast<double>(lr.height());

  ResolutionClass lr_rc = resolution_class(lr_cls);
  ResolutionClass hr_rc = resolution_class(hr_cls);
  if (!lr_spec_arg.empty()) parse_spec_triplet(lr_spec_arg, lr_rc.spec);
  if (!hr_spec_arg.empty()) parse_spec_triplet(hr_spec_arg, hr_rc.spec);
  const double tau = tau_override > 0 ? tau_override : hr_rc.tau;

  fs::create_directories(out_dir);
  json per_frame = json::array();
  DetectionGains mean{};
  int64_t counted = 0;
  std::vector<Tensor> roc_targets;
  std::vector<std::vector<TargetAnnotation>> roc_annotations;

  for (int64_t i = 0; i < targets.count(); ++i) {
    const int64_t lr_index = skip + i;
    Tensor target255 = scaled_255(targets.frames[i]);
    roc_targets.push_back(target255);
    std::vector<TargetAnnotation> hr_anns;
    for (const auto& ann : lr.annotations[lr_index])
      hr_anns.push_back({ann.x * ann_scale, ann.y * ann_scale, ann.a * ann_scale,
                         ann.b * ann_scale});
    roc_annotations.push_back(hr_anns);
    if (lr.annotations[lr_index].empty()) continue;

    const auto& lr_ann = lr.annotations[lr_index][0];
    NeighborhoodStats in = neighborhood_stats(scaled_255(lr.frames[lr_index]), lr_ann, lr_rc.spec);
    NeighborhoodStats out = neighborhood_stats(target255, hr_anns[0], hr_rc.spec);
    DetectionGains g = detection_gains(in, out);
    per_frame.push_back(json{{"frame", lr_index},
                             {"snrg", g.snrg},
                             {"bsf", g.bsf},
                             {"scrg", g.scrg},
                             {"cg", g.cg},
                             {"in", stats_to_json(in)},
                             {"out", stats_to_json(out)}});
    mean.snrg += g.snrg;
    mean.bsf += g.bsf;
    mean.scrg += g.scrg;
    mean.cg += g.cg;
    ++counted;
  }
  check(counted > 0, ErrorCode::EmptyDataset, "eval-detect: no annotated frames");

  json report{{"tau", tau},
              {"frames", per_frame},
              {"mean",
               {{"snrg", mean.snrg / counted},
                {"bsf", mean.bsf / counted},
                {"scrg", mean.scrg / counted},
                {"cg", mean.cg / counted}}}};
  write_json((fs::path(out_dir) / "gains.json").string(), report);

  RocCurve curve = roc(roc_targets, roc_annotations, tau, threshold_sweep(roc_targets, roc_steps));
  std::ofstream roc_out((fs::path(out_dir) / "roc.csv").string());
  check(roc_out.good(), ErrorCode::IoError, "cannot write roc.csv");
  write_roc_csv(curve, roc_out);
  std::cout << "gains and ROC written to " << out_dir << " (auc "
            << curve.auc_trapezoid() << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const std::string& target, uint64_t seed) {
  struct Case {
    std::string name;
    GradCheckReport report;
  };
  std::vector<Case> cases;

  auto run_cdconv = [&] {
    Rng rng(seed);
    Tensor x = rng.uniform_tensor({1, 2, 6, 6}, -1, 1);
    Tensor w = rng.uniform_tensor({2, 2, 3, 3}, -0.5, 0.5);
    Tensor b = rng.uniform_tensor({2}, -0.2, 0.2);
    Tensor probe = rng.uniform_tensor({1, 2, 6, 6}, -1, 1);
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      return t.dot_const(cd_conv(t, in[0], in[1], in[2], 0.7), probe);
    };
    cases.push_back({"cdconv", grad_check(f, {x, w, b}, 1e-5, 1e-4, 0, seed,
                                          {"input", "weight", "bias"})});
  };
  auto run_rg = [&] {
    ResidualGroupCfg cfg{1, 2, 4, 4, true};
    Rng rng(seed);
    ParamSet p;
    init_residual_group(p, "rg", cfg, rng);
    Tensor x = rng.uniform_tensor({1, 4, 5, 5}, -1, 1);
    Tensor probe = rng.uniform_tensor({1, 4, 5, 5}, -1, 1);
    std::vector<Tensor> inputs{x};
    std::vector<std::string> names{"input"};
    for (const auto& [name, t] : p) {
      inputs.push_back(t);
      names.push_back(name);
    }
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      VarSet vs;
      size_t i = 1;
      for (const auto& [name, tensor] : p) vs.vars[name] = in[i++];
      return t.dot_const(residual_group(t, in[0], cfg, 0.7, vs, "rg"), probe);
    };
    cases.push_back({"rg", grad_check(f, inputs, 1e-5, 1e-4, 0, seed, names)});
  };
  auto run_lsta = [&](double dila, const std::string& name) {
    LstaCfg cfg{3, dila, 8};
    Rng rng(seed);
    ParamSet p;
    init_lsta(p, "l", cfg, 8, rng);
    Tensor ref = rng.uniform_tensor({1, 8, 5, 5}, -1, 1);
    Tensor nbr = rng.uniform_tensor({1, 8, 5, 5}, -1, 1);
    Tensor probe = rng.uniform_tensor({1, 8, 5, 5}, -1, 1);
    std::vector<Tensor> inputs{ref, nbr};
    std::vector<std::string> names{"ref", "nbr"};
    for (const auto& [pname, t] : p) {
      inputs.push_back(t);
      names.push_back(pname);
    }
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      VarSet vs;
      size_t i = 2;
      for (const auto& [pname, tensor] : p) vs.vars[pname] = in[i++];
      return t.dot_const(lsta(t, in[0], in[1], cfg, vs, "l"), probe);
    };
    cases.push_back({name, grad_check(f, inputs, 1e-5, 1e-4, 0, seed, names)});
  };
  auto run_net = [&] {
    MoCoPnetCfg cfg = MoCoPnetCfg::toy(16, 5, 2);
    Rng rng(seed);
    ParamSet params = init_mocopnet_params(cfg, rng);
    std::vector<Tensor> frames;
    for (int i = 0; i < cfg.frames; ++i)
      frames.push_back(rng.uniform_tensor({1, 1, 16, 16}, 0, 1));
    Tensor hr = rng.uniform_tensor({1, 1, 32, 32}, 0, 1);
    std::vector<Tensor> inputs;
    std::vector<std::string> names;
    for (const auto& [name, t] : params) {
      inputs.push_back(t);
      names.push_back(name);
    }
    auto f = [&](Tape& t, const std::vector<Var>& in) {
      VarSet vs;
      size_t i = 0;
      for (const auto& [name, tensor] : params) vs.vars[name] = in[i++];
      return t.mse(mocopnet_forward(t, frames, cfg, vs), t.constant(hr));
    };
    cases.push_back({"net-toy", grad_check(f, inputs, 1e-5, 1e-3, 4, seed, names)});
  };

  if (target == "cdconv") run_cdconv();
  else if (target == "rg") run_rg();
  else if (target == "lsta") run_lsta(1.0, "lsta");
  else if (target == "lsta-frac") run_lsta(0.5, "lsta-frac");
  else if (target == "net-toy") run_net();
  else if (target == "all") {
    run_cdconv();
    run_rg();
    run_lsta(1.0, "lsta");
    run_lsta(0.5, "lsta-frac");
    run_net();
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown gradcheck target: " + target);
  }

  bool all_passed = true;
  for (const auto& c : cases) {
    std::cout << c.name << ": " << (c.report.passed ? "PASS" : "FAIL") << " (max rel err "
              << c.report.max_rel_err << ", tol " << c.report.tol << ")\n";
    for (const auto& in : c.report.inputs)
      std::cout << "  " << in.name << ": max rel err " << in.max_rel_err << " over "
                << in.elements_checked << " elements\n";
    all_passed = all_passed && c.report.passed;
  }
  return all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infrared small-target video super-resolution toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: MOCO_THREADS or hardware)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic sequence");
  std::string synth_spec, synth_preset_name, synth_out, synth_format = "pgm";
  std::optional<uint64_t> synth_seed;
  synth->add_option("spec", synth_spec, "SynthSpec JSON file");
  synth->add_option("--preset", synth_preset_name,
                    "impulse-pair | moving-target | cluttered");
  synth->add_option("-o,--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "override the spec seed");
  synth->add_option("--format", synth_format, "pgm | png");

  // degrade
  auto* deg = app.add_subcommand("degrade", "bicubic-downsample a sequence");
  std::string deg_dir, deg_out, deg_format = "pgm";
  int deg_scale = 4;
  deg->add_option("sequence", deg_dir)->required();
  deg->add_option("-o,--out", deg_out)->required();
  deg->add_option("--scale", deg_scale, "downsampling factor");
  deg->add_option("--format", deg_format, "pgm | png");

  // train
  auto* tr = app.add_subcommand("train", "train on a dataset manifest");
  std::string tr_manifest, tr_ckpt, tr_csv, tr_resume, tr_preset = "published";
  MoCoPnetCfg tr_cfg;
  TrainCfg tr_tcfg;
  tr->add_option("manifest", tr_manifest, "dataset manifest JSON")->required();
  tr->add_option("-o,--checkpoint", tr_ckpt, "output checkpoint")->required();
  tr->add_option("--loss-csv", tr_csv, "loss history CSV");
  tr->add_option("--resume", tr_resume, "resume from a checkpoint");
  tr->add_option("--preset", tr_preset, "published | toy");
  tr->add_option("--frames", tr_cfg.frames, "temporal window (odd)");
  tr->add_option("--scale", tr_cfg.scale, "upsampling factor");
  tr->add_option("--channels", tr_cfg.channels, "base channels (published preset only)");
  tr->add_option("--iterations", tr_tcfg.iterations, "training iterations");
  tr->add_option("--batch", tr_tcfg.batch, "batch size");
  tr->add_option("--patch", tr_tcfg.patch, "LR patch size");
  tr->add_option("--lr", tr_tcfg.lr0, "initial learning rate");
  tr->add_option("--seed", tr_tcfg.seed, "training seed");
  tr->add_option("--log-every", tr_tcfg.log_every, "logging interval");
  tr->add_flag("--no-flip{false}", tr_tcfg.flip, "disable flip augmentation")
      ->default_val(true);
  tr->add_flag("--no-rotate{false}", tr_tcfg.rotate, "disable rotation augmentation")
      ->default_val(true);

  // sr
  auto* sr = app.add_subcommand("sr", "super-resolve a sequence");
  std::string sr_ckpt, sr_dir, sr_out, sr_internals, sr_format = "pgm";
  sr->add_option("checkpoint", sr_ckpt)->required();
  sr->add_option("sequence", sr_dir)->required();
  sr->add_option("-o,--out", sr_out)->required();
  sr->add_option("--dump-internals", sr_internals,
                 "directory for attention / feature visualizations");
  sr->add_option("--format", sr_format, "pgm | png");

  // eval-sr
  auto* esr = app.add_subcommand("eval-sr", "PSNR/SSIM/SNR/CR report");
  std::string esr_sr, esr_gt, esr_report, esr_class = "hr", esr_spec;
  double esr_peak = 1.0;
  esr->add_option("sr", esr_sr)->required();
  esr->add_option("gt", esr_gt)->required();
  esr->add_option("-o,--report", esr_report, "JSON report path (stdout when omitted)");
  esr->add_option("--class", esr_class, "resolution class: hr | sr4 | lr");
  esr->add_option("--spec", esr_spec, "neighbourhood a,b,d override");
  esr->add_option("--peak", esr_peak, "PSNR peak");

  // detect
  auto* det = app.add_subcommand("detect", "run a classical detector");
  std::string det_dir, det_name, det_params, det_class = "hr", det_out;
  double det_threshold = 10.0;
  int det_min_area = 1;
  det->add_option("sequence", det_dir)->required();
  det->add_option("--detector", det_name, "tophat | ilcm | ipi")->required();
  det->add_option("--params", det_params, "key = value parameter file");
  det->add_option("--class", det_class, "resolution class: hr | sr4 | lr");
  det->add_option("-o,--out", det_out)->required();
  det->add_option("--threshold", det_threshold, "segmentation threshold for candidates.csv");
  det->add_option("--min-area", det_min_area, "minimum component area");

  // eval-detect
  auto* edet = app.add_subcommand("eval-detect", "gain metrics + ROC");
  std::string edet_lr, edet_td, edet_out, edet_lr_class = "lr", edet_hr_class = "hr";
  std::string edet_lr_spec, edet_hr_spec;
  double edet_tau = 0.0;
  int edet_steps = 32;
  edet->add_option("lr", edet_lr, "LR sequence directory (with annotations)")->required();
  edet->add_option("targets", edet_td, "detector output directory")->required();
  edet->add_option("-o,--out", edet_out)->required();
  edet->add_option("--lr-class", edet_lr_class, "resolution class of the LR images");
  edet->add_option("--hr-class", edet_hr_class, "resolution class of the target images");
  edet->add_option("--lr-spec", edet_lr_spec, "LR neighbourhood a,b,d override");
  edet->add_option("--hr-spec", edet_hr_spec, "target neighbourhood a,b,d override");
  edet->add_option("--tau", edet_tau, "true-detection distance (default: class value)");
  edet->add_option("--roc-steps", edet_steps, "threshold sweep length");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string gc_target;
  uint64_t gc_seed = 1;
  gc->add_option("target", gc_target, "cdconv | rg | lsta | lsta-frac | net-toy | all")
      ->required();
  gc->add_option("--seed", gc_seed, "random seed");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) set_thread_count(threads);

  try {
    if (*synth)
      return cmd_synth(synth_spec, synth_preset_name, synth_out, synth_seed, synth_format);
    if (*deg) return cmd_degrade(deg_dir, deg_out, deg_scale, deg_format);
    if (*tr) return cmd_train(tr_manifest, tr_ckpt, tr_csv, tr_resume, tr_preset, tr_cfg, tr_tcfg);
    if (*sr) return cmd_sr(sr_ckpt, sr_dir, sr_out, sr_internals, sr_format);
    if (*esr) return cmd_eval_sr(esr_sr, esr_gt, esr_report, esr_class, esr_spec, esr_peak);
    if (*det)
      return cmd_detect(det_dir, det_name, det_params, det_class, det_out, det_threshold,
                        det_min_area);
    if (*edet)
      return cmd_eval_detect(edet_lr, edet_td, edet_out, edet_lr_class, edet_hr_class,
                             edet_lr_spec, edet_hr_spec, edet_tau, edet_steps);
    if (*gc) return cmd_gradcheck(gc_target, gc_seed);
  } catch (const Error& e) {
    std::cerr << "error [" << error_code_name(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
