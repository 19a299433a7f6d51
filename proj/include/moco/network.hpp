#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moco/data.hpp"
#include "moco/optim.hpp"
#include "moco/prior_ops.hpp"

namespace moco {

// ---------------------------------------------------------------------------
// Configuration

struct MoCoPnetCfg {
  int frames = 7;    // temporal window T, odd
  int scale = 4;
  int channels = 64; // base channel count C
  double theta = 0.7;

  ResidualGroupCfg cdrg{4, 6, 32, 64, true};
  ResidualGroupCfg rg_coarse{1, 4, 64, 64, false};
  ResidualGroupCfg rg_fine{1, 4, 64, 64, false};
  ResidualGroupCfg rg_recon{8, 6, 32, 64, false};
  LstaCfg lsta1{3, 3.0, 8};
  LstaCfg lsta2{3, 1.0, 8};

  static MoCoPnetCfg published() { return MoCoPnetCfg{}; }

  /// Desk-scale preset used by tests and the toy training pipeline.
  static MoCoPnetCfg toy(int channels = 16, int frames = 5, int scale = 4) {
    MoCoPnetCfg cfg;
    cfg.frames = frames;
    cfg.scale = scale;
    cfg.channels = channels;
    cfg.cdrg = ResidualGroupCfg{1, 2, 8, channels, true};
    cfg.rg_coarse = ResidualGroupCfg{1, 2, 8, channels, false};
    cfg.rg_fine = ResidualGroupCfg{1, 2, 8, channels, false};
    cfg.rg_recon = ResidualGroupCfg{1, 2, 8, channels, false};
    cfg.lsta1 = LstaCfg{3, 3.0, 8};
    cfg.lsta2 = LstaCfg{3, 1.0, 8};
    return cfg;
  }

  void validate() const {
    check(frames >= 3 && frames % 2 == 1, ErrorCode::InvalidArgument,
          "MoCoPnetCfg: frame count must be odd and >= 3");
    check(scale >= 1, ErrorCode::InvalidArgument, "MoCoPnetCfg: scale must be >= 1");
    check(channels >= 1, ErrorCode::InvalidArgument, "MoCoPnetCfg: channels must be >= 1");
    check(theta >= 0.0 && theta <= 1.0, ErrorCode::InvalidArgument,
          "MoCoPnetCfg: theta must lie in [0,1]");
    for (const auto* rg : {&cdrg, &rg_coarse, &rg_fine, &rg_recon}) {
      rg->validate();
      check(rg->channels == channels, ErrorCode::InvalidArgument,
            "MoCoPnetCfg: residual group channel width must equal the base width");
    }
    check(cdrg.central_difference, ErrorCode::InvalidArgument,
          "MoCoPnetCfg: the feature-extraction group uses central difference convolutions");
    lsta1.validate();
    lsta2.validate();
    check(channels % lsta1.cr == 0 && channels % lsta2.cr == 0, ErrorCode::InvalidArgument,
          "MoCoPnetCfg: channels must be divisible by the attention compression ratio");
  }
};

inline void to_json(nlohmann::json& j, const ResidualGroupCfg& c) {
  j = nlohmann::json{{"blocks", c.blocks},
                     {"convs_per_block", c.convs_per_block},
                     {"growth", c.growth},
                     {"channels", c.channels},
                     {"central_difference", c.central_difference}};
}
inline void from_json(const nlohmann::json& j, ResidualGroupCfg& c) {
  j.at("blocks").get_to(c.blocks);
  j.at("convs_per_block").get_to(c.convs_per_block);
  j.at("growth").get_to(c.growth);
  j.at("channels").get_to(c.channels);
  j.at("central_difference").get_to(c.central_difference);
}
inline void to_json(nlohmann::json& j, const LstaCfg& c) {
  j = nlohmann::json{{"kern", c.kern}, {"dila", c.dila}, {"cr", c.cr}};
}
inline void from_json(const nlohmann::json& j, LstaCfg& c) {
  j.at("kern").get_to(c.kern);
  j.at("dila").get_to(c.dila);
  j.at("cr").get_to(c.cr);
}
inline void to_json(nlohmann::json& j, const MoCoPnetCfg& c) {
  j = nlohmann::json{{"frames", c.frames},   {"scale", c.scale},       {"channels", c.channels},
                     {"theta", c.theta},     {"cdrg", c.cdrg},         {"rg_coarse", c.rg_coarse},
                     {"rg_fine", c.rg_fine}, {"rg_recon", c.rg_recon}, {"lsta1", c.lsta1},
                     {"lsta2", c.lsta2}};
}
inline void from_json(const nlohmann::json& j, MoCoPnetCfg& c) {
  j.at("frames").get_to(c.frames);
  j.at("scale").get_to(c.scale);
  j.at("channels").get_to(c.channels);
  j.at("theta").get_to(c.theta);
  j.at("cdrg").get_to(c.cdrg);
  j.at("rg_coarse").get_to(c.rg_coarse);
  j.at("rg_fine").get_to(c.rg_fine);
  j.at("rg_recon").get_to(c.rg_recon);
  j.at("lsta1").get_to(c.lsta1);
  j.at("lsta2").get_to(c.lsta2);
}

// ---------------------------------------------------------------------------
// Parameters

inline ParamSet init_mocopnet_params(const MoCoPnetCfg& cfg, Rng& rng) {
  cfg.validate();
  const int C = cfg.channels;
  ParamSet p;
  add_conv_params(p, "head", rng, C, 1, 3);
  init_residual_group(p, "cdrg", cfg.cdrg, rng);
  init_lsta(p, "lsta1", cfg.lsta1, C, rng);
  init_lsta(p, "lsta2", cfg.lsta2, C, rng);
  add_conv_params(p, "coarse.reduce", rng, C, 3 * C, 1);
  init_residual_group(p, "coarse.rg", cfg.rg_coarse, rng);
  add_conv_params(p, "coarse.conv", rng, C, C, 3);
  const int branches = (cfg.frames - 1) / 2;
  add_conv_params(p, "fine.reduce", rng, C, branches * C, 1);
  init_residual_group(p, "fine.rg", cfg.rg_fine, rng);
  add_conv_params(p, "fine.conv", rng, C, C, 3);
  init_residual_group(p, "recon.rg", cfg.rg_recon, rng);
  add_conv_params(p, "recon.up", rng, C * cfg.scale * cfg.scale, C, 3);
  add_conv_params(p, "recon.out", rng, 1, C, 3);
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Channel-wise L2 norm, the reduction used for feature visualization.
inline Tensor channel_l2_norm(const Tensor& f) {
  kernels::check_image(f, "channel_l2_norm");
  const int64_t B = f.size(0), C = f.size(1), plane = f.size(2) * f.size(3);
  Tensor out({B, 1, f.size(2), f.size(3)});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const double* src = f.data() + (b * C + c) * plane;
      double* dst = out.data() + b * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] += src[i] * src[i];
    }
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(out[i]);
  return out;
}

/// Intermediate tensors captured for the --dump-internals visualizations.
struct MoCoPnetInternals {
  std::vector<Tensor> feature_l2;        // per frame, after the CD residual group
  std::vector<Tensor> attention_coarse;  // per neighbour, first LSTA
  std::vector<Tensor> attention_fine;    // per neighbour, second LSTA
  std::vector<Tensor> aligned_l2;        // per neighbour, after both LSTAs
};

/// Super-resolves the centre frame of `lr_frames` (each [B,1,H,W]).
/// Output is [B,1,H*scale,W*scale].
inline Var mocopnet_forward(Tape& t, const std::vector<Tensor>& lr_frames,
                            const MoCoPnetCfg& cfg, const VarSet& p,
                            MoCoPnetInternals* internals = nullptr) {
  cfg.validate();
  check(static_cast<int>(lr_frames.size()) == cfg.frames, ErrorCode::InvalidArgument,
        "forward: expected " + std::to_string(cfg.frames) + " frames, got " +
            std::to_string(lr_frames.size()));
  for (const auto& f : lr_frames) {
    kernels::check_image(f, "forward");
    check(f.size(1) == 1, ErrorCode::ShapeMismatch, "forward: frames must be single-channel");
    check_same_shape(f, lr_frames[0], "forward");
  }

  const int T = cfg.frames;
  const int centre = (T - 1) / 2;

  // Shared shallow feature extraction + CD residual group.
  std::vector<Var> feat(T);
  for (int i = 0; i < T; ++i) {
    Var f0 = t.conv2d(t.constant(lr_frames[i]), p.at("head.w"), p.at("head.b"), 1);
    feat[i] = residual_group(t, f0, cfg.cdrg, cfg.theta, p, "cdrg");
    if (internals) internals->feature_l2.push_back(channel_l2_norm(t.value(feat[i])));
  }
  Var ref = feat[centre];

  // Coarse-to-fine alignment of every neighbour, weights shared.
  std::vector<Var> aligned(T);
  for (int i = 0; i < T; ++i) {
    if (i == centre) continue;
    Var attn1 = lsta_attention(t, ref, feat[i], cfg.lsta1, p, "lsta1");
    Var mid = lsta_apply(t, feat[i], attn1, cfg.lsta1);
    Var attn2 = lsta_attention(t, ref, mid, cfg.lsta2, p, "lsta2");
    aligned[i] = lsta_apply(t, mid, attn2, cfg.lsta2);
    if (internals) {
      internals->attention_coarse.push_back(t.value(attn1));
      internals->attention_fine.push_back(t.value(attn2));
      internals->aligned_l2.push_back(channel_l2_norm(t.value(aligned[i])));
    }
  }

  // Per-distance coarse fusion (branch weights shared), then fine fusion.
  std::vector<Var> coarse;
  for (int k = 1; k <= centre; ++k) {
    Var cat = t.concat_ch({ref, aligned[centre + k], aligned[centre - k]});
    Var red = t.conv2d(cat, p.at("coarse.reduce.w"), p.at("coarse.reduce.b"), 0);
    Var rg = residual_group(t, red, cfg.rg_coarse, cfg.theta, p, "coarse.rg");
    coarse.push_back(t.conv2d(rg, p.at("coarse.conv.w"), p.at("coarse.conv.b"), 1));
  }
  Var fused = coarse.size() == 1 ? coarse[0] : t.concat_ch(coarse);
  fused = t.conv2d(fused, p.at("fine.reduce.w"), p.at("fine.reduce.b"), 0);
  fused = residual_group(t, fused, cfg.rg_fine, cfg.theta, p, "fine.rg");
  fused = t.conv2d(fused, p.at("fine.conv.w"), p.at("fine.conv.b"), 1);

  // Reconstruction, sub-pixel upsampling, and the bicubic residual.
  Var rec = residual_group(t, fused, cfg.rg_recon, cfg.theta, p, "recon.rg");
  rec = t.conv2d(rec, p.at("recon.up.w"), p.at("recon.up.b"), 1);
  rec = t.pixel_shuffle(rec, cfg.scale);
  rec = t.conv2d(rec, p.at("recon.out.w"), p.at("recon.out.b"), 1);
  Var bicubic = t.constant(bicubic_resize(lr_frames[centre], cfg.scale));
  return t.add(rec, bicubic);
}

inline Tensor mocopnet_infer(const std::vector<Tensor>& lr_frames, const MoCoPnetCfg& cfg,
                             const ParamSet& params, MoCoPnetInternals* internals = nullptr) {
  Tape t;
  VarSet p = lift(t, params, false);
  Var sr = mocopnet_forward(t, lr_frames, cfg, p, internals);
  return t.value(sr);
}

inline double mse_loss(const Tensor& sr, const Tensor& hr) {
  check_same_shape(sr, hr, "mse_loss");
  double acc = 0.0;
  for (int64_t i = 0; i < sr.numel(); ++i) {
    const double d = sr[i] - hr[i];
    acc += d * d;
  }
  return acc / static_cast<double>(sr.numel());
}

// ---------------------------------------------------------------------------
// Training

struct TrainCfg {
  int patch = 64;   // LR patch size
  int batch = 12;
  double lr0 = 1e-3;
  std::vector<int64_t> halve_at;  // empty: {10k,20k,60k} scaled by iterations/100k
  int64_t iterations = 100000;
  bool flip = true;
  bool rotate = true;
  uint64_t seed = 0;
  int64_t log_every = 100;
};

inline std::vector<int64_t> lr_halving_marks(const TrainCfg& cfg) {
  if (!cfg.halve_at.empty()) return cfg.halve_at;
  std::vector<int64_t> marks;
  for (int64_t m : {10000, 20000, 60000}) {
    const double scaled = static_cast<double>(m) * static_cast<double>(cfg.iterations) / 100000.0;
    const int64_t mark = static_cast<int64_t>(std::llround(scaled));
    if (mark >= 1) marks.push_back(mark);
  }
  return marks;
}

/// Learning rate for a 1-based iteration index: halved after each mark.
inline double lr_at(const TrainCfg& cfg, int64_t iteration) {
  double lr = cfg.lr0;
  for (int64_t mark : lr_halving_marks(cfg))
    if (iteration > mark) lr *= 0.5;
  return lr;
}

struct TrainLogEntry {
  int64_t iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainerState {
  ParamSet params;
  AdamState adam;
  int64_t iteration = 0;
};

struct TrainResult {
  TrainerState state;
  std::vector<TrainLogEntry> history;
};

/// Seed-deterministic training loop over (LR clip, HR reference) pairs.
inline TrainResult train(const std::vector<Clip>& dataset, const MoCoPnetCfg& cfg,
                         const TrainCfg& tcfg, TrainerState start = {},
                         const std::function<void(const TrainLogEntry&)>& on_log = nullptr) {
  cfg.validate();
  check(!dataset.empty(), ErrorCode::EmptyDataset, "train: dataset is empty");
  check(tcfg.lr0 > 0.0, ErrorCode::InvalidArgument, "train: learning rate must be positive");
  check(tcfg.batch >= 1 && tcfg.iterations >= 1, ErrorCode::InvalidArgument,
        "train: bad batch/iterations");
  for (const auto& clip : dataset) {
    check(static_cast<int>(clip.lr.size()) == cfg.frames, ErrorCode::InvalidArgument,
          "train: clip frame count does not match the configuration");
    check(clip.hr.size(2) == clip.lr[0].size(2) * cfg.scale &&
              clip.hr.size(3) == clip.lr[0].size(3) * cfg.scale,
          ErrorCode::ShapeMismatch, "train: HR reference does not match LR x scale");
  }

  TrainResult result;
  if (start.params.empty()) {
    Rng init_rng(tcfg.seed);
    start.params = init_mocopnet_params(cfg, init_rng);
  }
  result.state = std::move(start);

  Rng rng(tcfg.seed + 0x517cc1b727220a95ull * static_cast<uint64_t>(result.state.iteration + 1));
  int64_t patch = tcfg.patch;
  for (const auto& clip : dataset)
    patch = std::min({patch, clip.lr[0].size(2), clip.lr[0].size(3)});
  const int64_t first_it = result.state.iteration + 1;

  for (int64_t it = first_it; it <= tcfg.iterations; ++it) {
    // Assemble the batch: random clip, crop, shared augmentation.
    std::vector<Tensor> frames(cfg.frames,
                               Tensor({tcfg.batch, 1, patch, patch}));
    Tensor hr({tcfg.batch, 1, patch * cfg.scale, patch * cfg.scale});
    for (int b = 0; b < tcfg.batch; ++b) {
      const auto& clip = dataset[static_cast<size_t>(rng.uniform_int(dataset.size()))];
      const int64_t ch = clip.lr[0].size(2), cw = clip.lr[0].size(3);
      const int64_t y0 = ch > patch ? rng.uniform_int(ch - patch + 1) : 0;
      const int64_t x0 = cw > patch ? rng.uniform_int(cw - patch + 1) : 0;
      const bool fh = tcfg.flip && rng.uniform() < 0.5;
      const bool fv = tcfg.flip && rng.uniform() < 0.5;
      const int rot = tcfg.rotate ? static_cast<int>(rng.uniform_int(4)) : 0;
      auto prep = [&](const Tensor& full, int64_t yy, int64_t xx, int64_t sz) {
        Tensor out = crop(full, yy, xx, sz, sz);
        if (fh) out = flip_horizontal(out);
        if (fv) out = flip_vertical(out);
        if (rot) out = rotate90(out, rot);
        return out;
      };
      for (int k = 0; k < cfg.frames; ++k) {
        Tensor piece = prep(clip.lr[static_cast<size_t>(k)], y0, x0, patch);
        std::copy(piece.data(), piece.data() + patch * patch,
                  frames[static_cast<size_t>(k)].data() + b * patch * patch);
      }
      Tensor hr_piece =
          prep(clip.hr, y0 * cfg.scale, x0 * cfg.scale, patch * cfg.scale);
      std::copy(hr_piece.data(), hr_piece.data() + hr_piece.numel(),
                hr.data() + b * hr_piece.numel());
    }

    Tape tape;
    VarSet p = lift(tape, result.state.params, true);
    Var sr = mocopnet_forward(tape, frames, cfg, p);
    Var loss = tape.mse(sr, tape.constant(hr));
    const double loss_value = tape.value(loss)[0];
    check(std::isfinite(loss_value), ErrorCode::NoConvergence,
          "train: loss diverged at iteration " + std::to_string(it));
    tape.backward(loss);
    auto grads = collect_grads(tape, result.state.params, p);
    result.state.adam.step(result.state.params, grads, lr_at(tcfg, it));
    result.state.iteration = it;

    if (it == first_it || it % tcfg.log_every == 0 || it == tcfg.iterations) {
      TrainLogEntry entry{it, loss_value, lr_at(tcfg, it)};
      result.history.push_back(entry);
      if (on_log) on_log(entry);
    }
  }
  return result;
}

}  // namespace moco
