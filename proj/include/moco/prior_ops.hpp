#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "moco/autograd.hpp"
#include "moco/params.hpp"
#include "moco/rng.hpp"

namespace moco {

// --------------------------------------------------------------------------
// Dilated local contrast measure. Reference operator kept for comparison and
// visualization; it is not part of any trained path.
//
// f(x,y) = min over the four direction pairs (i,j) of
//          (S(x,y) - S(x-i,y-j)) * (S(x,y) - S(x+i,y+j)),
// with zero-valued reads outside the grid.
inline Tensor dlcm(const Tensor& feature, int d) {
  kernels::check_image(feature, "dlcm");
  check(feature.size(0) == 1 && feature.size(1) == 1, ErrorCode::ShapeMismatch,
        "dlcm: expects a single-channel [1,1,H,W] feature");
  check(d >= 1, ErrorCode::InvalidArgument, "dlcm: dilation must be >= 1");
  const std::array<std::array<int, 2>, 4> dirs = {{{d, d}, {d, 0}, {d, -d}, {0, d}}};
  Tensor out({1, 1, feature.size(2), feature.size(3)});
  bool first = true;
  for (const auto& [i, j] : dirs) {
    Tensor back = kernels::translate_fwd(feature, -i, -j);
    Tensor fwd = kernels::translate_fwd(feature, i, j);
    for (int64_t n = 0; n < out.numel(); ++n) {
      const double v = (feature[n] - back[n]) * (feature[n] - fwd[n]);
      out[n] = first ? v : std::min(out[n], v);
    }
    first = false;
  }
  return out;
}

// --------------------------------------------------------------------------
// Central difference convolution:
//   g = sum_{(i,j) in Omega} w_ij * (S(x+i,y+j) - theta * S(x,y))
// which factors into a plain convolution minus theta * (kernel sum) applied
// as a 1x1 convolution. Omega is the full k x k support.

struct CdConvLayer {
  Tensor weight;  // [Cout, Cin, k, k]
  Tensor bias;    // [Cout]
  double theta = 0.7;

  void validate() const {
    kernels::check_image(weight, "CdConvLayer");
    check(weight.size(2) % 2 == 1, ErrorCode::InvalidArgument, "CdConvLayer: kernel must be odd");
    check(theta >= 0.0 && theta <= 1.0, ErrorCode::InvalidArgument,
          "CdConvLayer: theta must lie in [0,1]");
  }
};

inline Var cd_conv(Tape& t, Var input, Var weight, Var bias, double theta, int dilation = 1) {
  check(theta >= 0.0 && theta <= 1.0, ErrorCode::InvalidArgument, "cd_conv: theta not in [0,1]");
  const int k = static_cast<int>(t.value(weight).size(2));
  const int pad = dilation * (k - 1) / 2;
  Var main = t.conv2d(input, weight, bias, pad, dilation);
  if (theta == 0.0) return main;
  Var ksum = t.sum_kernel_hw(weight);
  Var center = t.conv2d(input, ksum, Var{}, 0);
  return t.sub(main, t.scale(center, theta));
}

inline Tensor cd_conv_eval(const Tensor& input, const CdConvLayer& layer, int dilation = 1) {
  layer.validate();
  Tape t;
  Var out = cd_conv(t, t.constant(input), t.constant(layer.weight), t.constant(layer.bias),
                    layer.theta, dilation);
  return t.value(out);
}

// --------------------------------------------------------------------------
// Residual groups built from residual dense blocks. Each block runs K
// 3x3 convolutions with growth rate G over densely concatenated features
// (the first one central-difference when configured), fuses back to C
// channels with a 1x1 convolution and adds the block input. Block outputs
// are concatenated, fused to C channels and added to the group input.

struct ResidualGroupCfg {
  int blocks = 1;           // D
  int convs_per_block = 2;  // K
  int growth = 8;           // G
  int channels = 16;        // C
  bool central_difference = false;

  void validate() const {
    check(blocks >= 1, ErrorCode::InvalidArgument, "ResidualGroupCfg: D must be >= 1");
    check(convs_per_block >= 2, ErrorCode::InvalidArgument, "ResidualGroupCfg: K must be >= 2");
    check(growth >= 1, ErrorCode::InvalidArgument, "ResidualGroupCfg: G must be >= 1");
    check(channels >= 1, ErrorCode::InvalidArgument, "ResidualGroupCfg: C must be >= 1");
  }
};

/// Symmetric uniform fan-in initialization for a [Co,Ci,k,k] kernel.
inline Tensor conv_weight_init(Rng& rng, int64_t cout, int64_t cin, int64_t k) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  return rng.uniform_tensor({cout, cin, k, k}, -bound, bound);
}

inline void add_conv_params(ParamSet& p, const std::string& name, Rng& rng, int64_t cout,
                            int64_t cin, int64_t k) {
  p.add(name + ".w", conv_weight_init(rng, cout, cin, k));
  p.add(name + ".b", Tensor::zeros({cout}));
}

inline void init_residual_group(ParamSet& p, const std::string& prefix,
                                const ResidualGroupCfg& cfg, Rng& rng) {
  cfg.validate();
  const int C = cfg.channels, K = cfg.convs_per_block, G = cfg.growth;
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string bp = prefix + ".b" + std::to_string(b);
    for (int j = 0; j < K; ++j)
      add_conv_params(p, bp + ".c" + std::to_string(j), rng, G, C + j * G, 3);
    add_conv_params(p, bp + ".fuse", rng, C, C + K * G, 1);
  }
  add_conv_params(p, prefix + ".fuse", rng, C, C * cfg.blocks, 1);
}

inline Var residual_group(Tape& t, Var input, const ResidualGroupCfg& cfg, double theta,
                          const VarSet& p, const std::string& prefix) {
  cfg.validate();
  check(t.value(input).size(1) == cfg.channels, ErrorCode::ShapeMismatch,
        "residual_group: input channels do not match the configuration");
  Var h = input;
  std::vector<Var> block_outs;
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string bp = prefix + ".b" + std::to_string(b);
    std::vector<Var> feats = {h};
    for (int j = 0; j < cfg.convs_per_block; ++j) {
      const std::string cp = bp + ".c" + std::to_string(j);
      Var in = feats.size() == 1 ? feats[0] : t.concat_ch(feats);
      Var y;
      if (j == 0 && cfg.central_difference)
        y = cd_conv(t, in, p.at(cp + ".w"), p.at(cp + ".b"), theta);
      else
        y = t.conv2d(in, p.at(cp + ".w"), p.at(cp + ".b"), 1);
      feats.push_back(y);
    }
    Var fused = t.conv2d(t.concat_ch(feats), p.at(bp + ".fuse.w"), p.at(bp + ".fuse.b"), 0);
    h = t.add(h, fused);
    block_outs.push_back(h);
  }
  Var cat = block_outs.size() == 1 ? block_outs[0] : t.concat_ch(block_outs);
  Var fused = t.conv2d(cat, p.at(prefix + ".fuse.w"), p.at(prefix + ".fuse.b"), 0);
  return t.add(input, fused);
}

// --------------------------------------------------------------------------
// Local spatio-temporal attention. Query/key features are 1x1-compressed,
// the per-pixel response over the kern^2 dilated neighbourhood of the
// neighbour frame is softmaxed into an attention map, and the original
// (uncompressed) neighbour feature is gathered with it.

struct LstaCfg {
  int kern = 3;
  double dila = 1.0;  // integer or fractional dilation rate
  int cr = 8;         // channel compression ratio

  void validate() const {
    check(kern >= 1 && kern % 2 == 1, ErrorCode::InvalidArgument, "LstaCfg: kern must be odd");
    check(dila > 0.0, ErrorCode::InvalidArgument, "LstaCfg: dila must be positive");
    check(cr >= 1, ErrorCode::InvalidArgument, "LstaCfg: cr must be >= 1");
  }
};

/// Neighbourhood offsets in row-major order; the centre is index kern^2 / 2.
inline std::vector<std::array<double, 2>> lsta_offsets(const LstaCfg& cfg) {
  cfg.validate();
  std::vector<std::array<double, 2>> offsets;
  const int half = (cfg.kern - 1) / 2;
  for (int oy = -half; oy <= half; ++oy)
    for (int ox = -half; ox <= half; ++ox)
      offsets.push_back({oy * cfg.dila, ox * cfg.dila});
  return offsets;
}

inline void init_lsta(ParamSet& p, const std::string& prefix, const LstaCfg& cfg, int channels,
                      Rng& rng) {
  cfg.validate();
  check(channels % cfg.cr == 0, ErrorCode::InvalidArgument,
        "lsta: channels must be divisible by the compression ratio");
  add_conv_params(p, prefix + ".q", rng, channels / cfg.cr, channels, 1);
  add_conv_params(p, prefix + ".k", rng, channels / cfg.cr, channels, 1);
}

inline Var lsta_attention(Tape& t, Var ref, Var nbr, const LstaCfg& cfg, const VarSet& p,
                          const std::string& prefix) {
  cfg.validate();
  check_same_shape(t.value(ref), t.value(nbr), "lsta_attention");
  check(t.value(ref).size(1) % cfg.cr == 0, ErrorCode::InvalidArgument,
        "lsta: channels must be divisible by the compression ratio");
  Var f0 = t.conv2d(ref, p.at(prefix + ".q.w"), p.at(prefix + ".q.b"), 0);
  Var f1 = t.conv2d(nbr, p.at(prefix + ".k.w"), p.at(prefix + ".k.b"), 0);
  std::vector<Var> responses;
  for (const auto& [dy, dx] : lsta_offsets(cfg))
    responses.push_back(t.sum_ch(t.mul(f0, t.translate(f1, dy, dx))));
  return t.softmax(t.concat_ch(responses), 1);
}

inline Var lsta_apply(Tape& t, Var nbr, Var attention, const LstaCfg& cfg) {
  cfg.validate();
  const auto offsets = lsta_offsets(cfg);
  check(t.value(attention).size(1) == static_cast<int64_t>(offsets.size()),
        ErrorCode::ShapeMismatch, "lsta_apply: attention channels must equal kern^2");
  Var out{};
  for (size_t n = 0; n < offsets.size(); ++n) {
    Var gathered = t.translate(nbr, offsets[n][0], offsets[n][1]);
    Var term = t.mul_bc(gathered, t.slice_ch(attention, n, n + 1));
    out = out.valid() ? t.add(out, term) : term;
  }
  return out;
}

inline Var lsta(Tape& t, Var ref, Var nbr, const LstaCfg& cfg, const VarSet& p,
                const std::string& prefix) {
  Var attention = lsta_attention(t, ref, nbr, cfg, p, prefix);
  return lsta_apply(t, nbr, attention, cfg);
}

/// Checks the AttentionMap contract: entries >= 0 summing to 1 per site.
inline bool attention_is_valid(const Tensor& attention, double tol = 1e-6) {
  if (attention.dim() != 4) return false;
  const int64_t B = attention.size(0), N = attention.size(1);
  const int64_t plane = attention.size(2) * attention.size(3);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < plane; ++i) {
      double s = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double v = attention.data()[(b * N + n) * plane + i];
        if (v < 0.0) return false;
        s += v;
      }
      if (std::abs(s - 1.0) > tol) return false;
    }
  return true;
}

}  // namespace moco
