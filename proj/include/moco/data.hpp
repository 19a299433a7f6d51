#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moco/image_io.hpp"
#include "moco/rng.hpp"
#include "moco/tensor.hpp"

namespace moco {

// ---------------------------------------------------------------------------
// Sequences and annotations

/// Target centroid (x,y) in pixels with extent a (width) x b (height).
struct TargetAnnotation {
  double x = 0, y = 0;
  double a = 1, b = 1;
};

struct FrameSequence {
  std::vector<Tensor> frames;  // each [1,1,H,W], intensities in [0,1]
  std::vector<std::vector<TargetAnnotation>> annotations;  // empty, or one list per frame

  int64_t count() const { return static_cast<int64_t>(frames.size()); }
  int64_t height() const { return frames.empty() ? 0 : frames[0].size(2); }
  int64_t width() const { return frames.empty() ? 0 : frames[0].size(3); }

  void validate() const {
    check(!frames.empty(), ErrorCode::EmptyDataset, "sequence has no frames");
    for (const auto& f : frames) {
      kernels::check_image(f, "FrameSequence");
      check(f.size(0) == 1 && f.size(1) == 1, ErrorCode::ShapeMismatch,
            "sequence frames must be [1,1,H,W]");
      check(f.size(2) == height() && f.size(3) == width(), ErrorCode::ShapeMismatch,
            "sequence frames have mixed sizes");
    }
    if (!annotations.empty())
      check(annotations.size() == frames.size(), ErrorCode::ShapeMismatch,
            "annotation list count must match frame count");
  }
};

// ---------------------------------------------------------------------------
// Bicubic resampling (Catmull-Rom, a = -0.5), antialiased when downscaling.
// Output size is floor(extent * factor); borders replicate; taps are
// normalized so constant images are preserved exactly.

namespace detail {

inline double cubic_u(double x) {
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((1.5 * ax - 2.5) * ax) * ax + 1.0;
  if (ax < 2.0) return ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0;
  return 0.0;
}

struct ResampleTap {
  std::vector<int64_t> first;   // first source index per output index
  std::vector<double> weights;  // taps per output index, row-major
  int64_t taps = 0;
};

inline ResampleTap cubic_taps(int64_t out_size, double factor) {
  const double scale = factor < 1.0 ? factor : 1.0;
  const double support = 2.0 / scale;
  ResampleTap plan;
  plan.taps = static_cast<int64_t>(std::ceil(2.0 * support)) + 1;
  plan.first.resize(static_cast<size_t>(out_size));
  plan.weights.resize(static_cast<size_t>(out_size * plan.taps));
  for (int64_t o = 0; o < out_size; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    const int64_t first = static_cast<int64_t>(std::floor(src - support)) + 1;
    plan.first[static_cast<size_t>(o)] = first;
    double sum = 0.0;
    for (int64_t t = 0; t < plan.taps; ++t) {
      const double w = cubic_u((src - static_cast<double>(first + t)) * scale) * scale;
      plan.weights[static_cast<size_t>(o * plan.taps + t)] = w;
      sum += w;
    }
    check(sum > 0.0, ErrorCode::InvalidArgument, "bicubic: degenerate tap sum");
    for (int64_t t = 0; t < plan.taps; ++t)
      plan.weights[static_cast<size_t>(o * plan.taps + t)] /= sum;
  }
  return plan;
}

}  // namespace detail

inline Tensor bicubic_resize(const Tensor& img, double factor) {
  kernels::check_image(img, "bicubic_resize");
  check(factor > 0.0, ErrorCode::InvalidArgument, "bicubic_resize: factor must be positive");
  const int64_t B = img.size(0), C = img.size(1), H = img.size(2), W = img.size(3);
  const int64_t Ho = static_cast<int64_t>(std::floor(static_cast<double>(H) * factor));
  const int64_t Wo = static_cast<int64_t>(std::floor(static_cast<double>(W) * factor));
  check(Ho >= 1 && Wo >= 1, ErrorCode::InvalidArgument, "bicubic_resize: output would be empty");

  const auto rows = detail::cubic_taps(Ho, factor);
  const auto cols = detail::cubic_taps(Wo, factor);

  Tensor out({B, C, Ho, Wo});
  std::vector<double> tmp(static_cast<size_t>(Ho * W));
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = img.data() + bc * H * W;
    // vertical pass
    for (int64_t oy = 0; oy < Ho; ++oy) {
      const int64_t first = rows.first[static_cast<size_t>(oy)];
      for (int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int64_t t = 0; t < rows.taps; ++t) {
          const int64_t y = std::clamp<int64_t>(first + t, 0, H - 1);
          acc += rows.weights[static_cast<size_t>(oy * rows.taps + t)] * src[y * W + x];
        }
        tmp[static_cast<size_t>(oy * W + x)] = acc;
      }
    }
    // horizontal pass
    double* dst = out.data() + bc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const int64_t first = cols.first[static_cast<size_t>(ox)];
        double acc = 0.0;
        for (int64_t t = 0; t < cols.taps; ++t) {
          const int64_t x = std::clamp<int64_t>(first + t, 0, W - 1);
          acc += cols.weights[static_cast<size_t>(ox * cols.taps + t)] *
                 tmp[static_cast<size_t>(oy * W + x)];
        }
        dst[oy * Wo + ox] = acc;
      }
    }
  }
  return out;
}

/// Bicubic downsampling of every frame by 1/scale; annotations rescale with it.
inline FrameSequence degrade(const FrameSequence& hr, int scale) {
  hr.validate();
  check(scale >= 1, ErrorCode::InvalidArgument, "degrade: scale must be >= 1");
  check(hr.height() % scale == 0 && hr.width() % scale == 0, ErrorCode::InvalidArgument,
        "degrade: frame size must be divisible by the scale factor");
  FrameSequence lr;
  for (const auto& f : hr.frames) lr.frames.push_back(bicubic_resize(f, 1.0 / scale));
  for (const auto& per_frame : hr.annotations) {
    std::vector<TargetAnnotation> scaled;
    for (const auto& ann : per_frame)
      scaled.push_back({ann.x / scale, ann.y / scale, ann.a / scale, ann.b / scale});
    lr.annotations.push_back(std::move(scaled));
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Synthetic sequences

struct SynthSpec {
  int64_t height = 64, width = 64;
  int frames = 7;

  double background_level = 0.2;
  std::array<double, 2> background_gradient = {0.0, 0.0};  // total delta across (y, x)
  int clutter_blobs = 0;
  double clutter_amplitude = 0.3;
  double clutter_sigma_min = 4.0, clutter_sigma_max = 12.0;
  double noise_sigma = 0.0;

  std::string target_shape = "square";  // "square" or "gauss"
  double target_a = 3.0, target_b = 3.0;  // width x height, pixels
  double target_peak = 0.8;
  std::array<double, 2> target_pos0 = {32.0, 32.0};     // (x, y)
  std::array<double, 2> target_velocity = {0.0, 0.0};   // (dx, dy) per frame

  uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"height", s.height},
                     {"width", s.width},
                     {"frames", s.frames},
                     {"background_level", s.background_level},
                     {"background_gradient", s.background_gradient},
                     {"clutter_blobs", s.clutter_blobs},
                     {"clutter_amplitude", s.clutter_amplitude},
                     {"clutter_sigma_min", s.clutter_sigma_min},
                     {"clutter_sigma_max", s.clutter_sigma_max},
                     {"noise_sigma", s.noise_sigma},
                     {"target_shape", s.target_shape},
                     {"target_a", s.target_a},
                     {"target_b", s.target_b},
                     {"target_peak", s.target_peak},
                     {"target_pos0", s.target_pos0},
                     {"target_velocity", s.target_velocity},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  SynthSpec defaults;
  s.height = j.value("height", defaults.height);
  s.width = j.value("width", defaults.width);
  s.frames = j.value("frames", defaults.frames);
  s.background_level = j.value("background_level", defaults.background_level);
  s.background_gradient = j.value("background_gradient", defaults.background_gradient);
  s.clutter_blobs = j.value("clutter_blobs", defaults.clutter_blobs);
  s.clutter_amplitude = j.value("clutter_amplitude", defaults.clutter_amplitude);
  s.clutter_sigma_min = j.value("clutter_sigma_min", defaults.clutter_sigma_min);
  s.clutter_sigma_max = j.value("clutter_sigma_max", defaults.clutter_sigma_max);
  s.noise_sigma = j.value("noise_sigma", defaults.noise_sigma);
  s.target_shape = j.value("target_shape", defaults.target_shape);
  s.target_a = j.value("target_a", defaults.target_a);
  s.target_b = j.value("target_b", defaults.target_b);
  s.target_peak = j.value("target_peak", defaults.target_peak);
  s.target_pos0 = j.value("target_pos0", defaults.target_pos0);
  s.target_velocity = j.value("target_velocity", defaults.target_velocity);
  s.seed = j.value("seed", defaults.seed);
}

/// Renders the moving-target sequence described by the spec. Fractional
/// target positions are bilinearly splatted; annotations carry the exact
/// ground-truth centroid for every frame.
inline FrameSequence synth_sequence(const SynthSpec& spec) {
  check(spec.height >= 4 && spec.width >= 4, ErrorCode::InvalidArgument, "synth: image too small");
  check(spec.frames >= 1, ErrorCode::InvalidArgument, "synth: need at least one frame");
  check(spec.noise_sigma >= 0.0, ErrorCode::InvalidArgument, "synth: negative noise sigma");
  check(spec.target_a >= 1.0 && spec.target_b >= 1.0, ErrorCode::InvalidArgument,
        "synth: target extent must be >= 1");
  check(spec.target_shape == "square" || spec.target_shape == "gauss",
        ErrorCode::InvalidArgument, "synth: unknown target shape");

  // The target (including splat spill) must stay inside every frame.
  for (int t = 0; t < spec.frames; ++t) {
    const double cx = spec.target_pos0[0] + t * spec.target_velocity[0];
    const double cy = spec.target_pos0[1] + t * spec.target_velocity[1];
    const double rx = (spec.target_a - 1.0) / 2.0 + 1.0;
    const double ry = (spec.target_b - 1.0) / 2.0 + 1.0;
    check(cx - rx >= 0.0 && cx + rx <= spec.width - 1 && cy - ry >= 0.0 &&
              cy + ry <= spec.height - 1,
          ErrorCode::OutOfBounds,
          "synth: target leaves the frame bounds at frame " + std::to_string(t));
  }

  Rng rng(spec.seed);
  const int64_t H = spec.height, W = spec.width;

  // Static background: level + linear gradient + separable Gaussian blobs.
  Tensor bg({1, 1, H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      bg.at(0, 0, y, x) = spec.background_level +
                          spec.background_gradient[0] * (static_cast<double>(y) / (H - 1)) +
                          spec.background_gradient[1] * (static_cast<double>(x) / (W - 1));
  for (int blob = 0; blob < spec.clutter_blobs; ++blob) {
    const double amp = spec.clutter_amplitude * rng.uniform(0.3, 1.0);
    const double cy = rng.uniform(0, static_cast<double>(H - 1));
    const double cx = rng.uniform(0, static_cast<double>(W - 1));
    const double sy = rng.uniform(spec.clutter_sigma_min, spec.clutter_sigma_max);
    const double sx = rng.uniform(spec.clutter_sigma_min, spec.clutter_sigma_max);
    for (int64_t y = 0; y < H; ++y) {
      const double gy = std::exp(-(y - cy) * (y - cy) / (2 * sy * sy));
      for (int64_t x = 0; x < W; ++x)
        bg.at(0, 0, y, x) += amp * gy * std::exp(-(x - cx) * (x - cx) / (2 * sx * sx));
    }
  }

  // Target profile on its own (b rows) x (a cols) grid.
  const int64_t pa = static_cast<int64_t>(std::lround(spec.target_a));
  const int64_t pb = static_cast<int64_t>(std::lround(spec.target_b));
  Tensor profile({1, 1, pb, pa});
  for (int64_t py = 0; py < pb; ++py)
    for (int64_t px = 0; px < pa; ++px) {
      if (spec.target_shape == "square") {
        profile.at(0, 0, py, px) = spec.target_peak;
      } else {
        const double dy = py - (pb - 1) / 2.0, dx = px - (pa - 1) / 2.0;
        const double s = std::max(1.0, std::min(spec.target_a, spec.target_b) / 4.0);
        profile.at(0, 0, py, px) = spec.target_peak * std::exp(-(dy * dy + dx * dx) / (2 * s * s));
      }
    }

  FrameSequence seq;
  for (int t = 0; t < spec.frames; ++t) {
    Tensor frame = bg;
    const double cx = spec.target_pos0[0] + t * spec.target_velocity[0];
    const double cy = spec.target_pos0[1] + t * spec.target_velocity[1];
    for (int64_t py = 0; py < pb; ++py)
      for (int64_t px = 0; px < pa; ++px) {
        const double y = cy - (pb - 1) / 2.0 + py;
        const double x = cx - (pa - 1) / 2.0 + px;
        kernels::bilinear_scatter(frame.data(), H, W, y, x, profile.at(0, 0, py, px));
      }
    if (spec.noise_sigma > 0.0)
      for (int64_t i = 0; i < frame.numel(); ++i) frame[i] += spec.noise_sigma * rng.normal();
    for (int64_t i = 0; i < frame.numel(); ++i) frame[i] = std::clamp(frame[i], 0.0, 1.0);
    seq.frames.push_back(std::move(frame));
    seq.annotations.push_back({TargetAnnotation{cx, cy, spec.target_a, spec.target_b}});
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Sequence directory I/O. Frames are numerically ordered image files,
// annotations live in a plain-text sidecar: one "frame_index x y a b" line
// per target.

inline void save_annotations(const std::string& path,
                             const std::vector<std::vector<TargetAnnotation>>& annotations) {
  std::ofstream out(path);
  check(out.good(), ErrorCode::IoError, "cannot write " + path);
  out << "# frame_index x y a b\n";
  for (size_t f = 0; f < annotations.size(); ++f)
    for (const auto& ann : annotations[f])
      out << f << " " << ann.x << " " << ann.y << " " << ann.a << " " << ann.b << "\n";
}

inline std::vector<std::vector<TargetAnnotation>> load_annotations(const std::string& path,
                                                                   size_t frame_count) {
  std::ifstream in(path);
  check(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::vector<std::vector<TargetAnnotation>> annotations(frame_count);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    long frame = -1;
    TargetAnnotation ann;
    if (!(ls >> frame)) continue;  // blank line
    check(static_cast<bool>(ls >> ann.x >> ann.y >> ann.a >> ann.b), ErrorCode::ParseError,
          path + ":" + std::to_string(lineno) + ": malformed annotation line");
    check(frame >= 0 && static_cast<size_t>(frame) < frame_count, ErrorCode::ParseError,
          path + ":" + std::to_string(lineno) + ": frame index out of range");
    annotations[static_cast<size_t>(frame)].push_back(ann);
  }
  return annotations;
}

inline void save_sequence(const FrameSequence& seq, const std::string& dir,
                          const std::string& format = "pgm", int bit_depth = 16) {
  seq.validate();
  check(format == "pgm" || format == "png", ErrorCode::InvalidArgument,
        "save_sequence: format must be pgm or png");
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05zu.%s", i, format.c_str());
    save_gray_image((std::filesystem::path(dir) / name).string(), seq.frames[i], bit_depth);
  }
  if (!seq.annotations.empty())
    save_annotations((std::filesystem::path(dir) / "annotations.txt").string(), seq.annotations);
}

inline FrameSequence load_sequence(const std::string& dir) {
  check(std::filesystem::is_directory(dir), ErrorCode::IoError, dir + " is not a directory");
  std::vector<std::pair<long long, std::filesystem::path>> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext != ".pgm" && ext != ".pnm" && ext != ".png") continue;
    // Numeric ordering by the digits embedded in the stem.
    const std::string stem = entry.path().stem().string();
    std::string digits;
    for (char c : stem)
      if (std::isdigit(static_cast<unsigned char>(c))) digits += c;
    const long long key = digits.empty() ? -1 : std::stoll(digits);
    files.emplace_back(key, entry.path());
  }
  check(!files.empty(), ErrorCode::EmptyDataset, dir + " contains no frames");
  std::sort(files.begin(), files.end());

  FrameSequence seq;
  for (const auto& [key, path] : files) {
    Tensor frame = load_gray_image(path.string());
    if (!seq.frames.empty())
      check(frame.size(2) == seq.height() && frame.size(3) == seq.width(),
            ErrorCode::ShapeMismatch, dir + ": frames have mixed sizes");
    seq.frames.push_back(std::move(frame));
  }
  const auto sidecar = std::filesystem::path(dir) / "annotations.txt";
  if (std::filesystem::exists(sidecar))
    seq.annotations = load_annotations(sidecar.string(), seq.frames.size());
  return seq;
}

// ---------------------------------------------------------------------------
// Dataset manifest: sequence directories with split tags.

struct ManifestEntry {
  std::string dir;
  std::string split;  // e.g. "train" / "test"
};

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), ErrorCode::IoError, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  check(j.contains("sequences") && j["sequences"].is_array(), ErrorCode::ParseError,
        path + ": manifest must contain a \"sequences\" array");
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  for (const auto& e : j["sequences"]) {
    ManifestEntry m;
    m.dir = e.at("dir").get<std::string>();
    m.split = e.value("split", std::string("train"));
    if (!std::filesystem::path(m.dir).is_absolute()) m.dir = (base / m.dir).string();
    entries.push_back(std::move(m));
  }
  return entries;
}

// ---------------------------------------------------------------------------
// Training clips and augmentation helpers.

/// One training sample: T LR frames plus the HR reference (centre) frame.
struct Clip {
  std::vector<Tensor> lr;
  Tensor hr;
};

inline std::vector<Clip> make_clips(const FrameSequence& hr_seq, int frames, int scale) {
  hr_seq.validate();
  check(frames >= 1 && frames % 2 == 1, ErrorCode::InvalidArgument,
        "make_clips: frame count must be odd");
  check(hr_seq.count() >= frames, ErrorCode::EmptyDataset,
        "make_clips: sequence shorter than the temporal window");
  FrameSequence lr_seq = degrade(hr_seq, scale);
  std::vector<Clip> clips;
  for (int64_t t0 = 0; t0 + frames <= hr_seq.count(); ++t0) {
    Clip c;
    for (int k = 0; k < frames; ++k) c.lr.push_back(lr_seq.frames[t0 + k]);
    c.hr = hr_seq.frames[t0 + (frames - 1) / 2];
    clips.push_back(std::move(c));
  }
  return clips;
}

inline Tensor flip_horizontal(const Tensor& t) {
  kernels::check_image(t, "flip_horizontal");
  Tensor out(t.shape());
  const int64_t planes = t.size(0) * t.size(1), H = t.size(2), W = t.size(3);
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        out.data()[(p * H + y) * W + x] = t.data()[(p * H + y) * W + (W - 1 - x)];
  return out;
}

inline Tensor flip_vertical(const Tensor& t) {
  kernels::check_image(t, "flip_vertical");
  Tensor out(t.shape());
  const int64_t planes = t.size(0) * t.size(1), H = t.size(2), W = t.size(3);
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        out.data()[(p * H + y) * W + x] = t.data()[(p * H + (H - 1 - y)) * W + x];
  return out;
}

/// Quarter-turn rotations; odd turn counts require square frames.
inline Tensor rotate90(const Tensor& t, int turns) {
  kernels::check_image(t, "rotate90");
  turns = ((turns % 4) + 4) % 4;
  if (turns == 0) return t;
  const int64_t planes = t.size(0) * t.size(1), H = t.size(2), W = t.size(3);
  if (turns % 2 == 1)
    check(H == W, ErrorCode::InvalidArgument, "rotate90: odd turns need square frames");
  Tensor out(t.shape());
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        int64_t sy = y, sx = x;
        switch (turns) {
          case 1: sy = W - 1 - x; sx = y; break;
          case 2: sy = H - 1 - y; sx = W - 1 - x; break;
          case 3: sy = x; sx = H - 1 - y; break;
        }
        out.data()[(p * H + y) * W + x] = t.data()[(p * H + sy) * W + sx];
      }
  return out;
}

inline Tensor crop(const Tensor& t, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  kernels::check_image(t, "crop");
  check(y0 >= 0 && x0 >= 0 && y0 + h <= t.size(2) && x0 + w <= t.size(3),
        ErrorCode::OutOfBounds, "crop: window exceeds the frame");
  Tensor out({t.size(0), t.size(1), h, w});
  const int64_t planes = t.size(0) * t.size(1);
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < h; ++y)
      std::copy(t.data() + (p * t.size(2) + y0 + y) * t.size(3) + x0,
                t.data() + (p * t.size(2) + y0 + y) * t.size(3) + x0 + w,
                out.data() + (p * h + y) * w);
  return out;
}

}  // namespace moco
