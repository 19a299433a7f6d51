#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "moco/kernels.hpp"
#include "moco/tensor.hpp"

// Grayscale image files: binary/ascii PGM and non-interlaced grayscale PNG
// (8- or 16-bit). Loading normalizes to [0,1] by the container's max code
// value; saving quantizes by the requested bit depth, so a save/load round
// trip of lattice values is lossless.

namespace moco {

namespace detail {

inline uint32_t be32(const unsigned char* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void put_be32(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCode::IoError, "cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline int png_paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

struct GrayImage {
  int64_t width = 0;
  int64_t height = 0;
  int bit_depth = 8;                // 8 or 16
  std::vector<uint16_t> samples;    // row-major
};

// ---------------------------------------------------------------------------
// PGM

inline GrayImage load_pgm(const std::string& path) {
  auto bytes = detail::read_file_bytes(path);
  check(bytes.size() >= 2, ErrorCode::ParseError, path + ": truncated PGM");
  const bool binary = bytes[1] == '5';
  check(bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2'), ErrorCode::ParseError,
        path + ": not a PGM file");

  size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    check(pos < bytes.size(), ErrorCode::ParseError, path + ": truncated PGM header");
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
      any = true;
    }
    check(any, ErrorCode::ParseError, path + ": malformed PGM header");
    return v;
  };

  GrayImage img;
  img.width = next_token();
  img.height = next_token();
  const long maxval = next_token();
  check(img.width >= 1 && img.height >= 1, ErrorCode::ParseError, path + ": bad PGM size");
  check(maxval > 0 && maxval < 65536, ErrorCode::ParseError, path + ": bad PGM maxval");
  img.bit_depth = maxval > 255 ? 16 : 8;
  img.samples.resize(static_cast<size_t>(img.width * img.height));

  if (binary) {
    ++pos;  // single whitespace after maxval
    const size_t bpp = img.bit_depth == 16 ? 2 : 1;
    check(bytes.size() - pos >= img.samples.size() * bpp, ErrorCode::ParseError,
          path + ": truncated PGM payload");
    for (size_t i = 0; i < img.samples.size(); ++i) {
      if (bpp == 2) {
        img.samples[i] = static_cast<uint16_t>((bytes[pos] << 8) | bytes[pos + 1]);
        pos += 2;
      } else {
        img.samples[i] = bytes[pos++];
      }
    }
  } else {
    for (size_t i = 0; i < img.samples.size(); ++i)
      img.samples[i] = static_cast<uint16_t>(next_token());
  }
  return img;
}

inline void save_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorCode::IoError, "cannot write " + path);
  const int maxval = img.bit_depth == 16 ? 65535 : 255;
  out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
  for (uint16_t s : img.samples) {
    if (img.bit_depth == 16) {
      out.put(static_cast<char>(s >> 8));
      out.put(static_cast<char>(s & 0xff));
    } else {
      out.put(static_cast<char>(s & 0xff));
    }
  }
  check(out.good(), ErrorCode::IoError, "failed writing " + path);
}

// ---------------------------------------------------------------------------
// PNG (grayscale, non-interlaced)

inline GrayImage load_png(const std::string& path) {
  auto bytes = detail::read_file_bytes(path);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  check(bytes.size() > 8 && std::memcmp(bytes.data(), sig, 8) == 0, ErrorCode::ParseError,
        path + ": not a PNG file");

  GrayImage img;
  std::vector<unsigned char> idat;
  size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= bytes.size() && !saw_iend) {
    const uint32_t len = detail::be32(&bytes[pos]);
    check(pos + 12 + len <= bytes.size(), ErrorCode::ParseError, path + ": truncated PNG chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const unsigned char* data = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      check(len == 13, ErrorCode::ParseError, path + ": bad IHDR");
      img.width = detail::be32(data);
      img.height = detail::be32(data + 4);
      img.bit_depth = data[8];
      const int color_type = data[9], interlace = data[12];
      check(color_type == 0, ErrorCode::ParseError, path + ": only grayscale PNG supported");
      check(img.bit_depth == 8 || img.bit_depth == 16, ErrorCode::ParseError,
            path + ": only 8/16-bit PNG supported");
      check(interlace == 0, ErrorCode::ParseError, path + ": interlaced PNG not supported");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  check(saw_ihdr && !idat.empty(), ErrorCode::ParseError, path + ": missing PNG chunks");

  const size_t bpp = img.bit_depth == 16 ? 2 : 1;
  const size_t stride = static_cast<size_t>(img.width) * bpp;
  std::vector<unsigned char> raw(static_cast<size_t>(img.height) * (stride + 1));
  uLongf raw_len = raw.size();
  const int zrc = uncompress(raw.data(), &raw_len, idat.data(), idat.size());
  check(zrc == Z_OK && raw_len == raw.size(), ErrorCode::ParseError,
        path + ": PNG inflate failed");

  // Undo per-row filters.
  std::vector<unsigned char> prev(stride, 0);
  img.samples.resize(static_cast<size_t>(img.width * img.height));
  for (int64_t y = 0; y < img.height; ++y) {
    const unsigned char filter = raw[static_cast<size_t>(y) * (stride + 1)];
    unsigned char* row = &raw[static_cast<size_t>(y) * (stride + 1) + 1];
    check(filter <= 4, ErrorCode::ParseError, path + ": bad PNG filter type");
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= bpp ? row[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= bpp ? prev[i - bpp] : 0;
      int v = row[i];
      switch (filter) {
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::png_paeth(a, b, c); break;
        default: break;
      }
      row[i] = static_cast<unsigned char>(v & 0xff);
    }
    for (int64_t x = 0; x < img.width; ++x)
      img.samples[static_cast<size_t>(y * img.width + x)] =
          bpp == 2 ? static_cast<uint16_t>((row[2 * x] << 8) | row[2 * x + 1])
                   : static_cast<uint16_t>(row[x]);
    std::memcpy(prev.data(), row, stride);
  }
  return img;
}

inline void save_png(const std::string& path, const GrayImage& img) {
  const size_t bpp = img.bit_depth == 16 ? 2 : 1;
  const size_t stride = static_cast<size_t>(img.width) * bpp;
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<size_t>(img.height) * (stride + 1));
  for (int64_t y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    for (int64_t x = 0; x < img.width; ++x) {
      const uint16_t s = img.samples[static_cast<size_t>(y * img.width + x)];
      if (bpp == 2) {
        raw.push_back(static_cast<unsigned char>(s >> 8));
        raw.push_back(static_cast<unsigned char>(s & 0xff));
      } else {
        raw.push_back(static_cast<unsigned char>(s & 0xff));
      }
    }
  }
  uLongf bound = compressBound(raw.size());
  std::vector<unsigned char> compressed(bound);
  const int zrc = compress2(compressed.data(), &bound, raw.data(), raw.size(), 6);
  check(zrc == Z_OK, ErrorCode::IoError, path + ": PNG deflate failed");
  compressed.resize(bound);

  std::vector<unsigned char> out;
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.insert(out.end(), sig, sig + 8);
  auto chunk = [&](const char* type, const std::vector<unsigned char>& data) {
    detail::put_be32(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    detail::put_be32(out, crc);
  };
  std::vector<unsigned char> ihdr;
  detail::put_be32(ihdr, static_cast<uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(static_cast<unsigned char>(img.bit_depth));
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // deflate
  ihdr.push_back(0);  // adaptive filtering
  ihdr.push_back(0);  // no interlace
  chunk("IHDR", ihdr);
  chunk("IDAT", compressed);
  chunk("IEND", {});

  std::ofstream f(path, std::ios::binary);
  check(f.good(), ErrorCode::IoError, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  check(f.good(), ErrorCode::IoError, "failed writing " + path);
}

// ---------------------------------------------------------------------------
// Tensor bridge

inline GrayImage quantize(const Tensor& frame, int bit_depth) {
  kernels::check_image(frame, "quantize");
  check(frame.size(0) == 1 && frame.size(1) == 1, ErrorCode::ShapeMismatch,
        "quantize: expected [1,1,H,W]");
  check(bit_depth == 8 || bit_depth == 16, ErrorCode::InvalidArgument, "bad bit depth");
  GrayImage img;
  img.height = frame.size(2);
  img.width = frame.size(3);
  img.bit_depth = bit_depth;
  const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
  img.samples.resize(static_cast<size_t>(frame.numel()));
  for (int64_t i = 0; i < frame.numel(); ++i) {
    const double v = std::clamp(frame[i], 0.0, 1.0);
    img.samples[static_cast<size_t>(i)] = static_cast<uint16_t>(std::lround(v * maxval));
  }
  return img;
}

inline Tensor to_tensor(const GrayImage& img) {
  Tensor t({1, 1, img.height, img.width});
  const double inv = 1.0 / (img.bit_depth == 16 ? 65535.0 : 255.0);
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<double>(img.samples[static_cast<size_t>(i)]) * inv;
  return t;
}

/// Dispatches on magic bytes; bit_depth (if non-null) receives the container depth.
inline Tensor load_gray_image(const std::string& path, int* bit_depth = nullptr) {
  auto head = detail::read_file_bytes(path);
  check(head.size() >= 2, ErrorCode::ParseError, path + ": empty image file");
  GrayImage img;
  if (head[0] == 'P' && (head[1] == '5' || head[1] == '2'))
    img = load_pgm(path);
  else if (head[0] == 0x89 && head[1] == 'P')
    img = load_png(path);
  else
    throw Error(ErrorCode::ParseError, path + ": unsupported image format");
  if (bit_depth) *bit_depth = img.bit_depth;
  return to_tensor(img);
}

inline void save_gray_image(const std::string& path, const Tensor& frame, int bit_depth = 16) {
  GrayImage img = quantize(frame, bit_depth);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png")
    save_png(path, img);
  else
    save_pgm(path, img);
}

}  // namespace moco
