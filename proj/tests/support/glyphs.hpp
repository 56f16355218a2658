#pragma once

// Procedural 28x28 glyph corpus: ten stroke-based shape classes with random
// translation, scale, stroke amplitude, and speckle noise. Stands in for a
// handwritten-digit subset in tests that need a labeled image dataset; the
// classes are pixel-separable, so a clustering-quality target on them probes
// the model rather than the data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "vmm/rng.hpp"

namespace glyphs {

constexpr std::size_t kSide = 28;
constexpr std::size_t kDim = kSide * kSide;

struct GlyphSet {
  std::vector<unsigned char> pixels; // n * kDim, row-major
  std::vector<int> labels;           // n entries in [0, 10)
};

namespace detail {

using Canvas = std::array<float, kDim>;

inline void splat(Canvas& img, double cx, double cy, double rad, double amp) {
  const int lo_x = std::max(0, static_cast<int>(std::floor(cx - rad)));
  const int hi_x = std::min<int>(kSide - 1, static_cast<int>(std::ceil(cx + rad)));
  const int lo_y = std::max(0, static_cast<int>(std::floor(cy - rad)));
  const int hi_y = std::min<int>(kSide - 1, static_cast<int>(std::ceil(cy + rad)));
  for (int y = lo_y; y <= hi_y; ++y)
    for (int x = lo_x; x <= hi_x; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      if (d < rad) {
        auto& px = img[static_cast<std::size_t>(y) * kSide + static_cast<std::size_t>(x)];
        px = std::max(px, static_cast<float>(amp * (1.0 - d / rad)));
      }
    }
}

struct Pose {
  double tx, ty;    // translation of the glyph center
  double scale;     // isotropic size jitter
  double rad;       // stroke radius
  double amp;       // stroke brightness
};

inline void line(Canvas& img, const Pose& p, double x0, double y0, double x1, double y1) {
  const int steps = 48;
  for (int t = 0; t <= steps; ++t) {
    const double a = static_cast<double>(t) / steps;
    const double gx = 14.0 + p.tx + p.scale * (x0 + a * (x1 - x0));
    const double gy = 14.0 + p.ty + p.scale * (y0 + a * (y1 - y0));
    splat(img, gx, gy, p.rad, p.amp);
  }
}

inline void ring(Canvas& img, const Pose& p, double r) {
  const int steps = 72;
  for (int t = 0; t < steps; ++t) {
    const double a = 2.0 * M_PI * t / steps;
    splat(img, 14.0 + p.tx + p.scale * r * std::cos(a),
          14.0 + p.ty + p.scale * r * std::sin(a), p.rad, p.amp);
  }
}

inline void disc(Canvas& img, const Pose& p, double r) {
  splat(img, 14.0 + p.tx, 14.0 + p.ty, p.scale * r, p.amp);
}

inline void draw_class(Canvas& img, int label, const Pose& p) {
  switch (label) {
    case 0: ring(img, p, 8.0); break;
    case 1: line(img, p, 0, -9, 0, 9); break;
    case 2: line(img, p, -9, 0, 9, 0); break;
    case 3: line(img, p, -8, -8, 8, 8); break;
    case 4: line(img, p, -8, 8, 8, -8); break;
    case 5: // open square frame
      line(img, p, -7, -7, 7, -7);
      line(img, p, 7, -7, 7, 7);
      line(img, p, 7, 7, -7, 7);
      line(img, p, -7, 7, -7, -7);
      break;
    case 6: disc(img, p, 6.5); break;
    case 7: // plus
      line(img, p, 0, -9, 0, 9);
      line(img, p, -9, 0, 9, 0);
      break;
    case 8: // cross
      line(img, p, -8, -8, 8, 8);
      line(img, p, -8, 8, 8, -8);
      break;
    default: // two horizontal bars
      line(img, p, -8, -5, 8, -5);
      line(img, p, -8, 5, 8, 5);
      break;
  }
}

} // namespace detail

/// n glyphs with labels cycling 0..9, deterministic in seed.
inline GlyphSet make(std::size_t n, std::uint64_t seed) {
  GlyphSet out;
  out.pixels.resize(n * kDim);
  out.labels.resize(n);
  vmm::Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 10);
    out.labels[i] = label;
    detail::Pose pose;
    pose.tx = -2.5 + 5.0 * rng.uniform();
    pose.ty = -2.5 + 5.0 * rng.uniform();
    pose.scale = 0.85 + 0.3 * rng.uniform();
    pose.rad = 1.3 + 0.5 * rng.uniform();
    pose.amp = 0.75 + 0.25 * rng.uniform();
    detail::Canvas img{};
    detail::draw_class(img, label, pose);
    for (std::size_t d = 0; d < kDim; ++d) {
      double v = img[d] + 0.04 * (rng.uniform() - 0.5);
      v = std::clamp(v, 0.0, 1.0);
      out.pixels[i * kDim + d] = static_cast<unsigned char>(std::lround(255.0 * v));
    }
  }
  return out;
}

} // namespace glyphs
