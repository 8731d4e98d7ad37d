#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "stealthbench/image.hpp"
#include "stealthbench/rng.hpp"

// Procedural stand-ins for natural photographs: multi-octave value noise with
// a roughly 1/f amplitude spectrum, a handful of hard-edged shapes, and fine
// sensor-like grain. Cheap enough to generate thousands per run.
namespace stealthbench::synth {

struct NaturalParams {
  double base_amplitude = 70.0;    // coarsest octave, halves per octave
  double texture_amplitude = 25.0; // per texture octave, gated by the mask
  double texture_coverage = 0.45;  // rough fraction of the frame that is textured
  int shapes = 6;
  double grain_sigma = 14.0;
  double color_spread = 0.35;
  double plateau_step = 10.0;
  double texture_falloff = 1.0;
};

namespace detail {

inline double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Adds one octave of smooth value noise with the given lattice spacing.
inline void add_octave(std::vector<float>& field, int size, int spacing, double amplitude, Rng& rng) {
  const int cells = size / spacing + 2;
  std::vector<float> lattice(static_cast<std::size_t>(cells) * cells);
  for (auto& v : lattice) v = static_cast<float>(rng.uniform(-1.0, 1.0) * amplitude);
  const double ox = rng.uniform01() * spacing;
  const double oy = rng.uniform01() * spacing;
  std::vector<double> wx(size);
  std::vector<int> ix(size);
  for (int x = 0; x < size; ++x) {
    const double gx = (x + ox) / spacing;
    ix[x] = static_cast<int>(gx);
    wx[x] = smooth(gx - ix[x]);
  }
  for (int y = 0; y < size; ++y) {
    const double gy = (y + oy) / spacing;
    const int iy = static_cast<int>(gy);
    const double ty = smooth(gy - iy);
    const float* r0 = &lattice[static_cast<std::size_t>(iy) * cells];
    const float* r1 = r0 + cells;
    float* out = &field[static_cast<std::size_t>(y) * size];
    for (int x = 0; x < size; ++x) {
      const int i = ix[x];
      const double t = wx[x];
      const double top = r0[i] + (r0[i + 1] - r0[i]) * t;
      const double bot = r1[i] + (r1[i + 1] - r1[i]) * t;
      out[x] += static_cast<float>(top + (bot - top) * ty);
    }
  }
}

}  // namespace detail

inline ImageBuffer natural_image(int size, std::uint64_t seed, const NaturalParams& params = {}) {
  Rng rng(derive_seed(seed, 0x5e7a));
  const std::size_t n = static_cast<std::size_t>(size) * size;
  // Smooth luminance and colour-difference fields from the coarse octaves.
  std::vector<float> lum(n, 0.0f), ca(n, 0.0f), cb(n, 0.0f), tex(n, 0.0f), mask(n, 0.0f);
  double amp = params.base_amplitude;
  for (int spacing = size / 2; spacing >= 32; spacing /= 2) {
    detail::add_octave(lum, size, spacing, amp, rng);
    detail::add_octave(ca, size, spacing, amp * params.color_spread, rng);
    detail::add_octave(cb, size, spacing, amp * params.color_spread, rng);
    amp *= 0.5;
  }
  // Fine texture lives only where the mask is open, leaving flat regions that
  // survive recompression untouched, much like sky or walls in photographs.
  amp = params.texture_amplitude;
  for (int spacing = 16; spacing >= 2; spacing /= 2) {
    detail::add_octave(tex, size, spacing, amp, rng);
    amp *= params.texture_falloff;
  }
  detail::add_octave(mask, size, std::max(2, size / 4), 1.0, rng);
  detail::add_octave(mask, size, std::max(2, size / 8), 0.5, rng);
  const double bias = 3.0 * (params.texture_coverage - 0.5);
  for (auto& m : mask) {
    const double v = (m + bias) * 4.0 + 0.5;
    m = static_cast<float>(v < 0 ? 0 : (v > 1 ? 1 : v));
  }
  const double base[3] = {rng.uniform(70, 170), rng.uniform(70, 170), rng.uniform(70, 170)};
  const double base_grey = (base[0] + base[1] + base[2]) / 3.0;
  std::vector<float> rgb(n * 3);
  // Untextured regions are posterised into flat plateaus.
  const float step = static_cast<float>(params.plateau_step);
  for (std::size_t i = 0; i < n; ++i) {
    const float m = mask[i];
    const float flat = std::round(lum[i] / step) * step;
    // Plateaus are neutral grey: their chroma is exactly representable, so
    // they pass through recompression unchanged as real overcast sky does.
    const float grey = static_cast<float>(base_grey) + flat;
    const float l = lum[i] + tex[i];
    rgb[i * 3] = m * static_cast<float>(base[0] + l + ca[i]) + (1.0f - m) * grey;
    rgb[i * 3 + 1] = m * static_cast<float>(base[1] + l - 0.5f * (ca[i] + cb[i])) + (1.0f - m) * grey;
    rgb[i * 3 + 2] = m * static_cast<float>(base[2] + l + cb[i]) + (1.0f - m) * grey;
  }
  // Hard-edged flat objects: discs and rectangles.
  for (int s = 0; s < params.shapes; ++s) {
    const bool disc = rng.coin();
    const double cx = rng.uniform(0, size);
    const double cy = rng.uniform(0, size);
    const double r = rng.uniform(size * 0.04, size * 0.18);
    const double rx = rng.uniform(size * 0.04, size * 0.2);
    const double ry = rng.uniform(size * 0.04, size * 0.2);
    double col[3] = {rng.uniform(-60, 60), rng.uniform(-60, 60), rng.uniform(-60, 60)};
    if (rng.coin()) col[1] = col[2] = col[0] = std::round(col[0]) + std::round(base_grey) - base[0];
    const bool opaque = rng.coin();
    const double alpha = opaque ? 1.0 : rng.uniform(0.5, 0.9);
    const int x0 = std::max(0, static_cast<int>(cx - std::max(r, rx)) - 1);
    const int x1 = std::min(size, static_cast<int>(cx + std::max(r, rx)) + 2);
    const int y0 = std::max(0, static_cast<int>(cy - std::max(r, ry)) - 1);
    const int y1 = std::min(size, static_cast<int>(cy + std::max(r, ry)) + 2);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const double dx = x - cx;
        const double dy = y - cy;
        const bool inside = disc ? dx * dx + dy * dy <= r * r : std::abs(dx) <= rx && std::abs(dy) <= ry;
        if (!inside) continue;
        const std::size_t i = static_cast<std::size_t>(y) * size + x;
        for (int c = 0; c < 3; ++c) {
          rgb[i * 3 + c] = static_cast<float>((1 - alpha) * rgb[i * 3 + c] + alpha * std::round(base[c] + col[c]));
        }
      }
    }
  }
  // Grain: triangular noise (two uniforms from one draw), unit variance after
  // scaling, again gated by the texture mask.
  constexpr double kTriScale = 2.449489742783178 / 4294967296.0;  // sqrt(6) / 2^32
  ImageBuffer img(size, size);
  auto dst = img.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = params.grain_sigma * mask[i];
    for (int c = 0; c < 3; ++c) {
      const std::uint64_t u = rng.next_u64();
      const double t = (static_cast<double>(u >> 32) - static_cast<double>(u & 0xFFFFFFFFu)) * kTriScale;
      dst[i * 3 + c] = clamp_u8(rgb[i * 3 + c] + g * t);
    }
  }
  return img;
}

// i.i.d. uniform noise image; spectrally white.
inline ImageBuffer white_noise_image(int size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x3417));
  ImageBuffer img(size, size);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.uniform_index(256));
  return img;
}

}  // namespace stealthbench::synth
