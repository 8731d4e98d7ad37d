#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "stealthbench/error.hpp"
#include "stealthbench/image.hpp"

namespace stealthbench::fft {

using Complex = std::complex<double>;

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 transform of a fixed length. Twiddles and the bit-reversal
// permutation are computed once per plan; a plan is immutable after
// construction so it can be shared between threads.
class Plan {
 public:
  explicit Plan(int n) : n_(n), twiddle_(n / 2), reversed_(n) {
    if (!is_power_of_two(n)) {
      throw Error(Errc::kInvalidParameter, "fft length must be a power of two, got " + std::to_string(n));
    }
    for (int k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * k / n;
      twiddle_[k] = Complex(std::cos(a), std::sin(a));
    }
    int bits = 0;
    while ((1 << bits) < n) ++bits;
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
      reversed_[i] = r;
    }
  }

  int size() const { return n_; }

  // Forward DFT with the e^{-2 pi i k n / N} sign convention, unnormalised,
  // applied to n values spaced `stride` apart.
  void forward(Complex* data, std::size_t stride = 1) const {
    for (int i = 0; i < n_; ++i) {
      const int j = reversed_[i];
      if (j > i) std::swap(data[i * stride], data[j * stride]);
    }
    for (int len = 2; len <= n_; len <<= 1) {
      const int half = len / 2;
      const int step = n_ / len;
      for (int start = 0; start < n_; start += len) {
        for (int k = 0; k < half; ++k) {
          Complex& a = data[(start + k) * stride];
          Complex& b = data[(start + k + half) * stride];
          const Complex t = twiddle_[k * step] * b;
          b = a - t;
          a += t;
        }
      }
    }
  }

 private:
  int n_;
  std::vector<Complex> twiddle_;
  std::vector<int> reversed_;
};

// Full 2D DFT of a real field, row-major, DC at index 0.
inline std::vector<Complex> forward_2d(const RealField& field) {
  const int w = field.width();
  const int h = field.height();
  const Plan rows(w);
  const Plan cols(h);
  std::vector<Complex> data(field.size());
  const auto v = field.values();
  for (std::size_t i = 0; i < v.size(); ++i) data[i] = v[i];
  for (int y = 0; y < h; ++y) rows.forward(&data[static_cast<std::size_t>(y) * w]);
  for (int x = 0; x < w; ++x) cols.forward(&data[x], static_cast<std::size_t>(w));
  return data;
}

// Reference O(N^2) DFT along one axis, kept for tests.
inline std::vector<Complex> naive_dft(const std::vector<Complex>& in) {
  const std::size_t n = in.size();
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      acc += in[j] * Complex(std::cos(a), std::sin(a));
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace stealthbench::fft
