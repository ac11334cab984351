#pragma once

#include "sefnet/tensor.hpp"

// Literal-summation reference implementations, deliberately independent of
// the FFT-based code paths they certify. Everything here is O(N^2) or worse
// and runs in double precision only.
namespace sefnet::oracle {

/// X[k] = (1/N) sum_n x[n] e^{-j2pi kn/N} by direct summation (last axis).
inline CTensor<double> naive_dft(const Tensor<double>& x) {
  const int n = x.shape().back();
  CTensor<double> out(x.shape());
  const std::size_t rows = x.size() / static_cast<std::size_t>(n);
  for (std::size_t b = 0; b < rows; ++b) {
    const double* xr = x.ptr() + b * static_cast<std::size_t>(n);
    auto* xo = out.ptr() + b * static_cast<std::size_t>(n);
    for (int k = 0; k < n; ++k) {
      std::complex<double> acc = 0;
      for (int t = 0; t < n; ++t) {
        const double ang = -2.0 * 3.14159265358979323846 * k * t / n;
        acc += xr[t] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      xo[k] = acc / static_cast<double>(n);
    }
  }
  return out;
}

/// Direct 2D sum over trailing (H, W) axes, 1/(HW) normalization.
inline CTensor<double> naive_dft2(const Tensor<double>& x) {
  const auto& s = x.shape();
  const int h = s[s.size() - 2], w = s.back();
  CTensor<double> out(s);
  const std::size_t lead = x.size() / (static_cast<std::size_t>(h) * w);
  for (std::size_t b = 0; b < lead; ++b) {
    const double* xr = x.ptr() + b * static_cast<std::size_t>(h) * w;
    auto* xo = out.ptr() + b * static_cast<std::size_t>(h) * w;
    for (int k1 = 0; k1 < h; ++k1)
      for (int k2 = 0; k2 < w; ++k2) {
        std::complex<double> acc = 0;
        for (int t1 = 0; t1 < h; ++t1)
          for (int t2 = 0; t2 < w; ++t2) {
            const double ang = -2.0 * 3.14159265358979323846 *
                               (static_cast<double>(k1) * t1 / h + static_cast<double>(k2) * t2 / w);
            acc += xr[static_cast<std::size_t>(t1) * w + t2] *
                   std::complex<double>(std::cos(ang), std::sin(ang));
          }
        xo[static_cast<std::size_t>(k1) * w + k2] = acc / static_cast<double>(h) / static_cast<double>(w);
      }
  }
  return out;
}

/// (x (*) k)[n] = sum_m x[m] k[(n-m) mod N], literal circular convolution.
inline Tensor<double> direct_circular_conv(const Tensor<double>& x, const Tensor<double>& k) {
  if (x.shape() != k.shape() || x.rank() != 1)
    throw ShapeError("direct_circular_conv: expected equal-length 1D signals");
  const int n = x.dim(0);
  Tensor<double> out(x.shape());
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    for (int m = 0; m < n; ++m) {
      int j = (i - m) % n;
      if (j < 0) j += n;
      acc += x[static_cast<std::size_t>(m)] * k[static_cast<std::size_t>(j)];
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

/// Impulse response of the inclusive brick-wall filter with unit in-band
/// gain: h[n] = (1/N) sum_{|k| <= N/(2R)} e^{+j2pi kn/N}.
inline Tensor<double> ideal_filter_kernel(int n, int r) {
  Tensor<double> h(Shape{n});
  for (int t = 0; t < n; ++t) {
    std::complex<double> acc = 0;
    for (int j = 0; j < n; ++j) {
      const int f = j <= n / 2 ? j : j - n;
      if (2 * std::abs(f) * r <= n) {
        const double ang = 2.0 * 3.14159265358979323846 * f * t / n;
        acc += std::complex<double>(std::cos(ang), std::sin(ang));
      }
    }
    h[static_cast<std::size_t>(t)] = acc.real() / n;
  }
  return h;
}

/// Sub_R(h (*) x): the definitional spatial route of ideal downsampling.
inline Tensor<double> spatial_ideal_downsample(const Tensor<double>& x, int r) {
  if (x.rank() != 1) throw ShapeError("spatial_ideal_downsample: 1D signal expected");
  const int n = x.dim(0);
  if (r < 1 || r >= n) throw ShapeError("spatial_ideal_downsample: need 1 <= R < N");
  const Tensor<double> filtered = direct_circular_conv(x, ideal_filter_kernel(n, r));
  const int m = n / r;
  Tensor<double> out(Shape{m});
  for (int i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] = filtered[static_cast<std::size_t>(i) * r];
  return out;
}

/// Separable 2D variant (rows then columns of the 1D routine).
inline Tensor<double> spatial_ideal_downsample2(const Tensor<double>& x, int r) {
  const auto& s = x.shape();
  if (s.size() != 2) throw ShapeError("spatial_ideal_downsample2: 2D image expected");
  const int h = s[0], w = s[1];
  const int mh = h / r, mw = w / r;
  Tensor<double> rows(Shape{h, mw});
  for (int i = 0; i < h; ++i) {
    Tensor<double> row(Shape{w});
    for (int j = 0; j < w; ++j) row[static_cast<std::size_t>(j)] = x.at({i, j});
    const Tensor<double> d = spatial_ideal_downsample(row, r);
    for (int j = 0; j < mw; ++j) rows.at({i, j}) = d[static_cast<std::size_t>(j)];
  }
  Tensor<double> out(Shape{mh, mw});
  for (int j = 0; j < mw; ++j) {
    Tensor<double> col(Shape{h});
    for (int i = 0; i < h; ++i) col[static_cast<std::size_t>(i)] = rows.at({i, j});
    const Tensor<double> d = spatial_ideal_downsample(col, r);
    for (int i = 0; i < mh; ++i) out.at({i, j}) = d[static_cast<std::size_t>(i)];
  }
  return out;
}

/// sum_{n=0}^{l-1} e^{-j n q} by literal accumulation.
inline std::complex<double> geometric_series_direct(double q, int l) {
  std::complex<double> acc = 0;
  for (int t = 0; t < l; ++t) acc += std::complex<double>(std::cos(t * q), -std::sin(t * q));
  return acc;
}

}  // namespace sefnet::oracle
