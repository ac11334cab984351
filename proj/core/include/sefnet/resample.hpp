#pragma once

#include "sefnet/spectral.hpp"

namespace sefnet {

/// Anti-aliasing selection for rate changes. The gaussian sigma rule is
/// sigma = sigma_scale * (N/m - 1) per axis (clamped below at 1e-3), with a
/// truncated kernel of radius ceil(3*sigma) and circular boundary.
struct AntiAliasMode {
  enum class Kind : std::uint8_t { ideal = 0, gaussian = 1 };
  Kind kind = Kind::ideal;
  double sigma_scale = 0.5;

  static AntiAliasMode ideal() { return {Kind::ideal, 0.5}; }
  static AntiAliasMode gaussian(double sigma_scale = 0.5) { return {Kind::gaussian, sigma_scale}; }
  bool is_ideal() const { return kind == Kind::ideal; }
};

/// Brick-wall low-pass: zeroes every coefficient with |k| > N/(2R), size kept.
template <RealScalar Real>
Tensor<Real> ideal_lowpass(const Tensor<Real>& x, int r) {
  const int n = x.shape().back();
  if (r < 1 || r >= n) throw ShapeError("ideal_lowpass: need 1 <= R < N");
  if (r == 1) return x;
  CTensor<Real> spec = dft(x);
  const std::size_t rows = spec.size() / static_cast<std::size_t>(n);
  for (std::size_t b = 0; b < rows; ++b)
    for (int j = 0; j < n; ++j)
      if (2 * std::abs(freq_of_index(j, n)) * r > n)
        spec[b * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)] = {};
  return idft(spec);
}

template <RealScalar Real>
Tensor<Real> ideal_lowpass2(const Tensor<Real>& x, int r) {
  const auto& s = x.shape();
  const int h = s[s.size() - 2], w = s.back();
  if (r < 1 || r >= h || r >= w) throw ShapeError("ideal_lowpass2: need 1 <= R < N");
  if (r == 1) return x;
  CTensor<Real> spec = dft2(x);
  const std::size_t lead = x.size() / (static_cast<std::size_t>(h) * w);
  for (std::size_t b = 0; b < lead; ++b) {
    auto* slab = spec.ptr() + b * static_cast<std::size_t>(h) * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        if (2 * std::abs(freq_of_index(i, h)) * r > h || 2 * std::abs(freq_of_index(j, w)) * r > w)
          slab[static_cast<std::size_t>(i) * w + j] = {};
  }
  return idft2(spec);
}

/// Sub_R: out[i] = x[R*i], output length floor(N/R) (trailing samples drop).
template <RealScalar Real>
Tensor<Real> subsample(const Tensor<Real>& x, int r) {
  if (r < 1) throw ShapeError("subsample: need R >= 1");
  const int n = x.shape().back();
  const int m = n / r;
  if (m < 1) throw ShapeError("subsample: output would be empty");
  Shape os = x.shape();
  os.back() = m;
  Tensor<Real> out(os);
  const std::size_t rows = x.size() / static_cast<std::size_t>(n);
  for (std::size_t b = 0; b < rows; ++b)
    for (int i = 0; i < m; ++i)
      out[b * static_cast<std::size_t>(m) + static_cast<std::size_t>(i)] =
          x[b * static_cast<std::size_t>(n) + static_cast<std::size_t>(i) * r];
  return out;
}

template <RealScalar Real>
Tensor<Real> subsample2(const Tensor<Real>& x, int r) {
  const auto& s = x.shape();
  const int h = s[s.size() - 2], w = s.back();
  const int mh = h / r, mw = w / r;
  if (r < 1 || mh < 1 || mw < 1) throw ShapeError("subsample2: bad factor");
  Shape os = s;
  os[os.size() - 2] = mh;
  os.back() = mw;
  Tensor<Real> out(os);
  const std::size_t lead = x.size() / (static_cast<std::size_t>(h) * w);
  for (std::size_t b = 0; b < lead; ++b)
    for (int i = 0; i < mh; ++i)
      for (int j = 0; j < mw; ++j)
        out[(b * mh + i) * static_cast<std::size_t>(mw) + j] =
            x[(b * h + static_cast<std::size_t>(i) * r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(j) * r];
  return out;
}

/// D_R: anti-alias then subsample.
template <RealScalar Real>
Tensor<Real> ideal_downsample(const Tensor<Real>& x, int r) {
  const int n = x.shape().back();
  if (r >= n) throw ShapeError("ideal_downsample: need R < N");
  return subsample(ideal_lowpass(x, r), r);
}

template <RealScalar Real>
Tensor<Real> ideal_downsample2(const Tensor<Real>& x, int r) {
  const auto& s = x.shape();
  if (r >= s.back() || r >= s[s.size() - 2]) throw ShapeError("ideal_downsample2: need R < N");
  return subsample2(ideal_lowpass2(x, r), r);
}

/// Ideal rate change to any resolution m <= N via the band restriction.
template <RealScalar Real>
Tensor<Real> fourier_resample(const Tensor<Real>& x, int m) {
  const int n = x.shape().back();
  if (m < 1 || m > n) throw ShapeError("fourier_resample: need 1 <= m <= N");
  return idft(band_crop(dft(x), m));
}

template <RealScalar Real>
Tensor<Real> fourier_resample2(const Tensor<Real>& x, int m) {
  const auto& s = x.shape();
  if (m < 1 || m > s.back() || m > s[s.size() - 2])
    throw ShapeError("fourier_resample2: need 1 <= m <= N");
  return idft2(band_crop2(dft2(x), m));
}

template <RealScalar Real>
Tensor<Real> ideal_upsample(const Tensor<Real>& x, int n) {
  const int m = x.shape().back();
  if (n < m) throw ShapeError("ideal_upsample: need m <= N");
  return idft(band_pad(dft(x), n));
}

template <RealScalar Real>
Tensor<Real> ideal_upsample2(const Tensor<Real>& x, int n) {
  const auto& s = x.shape();
  const int m = s.back();
  if (s[s.size() - 2] != m) throw ShapeError("ideal_upsample2: expected square image");
  if (n < m) throw ShapeError("ideal_upsample2: need m <= N");
  return idft2(band_pad2(dft2(x), n));
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  sigma = std::max(sigma, 1e-3);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int t = -radius; t <= radius; ++t) {
    const double v = std::exp(-0.5 * (t / sigma) * (t / sigma));
    k[static_cast<std::size_t>(t + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

template <RealScalar Real>
void blur_axis(Real* data, std::size_t rows, int n, int stride, std::size_t row_stride,
               const std::vector<double>& k) {
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<Real> tmp(static_cast<std::size_t>(n));
  for (std::size_t b = 0; b < rows; ++b) {
    Real* row = data + b * row_stride;
    for (int i = 0; i < n; ++i) {
      double acc = 0;
      for (int t = -radius; t <= radius; ++t) {
        int j = (i - t) % n;
        if (j < 0) j += n;
        acc += k[static_cast<std::size_t>(t + radius)] *
               static_cast<double>(row[static_cast<std::ptrdiff_t>(j) * stride]);
      }
      tmp[static_cast<std::size_t>(i)] = static_cast<Real>(acc);
    }
    for (int i = 0; i < n; ++i) row[static_cast<std::ptrdiff_t>(i) * stride] = tmp[static_cast<std::size_t>(i)];
  }
}

}  // namespace detail

/// Non-ideal rate change: circular gaussian blur, then nearest-grid point
/// sampling at positions floor(i*N/m). No band purity: aliasing of the
/// blurred residual is intentional (this is the theory/practice gap probe).
template <RealScalar Real>
Tensor<Real> gaussian_downsample(const Tensor<Real>& x, int m, const AntiAliasMode& mode) {
  const int n = x.shape().back();
  if (m >= n || m < 1) throw ShapeError("gaussian_downsample: need 1 <= m < N");
  const double sigma = mode.sigma_scale * (static_cast<double>(n) / m - 1.0);
  const auto k = detail::gaussian_kernel(sigma);
  Tensor<Real> blurred = x;
  detail::blur_axis(blurred.ptr(), x.size() / static_cast<std::size_t>(n), n, 1,
                    static_cast<std::size_t>(n), k);
  Shape os = x.shape();
  os.back() = m;
  Tensor<Real> out(os);
  const std::size_t rows = x.size() / static_cast<std::size_t>(n);
  for (std::size_t b = 0; b < rows; ++b)
    for (int i = 0; i < m; ++i)
      out[b * static_cast<std::size_t>(m) + static_cast<std::size_t>(i)] =
          blurred[b * static_cast<std::size_t>(n) +
                  static_cast<std::size_t>(static_cast<std::int64_t>(i) * n / m)];
  return out;
}

template <RealScalar Real>
Tensor<Real> gaussian_downsample2(const Tensor<Real>& x, int m, const AntiAliasMode& mode) {
  const auto& s = x.shape();
  const int h = s[s.size() - 2], w = s.back();
  if (h != w) throw ShapeError("gaussian_downsample2: expected square image");
  const int n = w;
  if (m >= n || m < 1) throw ShapeError("gaussian_downsample2: need 1 <= m < N");
  const double sigma = mode.sigma_scale * (static_cast<double>(n) / m - 1.0);
  const auto k = detail::gaussian_kernel(sigma);
  Tensor<Real> blurred = x;
  const std::size_t lead = x.size() / (static_cast<std::size_t>(h) * w);
  detail::blur_axis(blurred.ptr(), lead * static_cast<std::size_t>(h), w, 1,
                    static_cast<std::size_t>(w), k);
  for (std::size_t b = 0; b < lead; ++b)
    detail::blur_axis(blurred.ptr() + b * static_cast<std::size_t>(h) * w,
                      static_cast<std::size_t>(w), h, w, 1, k);
  Shape os = s;
  os[os.size() - 2] = m;
  os.back() = m;
  Tensor<Real> out(os);
  for (std::size_t b = 0; b < lead; ++b)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        out[(b * m + i) * static_cast<std::size_t>(m) + j] =
            blurred[(b * h + static_cast<std::size_t>(static_cast<std::int64_t>(i) * n / m)) * w +
                    static_cast<std::size_t>(static_cast<std::int64_t>(j) * n / m)];
  return out;
}

/// D_m for square images under either mode; m == N is a no-op in both.
template <RealScalar Real>
Tensor<Real> resample_image(const Tensor<Real>& x, int m, const AntiAliasMode& mode) {
  const int n = x.shape().back();
  if (m == n) return x;
  return mode.is_ideal() ? fourier_resample2(x, m) : gaussian_downsample2(x, m, mode);
}

}  // namespace sefnet
