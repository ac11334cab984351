#pragma once

#include "sefnet/fft.hpp"
#include "sefnet/tensor.hpp"

namespace sefnet {

// Spectra are CTensors in standard DFT order on their trailing axis (1D) or
// trailing two axes (2D); index j holds frequency k = j for j <= floor(N/2)
// and k = j - N otherwise. Leading axes are channels/batch. The forward
// transform carries the 1/N factor (per axis), the inverse carries none, so
// band cropping is amplitude preserving.
template <RealScalar Real>
using Spectrum = CTensor<Real>;

inline int freq_of_index(int j, int n) { return j <= n / 2 ? j : j - n; }
inline int index_of_freq(int f, int n) { return f >= 0 ? f : f + n; }

template <RealScalar Real>
constexpr Real hermitian_tol() {
  if constexpr (std::is_same_v<Real, double>)
    return 1e-9;
  else
    return 2e-4f;
}

namespace detail {

template <RealScalar Real>
void fft_axis_last(std::complex<Real>* data, std::size_t rows, int n, bool inverse) {
  const auto& plan = fft_plan<Real>(n);
  std::vector<std::complex<Real>> scratch(static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < rows; ++r) {
    std::complex<Real>* row = data + r * static_cast<std::size_t>(n);
    plan.exec(row, 1, scratch.data(), inverse);
    std::copy(scratch.begin(), scratch.end(), row);
  }
}

template <RealScalar Real>
void fft_axis_penult(std::complex<Real>* data, std::size_t slabs, int h, int w, bool inverse) {
  const auto& plan = fft_plan<Real>(h);
  std::vector<std::complex<Real>> scratch(static_cast<std::size_t>(h));
  for (std::size_t s = 0; s < slabs; ++s) {
    std::complex<Real>* slab = data + s * static_cast<std::size_t>(h) * w;
    for (int c = 0; c < w; ++c) {
      plan.exec(slab + c, w, scratch.data(), inverse);
      for (int r = 0; r < h; ++r) slab[static_cast<std::size_t>(r) * w + c] = scratch[r];
    }
  }
}

inline std::size_t leading_count(const Shape& s, int trailing) {
  if (static_cast<int>(s.size()) < trailing) throw ShapeError("tensor rank too small");
  std::size_t n = 1;
  for (std::size_t i = 0; i + trailing < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
  return n;
}

}  // namespace detail

/// Max |X[-k] - conj(X[k])| over the trailing `axes` frequency axes.
template <RealScalar Real>
double hermitian_asymmetry(const CTensor<Real>& x, int axes) {
  const auto& s = x.shape();
  const std::size_t lead = detail::leading_count(s, axes);
  double worst = 0;
  if (axes == 1) {
    const int n = s.back();
    for (std::size_t b = 0; b < lead; ++b) {
      const auto* row = x.ptr() + b * static_cast<std::size_t>(n);
      for (int j = 0; j < n; ++j) {
        const int jm = index_of_freq(-freq_of_index(j, n), n);
        worst = std::max(worst, static_cast<double>(std::abs(row[j] - std::conj(row[jm]))));
      }
    }
  } else if (axes == 2) {
    const int h = s[s.size() - 2], w = s.back();
    for (std::size_t b = 0; b < lead; ++b) {
      const auto* slab = x.ptr() + b * static_cast<std::size_t>(h) * w;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const int im = index_of_freq(-freq_of_index(i, h), h);
          const int jm = index_of_freq(-freq_of_index(j, w), w);
          worst = std::max(worst, static_cast<double>(std::abs(
                                      slab[static_cast<std::size_t>(i) * w + j] -
                                      std::conj(slab[static_cast<std::size_t>(im) * w + jm]))));
        }
    }
  } else {
    throw ShapeError("hermitian_asymmetry: axes must be 1 or 2");
  }
  return worst;
}

template <RealScalar Real>
void require_hermitian(const CTensor<Real>& x, int axes, const char* where) {
  const double asym = hermitian_asymmetry(x, axes);
  const double tol = hermitian_tol<Real>() * std::max(1.0, max_abs(x));
  if (asym > tol)
    throw NumericError(std::string(where) + ": spectrum is not Hermitian (asymmetry " +
                       std::to_string(asym) + " > " + std::to_string(tol) + ")");
}

/// X[k] = (1/N) sum_n x[n] e^{-j2pi kn/N}, applied along the last axis.
template <RealScalar Real>
CTensor<Real> dft(const Tensor<Real>& x) {
  const int n = x.shape().back();
  CTensor<Real> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::complex<Real>(x[i], 0);
  detail::fft_axis_last(out.ptr(), x.size() / static_cast<std::size_t>(n), n, false);
  const Real scale = Real(1) / static_cast<Real>(n);
  for (auto& v : out.data()) v *= scale;
  return out;
}

/// x[n] = sum_k X[k] e^{+j2pi kn/N}; rejects non-Hermitian inputs.
template <RealScalar Real>
Tensor<Real> idft(const CTensor<Real>& x) {
  require_hermitian(x, 1, "idft");
  const int n = x.shape().back();
  CTensor<Real> buf = x;
  detail::fft_axis_last(buf.ptr(), x.size() / static_cast<std::size_t>(n), n, true);
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i].real();
  return out;
}

/// Separable 2D DFT over the trailing (H, W) axes, 1/H * 1/W normalization.
template <RealScalar Real>
CTensor<Real> dft2(const Tensor<Real>& x) {
  const auto& s = x.shape();
  const std::size_t lead = detail::leading_count(s, 2);
  const int h = s[s.size() - 2], w = s.back();
  CTensor<Real> out(s);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::complex<Real>(x[i], 0);
  detail::fft_axis_last(out.ptr(), lead * static_cast<std::size_t>(h), w, false);
  detail::fft_axis_penult(out.ptr(), lead, h, w, false);
  const Real scale = Real(1) / (static_cast<Real>(h) * static_cast<Real>(w));
  for (auto& v : out.data()) v *= scale;
  return out;
}

template <RealScalar Real>
Tensor<Real> idft2(const CTensor<Real>& x) {
  require_hermitian(x, 2, "idft2");
  const auto& s = x.shape();
  const std::size_t lead = detail::leading_count(s, 2);
  const int h = s[s.size() - 2], w = s.back();
  CTensor<Real> buf = x;
  detail::fft_axis_last(buf.ptr(), lead * static_cast<std::size_t>(h), w, true);
  detail::fft_axis_penult(buf.ptr(), lead, h, w, true);
  Tensor<Real> out(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i].real();
  return out;
}

namespace detail {

// Crop one axis from n to m. Odd m keeps |k| <= (m-1)/2; even m keeps the
// interior and sums X[m/2] + X[-m/2] into the output Nyquist bin, which is
// exactly the aliasing of Sub_R after the inclusive brick-wall filter.
template <class T>
void crop_axis(const T* in, int n, int in_stride, T* out, int m, int out_stride) {
  if (m == n) {
    for (int j = 0; j < n; ++j) out[static_cast<std::ptrdiff_t>(j) * out_stride] = in[static_cast<std::ptrdiff_t>(j) * in_stride];
    return;
  }
  const int half = (m - 1) / 2;
  for (int f = -half; f <= half; ++f)
    out[static_cast<std::ptrdiff_t>(index_of_freq(f, m)) * out_stride] =
        in[static_cast<std::ptrdiff_t>(index_of_freq(f, n)) * in_stride];
  if (m % 2 == 0) {
    const int e = m / 2;
    out[static_cast<std::ptrdiff_t>(e) * out_stride] =
        in[static_cast<std::ptrdiff_t>(index_of_freq(e, n)) * in_stride] +
        in[static_cast<std::ptrdiff_t>(index_of_freq(-e, n)) * in_stride];
  }
}

// Pad one axis from m to n; an even-m source Nyquist value splits half/half
// into +-m/2 so crop(pad(X)) == X exactly and real signals stay real.
template <class T>
void pad_axis(const T* in, int m, int in_stride, T* out, int n, int out_stride) {
  if (m == n) {
    for (int j = 0; j < m; ++j) out[static_cast<std::ptrdiff_t>(j) * out_stride] = in[static_cast<std::ptrdiff_t>(j) * in_stride];
    return;
  }
  const int half = (m - 1) / 2;
  for (int f = -half; f <= half; ++f)
    out[static_cast<std::ptrdiff_t>(index_of_freq(f, n)) * out_stride] =
        in[static_cast<std::ptrdiff_t>(index_of_freq(f, m)) * in_stride];
  if (m % 2 == 0) {
    const int e = m / 2;
    const T v = in[static_cast<std::ptrdiff_t>(e) * in_stride];
    out[static_cast<std::ptrdiff_t>(index_of_freq(e, n)) * out_stride] = v / T(2);
    out[static_cast<std::ptrdiff_t>(index_of_freq(-e, n)) * out_stride] = v / T(2);
  }
}

}  // namespace detail

/// Restrict an N-point spectrum to the band of resolution m (last axis).
template <RealScalar Real>
CTensor<Real> band_crop(const CTensor<Real>& x, int m) {
  const auto& s = x.shape();
  const int n = s.back();
  if (m < 1 || m > n) throw ShapeError("band_crop: need 1 <= m <= N");
  Shape os = s;
  os.back() = m;
  CTensor<Real> out(os);
  const std::size_t rows = x.size() / static_cast<std::size_t>(n);
  for (std::size_t r = 0; r < rows; ++r)
    detail::crop_axis(x.ptr() + r * static_cast<std::size_t>(n), n, 1,
                      out.ptr() + r * static_cast<std::size_t>(m), m, 1);
  return out;
}

/// Zero-extend an m-point spectrum to N points (last axis).
template <RealScalar Real>
CTensor<Real> band_pad(const CTensor<Real>& x, int n) {
  const auto& s = x.shape();
  const int m = s.back();
  if (n < m) throw ShapeError("band_pad: need m <= N");
  Shape os = s;
  os.back() = n;
  CTensor<Real> out(os);
  const std::size_t rows = x.size() / static_cast<std::size_t>(m);
  for (std::size_t r = 0; r < rows; ++r)
    detail::pad_axis(x.ptr() + r * static_cast<std::size_t>(m), m, 1,
                     out.ptr() + r * static_cast<std::size_t>(n), n, 1);
  return out;
}

/// Separable square-band crop over the trailing (H, W) axes.
template <RealScalar Real>
CTensor<Real> band_crop2(const CTensor<Real>& x, int m) {
  const auto& s = x.shape();
  const int h = s[s.size() - 2], w = s.back();
  if (m < 1 || m > h || m > w) throw ShapeError("band_crop2: need 1 <= m <= N");
  const std::size_t lead = detail::leading_count(s, 2);
  Shape os = s;
  os[os.size() - 2] = m;
  os.back() = m;
  CTensor<Real> out(os);
  std::vector<std::complex<Real>> tmp(static_cast<std::size_t>(h) * m);
  for (std::size_t b = 0; b < lead; ++b) {
    const auto* src = x.ptr() + b * static_cast<std::size_t>(h) * w;
    auto* dst = out.ptr() + b * static_cast<std::size_t>(m) * m;
    for (int r = 0; r < h; ++r)
      detail::crop_axis(src + static_cast<std::size_t>(r) * w, w, 1,
                        tmp.data() + static_cast<std::size_t>(r) * m, m, 1);
    for (int c = 0; c < m; ++c) detail::crop_axis(tmp.data() + c, h, m, dst + c, m, m);
  }
  return out;
}

template <RealScalar Real>
CTensor<Real> band_pad2(const CTensor<Real>& x, int n) {
  const auto& s = x.shape();
  const int h = s[s.size() - 2], w = s.back();
  if (h != w) throw ShapeError("band_pad2: expected square spectrum");
  const int m = w;
  if (n < m) throw ShapeError("band_pad2: need m <= N");
  const std::size_t lead = detail::leading_count(s, 2);
  Shape os = s;
  os[os.size() - 2] = n;
  os.back() = n;
  CTensor<Real> out(os);
  std::vector<std::complex<Real>> tmp(static_cast<std::size_t>(m) * n);
  for (std::size_t b = 0; b < lead; ++b) {
    const auto* src = x.ptr() + b * static_cast<std::size_t>(m) * m;
    auto* dst = out.ptr() + b * static_cast<std::size_t>(n) * n;
    std::fill(tmp.begin(), tmp.end(), std::complex<Real>{});
    for (int r = 0; r < m; ++r)
      detail::pad_axis(src + static_cast<std::size_t>(r) * m, m, 1,
                       tmp.data() + static_cast<std::size_t>(r) * n, n, 1);
    for (int c = 0; c < n; ++c) detail::pad_axis(tmp.data() + c, m, n, dst + c, n, n);
  }
  return out;
}

/// Annulus membership on the doubled-frequency scale: lo < 2|k| <= hi, with
/// lo == 0 additionally admitting DC so the innermost cell is the full band.
/// 2D uses the max-norm of the frequency pair.
inline bool in_annulus(int two_absk, int lo, int hi) {
  if (lo == 0) return two_absk <= hi;
  return two_absk > lo && two_absk <= hi;
}

/// Flat trailing-axis indices of annulus members for an n-point 1D spectrum.
inline std::vector<int> annulus_indices(int n, int lo, int hi) {
  if (lo >= hi) throw ShapeError("annulus: need lo < hi");
  std::vector<int> idx;
  for (int j = 0; j < n; ++j)
    if (in_annulus(2 * std::abs(freq_of_index(j, n)), lo, hi)) idx.push_back(j);
  return idx;
}

inline std::vector<int> annulus_indices2(int n, int lo, int hi) {
  if (lo >= hi) throw ShapeError("annulus: need lo < hi");
  std::vector<int> idx;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int t = std::max(std::abs(freq_of_index(i, n)), std::abs(freq_of_index(j, n)));
      if (in_annulus(2 * t, lo, hi)) idx.push_back(i * n + j);
    }
  return idx;
}

/// Keep annulus coefficients, zero the rest (per leading slice).
template <RealScalar Real>
CTensor<Real> annulus_select(const CTensor<Real>& x, int lo, int hi, int axes) {
  if (lo >= hi) throw ShapeError("annulus: need lo < hi");
  const auto& s = x.shape();
  CTensor<Real> out(s);
  if (axes == 1) {
    const int n = s.back();
    const auto idx = annulus_indices(n, lo, hi);
    const std::size_t rows = x.size() / static_cast<std::size_t>(n);
    for (std::size_t r = 0; r < rows; ++r)
      for (int j : idx)
        out[r * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)] =
            x[r * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)];
  } else if (axes == 2) {
    const int h = s[s.size() - 2], w = s.back();
    if (h != w) throw ShapeError("annulus_select: expected square spectrum");
    const auto idx = annulus_indices2(w, lo, hi);
    const std::size_t lead = detail::leading_count(s, 2);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (std::size_t b = 0; b < lead; ++b)
      for (int j : idx) out[b * hw + static_cast<std::size_t>(j)] = x[b * hw + static_cast<std::size_t>(j)];
  } else {
    throw ShapeError("annulus_select: axes must be 1 or 2");
  }
  return out;
}

/// Adjoint (R^2 inner product) of band_crop along the last axis: the output
/// Nyquist cotangent scatters whole into both +-m/2 source bins.
template <RealScalar Real>
CTensor<Real> band_crop_adjoint(const CTensor<Real>& y, int n) {
  const auto& s = y.shape();
  const int m = s.back();
  if (n < m) throw ShapeError("band_crop_adjoint: need m <= N");
  Shape os = s;
  os.back() = n;
  CTensor<Real> out(os);
  const std::size_t rows = y.size() / static_cast<std::size_t>(m);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* src = y.ptr() + r * static_cast<std::size_t>(m);
    auto* dst = out.ptr() + r * static_cast<std::size_t>(n);
    if (m == n) {
      std::copy(src, src + m, dst);
      continue;
    }
    const int half = (m - 1) / 2;
    for (int f = -half; f <= half; ++f) dst[index_of_freq(f, n)] = src[index_of_freq(f, m)];
    if (m % 2 == 0) {
      const int e = m / 2;
      dst[index_of_freq(e, n)] = src[e];
      dst[index_of_freq(-e, n)] = src[e];
    }
  }
  return out;
}

/// Adjoint of band_pad along the last axis: crop with a halved Nyquist sum.
template <RealScalar Real>
CTensor<Real> band_pad_adjoint(const CTensor<Real>& y, int m) {
  const auto& s = y.shape();
  const int n = s.back();
  if (m > n) throw ShapeError("band_pad_adjoint: need m <= N");
  Shape os = s;
  os.back() = m;
  CTensor<Real> out(os);
  const std::size_t rows = y.size() / static_cast<std::size_t>(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* src = y.ptr() + r * static_cast<std::size_t>(n);
    auto* dst = out.ptr() + r * static_cast<std::size_t>(m);
    if (m == n) {
      std::copy(src, src + n, dst);
      continue;
    }
    const int half = (m - 1) / 2;
    for (int f = -half; f <= half; ++f) dst[index_of_freq(f, m)] = src[index_of_freq(f, n)];
    if (m % 2 == 0) {
      const int e = m / 2;
      dst[e] = (src[index_of_freq(e, n)] + src[index_of_freq(-e, n)]) / Real(2);
    }
  }
  return out;
}

}  // namespace sefnet
