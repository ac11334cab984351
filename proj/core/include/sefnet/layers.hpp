#pragma once

#include "sefnet/autodiff.hpp"

namespace sefnet {

/// Ordered resolutions over which equivariance is enforced.
struct ScaleSet {
  std::vector<int> entries;

  explicit ScaleSet(std::vector<int> e) : entries(std::move(e)) {
    if (entries.empty()) throw ShapeError("ScaleSet: empty");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i] < 1) throw ShapeError("ScaleSet: entries must be >= 1");
      if (i > 0 && entries[i] <= entries[i - 1])
        throw ShapeError("ScaleSet: entries must be strictly increasing");
    }
  }

  static ScaleSet range(int lo, int hi) {
    std::vector<int> e;
    for (int r = lo; r <= hi; ++r) e.push_back(r);
    return ScaleSet(std::move(e));
  }

  bool contains(int r) const { return std::binary_search(entries.begin(), entries.end(), r); }
  int min_res() const { return entries.front(); }
  int max_res() const { return entries.back(); }

  std::vector<int> up_to(int n) const {
    std::vector<int> out;
    for (int r : entries)
      if (r <= n) out.push_back(r);
    return out;
  }
};

enum class Nonlin { relu, identity };

struct PoolSpec {
  int window = 2;
  enum class Kind : std::uint8_t { max = 0, avg = 1 } kind = Kind::max;
};

// ---- geometric series / kernel expansion ------------------------------------

/// sum_{n=0}^{l-1} e^{-j n q} via the closed form
/// e^{-j q (l-1)/2} * sin(l q/2) / sin(q/2), with the removable singularity
/// at q -> 0 evaluated as l * e^{-j q (l-1)/2} when |q| < 1e-9.
template <RealScalar Real>
std::complex<Real> geometric_series_sum(double q, int l) {
  if (l < 1) throw ShapeError("geometric_series_sum: l >= 1");
  const double half = 0.5 * q;
  const double phase = -half * (l - 1);
  const std::complex<double> rot(std::cos(phase), std::sin(phase));
  std::complex<double> v;
  if (std::abs(q) < 1e-9)
    v = rot * static_cast<double>(l);
  else
    v = rot * (std::sin(l * half) / std::sin(half));
  return {static_cast<Real>(v.real()), static_cast<Real>(v.imag())};
}

namespace detail {

// Expansion matrix W[p, j] = (1/d) * S(2*pi*(p/d - m_j/l)) where m_j is the
// frequency stored at index j of an l-point spectrum. K_d = W K^l reproduces
// the d-point DFT of the kernel zero-padded from l to d samples. Odd l keeps
// the 2*pi wrap of q exact.
template <RealScalar Real>
CTensor<Real> make_expand_matrix(int l, int d) {
  if (l > d) throw ShapeError("expand_local_kernel: need l <= d");
  if (l % 2 == 0) throw ShapeError("expand_local_kernel: locality must be odd");
  CTensor<Real> w(Shape{d, l});
  for (int p = 0; p < d; ++p)
    for (int j = 0; j < l; ++j) {
      const int m = freq_of_index(j, l);
      double q = 2.0 * 3.14159265358979323846 *
                 (static_cast<double>(p) / d - static_cast<double>(m) / l);
      const double two_pi = 2.0 * 3.14159265358979323846;
      while (q > 3.14159265358979323846) q -= two_pi;
      while (q < -3.14159265358979323846) q += two_pi;
      const auto s = geometric_series_sum<Real>(q, l);
      w[static_cast<std::size_t>(p) * l + j] = s / static_cast<Real>(d);
    }
  return w;
}

template <RealScalar Real>
const CTensor<Real>& expand_matrix(int l, int d) {
  static std::map<std::pair<int, int>, std::unique_ptr<CTensor<Real>>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(l, d);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, std::make_unique<CTensor<Real>>(make_expand_matrix<Real>(l, d))).first;
  return *it->second;
}

}  // namespace detail

/// 1D expansion: l-point kernel spectrum -> d-point spectrum (last axis).
template <RealScalar Real>
CTensor<Real> expand_local_kernel(const CTensor<Real>& kl, int d) {
  const int l = kl.shape().back();
  const auto& w = detail::expand_matrix<Real>(l, d);
  Shape os = kl.shape();
  os.back() = d;
  CTensor<Real> out(os);
  const std::size_t lead = kl.size() / static_cast<std::size_t>(l);
  for (std::size_t b = 0; b < lead; ++b) {
    const auto* src = kl.ptr() + b * static_cast<std::size_t>(l);
    auto* dst = out.ptr() + b * static_cast<std::size_t>(d);
    for (int p = 0; p < d; ++p) {
      std::complex<Real> acc{};
      for (int j = 0; j < l; ++j) acc += w[static_cast<std::size_t>(p) * l + j] * src[j];
      dst[p] = acc;
    }
  }
  return out;
}

/// Separable 2D expansion of the trailing (l, l) axes to (d, d): W K^l W^T.
template <RealScalar Real>
CTensor<Real> expand_local_kernel2(const CTensor<Real>& kl, int d) {
  const auto& s = kl.shape();
  const int l = s.back();
  if (s[s.size() - 2] != l) throw ShapeError("expand_local_kernel2: expected square kernel");
  const auto& w = detail::expand_matrix<Real>(l, d);
  Shape os = s;
  os[os.size() - 2] = d;
  os.back() = d;
  CTensor<Real> out(os);
  const std::size_t lead = kl.size() / (static_cast<std::size_t>(l) * l);
  std::vector<std::complex<Real>> tmp(static_cast<std::size_t>(d) * l);
  for (std::size_t b = 0; b < lead; ++b) {
    const auto* src = kl.ptr() + b * static_cast<std::size_t>(l) * l;
    auto* dst = out.ptr() + b * static_cast<std::size_t>(d) * d;
    // tmp = W * K^l
    for (int p = 0; p < d; ++p)
      for (int j2 = 0; j2 < l; ++j2) {
        std::complex<Real> acc{};
        for (int j1 = 0; j1 < l; ++j1)
          acc += w[static_cast<std::size_t>(p) * l + j1] * src[static_cast<std::size_t>(j1) * l + j2];
        tmp[static_cast<std::size_t>(p) * l + j2] = acc;
      }
    // out = tmp * W^T
    for (int p1 = 0; p1 < d; ++p1)
      for (int p2 = 0; p2 < d; ++p2) {
        std::complex<Real> acc{};
        for (int j = 0; j < l; ++j)
          acc += tmp[static_cast<std::size_t>(p1) * l + j] * w[static_cast<std::size_t>(p2) * l + j];
        dst[static_cast<std::size_t>(p1) * d + p2] = acc;
      }
  }
  return out;
}

// ---- effective conv multiplier ------------------------------------------------

/// Alias-symmetrize the kernel over coordinates whose doubled frequency is a
/// ScaleSet entry. This is what makes the coefficient-wise product commute
/// with the alias-summing band crop at every enforced scale; away from those
/// edge bins the multiplier equals the kernel itself.
template <RealScalar Real>
CTensor<Real> edge_symmetrize2(const CTensor<Real>& k, const ScaleSet& scales) {
  const auto& s = k.shape();
  const int n = s.back();
  if (s[s.size() - 2] != n) throw ShapeError("edge_symmetrize2: expected square spectrum");
  CTensor<Real> out(s);
  const std::size_t lead = k.size() / (static_cast<std::size_t>(n) * n);
  std::vector<int> flip(static_cast<std::size_t>(n), 0);  // partner index or -1
  for (int j = 0; j < n; ++j) {
    const int f = freq_of_index(j, n);
    const bool flagged = scales.contains(2 * std::abs(f)) && 2 * std::abs(f) < n && f != 0;
    flip[static_cast<std::size_t>(j)] = flagged ? index_of_freq(-f, n) : -1;
  }
  for (std::size_t b = 0; b < lead; ++b) {
    const auto* src = k.ptr() + b * static_cast<std::size_t>(n) * n;
    auto* dst = out.ptr() + b * static_cast<std::size_t>(n) * n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        std::complex<Real> acc = src[static_cast<std::size_t>(i) * n + j];
        const int fi = flip[static_cast<std::size_t>(i)], fj = flip[static_cast<std::size_t>(j)];
        if (fi >= 0) acc += src[static_cast<std::size_t>(fi) * n + j];
        if (fj >= 0) acc += src[static_cast<std::size_t>(i) * n + fj];
        if (fi >= 0 && fj >= 0) acc += src[static_cast<std::size_t>(fi) * n + fj];
        dst[static_cast<std::size_t>(i) * n + j] = acc;
      }
  }
  return out;
}

/// Resolution-n multiplier of a kernel expanded at resolution d >= n. The
/// same parameters serve every resolution: this is band_crop of the expanded
/// kernel plus the edge symmetrization above.
template <RealScalar Real>
CTensor<Real> conv_multiplier(const CTensor<Real>& k_d, int n, const ScaleSet& scales) {
  return edge_symmetrize2(band_crop2(k_d, n), scales);
}

/// Y[co] = sum_ci X[ci] .* M[co, ci]; bin-diagonal, so Claim-1 structure holds
/// with the identity dependency.
template <RealScalar Real>
CTensor<Real> fourier_conv(const CTensor<Real>& x, const CTensor<Real>& multiplier) {
  const Shape& xs = x.shape();
  const Shape& ms = multiplier.shape();
  if (ms.size() != xs.size() + 1) throw ShapeError("fourier_conv: rank mismatch");
  if (ms[1] != xs[0]) throw ShapeError("fourier_conv: channel mismatch");
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (ms[i + 1] != xs[i]) throw ShapeError("fourier_conv: resolution mismatch");
  const int cin = xs[0], cout = ms[0];
  const std::size_t k = x.size() / static_cast<std::size_t>(cin);
  Shape os = xs;
  os[0] = cout;
  CTensor<Real> y(os);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci) {
      const auto* xp = x.ptr() + static_cast<std::size_t>(ci) * k;
      const auto* mp = multiplier.ptr() + (static_cast<std::size_t>(co) * cin + ci) * k;
      auto* yp = y.ptr() + static_cast<std::size_t>(co) * k;
      for (std::size_t i = 0; i < k; ++i) yp[i] += xp[i] * mp[i];
    }
  return y;
}

// ---- pure spatial helpers (mirror the tape ops exactly) -----------------------

template <RealScalar Real>
Tensor<Real> relu_pure(Tensor<Real> x) {
  for (auto& v : x.data()) v = v > Real(0) ? v : Real(0);
  return x;
}

template <RealScalar Real>
Tensor<Real> instance_norm_pure(const Tensor<Real>& x, Real eps = Real(1e-5)) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("instance_norm: rank >= 2 required");
  const int c = s[0];
  const std::size_t spatial = x.size() / static_cast<std::size_t>(c);
  Tensor<Real> y(s);
  for (int ch = 0; ch < c; ++ch) {
    const std::size_t base = static_cast<std::size_t>(ch) * spatial;
    Real mu = 0;
    for (std::size_t i = 0; i < spatial; ++i) mu += x[base + i];
    mu /= static_cast<Real>(spatial);
    Real var = 0;
    for (std::size_t i = 0; i < spatial; ++i) {
      const Real d = x[base + i] - mu;
      var += d * d;
    }
    var /= static_cast<Real>(spatial);
    const Real is = Real(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < spatial; ++i) y[base + i] = (x[base + i] - mu) * is;
  }
  return y;
}

template <RealScalar Real>
Tensor<Real> pool2d_pure(const Tensor<Real>& x, int w, PoolSpec::Kind kind) {
  const Shape& s = x.shape();
  const int h = s[s.size() - 2], wd = s.back();
  const int oh = h / w, ow = wd / w;
  if (oh < 1 || ow < 1) throw ShapeError("pool2d: output would be empty");
  Shape os = s;
  os[os.size() - 2] = oh;
  os.back() = ow;
  Tensor<Real> y(os);
  const std::size_t lead = x.size() / (static_cast<std::size_t>(h) * wd);
  const Real inv = Real(1) / static_cast<Real>(w * w);
  std::size_t o = 0;
  for (std::size_t b = 0; b < lead; ++b) {
    const std::size_t base = b * static_cast<std::size_t>(h) * wd;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j, ++o) {
        if (kind == PoolSpec::Kind::max) {
          Real best = x[base + static_cast<std::size_t>(i * w) * wd + static_cast<std::size_t>(j * w)];
          for (int di = 0; di < w; ++di)
            for (int dj = 0; dj < w; ++dj) {
              const Real v = x[base + static_cast<std::size_t>(i * w + di) * wd +
                               static_cast<std::size_t>(j * w + dj)];
              if (v > best) best = v;
            }
          y[o] = best;
        } else {
          Real acc = 0;
          for (int di = 0; di < w; ++di)
            for (int dj = 0; dj < w; ++dj)
              acc += x[base + static_cast<std::size_t>(i * w + di) * wd +
                       static_cast<std::size_t>(j * w + dj)];
          y[o] = acc * inv;
        }
      }
  }
  return y;
}

// ---- scale-equivariant nonlinearity -------------------------------------------

namespace detail {

/// Band list for an n-point input: ScaleSet entries <= n plus n itself.
inline std::vector<int> sigma_bands(const ScaleSet& scales, int n) {
  if (n > scales.max_res())
    throw ShapeError("equi_nonlinearity: resolution exceeds max of ScaleSet");
  std::vector<int> bands = scales.up_to(n);
  if (bands.empty() || bands.back() != n) bands.push_back(n);
  return bands;
}

inline bool annulus_nonempty(int lo, int hi) { return hi / 2 > lo / 2 || lo == 0; }

}  // namespace detail

/// Banded nonlinearity: per consecutive ScaleSet band, reconstruct the
/// band-limited signal, (optionally) instance-normalize, apply sigma, and
/// copy that band's new annulus coefficients into the output. Exactly
/// equivariant at every entry of the ScaleSet.
template <RealScalar Real>
CTensor<Real> equi_nonlinearity(const CTensor<Real>& x, const ScaleSet& scales, Nonlin sigma,
                                bool normalize, Real eps = Real(1e-5)) {
  const Shape& s = x.shape();
  const int n = s.back();
  if (s.size() < 3 || s[s.size() - 2] != n)
    throw ShapeError("equi_nonlinearity: expected [C, n, n] spectrum");
  const auto bands = detail::sigma_bands(scales, n);
  CTensor<Real> y(s);
  int prev = 0;
  for (int r : bands) {
    if (!detail::annulus_nonempty(prev, r)) {
      prev = r;
      continue;
    }
    Tensor<Real> rec = idft2(band_crop2(x, r));
    if (normalize) rec = instance_norm_pure(rec, eps);
    if (sigma == Nonlin::relu) rec = relu_pure(std::move(rec));
    CTensor<Real> padded = band_pad2(dft2(rec), n);
    CTensor<Real> sel = annulus_select(padded, prev, r, 2);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sel[i];
    prev = r;
  }
  return y;
}

/// Tape twin of equi_nonlinearity (same kernels, same order).
template <RealScalar Real>
ad::Var<Real> equi_nonlinearity_node(ad::Var<Real> x, const ScaleSet& scales, Nonlin sigma,
                                     bool normalize, Real eps = Real(1e-5)) {
  const int n = x.shape().back();
  const auto bands = detail::sigma_bands(scales, n);
  ad::Var<Real> acc{};
  int prev = 0;
  for (int r : bands) {
    if (!detail::annulus_nonempty(prev, r)) {
      prev = r;
      continue;
    }
    auto rec = ad::idft2_node(ad::band_crop2_node(x, r));
    if (normalize) rec = ad::instance_norm(rec, eps);
    if (sigma == Nonlin::relu) rec = ad::relu(rec);
    auto sel = ad::annulus_select_node(ad::band_pad2_node(ad::dft2_node(rec), n), prev, r, 2);
    acc = acc.valid() ? ad::add(acc, sel) : sel;
    prev = r;
  }
  return acc;
}

// ---- scale-equivariant pooling -------------------------------------------------

/// Banded pooling restricted to ScaleSet entries divisible by the window;
/// equivariant at every such entry. Window 1 is a no-op. A non-divisible
/// input resolution is handled by truncating the trailing samples.
template <RealScalar Real>
CTensor<Real> equi_pool(const CTensor<Real>& x, const PoolSpec& spec, const ScaleSet& scales) {
  const Shape& s = x.shape();
  const int d = s.back();
  if (s.size() < 3 || s[s.size() - 2] != d) throw ShapeError("equi_pool: expected [C, d, d] spectrum");
  const int w = spec.window;
  if (w < 1) throw ShapeError("equi_pool: window must be >= 1");
  if (w == 1) return x;
  const int out_res = d / w;
  if (out_res < 1) throw ShapeError("equi_pool: output would be empty");

  std::vector<std::pair<int, int>> bands;  // (input band r, output band)
  for (int r : scales.up_to(d))
    if (r % w == 0 && r / w >= 1 && r < d) bands.push_back({r, r / w});
  bands.push_back({d, out_res});

  Shape os = s;
  os[os.size() - 2] = out_res;
  os.back() = out_res;
  CTensor<Real> y(os);
  int prev = 0;
  for (auto [r, ob] : bands) {
    if (ob <= prev || !detail::annulus_nonempty(prev, ob)) {
      prev = std::max(prev, ob);
      continue;
    }
    Tensor<Real> rec = (r == d) ? idft2(x) : idft2(band_crop2(x, r));
    Tensor<Real> pooled = pool2d_pure(rec, w, spec.kind);
    CTensor<Real> padded = band_pad2(dft2(pooled), out_res);
    CTensor<Real> sel = annulus_select(padded, prev, ob, 2);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sel[i];
    prev = ob;
  }
  return y;
}

template <RealScalar Real>
ad::Var<Real> equi_pool_node(ad::Var<Real> x, const PoolSpec& spec, const ScaleSet& scales) {
  const int d = x.shape().back();
  const int w = spec.window;
  if (w < 1) throw ShapeError("equi_pool: window must be >= 1");
  if (w == 1) return x;
  const int out_res = d / w;
  if (out_res < 1) throw ShapeError("equi_pool: output would be empty");
  std::vector<std::pair<int, int>> bands;
  for (int r : scales.up_to(d))
    if (r % w == 0 && r / w >= 1 && r < d) bands.push_back({r, r / w});
  bands.push_back({d, out_res});

  ad::Var<Real> acc{};
  int prev = 0;
  for (auto [r, ob] : bands) {
    if (ob <= prev || !detail::annulus_nonempty(prev, ob)) {
      prev = std::max(prev, ob);
      continue;
    }
    auto rec = (r == d) ? ad::idft2_node(x) : ad::idft2_node(ad::band_crop2_node(x, r));
    auto pooled = spec.kind == PoolSpec::Kind::max ? ad::max_pool2d(rec, w) : ad::avg_pool2d(rec, w);
    auto sel = ad::annulus_select_node(ad::band_pad2_node(ad::dft2_node(pooled), out_res), prev, ob, 2);
    acc = acc.valid() ? ad::add(acc, sel) : sel;
    prev = ob;
  }
  return acc;
}

// ---- learnable local kernel -----------------------------------------------------

namespace detail {

/// Half-plane frequency points of an odd-l 2D spectrum: DC first, then
/// (0, m2>0), then (m1>0, any m2). Pairs (m1,m2)/(-m1,-m2) cover the plane.
inline std::vector<std::pair<int, int>> half_plane_points(int l) {
  const int half = (l - 1) / 2;
  std::vector<std::pair<int, int>> pts;
  pts.push_back({0, 0});
  for (int m2 = 1; m2 <= half; ++m2) pts.push_back({0, m2});
  for (int m1 = 1; m1 <= half; ++m1)
    for (int m2 = -half; m2 <= half; ++m2) pts.push_back({m1, m2});
  return pts;
}

}  // namespace detail

/// Spectral parameters of a spatially localized convolution kernel. Only the
/// non-negative-frequency half is stored, so the spatial kernel is real by
/// construction; the full resolution-d spectrum comes from the geometric
/// series expansion and lower resolutions from band cropping it.
template <RealScalar Real>
struct LocalFourierKernel {
  std::string prefix;
  int c_out = 0, c_in = 0, locality = 0, d = 0;

  static LocalFourierKernel create(ad::ParamStore<Real>& store, const std::string& prefix,
                                   int c_out, int c_in, int locality, int d, Rng& rng) {
    if (locality < 1 || locality % 2 == 0) throw ShapeError("locality must be odd and positive");
    if (locality > d) throw ShapeError("locality must not exceed the nominal resolution");
    LocalFourierKernel k{prefix, c_out, c_in, locality, d};
    const auto pts = detail::half_plane_points(locality);
    const int hp = static_cast<int>(pts.size());
    Tensor<Real> kre(Shape{c_out, c_in, hp});
    Tensor<Real> kim(Shape{c_out, c_in, hp - 1});
    // init: DFT of a He-scaled random real spatial kernel
    const Real std = std::sqrt(Real(2) / static_cast<Real>(c_in * locality * locality));
    for (int co = 0; co < c_out; ++co)
      for (int ci = 0; ci < c_in; ++ci) {
        Tensor<Real> spatial = random_normal<Real>(Shape{locality, locality}, rng, Real(0), std);
        CTensor<Real> spec = dft2(spatial);
        for (int h = 0; h < hp; ++h) {
          const auto [m1, m2] = pts[static_cast<std::size_t>(h)];
          const auto v = spec.at({index_of_freq(m1, locality), index_of_freq(m2, locality)});
          kre.at({co, ci, h}) = v.real();
          if (h > 0) kim.at({co, ci, h - 1}) = v.imag();
        }
      }
    store.add(prefix + ".kre", std::move(kre));
    store.add(prefix + ".kim", std::move(kim));
    return k;
  }

  /// K^l: full Hermitian l x l spectrum per channel pair.
  CTensor<Real> assemble(const ad::ParamStore<Real>& store) const {
    const auto& kre = store.value(prefix + ".kre");
    const auto& kim = store.value(prefix + ".kim");
    const auto pts = detail::half_plane_points(locality);
    CTensor<Real> kl(Shape{c_out, c_in, locality, locality});
    for (int co = 0; co < c_out; ++co)
      for (int ci = 0; ci < c_in; ++ci)
        for (std::size_t h = 0; h < pts.size(); ++h) {
          const auto [m1, m2] = pts[h];
          const Real re = kre.at({co, ci, static_cast<int>(h)});
          const Real im = h == 0 ? Real(0) : kim.at({co, ci, static_cast<int>(h) - 1});
          kl.at({co, ci, index_of_freq(m1, locality), index_of_freq(m2, locality)}) = {re, im};
          if (h > 0)
            kl.at({co, ci, index_of_freq(-m1, locality), index_of_freq(-m2, locality)}) = {re, -im};
        }
    return kl;
  }

  CTensor<Real> expanded(const ad::ParamStore<Real>& store) const {
    return expand_local_kernel2(assemble(store), d);
  }

  /// Tape path: params -> K^l -> K_d.
  ad::Var<Real> expanded_node(ad::Graph<Real>& g) const {
    auto kl = assemble_node(g);
    return expand_node(kl);
  }

  ad::Var<Real> assemble_node(ad::Graph<Real>& g) const {
    auto kre = g.param(prefix + ".kre");
    auto kim = g.param(prefix + ".kim");
    const auto pts = detail::half_plane_points(locality);
    const int l = locality, co_n = c_out, ci_n = c_in;
    ad::Value<Real> out;
    out.is_complex = true;
    {
      CTensor<Real> kl(Shape{co_n, ci_n, l, l});
      const auto& re = kre.value();
      const auto& im = kim.value();
      for (int co = 0; co < co_n; ++co)
        for (int ci = 0; ci < ci_n; ++ci)
          for (std::size_t h = 0; h < pts.size(); ++h) {
            const auto [m1, m2] = pts[h];
            const Real vr = re.at({co, ci, static_cast<int>(h)});
            const Real vi = h == 0 ? Real(0) : im.at({co, ci, static_cast<int>(h) - 1});
            kl.at({co, ci, index_of_freq(m1, l), index_of_freq(m2, l)}) = {vr, vi};
            if (h > 0) kl.at({co, ci, index_of_freq(-m1, l), index_of_freq(-m2, l)}) = {vr, -vi};
          }
      out.c = std::move(kl);
    }
    auto pts_sh = std::make_shared<std::vector<std::pair<int, int>>>(pts);
    const bool ng = g.node(kre.id).needs_grad || g.node(kim.id).needs_grad;
    return g.push(std::move(out), ng, [kre, kim, pts_sh, l, co_n, ci_n](ad::Graph<Real>& gg, int self) {
      const auto& adj = gg.node(self).adj.c;
      Tensor<Real> gre(gg.node(kre.id).val.shape());
      Tensor<Real> gim(gg.node(kim.id).val.shape());
      for (int co = 0; co < co_n; ++co)
        for (int ci = 0; ci < ci_n; ++ci)
          for (std::size_t h = 0; h < pts_sh->size(); ++h) {
            const auto [m1, m2] = (*pts_sh)[h];
            const auto gp = adj.at({co, ci, index_of_freq(m1, l), index_of_freq(m2, l)});
            if (h == 0) {
              gre.at({co, ci, 0}) += gp.real();
            } else {
              const auto gm = adj.at({co, ci, index_of_freq(-m1, l), index_of_freq(-m2, l)});
              gre.at({co, ci, static_cast<int>(h)}) += gp.real() + gm.real();
              gim.at({co, ci, static_cast<int>(h) - 1}) += gp.imag() - gm.imag();
            }
          }
      gg.add_adjoint(kre.id, gre);
      gg.add_adjoint(kim.id, gim);
    });
  }

  ad::Var<Real> expand_node(ad::Var<Real> kl) const {
    auto& g = *kl.g;
    const int l = locality, dd = d;
    ad::Value<Real> out;
    out.is_complex = true;
    out.c = expand_local_kernel2(g.node(kl.id).val.cplx(), dd);
    const bool ng = g.node(kl.id).needs_grad;
    return g.push(std::move(out), ng, [kl, l, dd](ad::Graph<Real>& gg, int self) {
      // pullback of K_d = W K W^T is W^H G conj(W)
      const auto& w = detail::expand_matrix<Real>(l, dd);
      const auto& adj = gg.node(self).adj.c;
      const Shape& ks = gg.node(kl.id).val.shape();
      CTensor<Real> gk(ks);
      const std::size_t lead = gk.size() / (static_cast<std::size_t>(l) * l);
      std::vector<std::complex<Real>> tmp(static_cast<std::size_t>(l) * dd);
      for (std::size_t b = 0; b < lead; ++b) {
        const auto* gp = adj.ptr() + b * static_cast<std::size_t>(dd) * dd;
        auto* dst = gk.ptr() + b * static_cast<std::size_t>(l) * l;
        for (int j = 0; j < l; ++j)
          for (int p2 = 0; p2 < dd; ++p2) {
            std::complex<Real> acc{};
            for (int p = 0; p < dd; ++p)
              acc += std::conj(w[static_cast<std::size_t>(p) * l + j]) *
                     gp[static_cast<std::size_t>(p) * dd + p2];
            tmp[static_cast<std::size_t>(j) * dd + p2] = acc;
          }
        for (int j1 = 0; j1 < l; ++j1)
          for (int j2 = 0; j2 < l; ++j2) {
            std::complex<Real> acc{};
            for (int p = 0; p < dd; ++p)
              acc += tmp[static_cast<std::size_t>(j1) * dd + p] *
                     std::conj(w[static_cast<std::size_t>(p) * l + j2]);
            dst[static_cast<std::size_t>(j1) * l + j2] = acc;
          }
      }
      gg.add_adjoint(kl.id, gk);
    });
  }
};

/// Tape node for conv_multiplier: band_crop2 then the self-adjoint edge
/// symmetrization.
template <RealScalar Real>
ad::Var<Real> conv_multiplier_node(ad::Var<Real> k_d, int n, const ScaleSet& scales) {
  auto cropped = ad::band_crop2_node(k_d, n);
  auto& g = *cropped.g;
  ad::Value<Real> out;
  out.is_complex = true;
  out.c = edge_symmetrize2(g.node(cropped.id).val.cplx(), scales);
  const bool ng = g.node(cropped.id).needs_grad;
  auto scales_sh = std::make_shared<ScaleSet>(scales);
  return g.push(std::move(out), ng, [cropped, scales_sh](ad::Graph<Real>& gg, int self) {
    gg.add_adjoint(cropped.id, edge_symmetrize2(gg.node(self).adj.c, *scales_sh));
  });
}

}  // namespace sefnet
