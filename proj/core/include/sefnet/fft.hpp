#pragma once

#include <map>
#include <memory>
#include <mutex>

#include "sefnet/common.hpp"

namespace sefnet {

/// Mixed-radix Cooley-Tukey FFT for arbitrary N. Composite lengths split by
/// their smallest prime factor; a prime length degenerates to the O(p^2)
/// direct butterfly, so every N >= 1 is supported. Forward sign is e^{-j..};
/// no normalization is applied here (spectral.hpp owns the 1/N convention).
template <RealScalar Real>
class FftPlan {
 public:
  explicit FftPlan(int n) : n_(n) {
    if (n < 1) throw ShapeError("fft length must be >= 1");
    int rem = n;
    for (int p = 2; rem > 1;) {
      if (rem % p == 0) {
        factors_.push_back({p, rem / p});
        rem /= p;
      } else {
        ++p;
        if (p * p > rem) p = rem;
      }
    }
    tw_fwd_.resize(static_cast<std::size_t>(n));
    tw_inv_.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      const double ang = -2.0 * 3.14159265358979323846 * k / n;
      tw_fwd_[static_cast<std::size_t>(k)] =
          std::complex<Real>(static_cast<Real>(std::cos(ang)), static_cast<Real>(std::sin(ang)));
      tw_inv_[static_cast<std::size_t>(k)] = std::conj(tw_fwd_[static_cast<std::size_t>(k)]);
    }
  }

  int length() const { return n_; }

  /// out[0..n) <- DFT of in[0], in[stride], ... (out must not alias in).
  void exec(const std::complex<Real>* in, int in_stride, std::complex<Real>* out,
            bool inverse) const {
    const auto* tw = inverse ? tw_inv_.data() : tw_fwd_.data();
    if (factors_.empty()) {  // n == 1
      out[0] = in[0];
      return;
    }
    work(out, in, 1, in_stride, 0, tw);
  }

 private:
  struct Factor {
    int p;  // radix
    int m;  // remaining length (n at this stage == p*m)
  };

  void work(std::complex<Real>* out, const std::complex<Real>* in, int fstride, int in_stride,
            std::size_t stage, const std::complex<Real>* tw) const {
    const int p = factors_[stage].p;
    const int m = factors_[stage].m;
    if (m == 1) {
      for (int q = 0; q < p; ++q)
        out[q] = in[static_cast<std::ptrdiff_t>(q) * fstride * in_stride];
    } else {
      for (int q = 0; q < p; ++q)
        work(out + static_cast<std::ptrdiff_t>(q) * m,
             in + static_cast<std::ptrdiff_t>(q) * fstride * in_stride, fstride * p, in_stride,
             stage + 1, tw);
    }
    if (p == 2)
      bfly2(out, fstride, m, tw);
    else
      bfly_generic(out, fstride, m, p, tw);
  }

  void bfly2(std::complex<Real>* out, int fstride, int m, const std::complex<Real>* tw) const {
    for (int u = 0; u < m; ++u) {
      const std::complex<Real> t = out[m + u] * tw[static_cast<std::size_t>(u) * fstride % n_];
      out[m + u] = out[u] - t;
      out[u] += t;
    }
  }

  // X[q'm+u] = sum_q scratch[q] * tw[((q'm+u)*q*fstride) mod n]
  void bfly_generic(std::complex<Real>* out, int fstride, int m, int p,
                    const std::complex<Real>* tw) const {
    std::vector<std::complex<Real>> scratch(static_cast<std::size_t>(p));
    const std::int64_t n = n_;
    for (int u = 0; u < m; ++u) {
      for (int q = 0; q < p; ++q) scratch[static_cast<std::size_t>(q)] = out[q * m + u];
      for (int qp = 0; qp < p; ++qp) {
        const std::int64_t step = (static_cast<std::int64_t>(qp) * m + u) * fstride % n;
        std::int64_t idx = 0;
        std::complex<Real> acc = scratch[0];
        for (int q = 1; q < p; ++q) {
          idx += step;
          if (idx >= n) idx -= n;
          acc += scratch[static_cast<std::size_t>(q)] * tw[static_cast<std::size_t>(idx)];
        }
        out[qp * m + u] = acc;
      }
    }
  }

  int n_;
  std::vector<Factor> factors_;
  std::vector<std::complex<Real>> tw_fwd_, tw_inv_;
};

/// Shared immutable plan cache; plans are safe for concurrent exec().
template <RealScalar Real>
const FftPlan<Real>& fft_plan(int n) {
  static std::map<int, std::unique_ptr<FftPlan<Real>>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, std::make_unique<FftPlan<Real>>(n)).first;
  return *it->second;
}

}  // namespace sefnet
