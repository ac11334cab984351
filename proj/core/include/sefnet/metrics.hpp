#pragma once

#include "json.hpp"
#include "sefnet/layers.hpp"
#include "sefnet/resample.hpp"

namespace sefnet {

struct ProbeRow {
  std::string layer;
  int edge = 0;  // doubled band-edge frequency (a ScaleSet entry)
  double deviation = 0;
  bool pass = false;
};

struct EquiReport {
  std::vector<std::pair<int, double>> per_scale;  // resolution -> mean error
  double mean_error = 0;
  double max_error = 0;
  int skipped = 0;  // zero-norm denominators
  std::vector<ProbeRow> probes;
  bool probes_pass = true;

  nlohmann::json to_json() const {
    nlohmann::json js = nlohmann::json::array();
    for (auto [r, e] : per_scale) js.push_back({{"resolution", r}, {"error", e}});
    nlohmann::json jp = nlohmann::json::array();
    for (const auto& p : probes)
      jp.push_back(
          {{"layer", p.layer}, {"edge", p.edge}, {"deviation", p.deviation}, {"pass", p.pass}});
    return {{"per_scale", js},       {"mean_error", mean_error}, {"max_error", max_error},
            {"skipped", skipped},    {"probes", jp},             {"probes_pass", probes_pass}};
  }
  std::string to_text() const { return to_json().dump(2); }
};

/// Spatial feature map of a model: [C, n, n] -> [C', n, n].
template <RealScalar Real>
using FeatureFn = std::function<Tensor<Real>(const Tensor<Real>&)>;

/// Mean over samples and scales of |g(D_r x) - D_r g(x)|^2 / |g(D_r x)|^2,
/// with D_r realized by the selected anti-aliasing mode.
template <RealScalar Real>
EquiReport equivariance_error(const FeatureFn<Real>& g, const std::vector<Tensor<Real>>& inputs,
                              const ScaleSet& scales, const AntiAliasMode& mode, int threads = 1) {
  EquiReport report;
  if (inputs.empty()) return report;
  struct Slot {
    std::vector<double> errs;  // per scale; nan = skipped
  };
  std::vector<Slot> slots(inputs.size());
  parallel_for(static_cast<std::int64_t>(inputs.size()), threads, [&](std::int64_t i) {
    const Tensor<Real>& x = inputs[static_cast<std::size_t>(i)];
    const Tensor<Real> gx = g(x);
    auto& errs = slots[static_cast<std::size_t>(i)].errs;
    for (int r : scales.entries) {
      const Tensor<Real> lhs = g(resample_image(x, r, mode));
      const Tensor<Real> rhs = resample_image(gx, r, mode);
      double num = 0, den = 0;
      for (std::size_t j = 0; j < lhs.size(); ++j) {
        const double d = static_cast<double>(lhs[j]) - static_cast<double>(rhs[j]);
        num += d * d;
        den += static_cast<double>(lhs[j]) * static_cast<double>(lhs[j]);
      }
      errs.push_back(den == 0 ? std::numeric_limits<double>::quiet_NaN() : num / den);
    }
  });
  std::vector<double> scale_sum(scales.entries.size(), 0);
  std::vector<int> scale_cnt(scales.entries.size(), 0);
  double total = 0;
  int count = 0;
  for (const auto& slot : slots)
    for (std::size_t si = 0; si < slot.errs.size(); ++si) {
      const double e = slot.errs[si];
      if (std::isnan(e)) {
        ++report.skipped;
        continue;
      }
      scale_sum[si] += e;
      ++scale_cnt[si];
      total += e;
      ++count;
      report.max_error = std::max(report.max_error, e);
    }
  for (std::size_t si = 0; si < scales.entries.size(); ++si)
    report.per_scale.push_back({scales.entries[si], scale_cnt[si] ? scale_sum[si] / scale_cnt[si] : 0});
  report.mean_error = count ? total / count : 0;
  return report;
}

/// Spectrum-to-spectrum layer under probe: [C, n, n] -> [C', n/a, n/a].
template <RealScalar Real>
using SpectrumFn = std::function<CTensor<Real>(const CTensor<Real>&)>;

/// Claim-1 probe: perturb only coefficients with 2|k| > edge (Hermitian, 10%
/// of the input norm) and report the max change of output coefficients with
/// 2 a |k'| <= edge. Zero for any layer with the Claim-1 structure.
template <RealScalar Real>
double claim1_probe(const SpectrumFn<Real>& layer, int channels, int n, int edge, int trials,
                    Rng& rng, int size_ratio = 1) {
  if (edge >= n) return 0;  // no perturbable coefficients above the top edge
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    const Tensor<Real> img = random_uniform<Real>(Shape{channels, n, n}, rng);
    CTensor<Real> x = dft2(img);
    const Tensor<Real> pimg = random_uniform<Real>(Shape{channels, n, n}, rng);
    CTensor<Real> noise = annulus_select(dft2(pimg), edge, n, 2);
    const double nn = l2_norm(noise);
    if (nn > 0) {
      const Real f = static_cast<Real>(0.1 * l2_norm(x) / nn);
      for (auto& v : noise.data()) v *= f;
    }
    CTensor<Real> xp = x;
    for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += noise[i];
    const CTensor<Real> y0 = layer(x);
    const CTensor<Real> y1 = layer(xp);
    if (y0.shape() != y1.shape()) throw ShapeError("claim1_probe: layer output shape changed");
    const int on = y0.shape().back();
    const std::size_t lead = y0.size() / (static_cast<std::size_t>(on) * on);
    for (std::size_t b = 0; b < lead; ++b)
      for (int i = 0; i < on; ++i)
        for (int j = 0; j < on; ++j) {
          const int tmax =
              std::max(std::abs(freq_of_index(i, on)), std::abs(freq_of_index(j, on)));
          if (2 * tmax * size_ratio > edge) continue;
          const std::size_t off = (b * on + static_cast<std::size_t>(i)) * on + static_cast<std::size_t>(j);
          worst = std::max(worst, static_cast<double>(std::abs(y1[off] - y0[off])));
        }
  }
  return worst;
}

/// Scale-consistent rate from per-sample CE rows ordered by ascending
/// resolution (last row = native resolution). The expectation over proper
/// downscales is exact; samples with no proper downscale are excluded.
struct ScaleConResult {
  double rate = 1;
  int counted = 0;
  int excluded = 0;
};

inline ScaleConResult scale_consistency(const std::vector<std::vector<std::pair<int, double>>>& ce_rows) {
  ScaleConResult out;
  double sum = 0;
  for (const auto& rows : ce_rows) {
    if (rows.size() < 2) {
      ++out.excluded;
      continue;
    }
    const double native = rows.back().second;
    int good = 0;
    for (std::size_t i = 0; i + 1 < rows.size(); ++i)
      if (native <= rows[i].second) ++good;
    sum += static_cast<double>(good) / static_cast<double>(rows.size() - 1);
    ++out.counted;
  }
  out.rate = out.counted ? sum / out.counted : 1.0;
  return out;
}

}  // namespace sefnet
