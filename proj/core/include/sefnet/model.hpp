#pragma once

#include <chrono>

#include "sefnet/checkpoint.hpp"
#include "sefnet/data.hpp"
#include "sefnet/layers.hpp"

namespace sefnet {

struct BlockConfig {
  int c_in = 1, c_out = 16, locality = 7;
  bool pool = false;
  PoolSpec pool_spec{};
};

struct NetworkConfig {
  int max_resolution = 28;
  std::vector<int> scales;  // strictly increasing, max == max_resolution
  std::vector<BlockConfig> blocks;
  bool instance_normalize = true;
  Nonlin nonlin = Nonlin::relu;
  int head_pool_window = 4;
  int mlp_hidden = 128;
  int classes = 10;

  /// Desk architecture: 3 blocks 1->16->32->32 with localities 7, 11, 11, no
  /// backbone pooling, head max-pool 4 after padding to 28, MLP ..->128->10.
  static NetworkConfig reference() {
    NetworkConfig c;
    c.max_resolution = 28;
    c.scales = ScaleSet::range(8, 28).entries;
    c.blocks = {{1, 16, 7}, {16, 32, 11}, {32, 32, 11}};
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json jb = nlohmann::json::array();
    for (const auto& b : blocks)
      jb.push_back({{"c_in", b.c_in},
                    {"c_out", b.c_out},
                    {"locality", b.locality},
                    {"pool", b.pool},
                    {"pool_window", b.pool_spec.window},
                    {"pool_kind", b.pool_spec.kind == PoolSpec::Kind::max ? "max" : "avg"}});
    return {{"max_resolution", max_resolution},
            {"scales", scales},
            {"blocks", jb},
            {"instance_normalize", instance_normalize},
            {"nonlin", nonlin == Nonlin::relu ? "relu" : "identity"},
            {"head_pool_window", head_pool_window},
            {"mlp_hidden", mlp_hidden},
            {"classes", classes}};
  }

  static NetworkConfig from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.max_resolution = j.at("max_resolution").get<int>();
    c.scales = j.at("scales").get<std::vector<int>>();
    for (const auto& jb : j.at("blocks")) {
      BlockConfig b;
      b.c_in = jb.at("c_in").get<int>();
      b.c_out = jb.at("c_out").get<int>();
      b.locality = jb.at("locality").get<int>();
      b.pool = jb.at("pool").get<bool>();
      b.pool_spec.window = jb.at("pool_window").get<int>();
      b.pool_spec.kind =
          jb.at("pool_kind").get<std::string>() == "max" ? PoolSpec::Kind::max : PoolSpec::Kind::avg;
      c.blocks.push_back(b);
    }
    c.instance_normalize = j.at("instance_normalize").get<bool>();
    c.nonlin = j.at("nonlin").get<std::string>() == "relu" ? Nonlin::relu : Nonlin::identity;
    c.head_pool_window = j.at("head_pool_window").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.classes = j.at("classes").get<int>();
    return c;
  }
};

// ---- losses (pure) ------------------------------------------------------------

template <RealScalar Real>
double cross_entropy(const std::vector<Real>& logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw ShapeError("cross_entropy: label out of range");
  double mx = static_cast<double>(logits[0]);
  for (Real v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0;
  for (Real v : logits) sum += std::exp(static_cast<double>(v) - mx);
  return mx + std::log(sum) - static_cast<double>(logits[static_cast<std::size_t>(label)]);
}

template <RealScalar Real>
using ScaleRows = std::vector<std::pair<int, std::vector<Real>>>;  // ascending resolution

template <RealScalar Real>
double ce_sum_loss(const ScaleRows<Real>& rows, int label) {
  double total = 0;
  for (const auto& [k, logits] : rows) total += cross_entropy(logits, label);
  return total;
}

/// Hinge on consecutive rows of the ordered resolution set: penalizes a
/// higher resolution scoring a larger cross entropy than its predecessor.
template <RealScalar Real>
double consistency_hinge_loss(const ScaleRows<Real>& rows, int label) {
  if (rows.size() < 2) return 0;
  double total = 0;
  double prev = cross_entropy(rows[0].second, label);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double ce = cross_entropy(rows[i].second, label);
    total += std::max(ce - prev, 0.0);
    prev = ce;
  }
  return total;
}

// ---- training configuration ----------------------------------------------------

struct TrainConfig {
  int epochs = 20;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double lambda_consistency = 1.0;
  int batch = 32;
  std::uint64_t seed = 42;
  int threads = 1;
  double time_budget_sec = 0;         // 0: unlimited
  double early_stop_val_accuracy = 0; // 0: disabled
  int probe_samples = 500;            // fixed subset for the loss-decrease probe
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0, val_accuracy = 0, val_scale_con = 0;
  double seconds = 0;
};

struct TrainSummary {
  std::vector<EpochRecord> log;
  bool diverged = false;
  double initial_probe_loss = 0, epoch1_probe_loss = 0;
  double final_val_accuracy = 0, final_val_scale_con = 0;
  int epochs_run = 0;
  double total_seconds = 0;
};

struct EvalResult {
  double accuracy = 0, mean_loss = 0;
  double scale_con = 1;
  int scale_con_counted = 0, scale_con_excluded = 0;
  std::map<int, std::pair<int, int>> per_resolution;  // res -> (correct, total)
};

template <RealScalar Real>
struct Adam {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  int t = 0;
  std::vector<Tensor<Real>> m, v;

  void step(ad::ParamStore<Real>& store) {
    if (m.empty()) {
      for (std::size_t i = 0; i < store.count(); ++i) {
        m.push_back(zeros_like(store.entry(static_cast<int>(i)).value));
        v.push_back(zeros_like(store.entry(static_cast<int>(i)).value));
      }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < store.count(); ++i) {
      auto& e = store.entry(static_cast<int>(i));
      if (!e.trainable) continue;
      auto& mi = m[i];
      auto& vi = v[i];
      for (std::size_t j = 0; j < e.value.size(); ++j) {
        const double g = static_cast<double>(e.grad[j]) + weight_decay * static_cast<double>(e.value[j]);
        const double mj = beta1 * static_cast<double>(mi[j]) + (1.0 - beta1) * g;
        const double vj = beta2 * static_cast<double>(vi[j]) + (1.0 - beta2) * g * g;
        mi[j] = static_cast<Real>(mj);
        vi[j] = static_cast<Real>(vj);
        e.value[j] -= static_cast<Real>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
      }
    }
    store.touch();
  }
};

// ---- the network ----------------------------------------------------------------

template <RealScalar Real>
class EquiNetwork {
 public:
  EquiNetwork(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), scales_(validate_scales()) {
    Rng rng(seed);
    int a = 1;  // cumulative pooling factor
    for (std::size_t b = 0; b < cfg_.blocks.size(); ++b) {
      const auto& bc = cfg_.blocks[b];
      const int d = cfg_.max_resolution / a;
      kernels_.push_back(LocalFourierKernel<Real>::create(
          store_, "block" + std::to_string(b) + ".conv", bc.c_out, bc.c_in, bc.locality, d, rng));
      factors_.push_back(a);
      if (bc.pool) a *= bc.pool_spec.window;
    }
    total_factor_ = a;
    if (cfg_.max_resolution % total_factor_ != 0)
      throw ShapeError("network: pooling factors must divide the max resolution");
    head_res_ = cfg_.max_resolution / total_factor_;
    if (head_res_ % cfg_.head_pool_window != 0)
      throw ShapeError("network: head pool window must divide the feature resolution");
    const int side = head_res_ / cfg_.head_pool_window;
    feat_dim_ = cfg_.blocks.back().c_out * side * side;
    const Real s1 = std::sqrt(Real(2) / static_cast<Real>(feat_dim_));
    const Real s2 = std::sqrt(Real(2) / static_cast<Real>(cfg_.mlp_hidden));
    store_.add("head.w1", random_normal<Real>(Shape{feat_dim_, cfg_.mlp_hidden}, rng, Real(0), s1));
    store_.add("head.b1", Tensor<Real>(Shape{cfg_.mlp_hidden}));
    store_.add("head.w2", random_normal<Real>(Shape{cfg_.mlp_hidden, cfg_.classes}, rng, Real(0), s2));
    store_.add("head.b2", Tensor<Real>(Shape{cfg_.classes}));
  }

  const NetworkConfig& config() const { return cfg_; }
  const ScaleSet& scales() const { return scales_; }
  ad::ParamStore<Real>& params() { return store_; }
  const ad::ParamStore<Real>& params() const { return store_; }

  /// ScaleSet seen by block b (entries shrink with accumulated pooling).
  ScaleSet block_scales(std::size_t b) const {
    const int a = factors_[b];
    if (a == 1) return scales_;
    std::vector<int> e;
    for (int r : scales_.entries)
      if (r % a == 0) e.push_back(r / a);
    return ScaleSet(std::move(e));
  }

  // ---- pure inference paths ----------------------------------------------------

  /// phi = g(x): feature spectrum for an image at any resolution in R.
  CTensor<Real> forward_features(const Tensor<Real>& image) const {
    Tensor<Real> x = with_channel_axis(image);
    const int n = x.shape().back();
    if (!scales_.contains(n)) throw ShapeError("forward_features: resolution not in the scale set");
    CTensor<Real> spec = dft2(x);
    for (std::size_t b = 0; b < cfg_.blocks.size(); ++b) {
      const int rb = n / factors_[b];
      spec = fourier_conv(spec, multiplier(b, rb));
      spec = equi_nonlinearity(spec, block_scales(b), cfg_.nonlin, cfg_.instance_normalize);
      if (cfg_.blocks[b].pool) spec = equi_pool(spec, cfg_.blocks[b].pool_spec, block_scales(b));
    }
    return spec;
  }

  Tensor<Real> features_spatial(const Tensor<Real>& image) const {
    return idft2(forward_features(image));
  }

  /// Per-scale logits for every k in R(x) (ascending).
  ScaleRows<Real> classify_multiscale(const CTensor<Real>& phi, int input_res) const {
    ScaleRows<Real> rows;
    for (int k : scales_.up_to(input_res)) {
      if (k % total_factor_ != 0 && total_factor_ != 1) continue;
      rows.push_back({k, head_row(phi, k / total_factor_)});
    }
    if (rows.empty()) throw ShapeError("classify_multiscale: empty resolution set");
    return rows;
  }

  ScaleRows<Real> forward_rows(const Tensor<Real>& image) const {
    const int n = with_channel_axis(image).shape().back();
    return classify_multiscale(forward_features(image), n);
  }

  int predict(const Tensor<Real>& image) const {
    const int n = with_channel_axis(image).shape().back();
    const auto rows = forward_rows(image);
    for (const auto& [k, logits] : rows)
      if (k == n) return argmax_first(logits);
    throw ShapeError("predict: native resolution row missing");
  }

  // ---- training ------------------------------------------------------------------

  TrainSummary train(const data::Dataset& train_ds, const data::Dataset& val_ds,
                     const TrainConfig& cfg);

  EvalResult evaluate(const data::Dataset& ds, double lambda, int threads = 1) const;

  // ---- persistence ----------------------------------------------------------------

  void save(const std::string& path, int scalar_width = static_cast<int>(sizeof(Real))) const {
    nlohmann::json extra;
    extra["network"] = cfg_.to_json();
    save_checkpoint(store_, path, scalar_width, extra);
  }

  static EquiNetwork load(const std::string& path) {
    const CheckpointMeta meta = peek_checkpoint(path);
    if (!meta.extra.contains("network"))
      throw DataError("checkpoint lacks a network description: " + path);
    EquiNetwork net(NetworkConfig::from_json(meta.extra["network"]), 0);
    load_checkpoint(net.store_, path);
    return net;
  }

  /// Cached resolution-n conv multiplier of block b (invalidated by any
  /// parameter mutation). Thread-safe.
  const CTensor<Real>& multiplier(std::size_t b, int n) const {
    std::lock_guard<std::mutex> lock(cache_mu_);
    if (cache_version_ != store_.version()) {
      kd_cache_.clear();
      m_cache_.clear();
      cache_version_ = store_.version();
    }
    auto key = std::make_pair(static_cast<int>(b), n);
    auto it = m_cache_.find(key);
    if (it != m_cache_.end()) return *it->second;
    auto kit = kd_cache_.find(static_cast<int>(b));
    if (kit == kd_cache_.end())
      kit = kd_cache_
                .emplace(static_cast<int>(b),
                         std::make_unique<CTensor<Real>>(kernels_[b].expanded(store_)))
                .first;
    auto m = std::make_unique<CTensor<Real>>(conv_multiplier(*kit->second, n, block_scales(b)));
    auto [mit, _] = m_cache_.emplace(key, std::move(m));
    return *mit->second;
  }

  int total_pool_factor() const { return total_factor_; }
  int feature_dim() const { return feat_dim_; }
  const std::vector<LocalFourierKernel<Real>>& kernels() const { return kernels_; }

  static Tensor<Real> with_channel_axis(const Tensor<Real>& image) {
    if (image.rank() == 2) return image.reshaped(Shape{1, image.dim(0), image.dim(1)});
    if (image.rank() == 3) return image;
    throw ShapeError("expected [n,n] or [C,n,n] image");
  }

  static int argmax_first(const std::vector<Real>& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
  }

 private:
  ScaleSet validate_scales() const {
    ScaleSet s(cfg_.scales);
    if (s.max_res() != cfg_.max_resolution)
      throw ShapeError("network: max(scales) must equal max_resolution");
    return s;
  }

  /// Eq. 16 row: MLP(Pool(idft(Pad_N(crop(phi, band)))))
  std::vector<Real> head_row(const CTensor<Real>& phi, int band) const {
    const CTensor<Real> padded = band_pad2(band_crop2(phi, band), head_res_);
    const Tensor<Real> spatial = idft2(padded);
    const Tensor<Real> pooled = pool2d_pure(spatial, cfg_.head_pool_window, PoolSpec::Kind::max);
    const auto& w1 = store_.value("head.w1");
    const auto& b1 = store_.value("head.b1");
    const auto& w2 = store_.value("head.w2");
    const auto& b2 = store_.value("head.b2");
    std::vector<Real> h(static_cast<std::size_t>(cfg_.mlp_hidden));
    for (int j = 0; j < cfg_.mlp_hidden; ++j) {
      Real acc = b1[static_cast<std::size_t>(j)];
      for (int i = 0; i < feat_dim_; ++i)
        acc += pooled[static_cast<std::size_t>(i)] * w1[static_cast<std::size_t>(i) * cfg_.mlp_hidden + j];
      h[static_cast<std::size_t>(j)] = acc > Real(0) ? acc : Real(0);
    }
    std::vector<Real> logits(static_cast<std::size_t>(cfg_.classes));
    for (int j = 0; j < cfg_.classes; ++j) {
      Real acc = b2[static_cast<std::size_t>(j)];
      for (int i = 0; i < cfg_.mlp_hidden; ++i)
        acc += h[static_cast<std::size_t>(i)] * w2[static_cast<std::size_t>(i) * cfg_.classes + j];
      logits[static_cast<std::size_t>(j)] = acc;
    }
    return logits;
  }

  // Tape twin of head_row; returns the CE scalar node for one row.
  ad::Var<Real> head_row_node(ad::Graph<Real>& g, ad::Var<Real> phi, int band,
                              const std::array<ad::Var<Real>, 4>& head, int label) const {
    auto padded = ad::band_pad2_node(ad::band_crop2_node(phi, band), head_res_);
    auto spatial = ad::idft2_node(padded);
    auto pooled = ad::max_pool2d(spatial, cfg_.head_pool_window);
    auto flat = ad::reshape(pooled, Shape{1, feat_dim_});
    auto h1 = ad::relu(ad::add(ad::matmul(flat, head[0]), ad::reshape(head[1], Shape{1, cfg_.mlp_hidden})));
    auto logits = ad::add(ad::matmul(h1, head[2]), ad::reshape(head[3], Shape{1, cfg_.classes}));
    return ad::softmax_cross_entropy(ad::reshape(logits, Shape{cfg_.classes}), label);
  }

  NetworkConfig cfg_;
  ScaleSet scales_;
  ad::ParamStore<Real> store_;
  std::vector<LocalFourierKernel<Real>> kernels_;
  std::vector<int> factors_;
  int total_factor_ = 1;
  int head_res_ = 0;
  int feat_dim_ = 0;

  mutable std::mutex cache_mu_;
  mutable std::uint64_t cache_version_ = ~0ull;
  mutable std::map<int, std::unique_ptr<CTensor<Real>>> kd_cache_;
  mutable std::map<std::pair<int, int>, std::unique_ptr<CTensor<Real>>> m_cache_;

  template <RealScalar R2>
  friend struct TrainDriver;
};

// ---- evaluation ------------------------------------------------------------------

template <RealScalar Real>
EvalResult EquiNetwork<Real>::evaluate(const data::Dataset& ds, double lambda, int threads) const {
  EvalResult out;
  if (ds.empty()) return out;
  for (int r : scales_.entries) {
    for (std::size_t b = 0; b < cfg_.blocks.size(); ++b)
      if (r % factors_[b] == 0) (void)multiplier(b, r / factors_[b]);
  }
  struct Slot {
    int correct = 0;
    double loss = 0;
    int res = 0;
    double con = -1;  // -1: excluded
  };
  std::vector<Slot> slots(ds.size());
  parallel_for(static_cast<std::int64_t>(ds.size()), threads, [&](std::int64_t i) {
    const auto& s = ds[static_cast<std::size_t>(i)];
    const Tensor<Real> img = cast_tensor<float, Real>(s.image);
    const auto rows = forward_rows(img);
    Slot& slot = slots[static_cast<std::size_t>(i)];
    slot.res = s.resolution;
    std::vector<Real> native;
    for (const auto& [k, logits] : rows)
      if (k == s.resolution) native = logits;
    slot.correct = argmax_first(native) == static_cast<int>(s.label) ? 1 : 0;
    slot.loss = ce_sum_loss(rows, s.label) + lambda * consistency_hinge_loss(rows, s.label);
    // Scale-Con: exact mean over proper downscales; rows below the native
    // resolution equal the predictions on ideally-resampled inputs (exact
    // equivariance), which is separately tested.
    const double ce_native = cross_entropy(native, s.label);
    int cnt = 0, good = 0;
    for (const auto& [k, logits] : rows)
      if (k < s.resolution) {
        ++cnt;
        if (ce_native <= cross_entropy(logits, s.label) + 0.0) ++good;
      }
    slot.con = cnt == 0 ? -1 : static_cast<double>(good) / cnt;
  });
  double con_sum = 0;
  for (const auto& slot : slots) {
    out.accuracy += slot.correct;
    out.mean_loss += slot.loss;
    auto& pr = out.per_resolution[slot.res];
    pr.first += slot.correct;
    pr.second += 1;
    if (slot.con < 0)
      ++out.scale_con_excluded;
    else {
      con_sum += slot.con;
      ++out.scale_con_counted;
    }
  }
  out.accuracy /= static_cast<double>(ds.size());
  out.mean_loss /= static_cast<double>(ds.size());
  out.scale_con = out.scale_con_counted ? con_sum / out.scale_con_counted : 1.0;
  return out;
}

// ---- training --------------------------------------------------------------------

template <RealScalar Real>
struct TrainDriver {
  EquiNetwork<Real>& net;
  const data::Dataset& train_ds;
  const data::Dataset& val_ds;
  const TrainConfig& cfg;

  double probe_loss(const std::vector<std::size_t>& probe_idx) const {
    double total = 0;
    for (std::size_t i : probe_idx) {
      const auto& s = train_ds[i];
      const auto rows = net.forward_rows(cast_tensor<float, Real>(s.image));
      total += ce_sum_loss(rows, s.label) + cfg.lambda_consistency * consistency_hinge_loss(rows, s.label);
    }
    return probe_idx.empty() ? 0 : total / static_cast<double>(probe_idx.size());
  }

  TrainSummary run() {
    TrainSummary summary;
    auto& store = net.params();
    Adam<Real> adam;
    adam.lr = cfg.lr;
    adam.weight_decay = cfg.weight_decay;
    Rng rng(cfg.seed);
    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < train_ds.size(); ++i) groups[train_ds[i].resolution].push_back(i);

    std::vector<std::size_t> probe_idx;
    for (std::size_t i = 0; i < train_ds.size() && static_cast<int>(i) < cfg.probe_samples; ++i)
      probe_idx.push_back(i);
    summary.initial_probe_loss = probe_loss(probe_idx);

    // snapshot for divergence recovery
    std::vector<Tensor<Real>> snapshot;
    auto take_snapshot = [&] {
      snapshot.clear();
      for (std::size_t i = 0; i < store.count(); ++i) snapshot.push_back(store.entry(static_cast<int>(i)).value);
    };
    auto restore_snapshot = [&] {
      for (std::size_t i = 0; i < store.count(); ++i) store.entry(static_cast<int>(i)).value = snapshot[i];
      store.touch();
    };
    take_snapshot();

    const int threads = std::max(1, cfg.threads);
    const std::size_t n_head_params = 4;
    const char* head_names[4] = {"head.w1", "head.b1", "head.w2", "head.b2"};

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      const auto t_epoch = std::chrono::steady_clock::now();
      // same-resolution batches, seeded order
      std::vector<std::vector<std::size_t>> batches;
      for (auto& [res, idx] : groups) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t off = 0; off < idx.size(); off += static_cast<std::size_t>(cfg.batch))
          batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(off),
                               idx.begin() + static_cast<std::ptrdiff_t>(
                                                 std::min(idx.size(), off + static_cast<std::size_t>(cfg.batch))));
      }
      std::shuffle(batches.begin(), batches.end(), rng);

      double epoch_loss = 0;
      std::size_t epoch_count = 0;
      bool diverged = false;

      for (const auto& batch : batches) {
        const int r = train_ds[batch.front()].resolution;
        // kernel graph: params -> expanded kernels -> per-block multipliers
        ad::Graph<Real> gk(&store);
        std::vector<ad::Var<Real>> m_nodes;
        std::vector<CTensor<Real>> m_vals;
        for (std::size_t b = 0; b < net.kernels_.size(); ++b) {
          auto kd = net.kernels_[b].expanded_node(gk);
          auto m = conv_multiplier_node(kd, r / net.factors_[b], net.block_scales(b));
          m_nodes.push_back(m);
          m_vals.push_back(m.cvalue());
        }
        const std::size_t nb = net.kernels_.size();
        std::vector<std::vector<CTensor<Real>>> m_grad(static_cast<std::size_t>(threads));
        std::vector<std::vector<Tensor<Real>>> h_grad(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) {
          for (std::size_t b = 0; b < nb; ++b) m_grad[static_cast<std::size_t>(t)].push_back(zeros_like(m_vals[b]));
          for (std::size_t p = 0; p < n_head_params; ++p)
            h_grad[static_cast<std::size_t>(t)].push_back(zeros_like(store.value(head_names[p])));
        }
        std::vector<double> losses(batch.size(), 0);
        std::vector<std::uint8_t> finite(batch.size(), 1);

        const std::size_t chunk = (batch.size() + static_cast<std::size_t>(threads) - 1) /
                                  static_cast<std::size_t>(threads);
        parallel_for(threads, threads, [&](std::int64_t t) {
          const std::size_t lo = static_cast<std::size_t>(t) * chunk;
          const std::size_t hi = std::min(batch.size(), lo + chunk);
          for (std::size_t i = lo; i < hi; ++i) {
            const auto& s = train_ds[batch[i]];
            ad::Graph<Real> gs(nullptr);
            std::vector<ad::Var<Real>> ms;
            for (std::size_t b = 0; b < nb; ++b)
              ms.push_back(gs.external(&m_vals[b], &m_grad[static_cast<std::size_t>(t)][b]));
            std::array<ad::Var<Real>, 4> head;
            for (std::size_t p = 0; p < n_head_params; ++p)
              head[p] = gs.external(&store.value(head_names[p]), &h_grad[static_cast<std::size_t>(t)][p]);

            const Tensor<Real> img =
                EquiNetwork<Real>::with_channel_axis(cast_tensor<float, Real>(s.image));
            auto spec = ad::dft2_node(gs.constant(img));
            for (std::size_t b = 0; b < nb; ++b) {
              spec = ad::spectral_conv_apply(spec, ms[b]);
              spec = equi_nonlinearity_node(spec, net.block_scales(b), net.cfg_.nonlin,
                                            net.cfg_.instance_normalize);
              if (net.cfg_.blocks[b].pool)
                spec = equi_pool_node(spec, net.cfg_.blocks[b].pool_spec, net.block_scales(b));
            }
            std::vector<ad::Var<Real>> ces;
            for (int k : net.scales_.up_to(s.resolution)) {
              if (k % net.total_factor_ != 0 && net.total_factor_ != 1) continue;
              ces.push_back(net.head_row_node(gs, spec, k / net.total_factor_, head, s.label));
            }
            ad::Var<Real> loss = ces[0];
            for (std::size_t c = 1; c < ces.size(); ++c) loss = ad::add(loss, ces[c]);
            if (cfg.lambda_consistency != 0 && ces.size() >= 2) {
              ad::Var<Real> hinge{};
              for (std::size_t c = 1; c < ces.size(); ++c) {
                auto term = ad::relu(ad::sub(ces[c], ces[c - 1]));
                hinge = hinge.valid() ? ad::add(hinge, term) : term;
              }
              loss = ad::add(loss, ad::scale(hinge, static_cast<Real>(cfg.lambda_consistency)));
            }
            const double lv = static_cast<double>(loss.value()[0]);
            losses[i] = lv;
            if (!std::isfinite(lv)) {
              finite[i] = 0;
              continue;
            }
            gs.backward(loss);
          }
        });

        for (std::size_t i = 0; i < batch.size(); ++i) {
          if (!finite[i]) diverged = true;
          epoch_loss += losses[i];
        }
        epoch_count += batch.size();
        if (diverged) break;

        // reduce thread-local sinks in thread order, then pull kernel grads
        std::vector<std::pair<ad::Var<Real>, CTensor<Real>>> seeds;
        for (std::size_t b = 0; b < nb; ++b) {
          CTensor<Real> total = std::move(m_grad[0][b]);
          for (int t = 1; t < threads; ++t)
            for (std::size_t j = 0; j < total.size(); ++j) total[j] += m_grad[static_cast<std::size_t>(t)][b][j];
          seeds.push_back({m_nodes[b], std::move(total)});
        }
        gk.backward_seeded(seeds);
        for (std::size_t p = 0; p < n_head_params; ++p) {
          auto& g = store.grad(head_names[p]);
          for (int t = 0; t < threads; ++t)
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += h_grad[static_cast<std::size_t>(t)][p][j];
        }
        const Real inv_b = Real(1) / static_cast<Real>(batch.size());
        for (std::size_t i = 0; i < store.count(); ++i) {
          auto& e = store.entry(static_cast<int>(i));
          for (auto& v : e.grad.data()) v *= inv_b;
        }
        adam.step(store);
        store.zero_grads();

        if (cfg.time_budget_sec > 0 && elapsed() > cfg.time_budget_sec) break;
      }

      if (diverged) {
        restore_snapshot();
        summary.diverged = true;
        break;
      }

      EpochRecord rec;
      rec.epoch = epoch;
      rec.train_loss = epoch_count ? epoch_loss / static_cast<double>(epoch_count) : 0;
      const EvalResult ev = net.evaluate(val_ds, cfg.lambda_consistency, threads);
      rec.val_loss = ev.mean_loss;
      rec.val_accuracy = ev.accuracy;
      rec.val_scale_con = ev.scale_con;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
      summary.log.push_back(rec);
      summary.epochs_run = epoch;
      summary.final_val_accuracy = rec.val_accuracy;
      summary.final_val_scale_con = rec.val_scale_con;
      if (epoch == 1) summary.epoch1_probe_loss = probe_loss(probe_idx);
      take_snapshot();

      if (cfg.early_stop_val_accuracy > 0 && rec.val_accuracy >= cfg.early_stop_val_accuracy) break;
      if (cfg.time_budget_sec > 0 && elapsed() > cfg.time_budget_sec) break;
    }
    summary.total_seconds = elapsed();
    return summary;
  }
};

template <RealScalar Real>
TrainSummary EquiNetwork<Real>::train(const data::Dataset& train_ds, const data::Dataset& val_ds,
                                      const TrainConfig& cfg) {
  if (train_ds.empty()) throw DataError("train: empty dataset");
  for (const auto& s : train_ds)
    if (!scales_.contains(s.resolution)) throw DataError("train: sample resolution outside the scale set");
  TrainDriver<Real> driver{*this, train_ds, val_ds, cfg};
  return driver.run();
}

}  // namespace sefnet
