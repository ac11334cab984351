#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "sefnet/spectral.hpp"

namespace sefnet::ad {

/// Named trainable tensors; declaration order is the checkpoint payload order.
/// Gradients live here so they can accumulate across per-sample graphs.
template <RealScalar Real>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
    bool trainable = true;
  };

  int add(const std::string& name, Tensor<Real> init, bool trainable = true) {
    if (index_.count(name)) throw ShapeError("duplicate parameter: " + name);
    Entry e{name, std::move(init), {}, trainable};
    e.grad = zeros_like(e.value);
    entries_.push_back(std::move(e));
    index_[name] = static_cast<int>(entries_.size()) - 1;
    ++version_;
    return static_cast<int>(entries_.size()) - 1;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter: " + name);
    return it->second;
  }
  Entry& entry(int i) { return entries_.at(static_cast<std::size_t>(i)); }
  const Entry& entry(int i) const { return entries_.at(static_cast<std::size_t>(i)); }
  Tensor<Real>& value(const std::string& name) { return entries_[static_cast<std::size_t>(id(name))].value; }
  const Tensor<Real>& value(const std::string& name) const {
    return entries_[static_cast<std::size_t>(id(name))].value;
  }
  Tensor<Real>& grad(const std::string& name) { return entries_[static_cast<std::size_t>(id(name))].grad; }
  std::size_t count() const { return entries_.size(); }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(Real(0));
  }
  /// Bump after mutating values outside add(); caches key on this.
  void touch() { ++version_; }
  std::uint64_t version() const { return version_; }

  std::map<std::string, Tensor<Real>> grad_map() const {
    std::map<std::string, Tensor<Real>> m;
    for (const auto& e : entries_)
      if (e.trainable) m[e.name] = e.grad;
    return m;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, int> index_;
  std::uint64_t version_ = 0;
};

template <RealScalar Real>
struct Value {
  Tensor<Real> r;
  CTensor<Real> c;
  bool is_complex = false;
  const Tensor<Real>* r_ext = nullptr;
  const CTensor<Real>* c_ext = nullptr;

  const Tensor<Real>& real() const { return r_ext ? *r_ext : r; }
  const CTensor<Real>& cplx() const { return c_ext ? *c_ext : c; }
  const Shape& shape() const { return is_complex ? cplx().shape() : real().shape(); }
  std::size_t size() const { return is_complex ? cplx().size() : real().size(); }
};

template <RealScalar Real>
class Graph;

template <RealScalar Real>
struct Var {
  Graph<Real>* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor<Real>& value() const;
  const CTensor<Real>& cvalue() const;
  const Shape& shape() const;
  bool is_complex() const;
};

/// Eagerly-evaluated reverse-mode tape. Single-threaded per instance;
/// separate graphs may run concurrently on disjoint data.
template <RealScalar Real>
class Graph {
 public:
  using BackFn = std::function<void(Graph&, int)>;

  struct Node {
    Value<Real> val;
    Value<Real> adj;
    bool has_adj = false;
    bool needs_grad = false;
    BackFn back;
    int param_id = -1;
    Tensor<Real>* ext_grad_r = nullptr;
    CTensor<Real>* ext_grad_c = nullptr;
  };

  explicit Graph(ParamStore<Real>* params = nullptr) : params_(params) {}

  ParamStore<Real>* params() { return params_; }

  // ---- leaves ------------------------------------------------------------
  Var<Real> constant(Tensor<Real> t) {
    Value<Real> v;
    v.r = std::move(t);
    return push(std::move(v), false, nullptr);
  }
  Var<Real> constant(CTensor<Real> t) {
    Value<Real> v;
    v.c = std::move(t);
    v.is_complex = true;
    return push(std::move(v), false, nullptr);
  }
  /// Borrowed value; if grad_sink is non-null its cotangent accumulates there.
  Var<Real> external(const Tensor<Real>* t, Tensor<Real>* grad_sink = nullptr) {
    Value<Real> v;
    v.r_ext = t;
    Var<Real> out = push(std::move(v), grad_sink != nullptr, nullptr);
    nodes_[static_cast<std::size_t>(out.id)].ext_grad_r = grad_sink;
    return out;
  }
  Var<Real> external(const CTensor<Real>* t, CTensor<Real>* grad_sink = nullptr) {
    Value<Real> v;
    v.c_ext = t;
    v.is_complex = true;
    Var<Real> out = push(std::move(v), grad_sink != nullptr, nullptr);
    nodes_[static_cast<std::size_t>(out.id)].ext_grad_c = grad_sink;
    return out;
  }
  Var<Real> param(const std::string& name) {
    if (!params_) throw ShapeError("graph has no parameter store");
    const int pid = params_->id(name);
    Value<Real> v;
    v.r_ext = &params_->entry(pid).value;
    Var<Real> out = push(std::move(v), params_->entry(pid).trainable, nullptr);
    nodes_[static_cast<std::size_t>(out.id)].param_id = pid;
    return out;
  }

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t node_count() const { return nodes_.size(); }

  // ---- backward ----------------------------------------------------------
  /// Reverse pass from a real scalar loss. Each node is visited exactly once
  /// in reverse creation (topological) order.
  void backward(Var<Real> loss) {
    if (loss.g != this) throw ShapeError("backward: node from another graph");
    const Node& ln = node(loss.id);
    if (ln.val.is_complex || ln.val.size() != 1)
      throw ShapeError("backward: loss must be a real scalar");
    if (consumed_) throw NumericError("backward: graph already consumed");
    Tensor<Real> seed(Shape{1});
    seed[0] = Real(1);
    add_adjoint(loss.id, seed);
    run_reverse(loss.id);
  }

  /// Reverse pass seeded with explicit cotangents (used to pull kernel-graph
  /// gradients back from per-sample graphs).
  void backward_seeded(const std::vector<std::pair<Var<Real>, CTensor<Real>>>& seeds) {
    if (consumed_) throw NumericError("backward: graph already consumed");
    int top = -1;
    for (const auto& [v, seed] : seeds) {
      if (v.g != this) throw ShapeError("backward_seeded: node from another graph");
      add_adjoint(v.id, seed);
      top = std::max(top, v.id);
    }
    if (top >= 0) run_reverse(top);
  }

  // ---- adjoint plumbing (used by op closures) -----------------------------
  void add_adjoint(int id, const Tensor<Real>& g) {
    Node& n = node(id);
    if (!n.needs_grad) return;
    if (n.val.is_complex) throw ShapeError("adjoint type mismatch (real->complex)");
    if (g.shape() != n.val.shape()) throw ShapeError("adjoint shape mismatch");
    if (!n.has_adj) {
      n.adj.r = g;
      n.has_adj = true;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) n.adj.r[i] += g[i];
    }
  }
  void add_adjoint(int id, const CTensor<Real>& g) {
    Node& n = node(id);
    if (!n.needs_grad) return;
    if (!n.val.is_complex) throw ShapeError("adjoint type mismatch (complex->real)");
    if (g.shape() != n.val.shape()) throw ShapeError("adjoint shape mismatch");
    if (!n.has_adj) {
      n.adj.c = g;
      n.adj.is_complex = true;
      n.has_adj = true;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) n.adj.c[i] += g[i];
    }
  }

  Var<Real> push(Value<Real> v, bool needs_grad, BackFn back) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var<Real>{this, static_cast<int>(nodes_.size()) - 1};
  }

 private:
  void run_reverse(int top) {
    consumed_ = true;
    for (int i = top; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.has_adj || !n.needs_grad) continue;
      if (n.back) n.back(*this, i);
      if (n.param_id >= 0) {
        auto& g = params_->entry(n.param_id).grad;
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.adj.r[j];
      }
      if (n.ext_grad_r) {
        auto& g = *n.ext_grad_r;
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.adj.r[j];
      }
      if (n.ext_grad_c) {
        auto& g = *n.ext_grad_c;
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.adj.c[j];
      }
    }
  }

  std::vector<Node> nodes_;
  ParamStore<Real>* params_ = nullptr;
  bool consumed_ = false;
};

template <RealScalar Real>
const Tensor<Real>& Var<Real>::value() const {
  return g->node(id).val.real();
}
template <RealScalar Real>
const CTensor<Real>& Var<Real>::cvalue() const {
  return g->node(id).val.cplx();
}
template <RealScalar Real>
const Shape& Var<Real>::shape() const {
  return g->node(id).val.shape();
}
template <RealScalar Real>
bool Var<Real>::is_complex() const {
  return g->node(id).val.is_complex;
}

// ---- helpers ---------------------------------------------------------------

namespace detail {

template <RealScalar Real>
Graph<Real>& same_graph(Var<Real> a, Var<Real> b) {
  if (a.g == nullptr || a.g != b.g) throw ShapeError("operands from different graphs");
  return *a.g;
}

template <RealScalar Real>
bool any_grad(std::initializer_list<Var<Real>> vs) {
  for (auto v : vs)
    if (v.g->node(v.id).needs_grad) return true;
  return false;
}

}  // namespace detail

// ---- arithmetic -------------------------------------------------------------

template <RealScalar Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  auto& g = detail::same_graph(a, b);
  const auto& na = g.node(a.id).val;
  const auto& nb = g.node(b.id).val;
  if (na.is_complex != nb.is_complex || na.shape() != nb.shape())
    throw ShapeError("add: shape mismatch");
  Value<Real> out;
  out.is_complex = na.is_complex;
  if (na.is_complex) {
    out.c = na.cplx();
    for (std::size_t i = 0; i < out.c.size(); ++i) out.c[i] += nb.cplx()[i];
  } else {
    out.r = na.real();
    for (std::size_t i = 0; i < out.r.size(); ++i) out.r[i] += nb.real()[i];
  }
  const bool ng = detail::any_grad<Real>({a, b});
  return g.push(std::move(out), ng, [a, b](Graph<Real>& gg, int self) {
    const auto& adj = gg.node(self).adj;
    if (gg.node(self).val.is_complex) {
      gg.add_adjoint(a.id, adj.c);
      gg.add_adjoint(b.id, adj.c);
    } else {
      gg.add_adjoint(a.id, adj.r);
      gg.add_adjoint(b.id, adj.r);
    }
  });
}

template <RealScalar Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  auto& g = detail::same_graph(a, b);
  const auto& na = g.node(a.id).val;
  const auto& nb = g.node(b.id).val;
  if (na.is_complex != nb.is_complex || na.shape() != nb.shape())
    throw ShapeError("sub: shape mismatch");
  Value<Real> out;
  out.is_complex = na.is_complex;
  if (na.is_complex) {
    out.c = na.cplx();
    for (std::size_t i = 0; i < out.c.size(); ++i) out.c[i] -= nb.cplx()[i];
  } else {
    out.r = na.real();
    for (std::size_t i = 0; i < out.r.size(); ++i) out.r[i] -= nb.real()[i];
  }
  const bool ng = detail::any_grad<Real>({a, b});
  return g.push(std::move(out), ng, [a, b](Graph<Real>& gg, int self) {
    if (gg.node(self).val.is_complex) {
      const auto& adj = gg.node(self).adj.c;
      gg.add_adjoint(a.id, adj);
      CTensor<Real> neg = adj;
      for (auto& v : neg.data()) v = -v;
      gg.add_adjoint(b.id, neg);
    } else {
      const auto& adj = gg.node(self).adj.r;
      gg.add_adjoint(a.id, adj);
      Tensor<Real> neg = adj;
      for (auto& v : neg.data()) v = -v;
      gg.add_adjoint(b.id, neg);
    }
  });
}

/// Elementwise product; complex operands use complex multiplication with the
/// R^2-view adjoints (multiply cotangent by the conjugate of the other side).
template <RealScalar Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  auto& g = detail::same_graph(a, b);
  const auto& na = g.node(a.id).val;
  const auto& nb = g.node(b.id).val;
  if (na.is_complex != nb.is_complex || na.shape() != nb.shape())
    throw ShapeError("mul: shape mismatch");
  Value<Real> out;
  out.is_complex = na.is_complex;
  if (na.is_complex) {
    out.c = na.cplx();
    for (std::size_t i = 0; i < out.c.size(); ++i) out.c[i] *= nb.cplx()[i];
  } else {
    out.r = na.real();
    for (std::size_t i = 0; i < out.r.size(); ++i) out.r[i] *= nb.real()[i];
  }
  const bool ng = detail::any_grad<Real>({a, b});
  return g.push(std::move(out), ng, [a, b](Graph<Real>& gg, int self) {
    if (gg.node(self).val.is_complex) {
      const auto& adj = gg.node(self).adj.c;
      const auto& av = gg.node(a.id).val.cplx();
      const auto& bv = gg.node(b.id).val.cplx();
      CTensor<Real> ga(av.shape()), gb(bv.shape());
      for (std::size_t i = 0; i < adj.size(); ++i) {
        ga[i] = adj[i] * std::conj(bv[i]);
        gb[i] = adj[i] * std::conj(av[i]);
      }
      gg.add_adjoint(a.id, ga);
      gg.add_adjoint(b.id, gb);
    } else {
      const auto& adj = gg.node(self).adj.r;
      const auto& av = gg.node(a.id).val.real();
      const auto& bv = gg.node(b.id).val.real();
      Tensor<Real> ga(av.shape()), gb(bv.shape());
      for (std::size_t i = 0; i < adj.size(); ++i) {
        ga[i] = adj[i] * bv[i];
        gb[i] = adj[i] * av[i];
      }
      gg.add_adjoint(a.id, ga);
      gg.add_adjoint(b.id, gb);
    }
  });
}

template <RealScalar Real>
Var<Real> scale(Var<Real> a, Real s) {
  auto& g = *a.g;
  const auto& na = g.node(a.id).val;
  Value<Real> out;
  out.is_complex = na.is_complex;
  if (na.is_complex) {
    out.c = na.cplx();
    for (auto& v : out.c.data()) v *= s;
  } else {
    out.r = na.real();
    for (auto& v : out.r.data()) v *= s;
  }
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, s](Graph<Real>& gg, int self) {
    if (gg.node(self).val.is_complex) {
      CTensor<Real> ga = gg.node(self).adj.c;
      for (auto& v : ga.data()) v *= s;
      gg.add_adjoint(a.id, ga);
    } else {
      Tensor<Real> ga = gg.node(self).adj.r;
      for (auto& v : ga.data()) v *= s;
      gg.add_adjoint(a.id, ga);
    }
  });
}

// ---- shape ops --------------------------------------------------------------

template <RealScalar Real>
Var<Real> reshape(Var<Real> a, Shape s) {
  auto& g = *a.g;
  const auto& na = g.node(a.id).val;
  if (shape_size(s) != na.size()) throw ShapeError("reshape: size mismatch");
  Value<Real> out;
  out.is_complex = na.is_complex;
  if (na.is_complex)
    out.c = na.cplx().reshaped(s);
  else
    out.r = na.real().reshaped(s);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a](Graph<Real>& gg, int self) {
    const Shape& orig = gg.node(a.id).val.shape();
    if (gg.node(self).val.is_complex)
      gg.add_adjoint(a.id, gg.node(self).adj.c.reshaped(orig));
    else
      gg.add_adjoint(a.id, gg.node(self).adj.r.reshaped(orig));
  });
}

namespace detail {

inline void check_slice(const Shape& s, const Shape& start, const Shape& count) {
  if (start.size() != s.size() || count.size() != s.size())
    throw ShapeError("slice: rank mismatch");
  for (std::size_t i = 0; i < s.size(); ++i)
    if (start[i] < 0 || count[i] < 1 || start[i] + count[i] > s[i])
      throw ShapeError("slice: out of range");
}

template <class T, class Fn>
void for_each_subindex(const Shape& count, Fn&& fn) {
  Shape idx(count.size(), 0);
  for (;;) {
    fn(idx);
    int ax = static_cast<int>(count.size()) - 1;
    while (ax >= 0) {
      if (++idx[static_cast<std::size_t>(ax)] < count[static_cast<std::size_t>(ax)]) break;
      idx[static_cast<std::size_t>(ax)] = 0;
      --ax;
    }
    if (ax < 0) break;
  }
}

inline std::size_t flat_offset(const Shape& shape, const Shape& idx) {
  std::size_t off = 0;
  for (std::size_t i = 0; i < shape.size(); ++i)
    off = off * static_cast<std::size_t>(shape[i]) + static_cast<std::size_t>(idx[i]);
  return off;
}

template <class T>
TensorT<T> slice_tensor(const TensorT<T>& x, const Shape& start, const Shape& count) {
  check_slice(x.shape(), start, count);
  TensorT<T> out(count);
  std::size_t w = 0;
  for_each_subindex<T>(count, [&](const Shape& idx) {
    Shape src = idx;
    for (std::size_t i = 0; i < src.size(); ++i) src[i] += start[i];
    out[w++] = x[flat_offset(x.shape(), src)];
  });
  return out;
}

template <class T>
void scatter_slice(TensorT<T>& dst, const TensorT<T>& src, const Shape& start) {
  std::size_t r = 0;
  for_each_subindex<T>(src.shape(), [&](const Shape& idx) {
    Shape di = idx;
    for (std::size_t i = 0; i < di.size(); ++i) di[i] += start[i];
    dst[flat_offset(dst.shape(), di)] += src[r++];
  });
}

}  // namespace detail

template <RealScalar Real>
Var<Real> slice(Var<Real> a, Shape start, Shape count) {
  auto& g = *a.g;
  const auto& na = g.node(a.id).val;
  Value<Real> out;
  out.is_complex = na.is_complex;
  if (na.is_complex)
    out.c = detail::slice_tensor(na.cplx(), start, count);
  else
    out.r = detail::slice_tensor(na.real(), start, count);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, start](Graph<Real>& gg, int self) {
    if (gg.node(self).val.is_complex) {
      CTensor<Real> full(gg.node(a.id).val.shape());
      detail::scatter_slice(full, gg.node(self).adj.c, start);
      gg.add_adjoint(a.id, full);
    } else {
      Tensor<Real> full(gg.node(a.id).val.shape());
      detail::scatter_slice(full, gg.node(self).adj.r, start);
      gg.add_adjoint(a.id, full);
    }
  });
}

/// Zero padding: `before[i]` / `after[i]` zeros around axis i.
template <RealScalar Real>
Var<Real> pad(Var<Real> a, Shape before, Shape after) {
  auto& g = *a.g;
  const auto& na = g.node(a.id).val;
  const Shape& s = na.shape();
  if (before.size() != s.size() || after.size() != s.size()) throw ShapeError("pad: rank mismatch");
  Shape os = s;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (before[i] < 0 || after[i] < 0) throw ShapeError("pad: negative padding");
    os[i] += before[i] + after[i];
  }
  Value<Real> out;
  out.is_complex = na.is_complex;
  auto fill = [&](auto& dst, const auto& src) {
    std::size_t r = 0;
    detail::for_each_subindex<int>(s, [&](const Shape& idx) {
      Shape di = idx;
      for (std::size_t i = 0; i < di.size(); ++i) di[i] += before[i];
      dst[detail::flat_offset(os, di)] = src[r++];
    });
  };
  if (na.is_complex) {
    out.c = CTensor<Real>(os);
    fill(out.c, na.cplx());
  } else {
    out.r = Tensor<Real>(os);
    fill(out.r, na.real());
  }
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, before](Graph<Real>& gg, int self) {
    const Shape& orig = gg.node(a.id).val.shape();
    if (gg.node(self).val.is_complex)
      gg.add_adjoint(a.id, detail::slice_tensor(gg.node(self).adj.c, before, orig));
    else
      gg.add_adjoint(a.id, detail::slice_tensor(gg.node(self).adj.r, before, orig));
  });
}

template <RealScalar Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: empty input");
  auto& g = *parts[0].g;
  const bool cx = g.node(parts[0].id).val.is_complex;
  Shape s = g.node(parts[0].id).val.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw ShapeError("concat: bad axis");
  int total = 0;
  for (auto p : parts) {
    if (p.g != &g) throw ShapeError("concat: operands from different graphs");
    const auto& ps = g.node(p.id).val.shape();
    if (g.node(p.id).val.is_complex != cx) throw ShapeError("concat: mixed element types");
    Shape t = ps;
    t[static_cast<std::size_t>(axis)] = s[static_cast<std::size_t>(axis)];
    if (t != s) throw ShapeError("concat: shape mismatch");
    total += ps[static_cast<std::size_t>(axis)];
  }
  Shape os = s;
  os[static_cast<std::size_t>(axis)] = total;
  Value<Real> out;
  out.is_complex = cx;
  bool ng = false;
  std::vector<int> offsets;
  int off = 0;
  for (auto p : parts) {
    offsets.push_back(off);
    off += g.node(p.id).val.shape()[static_cast<std::size_t>(axis)];
    ng = ng || g.node(p.id).needs_grad;
  }
  auto place = [&](auto& dst, const auto& src, int at) {
    const Shape& ss = src.shape();
    std::size_t r = 0;
    detail::for_each_subindex<int>(ss, [&](const Shape& idx) {
      Shape di = idx;
      di[static_cast<std::size_t>(axis)] += at;
      dst[detail::flat_offset(os, di)] = src[r++];
    });
  };
  if (cx) {
    out.c = CTensor<Real>(os);
    for (std::size_t i = 0; i < parts.size(); ++i) place(out.c, g.node(parts[i].id).val.cplx(), offsets[i]);
  } else {
    out.r = Tensor<Real>(os);
    for (std::size_t i = 0; i < parts.size(); ++i) place(out.r, g.node(parts[i].id).val.real(), offsets[i]);
  }
  auto ps = parts;
  return g.push(std::move(out), ng, [ps, axis, offsets](Graph<Real>& gg, int self) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const Shape& shp = gg.node(ps[i].id).val.shape();
      Shape start(shp.size(), 0);
      start[static_cast<std::size_t>(axis)] = offsets[i];
      if (gg.node(self).val.is_complex)
        gg.add_adjoint(ps[i].id, detail::slice_tensor(gg.node(self).adj.c, start, shp));
      else
        gg.add_adjoint(ps[i].id, detail::slice_tensor(gg.node(self).adj.r, start, shp));
    }
  });
}

// ---- reductions / dense -----------------------------------------------------

template <RealScalar Real>
Var<Real> reduce_sum(Var<Real> a) {
  auto& g = *a.g;
  const auto& na = g.node(a.id).val;
  if (na.is_complex) throw ShapeError("sum: real tensors only");
  Tensor<Real> s(Shape{1});
  for (const auto& v : na.real().data()) s[0] += v;
  Value<Real> out;
  out.r = std::move(s);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a](Graph<Real>& gg, int self) {
    Tensor<Real> ga(gg.node(a.id).val.shape());
    ga.fill(gg.node(self).adj.r[0]);
    gg.add_adjoint(a.id, ga);
  });
}

template <RealScalar Real>
Var<Real> reduce_mean(Var<Real> a) {
  const auto n = a.g->node(a.id).val.size();
  return scale(reduce_sum(a), Real(1) / static_cast<Real>(n));
}

template <RealScalar Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  auto& g = detail::same_graph(a, b);
  const auto& av = g.node(a.id).val.real();
  const auto& bv = g.node(b.id).val.real();
  if (g.node(a.id).val.is_complex || g.node(b.id).val.is_complex)
    throw ShapeError("matmul: real tensors only");
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: shape mismatch");
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<Real> c(Shape{m, n});
  for (int i = 0; i < m; ++i)
    for (int t = 0; t < k; ++t) {
      const Real s = av[static_cast<std::size_t>(i) * k + t];
      if (s == Real(0)) continue;
      for (int j = 0; j < n; ++j)
        c[static_cast<std::size_t>(i) * n + j] += s * bv[static_cast<std::size_t>(t) * n + j];
    }
  Value<Real> out;
  out.r = std::move(c);
  const bool ng = detail::any_grad<Real>({a, b});
  return g.push(std::move(out), ng, [a, b, m, k, n](Graph<Real>& gg, int self) {
    const auto& adj = gg.node(self).adj.r;
    const auto& av2 = gg.node(a.id).val.real();
    const auto& bv2 = gg.node(b.id).val.real();
    Tensor<Real> ga(Shape{m, k}), gb(Shape{k, n});
    // dA = dC * B^T ; dB = A^T * dC
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const Real d = adj[static_cast<std::size_t>(i) * n + j];
        if (d == Real(0)) continue;
        for (int t = 0; t < k; ++t) {
          ga[static_cast<std::size_t>(i) * k + t] += d * bv2[static_cast<std::size_t>(t) * n + j];
          gb[static_cast<std::size_t>(t) * n + j] += d * av2[static_cast<std::size_t>(i) * k + t];
        }
      }
    gg.add_adjoint(a.id, ga);
    gg.add_adjoint(b.id, gb);
  });
}

template <RealScalar Real>
Var<Real> relu(Var<Real> a) {
  auto& g = *a.g;
  const auto& na = g.node(a.id).val;
  if (na.is_complex) throw ShapeError("relu: real tensors only");
  Tensor<Real> y = na.real();
  for (auto& v : y.data()) v = v > Real(0) ? v : Real(0);
  Value<Real> out;
  out.r = std::move(y);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a](Graph<Real>& gg, int self) {
    const auto& adj = gg.node(self).adj.r;
    const auto& x = gg.node(a.id).val.real();
    Tensor<Real> ga(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = x[i] > Real(0) ? adj[i] : Real(0);
    gg.add_adjoint(a.id, ga);
  });
}

// Pooling over the trailing two axes; trailing rows/cols that do not fill a
// window are truncated. Max ties resolve to the first element in row-major
// scan order.
template <RealScalar Real>
Var<Real> max_pool2d(Var<Real> a, int w) {
  auto& g = *a.g;
  const auto& na = g.node(a.id).val;
  if (na.is_complex) throw ShapeError("max_pool2d: real tensors only");
  const Shape& s = na.shape();
  if (s.size() < 2 || w < 1) throw ShapeError("max_pool2d: bad input");
  const int h = s[s.size() - 2], wd = s.back();
  const int oh = h / w, ow = wd / w;
  if (oh < 1 || ow < 1) throw ShapeError("max_pool2d: output would be empty");
  Shape os = s;
  os[os.size() - 2] = oh;
  os.back() = ow;
  const std::size_t lead = na.size() / (static_cast<std::size_t>(h) * wd);
  Tensor<Real> y(os);
  auto argmax = std::make_shared<std::vector<std::size_t>>(y.size());
  const auto& x = na.real();
  std::size_t o = 0;
  for (std::size_t b = 0; b < lead; ++b) {
    const std::size_t base = b * static_cast<std::size_t>(h) * wd;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j, ++o) {
        std::size_t best = base + static_cast<std::size_t>(i * w) * wd + static_cast<std::size_t>(j * w);
        Real bv = x[best];
        for (int di = 0; di < w; ++di)
          for (int dj = 0; dj < w; ++dj) {
            const std::size_t idx =
                base + static_cast<std::size_t>(i * w + di) * wd + static_cast<std::size_t>(j * w + dj);
            if (x[idx] > bv) {
              bv = x[idx];
              best = idx;
            }
          }
        y[o] = bv;
        (*argmax)[o] = best;
      }
  }
  Value<Real> out;
  out.r = std::move(y);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, argmax](Graph<Real>& gg, int self) {
    const auto& adj = gg.node(self).adj.r;
    Tensor<Real> ga(gg.node(a.id).val.shape());
    for (std::size_t i = 0; i < adj.size(); ++i) ga[(*argmax)[i]] += adj[i];
    gg.add_adjoint(a.id, ga);
  });
}

template <RealScalar Real>
Var<Real> avg_pool2d(Var<Real> a, int w) {
  auto& g = *a.g;
  const auto& na = g.node(a.id).val;
  if (na.is_complex) throw ShapeError("avg_pool2d: real tensors only");
  const Shape& s = na.shape();
  if (s.size() < 2 || w < 1) throw ShapeError("avg_pool2d: bad input");
  const int h = s[s.size() - 2], wd = s.back();
  const int oh = h / w, ow = wd / w;
  if (oh < 1 || ow < 1) throw ShapeError("avg_pool2d: output would be empty");
  Shape os = s;
  os[os.size() - 2] = oh;
  os.back() = ow;
  const std::size_t lead = na.size() / (static_cast<std::size_t>(h) * wd);
  Tensor<Real> y(os);
  const auto& x = na.real();
  const Real inv = Real(1) / static_cast<Real>(w * w);
  std::size_t o = 0;
  for (std::size_t b = 0; b < lead; ++b) {
    const std::size_t base = b * static_cast<std::size_t>(h) * wd;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j, ++o) {
        Real acc = 0;
        for (int di = 0; di < w; ++di)
          for (int dj = 0; dj < w; ++dj)
            acc += x[base + static_cast<std::size_t>(i * w + di) * wd +
                     static_cast<std::size_t>(j * w + dj)];
        y[o] = acc * inv;
      }
  }
  Value<Real> out;
  out.r = std::move(y);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, w, h, wd, oh, ow, lead, inv](Graph<Real>& gg, int self) {
    const auto& adj = gg.node(self).adj.r;
    Tensor<Real> ga(gg.node(a.id).val.shape());
    std::size_t o = 0;
    for (std::size_t b = 0; b < lead; ++b) {
      const std::size_t base = b * static_cast<std::size_t>(h) * wd;
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j, ++o) {
          const Real d = adj[o] * inv;
          for (int di = 0; di < w; ++di)
            for (int dj = 0; dj < w; ++dj)
              ga[base + static_cast<std::size_t>(i * w + di) * wd +
                 static_cast<std::size_t>(j * w + dj)] += d;
        }
    }
    gg.add_adjoint(a.id, ga);
  });
}

/// Per-channel (axis 0) mean/variance normalization over all remaining axes,
/// no learned affine terms.
template <RealScalar Real>
Var<Real> instance_norm(Var<Real> a, Real eps = Real(1e-5)) {
  auto& g = *a.g;
  const auto& na = g.node(a.id).val;
  if (na.is_complex) throw ShapeError("instance_norm: real tensors only");
  const Shape& s = na.shape();
  if (s.size() < 2) throw ShapeError("instance_norm: rank >= 2 required");
  const int c = s[0];
  const std::size_t spatial = na.size() / static_cast<std::size_t>(c);
  const auto& x = na.real();
  Tensor<Real> y(s);
  auto mean = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(c));
  auto istd = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(c));
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
    (*mean)[static_cast<std::size_t>(ch)] = mu;
    (*istd)[static_cast<std::size_t>(ch)] = is;
    for (std::size_t i = 0; i < spatial; ++i) y[base + i] = (x[base + i] - mu) * is;
  }
  Value<Real> out;
  out.r = std::move(y);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, c, spatial, mean, istd](Graph<Real>& gg, int self) {
    const auto& adj = gg.node(self).adj.r;
    const auto& xh = gg.node(self).val.real();  // normalized output
    Tensor<Real> ga(gg.node(a.id).val.shape());
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = static_cast<std::size_t>(ch) * spatial;
      Real gsum = 0, gxsum = 0;
      for (std::size_t i = 0; i < spatial; ++i) {
        gsum += adj[base + i];
        gxsum += adj[base + i] * xh[base + i];
      }
      const Real gm = gsum / static_cast<Real>(spatial);
      const Real gxm = gxsum / static_cast<Real>(spatial);
      const Real is = (*istd)[static_cast<std::size_t>(ch)];
      for (std::size_t i = 0; i < spatial; ++i)
        ga[base + i] = is * (adj[base + i] - gm - xh[base + i] * gxm);
    }
    gg.add_adjoint(a.id, ga);
  });
}

/// Fused numerically-stable softmax + cross entropy for a logits vector.
template <RealScalar Real>
Var<Real> softmax_cross_entropy(Var<Real> logits, int label) {
  auto& g = *logits.g;
  const auto& nv = g.node(logits.id).val;
  if (nv.is_complex || nv.shape().size() != 1) throw ShapeError("softmax_ce: logits vector expected");
  const int m = nv.shape()[0];
  if (label < 0 || label >= m) throw ShapeError("softmax_ce: label out of range");
  const auto& x = nv.real();
  Real mx = x[0];
  for (int i = 1; i < m; ++i) mx = std::max(mx, x[static_cast<std::size_t>(i)]);
  Real sum = 0;
  for (int i = 0; i < m; ++i) sum += std::exp(x[static_cast<std::size_t>(i)] - mx);
  const Real lse = mx + std::log(sum);
  Tensor<Real> loss(Shape{1});
  loss[0] = lse - x[static_cast<std::size_t>(label)];
  Value<Real> out;
  out.r = std::move(loss);
  const bool ng = g.node(logits.id).needs_grad;
  return g.push(std::move(out), ng, [logits, label, m, mx, sum](Graph<Real>& gg, int self) {
    const Real d = gg.node(self).adj.r[0];
    const auto& x2 = gg.node(logits.id).val.real();
    Tensor<Real> ga(x2.shape());
    for (int i = 0; i < m; ++i) {
      const Real p = std::exp(x2[static_cast<std::size_t>(i)] - mx) / sum;
      ga[static_cast<std::size_t>(i)] = d * (p - (i == label ? Real(1) : Real(0)));
    }
    gg.add_adjoint(logits.id, ga);
  });
}

// ---- spectral primitives ------------------------------------------------------

namespace detail {

template <RealScalar Real>
Tensor<Real> dft_pullback(const CTensor<Real>& adj, int axes) {
  // adjoint of x -> (1/N) FFT(x): (1/N) Re(unnormalized inverse FFT of cotangent)
  CTensor<Real> buf = adj;
  const auto& s = adj.shape();
  Real scale;
  if (axes == 1) {
    const int n = s.back();
    sefnet::detail::fft_axis_last(buf.ptr(), adj.size() / static_cast<std::size_t>(n), n, true);
    scale = Real(1) / static_cast<Real>(n);
  } else {
    const int h = s[s.size() - 2], w = s.back();
    const std::size_t lead = adj.size() / (static_cast<std::size_t>(h) * w);
    sefnet::detail::fft_axis_last(buf.ptr(), lead * static_cast<std::size_t>(h), w, true);
    sefnet::detail::fft_axis_penult(buf.ptr(), lead, h, w, true);
    scale = Real(1) / (static_cast<Real>(h) * static_cast<Real>(w));
  }
  Tensor<Real> out(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i].real() * scale;
  return out;
}

template <RealScalar Real>
CTensor<Real> idft_pullback(const Tensor<Real>& adj, int axes) {
  // adjoint of X -> Re(sum_k X e^{+j..}): unnormalized forward FFT of cotangent
  CTensor<Real> buf(adj.shape());
  for (std::size_t i = 0; i < adj.size(); ++i) buf[i] = std::complex<Real>(adj[i], 0);
  const auto& s = adj.shape();
  if (axes == 1) {
    const int n = s.back();
    sefnet::detail::fft_axis_last(buf.ptr(), adj.size() / static_cast<std::size_t>(n), n, false);
  } else {
    const int h = s[s.size() - 2], w = s.back();
    const std::size_t lead = adj.size() / (static_cast<std::size_t>(h) * w);
    sefnet::detail::fft_axis_last(buf.ptr(), lead * static_cast<std::size_t>(h), w, false);
    sefnet::detail::fft_axis_penult(buf.ptr(), lead, h, w, false);
  }
  return buf;
}

}  // namespace detail

template <RealScalar Real>
Var<Real> dft_node(Var<Real> a) {
  auto& g = *a.g;
  Value<Real> out;
  out.is_complex = true;
  out.c = sefnet::dft(g.node(a.id).val.real());
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a](Graph<Real>& gg, int self) {
    gg.add_adjoint(a.id, detail::dft_pullback(gg.node(self).adj.c, 1));
  });
}

template <RealScalar Real>
Var<Real> idft_node(Var<Real> a) {
  auto& g = *a.g;
  Value<Real> out;
  out.r = sefnet::idft(g.node(a.id).val.cplx());
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a](Graph<Real>& gg, int self) {
    gg.add_adjoint(a.id, detail::idft_pullback(gg.node(self).adj.r, 1));
  });
}

template <RealScalar Real>
Var<Real> dft2_node(Var<Real> a) {
  auto& g = *a.g;
  Value<Real> out;
  out.is_complex = true;
  out.c = sefnet::dft2(g.node(a.id).val.real());
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a](Graph<Real>& gg, int self) {
    gg.add_adjoint(a.id, detail::dft_pullback(gg.node(self).adj.c, 2));
  });
}

template <RealScalar Real>
Var<Real> idft2_node(Var<Real> a) {
  auto& g = *a.g;
  Value<Real> out;
  out.r = sefnet::idft2(g.node(a.id).val.cplx());
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a](Graph<Real>& gg, int self) {
    gg.add_adjoint(a.id, detail::idft_pullback(gg.node(self).adj.r, 2));
  });
}

template <RealScalar Real>
Var<Real> band_crop_node(Var<Real> a, int m) {
  auto& g = *a.g;
  const int n = g.node(a.id).val.shape().back();
  Value<Real> out;
  out.is_complex = true;
  out.c = sefnet::band_crop(g.node(a.id).val.cplx(), m);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, n](Graph<Real>& gg, int self) {
    gg.add_adjoint(a.id, sefnet::band_crop_adjoint(gg.node(self).adj.c, n));
  });
}

template <RealScalar Real>
Var<Real> band_pad_node(Var<Real> a, int n) {
  auto& g = *a.g;
  const int m = g.node(a.id).val.shape().back();
  Value<Real> out;
  out.is_complex = true;
  out.c = sefnet::band_pad(g.node(a.id).val.cplx(), n);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, m](Graph<Real>& gg, int self) {
    gg.add_adjoint(a.id, sefnet::band_pad_adjoint(gg.node(self).adj.c, m));
  });
}

namespace detail {

// Separable 2D adjoints built from the 1D axis kernels: the transpose of a
// per-axis composition is the composition of per-axis transposes.
template <RealScalar Real>
CTensor<Real> band_crop2_adjoint(const CTensor<Real>& y, int n) {
  const auto& s = y.shape();
  const int m = s.back();
  const std::size_t lead = y.size() / (static_cast<std::size_t>(m) * m);
  Shape os = s;
  os[os.size() - 2] = n;
  os.back() = n;
  CTensor<Real> out(os);
  std::vector<std::complex<Real>> colbuf_in(static_cast<std::size_t>(m)), colbuf_out(static_cast<std::size_t>(n));
  std::vector<std::complex<Real>> tmp(static_cast<std::size_t>(n) * m);
  auto scatter_axis = [](const std::complex<Real>* in, int mm, int in_stride,
                         std::complex<Real>* outp, int nn, int out_stride) {
    if (mm == nn) {
      for (int j = 0; j < nn; ++j) outp[static_cast<std::ptrdiff_t>(j) * out_stride] = in[static_cast<std::ptrdiff_t>(j) * in_stride];
      return;
    }
    const int half = (mm - 1) / 2;
    for (int j = 0; j < nn; ++j) outp[static_cast<std::ptrdiff_t>(j) * out_stride] = {};
    for (int f = -half; f <= half; ++f)
      outp[static_cast<std::ptrdiff_t>(index_of_freq(f, nn)) * out_stride] =
          in[static_cast<std::ptrdiff_t>(index_of_freq(f, mm)) * in_stride];
    if (mm % 2 == 0) {
      const int e = mm / 2;
      outp[static_cast<std::ptrdiff_t>(index_of_freq(e, nn)) * out_stride] = in[static_cast<std::ptrdiff_t>(e) * in_stride];
      outp[static_cast<std::ptrdiff_t>(index_of_freq(-e, nn)) * out_stride] = in[static_cast<std::ptrdiff_t>(e) * in_stride];
    }
  };
  for (std::size_t b = 0; b < lead; ++b) {
    const auto* src = y.ptr() + b * static_cast<std::size_t>(m) * m;
    auto* dst = out.ptr() + b * static_cast<std::size_t>(n) * n;
    // transpose of (crop cols after crop rows): scatter cols, then rows
    for (int c = 0; c < m; ++c) {
      for (int r = 0; r < m; ++r) colbuf_in[static_cast<std::size_t>(r)] = src[static_cast<std::size_t>(r) * m + c];
      scatter_axis(colbuf_in.data(), m, 1, colbuf_out.data(), n, 1);
      for (int r = 0; r < n; ++r) tmp[static_cast<std::size_t>(r) * m + c] = colbuf_out[static_cast<std::size_t>(r)];
    }
    for (int r = 0; r < n; ++r)
      scatter_axis(tmp.data() + static_cast<std::size_t>(r) * m, m, 1, dst + static_cast<std::size_t>(r) * n, n, 1);
  }
  return out;
}

template <RealScalar Real>
CTensor<Real> band_pad2_adjoint(const CTensor<Real>& y, int m) {
  const auto& s = y.shape();
  const int n = s.back();
  const std::size_t lead = y.size() / (static_cast<std::size_t>(n) * n);
  Shape os = s;
  os[os.size() - 2] = m;
  os.back() = m;
  CTensor<Real> out(os);
  std::vector<std::complex<Real>> colbuf_in(static_cast<std::size_t>(n)), colbuf_out(static_cast<std::size_t>(m));
  std::vector<std::complex<Real>> tmp(static_cast<std::size_t>(m) * n);
  auto gather_axis = [](const std::complex<Real>* in, int nn, int in_stride,
                        std::complex<Real>* outp, int mm, int out_stride) {
    if (mm == nn) {
      for (int j = 0; j < mm; ++j) outp[static_cast<std::ptrdiff_t>(j) * out_stride] = in[static_cast<std::ptrdiff_t>(j) * in_stride];
      return;
    }
    const int half = (mm - 1) / 2;
    for (int f = -half; f <= half; ++f)
      outp[static_cast<std::ptrdiff_t>(index_of_freq(f, mm)) * out_stride] =
          in[static_cast<std::ptrdiff_t>(index_of_freq(f, nn)) * in_stride];
    if (mm % 2 == 0) {
      const int e = mm / 2;
      outp[static_cast<std::ptrdiff_t>(e) * out_stride] =
          (in[static_cast<std::ptrdiff_t>(index_of_freq(e, nn)) * in_stride] +
           in[static_cast<std::ptrdiff_t>(index_of_freq(-e, nn)) * in_stride]) /
          Real(2);
    }
  };
  for (std::size_t b = 0; b < lead; ++b) {
    const auto* src = y.ptr() + b * static_cast<std::size_t>(n) * n;
    auto* dst = out.ptr() + b * static_cast<std::size_t>(m) * m;
    for (int c = 0; c < n; ++c) {
      for (int r = 0; r < n; ++r) colbuf_in[static_cast<std::size_t>(r)] = src[static_cast<std::size_t>(r) * n + c];
      gather_axis(colbuf_in.data(), n, 1, colbuf_out.data(), m, 1);
      for (int r = 0; r < m; ++r) tmp[static_cast<std::size_t>(r) * n + c] = colbuf_out[static_cast<std::size_t>(r)];
    }
    for (int r = 0; r < m; ++r)
      gather_axis(tmp.data() + static_cast<std::size_t>(r) * n, n, 1, dst + static_cast<std::size_t>(r) * m, m, 1);
  }
  return out;
}

}  // namespace detail

template <RealScalar Real>
Var<Real> band_crop2_node(Var<Real> a, int m) {
  auto& g = *a.g;
  const int n = g.node(a.id).val.shape().back();
  Value<Real> out;
  out.is_complex = true;
  out.c = sefnet::band_crop2(g.node(a.id).val.cplx(), m);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, n](Graph<Real>& gg, int self) {
    gg.add_adjoint(a.id, detail::band_crop2_adjoint(gg.node(self).adj.c, n));
  });
}

template <RealScalar Real>
Var<Real> band_pad2_node(Var<Real> a, int n) {
  auto& g = *a.g;
  const int m = g.node(a.id).val.shape().back();
  Value<Real> out;
  out.is_complex = true;
  out.c = sefnet::band_pad2(g.node(a.id).val.cplx(), n);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, m](Graph<Real>& gg, int self) {
    gg.add_adjoint(a.id, detail::band_pad2_adjoint(gg.node(self).adj.c, m));
  });
}

/// Self-adjoint 0/1 projection onto an annulus.
template <RealScalar Real>
Var<Real> annulus_select_node(Var<Real> a, int lo, int hi, int axes) {
  auto& g = *a.g;
  Value<Real> out;
  out.is_complex = true;
  out.c = sefnet::annulus_select(g.node(a.id).val.cplx(), lo, hi, axes);
  const bool ng = g.node(a.id).needs_grad;
  return g.push(std::move(out), ng, [a, lo, hi, axes](Graph<Real>& gg, int self) {
    gg.add_adjoint(a.id, sefnet::annulus_select(gg.node(self).adj.c, lo, hi, axes));
  });
}

/// Y[co, k] = sum_ci X[ci, k] * M[co, ci, k] over trailing spectral axes.
template <RealScalar Real>
Var<Real> spectral_conv_apply(Var<Real> x, Var<Real> m) {
  auto& g = detail::same_graph(x, m);
  const auto& xv = g.node(x.id).val.cplx();
  const auto& mv = g.node(m.id).val.cplx();
  const Shape& xs = xv.shape();
  const Shape& ms = mv.shape();
  if (xs.size() < 2 || ms.size() != xs.size() + 1) throw ShapeError("conv_apply: rank mismatch");
  const int cin = xs[0];
  if (ms[1] != cin) throw ShapeError("conv_apply: channel mismatch");
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (ms[i + 1] != xs[i]) throw ShapeError("conv_apply: spectral extent mismatch");
  const int cout = ms[0];
  const std::size_t k = xv.size() / static_cast<std::size_t>(cin);
  Shape os = xs;
  os[0] = cout;
  CTensor<Real> y(os);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci) {
      const auto* xp = xv.ptr() + static_cast<std::size_t>(ci) * k;
      const auto* mp = mv.ptr() + (static_cast<std::size_t>(co) * cin + ci) * k;
      auto* yp = y.ptr() + static_cast<std::size_t>(co) * k;
      for (std::size_t i = 0; i < k; ++i) yp[i] += xp[i] * mp[i];
    }
  Value<Real> out;
  out.is_complex = true;
  out.c = std::move(y);
  const bool ng = detail::any_grad<Real>({x, m});
  return g.push(std::move(out), ng, [x, m, cin, cout, k](Graph<Real>& gg, int self) {
    const auto& adj = gg.node(self).adj.c;
    const auto& xv2 = gg.node(x.id).val.cplx();
    const auto& mv2 = gg.node(m.id).val.cplx();
    CTensor<Real> gx(xv2.shape()), gm(mv2.shape());
    for (int co = 0; co < cout; ++co)
      for (int ci = 0; ci < cin; ++ci) {
        const auto* ap = adj.ptr() + static_cast<std::size_t>(co) * k;
        const auto* xp = xv2.ptr() + static_cast<std::size_t>(ci) * k;
        const auto* mp = mv2.ptr() + (static_cast<std::size_t>(co) * cin + ci) * k;
        auto* gxp = gx.ptr() + static_cast<std::size_t>(ci) * k;
        auto* gmp = gm.ptr() + (static_cast<std::size_t>(co) * cin + ci) * k;
        for (std::size_t i = 0; i < k; ++i) {
          gxp[i] += ap[i] * std::conj(mp[i]);
          gmp[i] += ap[i] * std::conj(xp[i]);
        }
      }
    gg.add_adjoint(x.id, gx);
    gg.add_adjoint(m.id, gm);
  });
}

// ---- record() dispatcher ------------------------------------------------------

enum class Primitive {
  add,
  sub,
  elementwise_mul,
  complex_mul,
  matmul,
  reshape,
  slice,
  pad,
  concat,
  sum_reduce,
  mean_reduce,
  relu,
  max_pool_2d,
  avg_pool_2d,
  instance_normalize,
  softmax_cross_entropy,
  dft,
  idft,
  dft2,
  idft2,
  band_crop,
  band_pad,
};

struct RecordAttrs {
  Shape shape;       // reshape
  Shape start;       // slice
  Shape count;       // slice
  Shape before;      // pad
  Shape after;       // pad
  int axis = 0;      // concat
  int window = 2;    // pooling
  int label = 0;     // softmax_cross_entropy
  int resolution = 0;  // band ops
};

/// Uniform entry point over the registered primitive set; unknown primitives
/// and shape mismatches are errors.
template <RealScalar Real>
Var<Real> record(Primitive op, const std::vector<Var<Real>>& in, const RecordAttrs& attrs = {}) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) throw ShapeError("record: wrong operand count");
  };
  switch (op) {
    case Primitive::add: need(2); return add(in[0], in[1]);
    case Primitive::sub: need(2); return sub(in[0], in[1]);
    case Primitive::elementwise_mul:
    case Primitive::complex_mul: need(2); return mul(in[0], in[1]);
    case Primitive::matmul: need(2); return matmul(in[0], in[1]);
    case Primitive::reshape: need(1); return reshape(in[0], attrs.shape);
    case Primitive::slice: need(1); return slice(in[0], attrs.start, attrs.count);
    case Primitive::pad: need(1); return pad(in[0], attrs.before, attrs.after);
    case Primitive::concat: return concat(in, attrs.axis);
    case Primitive::sum_reduce: need(1); return reduce_sum(in[0]);
    case Primitive::mean_reduce: need(1); return reduce_mean(in[0]);
    case Primitive::relu: need(1); return relu(in[0]);
    case Primitive::max_pool_2d: need(1); return max_pool2d(in[0], attrs.window);
    case Primitive::avg_pool_2d: need(1); return avg_pool2d(in[0], attrs.window);
    case Primitive::instance_normalize: need(1); return instance_norm(in[0]);
    case Primitive::softmax_cross_entropy: need(1); return softmax_cross_entropy(in[0], attrs.label);
    case Primitive::dft: need(1); return dft_node(in[0]);
    case Primitive::idft: need(1); return idft_node(in[0]);
    case Primitive::dft2: need(1); return dft2_node(in[0]);
    case Primitive::idft2: need(1); return idft2_node(in[0]);
    case Primitive::band_crop: need(1); return band_crop_node(in[0], attrs.resolution);
    case Primitive::band_pad: need(1); return band_pad_node(in[0], attrs.resolution);
  }
  throw ShapeError("record: unknown primitive");
}

// ---- verification helpers -----------------------------------------------------

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
template <RealScalar Real, class F>
double grad_check(F&& f, const Tensor<Real>& x, Real eps) {
  if (eps <= Real(0)) throw ShapeError("grad_check: eps must be positive");
  ParamStore<Real> store;
  store.add("x", x);
  Graph<Real> g(&store);
  Var<Real> loss = f(g, g.param("x"));
  if (loss.is_complex() || loss.value().size() != 1)
    throw ShapeError("grad_check: f must be scalar-valued");
  if (!loss.value().all_finite()) throw NumericError("grad_check: non-finite value");
  g.backward(loss);
  const Tensor<Real> analytic = store.grad("x");

  auto eval = [&](const Tensor<Real>& xv) -> double {
    ParamStore<Real> s2;
    s2.add("x", xv);
    Graph<Real> g2(&s2);
    Var<Real> l2 = f(g2, g2.param("x"));
    const Real v = l2.value()[0];
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("grad_check: non-finite value");
    return static_cast<double>(v);
  };

  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor<Real> xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    const double num = (eval(xp) - eval(xm)) / (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(analytic[i]);
    worst = std::max(worst, std::abs(a - num) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

/// |<Ax, y> - <x, A*y>| / (|x| |y|) under the R^2 inner product.
template <class Tin, class Tout, class A, class Aadj>
double adjoint_check(A&& a, Aadj&& aadj, const TensorT<Tin>& x, const TensorT<Tout>& y) {
  const TensorT<Tout> ax = a(x);
  const TensorT<Tin> aty = aadj(y);
  if (ax.shape() != y.shape() || aty.shape() != x.shape())
    throw ShapeError("adjoint_check: shape mismatch");
  const double lhs = dot_r2(ax, y);
  const double rhs = dot_r2(x, aty);
  const double denom = l2_norm(x) * l2_norm(y);
  if (denom == 0) return 0;
  return std::abs(lhs - rhs) / denom;
}

}  // namespace sefnet::ad
