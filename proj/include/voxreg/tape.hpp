#pragma once

#include <functional>
#include <utility>

#include "voxreg/tensor.hpp"

namespace voxreg {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Append-only record of the forward computation. Every op pushes one node;
/// backward() walks the nodes once in reverse and accumulates gradients into
/// the parents. A tape can be consumed by backward() exactly once.
template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  const Shape& shape() const { return value().shape; }
  int64_t numel() const { return value().numel(); }
};

template <class T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until touched
    bool requires_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, const Node&)> backward;
  };

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> record(Tensor<T> value, std::vector<int> parents,
                std::function<void(Tape&, const Node&)> backward) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (int p : n.parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  /// Gradient buffer of node `id`, allocated zero on first access.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.shape.empty() && !n.value.shape.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  bool wants_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  void backward(Var<T> loss) {
    if (consumed_) throw std::logic_error("tape already consumed by backward()");
    if (loss.tape != this) throw std::logic_error("loss recorded on a different tape");
    auto& root = nodes_[static_cast<size_t>(loss.id)];
    if (root.value.numel() != 1) throw std::invalid_argument("backward() needs a scalar loss");
    consumed_ = true;
    grad(loss.id).data[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.backward || n.grad.shape.empty()) continue;
      n.backward(*this, n);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape->node(id).value;
}
template <class T>
const Tensor<T>& Var<T>::grad() const {
  return tape->node(id).grad;
}

namespace detail {
template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.value().shape != b.value().shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.value().shape) +
                                " vs " + shape_str(b.value().shape));
}
}  // namespace detail

// ---- elementwise ops --------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += pb[i];
  int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, const auto& n) {
    for (int p : {ia, ib}) {
      if (!t.wants_grad(p)) continue;
      auto& g = t.grad(p);
      for (int64_t i = 0; i < n.grad.numel(); ++i) g.data[i] += n.grad.data[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] -= pb[i];
  int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, const auto& n) {
    if (t.wants_grad(ia)) {
      auto& g = t.grad(ia);
      for (int64_t i = 0; i < n.grad.numel(); ++i) g.data[i] += n.grad.data[i];
    }
    if (t.wants_grad(ib)) {
      auto& g = t.grad(ib);
      for (int64_t i = 0; i < n.grad.numel(); ++i) g.data[i] -= n.grad.data[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= pb[i];
  int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, const auto& n) {
    const auto& va = t.node(ia).value;
    const auto& vb = t.node(ib).value;
    if (t.wants_grad(ia)) {
      auto& g = t.grad(ia);
      for (int64_t i = 0; i < n.grad.numel(); ++i) g.data[i] += n.grad.data[i] * vb.data[i];
    }
    if (t.wants_grad(ib)) {
      auto& g = t.grad(ib);
      for (int64_t i = 0; i < n.grad.numel(); ++i) g.data[i] += n.grad.data[i] * va.data[i];
    }
  });
}

/// a / b, elementwise.
template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "div");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] /= pb[i];
  int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, const auto& n) {
    const auto& va = t.node(ia).value;
    const auto& vb = t.node(ib).value;
    if (t.wants_grad(ia)) {
      auto& g = t.grad(ia);
      for (int64_t i = 0; i < n.grad.numel(); ++i) g.data[i] += n.grad.data[i] / vb.data[i];
    }
    if (t.wants_grad(ib)) {
      auto& g = t.grad(ib);
      for (int64_t i = 0; i < n.grad.numel(); ++i)
        g.data[i] -= n.grad.data[i] * va.data[i] / (vb.data[i] * vb.data[i]);
    }
  });
}

template <class T>
Var<T> scalar_mul(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= s;
  int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, s](Tape<T>& t, const auto& n) {
    auto& g = t.grad(ia);
    for (int64_t i = 0; i < n.grad.numel(); ++i) g.data[i] += n.grad.data[i] * s;
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v += s;
  int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia](Tape<T>& t, const auto& n) {
    auto& g = t.grad(ia);
    for (int64_t i = 0; i < n.grad.numel(); ++i) g.data[i] += n.grad.data[i];
  });
}

template <class T>
Var<T> leaky_relu(Var<T> a, T slope) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v = v > T(0) ? v : slope * v;
  int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, slope](Tape<T>& t, const auto& n) {
    const auto& va = t.node(ia).value;
    auto& g = t.grad(ia);
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      g.data[i] += n.grad.data[i] * (va.data[i] > T(0) ? T(1) : slope);
  });
}

template <class T>
Var<T> relu(Var<T> a) {
  return leaky_relu(a, T(0));
}

template <class T>
Var<T> square(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= v;
  int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia](Tape<T>& t, const auto& n) {
    const auto& va = t.node(ia).value;
    auto& g = t.grad(ia);
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      g.data[i] += n.grad.data[i] * T(2) * va.data[i];
  });
}

template <class T>
Var<T> vsum(Var<T> a) {
  T acc = T(0);
  for (const auto& v : a.value().data) acc += v;
  int ia = a.id;
  return a.tape->record(Tensor<T>::scalar(acc), {ia}, [ia](Tape<T>& t, const auto& n) {
    auto& g = t.grad(ia);
    const T go = n.grad.data[0];
    for (auto& v : g.data) v += go;
  });
}

template <class T>
Var<T> vmean(Var<T> a) {
  const T inv = T(1) / static_cast<T>(a.numel());
  T acc = T(0);
  for (const auto& v : a.value().data) acc += v;
  int ia = a.id;
  return a.tape->record(Tensor<T>::scalar(acc * inv), {ia}, [ia, inv](Tape<T>& t, const auto& n) {
    auto& g = t.grad(ia);
    const T go = n.grad.data[0] * inv;
    for (auto& v : g.data) v += go;
  });
}

namespace detail {
// strides for slicing: treat tensor as (outer, axis, inner) in memory order.
// Memory order is channel slowest, then z, y, x with x fastest (axis 1 of a
// (C,X,Y,Z) tensor is the fastest varying and axis 0 the slowest).
inline void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& ax, int64_t& inner) {
  ax = s[static_cast<size_t>(axis)];
  inner = 1;
  outer = 1;
  if (axis == 0) {
    for (size_t i = 1; i < s.size(); ++i) inner *= s[i];
  } else {
    for (int i = 1; i < axis; ++i) inner *= s[static_cast<size_t>(i)];
    outer = s[0];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) outer *= s[i];
  }
}
}  // namespace detail

template <class T>
Var<T> slice(Var<T> a, int axis, int64_t start, int64_t len) {
  const Shape& s = a.value().shape;
  if (axis < 0 || axis >= a.value().rank()) throw std::invalid_argument("slice: bad axis");
  if (start < 0 || len <= 0 || start + len > s[static_cast<size_t>(axis)])
    throw std::invalid_argument("slice: range out of bounds");
  int64_t outer, ax, inner;
  detail::axis_split(s, axis, outer, ax, inner);
  Shape os = s;
  os[static_cast<size_t>(axis)] = len;
  Tensor<T> out(os);
  const T* src = a.value().ptr();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < len; ++j)
      std::copy_n(src + (o * ax + start + j) * inner, inner, out.ptr() + (o * len + j) * inner);
  int ia = a.id;
  return a.tape->record(std::move(out), {ia},
                        [ia, outer, ax, inner, start, len](Tape<T>& t, const auto& n) {
                          auto& g = t.grad(ia);
                          const T* gp = n.grad.ptr();
                          for (int64_t o = 0; o < outer; ++o)
                            for (int64_t j = 0; j < len; ++j) {
                              T* dst = g.ptr() + (o * ax + start + j) * inner;
                              const T* sp = gp + (o * len + j) * inner;
                              for (int64_t i = 0; i < inner; ++i) dst[i] += sp[i];
                            }
                        });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].value().shape;
  if (axis < 0 || axis >= parts[0].value().rank()) throw std::invalid_argument("concat: bad axis");
  int64_t total_ax = 0;
  for (const auto& p : parts) {
    const Shape& s = p.value().shape;
    if (s.size() != s0.size()) throw std::invalid_argument("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        throw std::invalid_argument("concat: shape mismatch off-axis");
    total_ax += s[static_cast<size_t>(axis)];
  }
  Shape os = s0;
  os[static_cast<size_t>(axis)] = total_ax;
  Tensor<T> out(os);
  int64_t outer, ax_out, inner;
  detail::axis_split(os, axis, outer, ax_out, inner);
  std::vector<int> ids;
  std::vector<int64_t> lens;
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t len = p.value().shape[static_cast<size_t>(axis)];
    const T* src = p.value().ptr();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(src + o * len * inner, len * inner, out.ptr() + (o * ax_out + off) * inner);
    ids.push_back(p.id);
    lens.push_back(len);
    off += len;
  }
  return parts[0].tape->record(
      std::move(out), ids, [ids, lens, outer, ax_out, inner](Tape<T>& t, const auto& n) {
        int64_t off = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
          if (t.wants_grad(ids[k])) {
            auto& g = t.grad(ids[k]);
            for (int64_t o = 0; o < outer; ++o) {
              const T* sp = n.grad.ptr() + (o * ax_out + off) * inner;
              T* dst = g.ptr() + o * lens[k] * inner;
              for (int64_t i = 0; i < lens[k] * inner; ++i) dst[i] += sp[i];
            }
          }
          off += lens[k];
        }
      });
}

}  // namespace voxreg
