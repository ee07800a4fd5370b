// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rim {

// Dense shapes; image tensors are batch x channels x height x width.
using Shape = std::vector<int>;

inline long numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Dense n-d array of T. Values are immutable once a tensor has been produced
// by an op; `node` links it to the graph that recorded the producing op
// (-1 for constants / detached tensors).
template <typename T>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  int node = -1;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(static_cast<size_t>(numel(t.shape)), T(0));
    return t;
  }

  static Tensor full(Shape s, T v) {
    Tensor t = zeros(std::move(s));
    for (auto& x : *t.data) x = v;
    return t;
  }

  static Tensor from(Shape s, std::vector<T> v) {
    check(numel(s) == static_cast<long>(v.size()),
          "tensor: data length " + std::to_string(v.size()) + " does not match shape " + shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(std::move(v));
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  long size() const { return data ? static_cast<long>(data->size()) : 0; }
  bool defined() const { return static_cast<bool>(data); }
  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T item() const {
    check(size() == 1, "item: tensor is not scalar, shape " + shape_str(shape));
    return (*data)[0];
  }

  bool all_finite() const {
    for (const T& v : *data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Value copy detached from any graph.
  Tensor detached() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(*data);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(data->size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>((*data)[i]);
    return Tensor<U>::from(shape, std::move(v));
  }
};

// Tape of recorded operations for one rollout. Backward sweeps the tape in
// reverse creation order (a valid reverse topological order, since an op can
// only consume previously created tensors) and visits each node once,
// summing gradients over all paths into per-node accumulators.
template <typename T>
class Graph {
public:
  using BackFn = std::function<void(Graph&, int)>;

  // Registers a leaf whose gradient should be accumulated.
  int track(Tensor<T>& t) {
    check(t.defined(), "track: undefined tensor");
    t.node = new_node(t.size(), nullptr);
    t.requires_grad = true;
    return t.node;
  }

  int new_node(long size, BackFn back) {
    nodes_.push_back(Node{size, std::move(back)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  std::vector<T>& grad_buf(int node) {
    auto& g = grads_[static_cast<size_t>(node)];
    if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].size), T(0));
    return g;
  }

  bool grad_touched(int node) const { return !grads_[static_cast<size_t>(node)].empty(); }

  void backward(const Tensor<T>& loss) {
    check(loss.node >= 0, "backward: tensor is detached from this graph");
    check(loss.size() == 1, "backward: loss must be scalar, shape " + shape_str(loss.shape));
    check(!swept_, "backward: graph already consumed; call reset() first");
    swept_ = true;
    grad_buf(loss.node)[0] += T(1);
    for (int i = loss.node; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (!n.back || !grad_touched(i)) continue;
      n.back(*this, i);
    }
  }

  // Gradient of the last backward() w.r.t. t; zeros if no path reached it.
  Tensor<T> grad(const Tensor<T>& t) const {
    check(t.node >= 0 && t.node < static_cast<int>(nodes_.size()),
          "grad: tensor is not tracked on this graph");
    const auto& g = grads_[static_cast<size_t>(t.node)];
    Tensor<T> out = Tensor<T>::zeros(t.shape);
    if (!g.empty()) std::copy(g.begin(), g.end(), out.ptr());
    return out;
  }

  void reset() {
    nodes_.clear();
    grads_.clear();
    swept_ = false;
  }

  size_t node_count() const { return nodes_.size(); }

private:
  struct Node {
    long size;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  bool recording_ = true;
  bool swept_ = false;
};

namespace detail {

// Wires `out` into the tape when recording and any input is tracked.
template <typename T>
inline void attach(Graph<T>& g, Tensor<T>& out, std::initializer_list<const Tensor<T>*> ins,
                   typename Graph<T>::BackFn back) {
  if (!g.recording()) return;
  bool any = false;
  for (const Tensor<T>* t : ins) any = any || (t->node >= 0);
  if (!any) return;
  out.node = g.new_node(out.size(), std::move(back));
  out.requires_grad = true;
}

}  // namespace detail

}  // namespace rim
