#pragma once

// Dense tensors with tape-based reverse-mode autodiff. Ops live in ops.hpp;
// each op records a Node holding its parents and a backward closure. The
// whole stack is templated on the scalar type: float for training, double
// for gradient verification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace dfallm::nn {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline int64_t numel_of(const std::vector<int>& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

// Optional per-primitive output/gradient finiteness scan. Off by default for
// speed; tests and grad_check enable it. Training loops always check the loss.
inline bool& finite_checks_flag() {
  static bool f = false;
  return f;
}
inline void set_finite_checks(bool on) { finite_checks_flag() = on; }

inline bool& grad_enabled_flag() {
  thread_local bool f = true;
  return f;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled_flag()) { grad_enabled_flag() = false; }
  ~NoGradGuard() { grad_enabled_flag() = prev; }
};

// Incremented by every backward() call on this thread. The optimizer uses it
// to reject step() without a preceding backward.
inline int64_t& backward_epoch() {
  thread_local int64_t e = 0;
  return e;
}

template <class T>
struct Node;

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // allocated iff requires_grad
  std::shared_ptr<Node<T>> node;         // null for leaves and no-grad results
  bool requires_grad = false;

  Tensor() = default;

  int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T* gptr() { return grad->data(); }
  const T* gptr() const { return grad->data(); }
  bool defined() const { return static_cast<bool>(data); }

  T item() const {
    if (numel() != 1) throw UsageError("item(): tensor is not scalar, shape " + shape_str(shape));
    return (*data)[0];
  }

  static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false) {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(numel_of(shape), T(0));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<T>>(t.data->size(), T(0));
    return t;
  }

  static Tensor from(const std::vector<int>& shape, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<int64_t>(values.size()) != numel_of(shape))
      throw ShapeError("from(): " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<T>>(t.data->size(), T(0));
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  void ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<T>>(data->size(), T(0));
  }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }
};

template <class T>
struct Node {
  const char* op = "";
  std::vector<Tensor<T>> parents;
  // out value/grad storage, kept here so backward can run from the node alone
  std::vector<int> out_shape;
  std::shared_ptr<std::vector<T>> out_data;
  std::shared_ptr<std::vector<T>> out_grad;
  std::function<void(Node<T>&)> backward;
  bool consumed = false;
};

template <class T>
inline void check_finite(const std::vector<T>& v, const char* op, const char* what) {
  for (T x : v) {
    if (!std::isfinite(static_cast<double>(x)))
      throw NumericError(std::string(op) + ": non-finite " + what);
  }
}

// Record an autograd edge on `out` if grad mode is on and any parent needs it.
template <class T>
inline void record(Tensor<T>& out, const char* op, std::vector<Tensor<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  if (finite_checks_flag()) check_finite(*out.data, op, "output");
  if (!grad_enabled_flag()) return;
  bool need = false;
  for (const auto& p : parents)
    if (p.requires_grad) { need = true; break; }
  if (!need) return;
  out.requires_grad = true;
  out.ensure_grad();
  out.node = std::make_shared<Node<T>>();
  out.node->op = op;
  out.node->parents = std::move(parents);
  out.node->out_shape = out.shape;
  out.node->out_data = out.data;
  out.node->out_grad = out.grad;
  out.node->backward = std::move(backward);
}

template <class T>
inline void accumulate_grad(Tensor<T>& parent, const T* g, int64_t n, const char* op) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  T* dst = parent.grad->data();
  for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
  if (finite_checks_flag()) check_finite(*parent.grad, op, "gradient");
}

// Reverse-mode sweep from a scalar loss. Single-threaded, deterministic order.
template <class T>
inline void backward(Tensor<T>& loss) {
  if (!loss.node) throw UsageError("backward: tensor has no recorded computation");
  if (loss.numel() != 1) throw UsageError("backward: loss must be scalar, got " + shape_str(loss.shape));

  // iterative topological order over the node DAG
  std::vector<Node<T>*> topo;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({loss.node.get(), 0});
  seen.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx].node.get();
      ++idx;
      if (p && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      if (n->consumed)
        throw UsageError(std::string("backward: node '") + n->op +
                         "' already consumed by an earlier backward; rebuild the forward pass");
      topo.push_back(n);
      stack.pop_back();
    }
  }

  (*loss.grad)[0] = T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<T>* n = *it;
    n->consumed = true;
    if (n->backward) n->backward(*n);
  }
  ++backward_epoch();
}

}  // namespace dfallm::nn
