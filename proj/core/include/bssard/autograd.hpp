#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major matrices.
//
// A Graph is a tape built for a single sample: every op appends a node holding its
// value and a closure that pushes the node's gradient to its inputs. Parameters live
// in ParamStores outside the graph; Graph::backward() accumulates leaf gradients only
// into the store passed as the target, so freezing a group is a matter of not naming it.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bssard/error.hpp"
#include "bssard/rng.hpp"

namespace bssard::ag {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class ParamStore;

template <typename T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  const ParamStore<T>* owner = nullptr;
};

/// Named, insertion-ordered parameter collection with stable addresses.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::string prefix = {}) : prefix_(std::move(prefix)) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  const std::string& prefix() const { return prefix_; }

  /// Adds a parameter initialized with N(0, scale^2) entries.
  Parameter<T>& add(const std::string& name, int rows, int cols, double scale, Rng& rng) {
    auto p = std::make_unique<Parameter<T>>();
    p->name = prefix_.empty() ? name : prefix_ + "/" + name;
    if (index_.count(p->name) != 0) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + p->name);
    }
    p->value.resize(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) p->value(i, j) = static_cast<T>(scale * rng.normal());
    }
    p->grad = Mat<T>::Zero(rows, cols);
    p->owner = this;
    index_[p->name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>& add_constant(const std::string& name, int rows, int cols, T value) {
    Rng unused(0);
    Parameter<T>& p = add(name, rows, cols, 0.0, unused);
    p.value.setConstant(value);
    return p;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  /// FNV-1a over names and raw value bytes; equal hashes mean bit-identical values.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t len) {
      const auto* bytes = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& p : params_) {
      mix(p->name.data(), p->name.size());
      mix(p->value.data(), sizeof(T) * static_cast<std::size_t>(p->value.size()));
    }
    return h;
  }

  /// Copies values from another store with identical names and shapes.
  template <typename U>
  void copy_values_from(const ParamStore<U>& other) {
    if (other.size() != size()) throw Error(ErrorCode::kShapeMismatch, "param store size");
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& src = other[i];
      auto& dst = *params_[i];
      if (src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols()) {
        throw Error(ErrorCode::kShapeMismatch, "param " + dst.name);
      }
      dst.value = src.value.template cast<T>();
    }
  }

 private:
  std::string prefix_;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Graph;

/// Handle to a node on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Mat<T>& value() const { return graph->value(id); }
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  T scalar() const { return value()(0, 0); }
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Mat<T>& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Mat<T> value) { return push(std::move(value), false, nullptr); }

  /// Leaf for a parameter; repeated calls return the same node.
  Var<T> param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var<T>{this, it->second};
    Var<T> v = push(p.value, true, nullptr);
    nodes_[static_cast<std::size_t>(v.id)].param = &p;
    param_nodes_[&p] = v.id;
    return v;
  }

  Var<T> push(Mat<T> value, bool needs_grad, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Gradient buffer of a node, allocated as zeros on first touch.
  Mat<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// True if a gradient has been accumulated for `v` by the last backward().
  bool has_grad(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].grad.size() != 0; }
  const Mat<T>& grad_of(Var<T> v) { return grad(v.id); }

  /// Reverse sweep from a scalar. Parameter leaf gradients are added (+=) into
  /// Parameter::grad only for parameters owned by `target`; pass nullptr to skip.
  void backward(Var<T> loss, const ParamStore<T>* target, T seed = T(1)) {
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw Error(ErrorCode::kShapeMismatch, "backward needs a scalar");
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    grad(loss.id)(0, 0) = seed;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0 || !n.needs_grad) continue;
      if (n.backward) {
        n.backward(*this, n.grad);
      }
    }
    if (target == nullptr) return;
    for (auto& [p, id] : param_nodes_) {
      if (p->owner != target) continue;
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.size() != 0) p->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter<T>*, int> param_nodes_;
};

namespace detail {

template <typename T>
inline void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

template <typename T>
inline bool any_grad(Graph<T>& g, std::initializer_list<Var<T>> vs) {
  for (const auto& v : vs) {
    if (g.needs_grad(v.id)) return true;
  }
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  detail::require<T>(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape");
  return g.push(a.value() + b.value(), detail::any_grad(g, {a, b}),
                [a, b](Graph<T>& gr, const Mat<T>& go) {
                  if (gr.needs_grad(a.id)) gr.grad(a.id) += go;
                  if (gr.needs_grad(b.id)) gr.grad(b.id) += go;
                });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  detail::require<T>(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape");
  return g.push(a.value() - b.value(), detail::any_grad(g, {a, b}),
                [a, b](Graph<T>& gr, const Mat<T>& go) {
                  if (gr.needs_grad(a.id)) gr.grad(a.id) += go;
                  if (gr.needs_grad(b.id)) gr.grad(b.id) -= go;
                });
}

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  detail::require<T>(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape");
  return g.push(a.value().cwiseProduct(b.value()), detail::any_grad(g, {a, b}),
                [a, b](Graph<T>& gr, const Mat<T>& go) {
                  if (gr.needs_grad(a.id)) gr.grad(a.id) += go.cwiseProduct(b.value());
                  if (gr.needs_grad(b.id)) gr.grad(b.id) += go.cwiseProduct(a.value());
                });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Graph<T>& g = *a.graph;
  return g.push(a.value() * s, g.needs_grad(a.id),
                [a, s](Graph<T>& gr, const Mat<T>& go) { gr.grad(a.id) += go * s; });
}

/// a [r, k] x b [k, c]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  detail::require<T>(a.cols() == b.rows(), "matmul: inner dims");
  Mat<T> out = a.value() * b.value();
  return g.push(std::move(out), detail::any_grad(g, {a, b}),
                [a, b](Graph<T>& gr, const Mat<T>& go) {
                  if (gr.needs_grad(a.id)) gr.grad(a.id).noalias() += go * b.value().transpose();
                  if (gr.needs_grad(b.id)) gr.grad(b.id).noalias() += a.value().transpose() * go;
                });
}

/// a [r, k] x b[c, k]^T
template <typename T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  detail::require<T>(a.cols() == b.cols(), "matmul_bt: inner dims");
  Mat<T> out = a.value() * b.value().transpose();
  return g.push(std::move(out), detail::any_grad(g, {a, b}),
                [a, b](Graph<T>& gr, const Mat<T>& go) {
                  if (gr.needs_grad(a.id)) gr.grad(a.id).noalias() += go * b.value();
                  if (gr.needs_grad(b.id)) gr.grad(b.id).noalias() += go.transpose() * a.value();
                });
}

/// a [r, c] + row [1, c] broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  Graph<T>& g = *a.graph;
  detail::require<T>(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape");
  Mat<T> out = a.value();
  out.rowwise() += row.value().row(0);
  return g.push(std::move(out), detail::any_grad(g, {a, row}),
                [a, row](Graph<T>& gr, const Mat<T>& go) {
                  if (gr.needs_grad(a.id)) gr.grad(a.id) += go;
                  if (gr.needs_grad(row.id)) gr.grad(row.id) += go.colwise().sum();
                });
}

/// x W + b for x [r, in], W [in, out], b [1, out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_row(matmul(x, w), b);
}

template <typename T>
Var<T> relu(Var<T> a) {
  Graph<T>& g = *a.graph;
  return g.push(a.value().cwiseMax(T(0)), g.needs_grad(a.id),
                [a](Graph<T>& gr, const Mat<T>& go) {
                  gr.grad(a.id) += (a.value().array() > T(0)).select(go, T(0));
                });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  Graph<T>& g = *a.graph;
  Mat<T> out = a.value().array().tanh().matrix();
  return g.push(out, g.needs_grad(a.id), [a, out](Graph<T>& gr, const Mat<T>& go) {
    gr.grad(a.id).array() += go.array() * (T(1) - out.array().square());
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Graph<T>& g = *a.graph;
  return g.push(a.value().transpose(), g.needs_grad(a.id),
                [a](Graph<T>& gr, const Mat<T>& go) { gr.grad(a.id) += go.transpose(); });
}

/// Reinterprets row-major storage with a new shape.
template <typename T>
Var<T> reshape(Var<T> a, int rows, int cols) {
  Graph<T>& g = *a.graph;
  detail::require<T>(rows * cols == a.rows() * a.cols(), "reshape: size");
  Mat<T> out = Eigen::Map<const Mat<T>>(a.value().data(), rows, cols);
  const int r0 = a.rows();
  const int c0 = a.cols();
  return g.push(std::move(out), g.needs_grad(a.id),
                [a, r0, c0](Graph<T>& gr, const Mat<T>& go) {
                  gr.grad(a.id) += Eigen::Map<const Mat<T>>(go.data(), r0, c0);
                });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  detail::require<T>(a.rows() == b.rows(), "concat_cols: rows");
  const int ca = a.cols();
  const int cb = b.cols();
  Mat<T> out(a.rows(), ca + cb);
  out.leftCols(ca) = a.value();
  out.rightCols(cb) = b.value();
  return g.push(std::move(out), detail::any_grad(g, {a, b}),
                [a, b, ca, cb](Graph<T>& gr, const Mat<T>& go) {
                  if (gr.needs_grad(a.id)) gr.grad(a.id) += go.leftCols(ca);
                  if (gr.needs_grad(b.id)) gr.grad(b.id) += go.rightCols(cb);
                });
}

/// Replicates a [1, c] row r times.
template <typename T>
Var<T> broadcast_rows(Var<T> row, int r) {
  Graph<T>& g = *row.graph;
  detail::require<T>(row.rows() == 1, "broadcast_rows: not a row");
  Mat<T> out = row.value().replicate(r, 1);
  return g.push(std::move(out), g.needs_grad(row.id),
                [row](Graph<T>& gr, const Mat<T>& go) { gr.grad(row.id) += go.colwise().sum(); });
}

/// Mean of the first `count` rows -> [1, c].
template <typename T>
Var<T> mean_rows(Var<T> a, int count) {
  Graph<T>& g = *a.graph;
  detail::require<T>(count >= 1 && count <= a.rows(), "mean_rows: count");
  Mat<T> out = a.value().topRows(count).colwise().sum() / static_cast<T>(count);
  return g.push(std::move(out), g.needs_grad(a.id),
                [a, count](Graph<T>& gr, const Mat<T>& go) {
                  gr.grad(a.id).topRows(count).rowwise() += go.row(0) / static_cast<T>(count);
                });
}

/// Sum of all entries -> [1, 1].
template <typename T>
Var<T> sum(Var<T> a) {
  Graph<T>& g = *a.graph;
  Mat<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return g.push(std::move(out), g.needs_grad(a.id),
                [a](Graph<T>& gr, const Mat<T>& go) { gr.grad(a.id).array() += go(0, 0); });
}

/// Row `r` of a -> [1, c].
template <typename T>
Var<T> row(Var<T> a, int r) {
  Graph<T>& g = *a.graph;
  return g.push(a.value().row(r), g.needs_grad(a.id),
                [a, r](Graph<T>& gr, const Mat<T>& go) { gr.grad(a.id).row(r) += go; });
}

/// Gathers rows of `table` by id (embedding lookup).
template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<int> ids) {
  Graph<T>& g = *table.graph;
  Mat<T> out(static_cast<int>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require<T>(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows: id out of range");
    out.row(static_cast<int>(i)) = table.value().row(ids[i]);
  }
  return g.push(std::move(out), g.needs_grad(table.id),
                [table, ids = std::move(ids)](Graph<T>& gr, const Mat<T>& go) {
                  Mat<T>& gt = gr.grad(table.id);
                  for (std::size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += go.row(static_cast<int>(i));
                });
}

// ---------------------------------------------------------------------------
// Normalization and attention
// ---------------------------------------------------------------------------

/// Row-wise softmax. Columns with mask == 0 receive exactly zero probability.
/// An empty mask means no masking.
template <typename T>
Var<T> softmax_rows(Var<T> a, const std::vector<std::uint8_t>& col_mask = {}) {
  Graph<T>& g = *a.graph;
  const bool masked = !col_mask.empty();
  detail::require<T>(!masked || static_cast<int>(col_mask.size()) == a.cols(), "softmax: mask size");
  Mat<T> out(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < a.cols(); ++j) {
      if (!masked || col_mask[static_cast<std::size_t>(j)]) mx = std::max(mx, a.value()(i, j));
    }
    T z = T(0);
    for (int j = 0; j < a.cols(); ++j) {
      T e = (!masked || col_mask[static_cast<std::size_t>(j)]) ? std::exp(a.value()(i, j) - mx) : T(0);
      out(i, j) = e;
      z += e;
    }
    out.row(i) /= z;
  }
  return g.push(out, g.needs_grad(a.id), [a, out](Graph<T>& gr, const Mat<T>& go) {
    // dx = y * (go - <go, y>)
    Mat<T>& ga = gr.grad(a.id);
    for (int i = 0; i < out.rows(); ++i) {
      const T dot = go.row(i).dot(out.row(i));
      ga.row(i).array() += out.row(i).array() * (go.row(i).array() - dot);
    }
  });
}

/// Row-wise layer normalization with learned gain and bias rows.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  Graph<T>& g = *x.graph;
  const int r = x.rows();
  const int c = x.cols();
  detail::require<T>(gain.cols() == c && bias.cols() == c, "layer_norm: shape");
  Mat<T> xhat(r, c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(r);
  for (int i = 0; i < r; ++i) {
    const T mean = x.value().row(i).mean();
    const T var = (x.value().row(i).array() - mean).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mean) * inv_std(i);
  }
  Mat<T> out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return g.push(std::move(out), detail::any_grad(g, {x, gain, bias}),
                [x, gain, bias, xhat, inv_std, c](Graph<T>& gr, const Mat<T>& go) {
                  if (gr.needs_grad(gain.id)) gr.grad(gain.id) += go.cwiseProduct(xhat).colwise().sum();
                  if (gr.needs_grad(bias.id)) gr.grad(bias.id) += go.colwise().sum();
                  if (!gr.needs_grad(x.id)) return;
                  Mat<T>& gx = gr.grad(x.id);
                  for (int i = 0; i < go.rows(); ++i) {
                    Eigen::Array<T, 1, Eigen::Dynamic> dxhat = go.row(i).array() * gain.value().row(0).array();
                    const T m1 = dxhat.mean();
                    const T m2 = (dxhat * xhat.row(i).array()).mean();
                    gx.row(i).array() += inv_std(i) * (dxhat - m1 - xhat.row(i).array() * m2);
                  }
                  (void)c;
                });
}

// ---------------------------------------------------------------------------
// Temporal convolutions (sequence axis = rows, channels = columns)
// ---------------------------------------------------------------------------

/// Unfolds x [L, C] into [L_out, K*C] windows with stride 1 and symmetric zero padding.
template <typename T>
Var<T> im2col(Var<T> x, int kernel, int pad) {
  Graph<T>& g = *x.graph;
  const int len = x.rows();
  const int ch = x.cols();
  const int out_len = len + 2 * pad - kernel + 1;
  detail::require<T>(out_len >= 1, "im2col: kernel larger than padded input");
  Mat<T> out = Mat<T>::Zero(out_len, kernel * ch);
  for (int t = 0; t < out_len; ++t) {
    for (int k = 0; k < kernel; ++k) {
      const int src = t + k - pad;
      if (src >= 0 && src < len) out.block(t, k * ch, 1, ch) = x.value().row(src);
    }
  }
  return g.push(std::move(out), g.needs_grad(x.id),
                [x, kernel, pad, len, ch, out_len](Graph<T>& gr, const Mat<T>& go) {
                  Mat<T>& gx = gr.grad(x.id);
                  for (int t = 0; t < out_len; ++t) {
                    for (int k = 0; k < kernel; ++k) {
                      const int src = t + k - pad;
                      if (src >= 0 && src < len) gx.row(src) += go.block(t, k * ch, 1, ch);
                    }
                  }
                });
}

/// 1-D convolution along rows: x [L, Cin], w [K*Cin, Cout], b [1, Cout].
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> b, int kernel, int pad) {
  return linear(im2col(x, kernel, pad), w, b);
}

/// Overlap-add of per-step kernel outputs: cols [L, K*C] -> [(L-1)*stride - 2*pad + K, C].
template <typename T>
Var<T> col2im(Var<T> cols, int kernel, int stride, int pad) {
  Graph<T>& g = *cols.graph;
  const int len = cols.rows();
  detail::require<T>(cols.cols() % kernel == 0, "col2im: columns not divisible by kernel");
  const int ch = cols.cols() / kernel;
  const int out_len = (len - 1) * stride - 2 * pad + kernel;
  detail::require<T>(out_len >= 1, "col2im: empty output");
  Mat<T> out = Mat<T>::Zero(out_len, ch);
  for (int t = 0; t < len; ++t) {
    for (int k = 0; k < kernel; ++k) {
      const int dst = t * stride + k - pad;
      if (dst >= 0 && dst < out_len) out.row(dst) += cols.value().block(t, k * ch, 1, ch);
    }
  }
  return g.push(std::move(out), g.needs_grad(cols.id),
                [cols, kernel, stride, pad, len, ch, out_len](Graph<T>& gr, const Mat<T>& go) {
                  Mat<T>& gc = gr.grad(cols.id);
                  for (int t = 0; t < len; ++t) {
                    for (int k = 0; k < kernel; ++k) {
                      const int dst = t * stride + k - pad;
                      if (dst >= 0 && dst < out_len) gc.block(t, k * ch, 1, ch) += go.row(dst);
                    }
                  }
                });
}

/// Transposed 1-D convolution: x [L, Cin], w [Cin, K*Cout], b [1, Cout].
template <typename T>
Var<T> conv_transpose1d(Var<T> x, Var<T> w, Var<T> b, int kernel, int stride, int pad) {
  return add_row(col2im(matmul(x, w), kernel, stride, pad), b);
}

// ---------------------------------------------------------------------------
// Probability-space losses
// ---------------------------------------------------------------------------

/// -log(max(p[index], eps)) for a [1, n] probability row. Zero gradient when clamped.
template <typename T>
Var<T> neg_log_at(Var<T> p, int index, T eps, bool* clamped = nullptr) {
  Graph<T>& g = *p.graph;
  detail::require<T>(p.rows() == 1 && index >= 0 && index < p.cols(), "neg_log_at: index");
  const T pv = p.value()(0, index);
  const bool clip = pv <= eps;  // NaN passes through so the trainer sees it
  if (clamped != nullptr) *clamped = clip;
  Mat<T> out(1, 1);
  out(0, 0) = -std::log(clip ? eps : pv);
  return g.push(std::move(out), g.needs_grad(p.id),
                [p, index, pv, clip](Graph<T>& gr, const Mat<T>& go) {
                  if (!clip) gr.grad(p.id)(0, index) -= go(0, 0) / pv;
                });
}

/// sum_i r_i (log r_i - log max(p_i, eps)) with r held constant (no gradient path to r).
template <typename T>
Var<T> kl_from_constant(const Mat<T>& reference, Var<T> p, T eps) {
  Graph<T>& g = *p.graph;
  detail::require<T>(reference.rows() == p.rows() && reference.cols() == p.cols(), "kl: shape");
  Mat<T> out = Mat<T>::Zero(1, 1);
  for (int i = 0; i < reference.size(); ++i) {
    const T r = reference.data()[i];
    if (r <= T(0)) continue;
    const T q = std::max(p.value().data()[i], eps);
    out(0, 0) += r * (std::log(r) - std::log(q));
  }
  return g.push(std::move(out), g.needs_grad(p.id),
                [reference, p, eps](Graph<T>& gr, const Mat<T>& go) {
                  Mat<T>& gp = gr.grad(p.id);
                  for (int i = 0; i < reference.size(); ++i) {
                    const T r = reference.data()[i];
                    const T q = p.value().data()[i];
                    if (r > T(0) && q > eps) gp.data()[i] -= go(0, 0) * r / q;
                  }
                });
}

}  // namespace bssard::ag
