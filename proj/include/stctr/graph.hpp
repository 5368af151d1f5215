#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stctr/tensor.hpp"

namespace stctr {

// Named trainable leaf. The graph accumulates gradients into `grad`; the
// optimizer owns any additional per-parameter state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.requires_grad = true;
    grad = Tensor::zeros(value.shape);
  }

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    items_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    by_name_[name] = items_.back().get();
    return *items_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
    return *it->second;
  }

  bool has(const std::string& name) const { return by_name_.count(name) > 0; }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

  size_t total_entries() const {
    size_t n = 0;
    for (auto& p : items_) n += p->value.numel();
    return n;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  size_t size() const { return items_.size(); }
  Parameter& operator[](size_t i) { return *items_[i]; }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::map<std::string, Parameter*> by_name_;
};

// Running batch-norm statistics. Owned by the layer, read and updated by the
// graph's batch_norm op.
struct BnState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.99;
  double eps = 1e-5;

  explicit BnState(size_t width, double momentum_ = 0.99, double eps_ = 1e-5)
      : running_mean(Tensor::zeros({width})),
        running_var(Tensor::full({width}, 1.0)),
        momentum(momentum_),
        eps(eps_) {}
};

using NodeId = int;

// Define-by-run reverse-mode graph over dense double tensors. Each op
// computes its value eagerly at node creation; backward() replays the tape in
// reverse, visiting each node on the loss path exactly once. A Graph instance
// is single-threaded; independent graphs may run concurrently.
class Graph {
  enum class Op : uint8_t {
    kLeaf,
    kConst,
    kMatmul,
    kLinear,
    kAdd,
    kHadamard,
    kAddRowVec,
    kMulRowVec,
    kScaleRows,
    kSigmoid,
    kLeakyRelu,
    kScalarMul,
    kConcat,
    kSliceCols,
    kReshape,
    kReduceSum,
    kReduceMean,
    kRowwiseMatvec,
    kGatherConcat,
    kGatherPool,
    kBatchNorm,
    kBceMean,
  };

  struct Node {
    Op op;
    NodeId a = -1, b = -1, c = -1;
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    double scalar = 0.0;          // activation slope / scale factor
    int i0 = 0, i1 = 0;           // axis, slice bounds, matvec dims, gather widths
    std::vector<NodeId> parts;    // concat inputs
    std::vector<int64_t> idx;     // gather ids / pool row offsets
    std::vector<double> aux;      // saved stats, labels
    BnState* bn = nullptr;
  };

 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  size_t size() const { return nodes_.size(); }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }

  NodeId param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Node n;
    n.op = Op::kLeaf;
    n.value = p.value;
    n.param = &p;
    NodeId id = push(std::move(n));
    param_nodes_[&p] = id;
    return id;
  }

  NodeId input(Tensor t) {
    Node n;
    n.op = Op::kConst;
    n.value = std::move(t);
    return push(std::move(n));
  }

  // C[m x n] = A[m x k] * B[k x n]
  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (ta.cols() != tb.rows()) {
      throw DimensionError("matmul: inner dimensions disagree, " + shape_str(ta.shape) +
                           " * " + shape_str(tb.shape));
    }
    size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
    Node node;
    node.op = Op::kMatmul;
    node.a = a;
    node.b = b;
    node.value = Tensor({m, n});
    const double* A = ta.data.data();
    const double* B = tb.data.data();
    double* C = node.value.data.data();
    for (size_t i = 0; i < m; ++i) {
      for (size_t kk = 0; kk < k; ++kk) {
        double av = A[i * k + kk];
        if (av == 0.0) continue;
        const double* brow = B + kk * n;
        double* crow = C + i * n;
        for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
    return push(std::move(node));
  }

  // Y[B x out] = X[B x in] * W[out x in]^T (+ bias[out])
  NodeId linear(NodeId x, NodeId w, NodeId bias = -1) {
    const Tensor& tx = nodes_[x].value;
    const Tensor& tw = nodes_[w].value;
    if (tx.cols() != tw.cols()) {
      throw DimensionError("linear: input width " + std::to_string(tx.cols()) +
                           " != weight fan-in " + std::to_string(tw.cols()));
    }
    size_t B = tx.rows(), in = tx.cols(), out = tw.rows();
    if (bias >= 0 && nodes_[bias].value.numel() != out) {
      throw DimensionError("linear: bias length != fan-out");
    }
    Node node;
    node.op = Op::kLinear;
    node.a = x;
    node.b = w;
    node.c = bias;
    node.value = Tensor({B, out});
    const double* X = tx.data.data();
    const double* W = tw.data.data();
    const double* bv = bias >= 0 ? nodes_[bias].value.data.data() : nullptr;
    double* Y = node.value.data.data();
    for (size_t r = 0; r < B; ++r) {
      const double* xr = X + r * in;
      double* yr = Y + r * out;
      for (size_t o = 0; o < out; ++o) {
        const double* wr = W + o * in;
        double acc = 0.0;
        for (size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
        yr[o] = bv ? acc + bv[o] : acc;
      }
    }
    return push(std::move(node));
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (!same_shape(ta, tb)) {
      throw DimensionError("add: shape mismatch " + shape_str(ta.shape) + " vs " +
                           shape_str(tb.shape));
    }
    Node node;
    node.op = Op::kAdd;
    node.a = a;
    node.b = b;
    node.value = ta;
    for (size_t i = 0; i < node.value.data.size(); ++i) node.value.data[i] += tb.data[i];
    return push(std::move(node));
  }

  NodeId hadamard(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (!same_shape(ta, tb)) {
      throw DimensionError("hadamard: shape mismatch " + shape_str(ta.shape) + " vs " +
                           shape_str(tb.shape));
    }
    Node node;
    node.op = Op::kHadamard;
    node.a = a;
    node.b = b;
    node.value = ta;
    for (size_t i = 0; i < node.value.data.size(); ++i) node.value.data[i] *= tb.data[i];
    return push(std::move(node));
  }

  // X[B x w] + v[w], broadcast across rows (the one supported broadcast)
  NodeId add_rowvec(NodeId x, NodeId v) {
    const Tensor& tx = nodes_[x].value;
    const Tensor& tv = nodes_[v].value;
    if (tv.numel() != tx.cols())
      throw DimensionError("add_rowvec: vector length != row width");
    Node node;
    node.op = Op::kAddRowVec;
    node.a = x;
    node.b = v;
    node.value = tx;
    size_t B = tx.rows(), w = tx.cols();
    for (size_t r = 0; r < B; ++r)
      for (size_t j = 0; j < w; ++j) node.value.data[r * w + j] += tv.data[j];
    return push(std::move(node));
  }

  NodeId mul_rowvec(NodeId x, NodeId v) {
    const Tensor& tx = nodes_[x].value;
    const Tensor& tv = nodes_[v].value;
    if (tv.numel() != tx.cols())
      throw DimensionError("mul_rowvec: vector length != row width");
    Node node;
    node.op = Op::kMulRowVec;
    node.a = x;
    node.b = v;
    node.value = tx;
    size_t B = tx.rows(), w = tx.cols();
    for (size_t r = 0; r < B; ++r)
      for (size_t j = 0; j < w; ++j) node.value.data[r * w + j] *= tv.data[j];
    return push(std::move(node));
  }

  // X[B x w] scaled per row by s[B] (or [B x 1])
  NodeId scale_rows(NodeId x, NodeId s) {
    const Tensor& tx = nodes_[x].value;
    const Tensor& ts = nodes_[s].value;
    if (ts.numel() != tx.rows())
      throw DimensionError("scale_rows: scale length != batch rows");
    Node node;
    node.op = Op::kScaleRows;
    node.a = x;
    node.b = s;
    node.value = tx;
    size_t B = tx.rows(), w = tx.cols();
    for (size_t r = 0; r < B; ++r) {
      double sv = ts.data[r];
      for (size_t j = 0; j < w; ++j) node.value.data[r * w + j] *= sv;
    }
    return push(std::move(node));
  }

  NodeId sigmoid(NodeId a) {
    Node node;
    node.op = Op::kSigmoid;
    node.a = a;
    node.value = nodes_[a].value;
    for (double& v : node.value.data) v = stable_sigmoid(v);
    return push(std::move(node));
  }

  NodeId leaky_relu(NodeId a, double slope) {
    Node node;
    node.op = Op::kLeakyRelu;
    node.a = a;
    node.scalar = slope;
    node.value = nodes_[a].value;
    for (double& v : node.value.data)
      if (v < 0.0) v *= slope;
    return push(std::move(node));
  }

  NodeId scalar_mul(NodeId a, double c) {
    Node node;
    node.op = Op::kScalarMul;
    node.a = a;
    node.scalar = c;
    node.value = nodes_[a].value;
    for (double& v : node.value.data) v *= c;
    return push(std::move(node));
  }

  // axis 0 stacks rows, axis 1 stacks columns; non-concat extents must agree
  NodeId concat(const std::vector<NodeId>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no parts");
    if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
    if (parts.size() == 1) return parts[0];
    size_t rows = nodes_[parts[0]].value.rows();
    size_t cols = nodes_[parts[0]].value.cols();
    size_t total = 0;
    for (NodeId p : parts) {
      const Tensor& t = nodes_[p].value;
      if (axis == 1 && t.rows() != rows)
        throw DimensionError("concat axis 1: row counts differ");
      if (axis == 0 && t.cols() != cols)
        throw DimensionError("concat axis 0: column counts differ");
      total += axis == 1 ? t.cols() : t.rows();
    }
    Node node;
    node.op = Op::kConcat;
    node.i0 = axis;
    node.parts = parts;
    if (axis == 1) {
      node.value = Tensor({rows, total});
      size_t off = 0;
      for (NodeId p : parts) {
        const Tensor& t = nodes_[p].value;
        size_t w = t.cols();
        for (size_t r = 0; r < rows; ++r)
          std::copy_n(t.data.data() + r * w, w, node.value.data.data() + r * total + off);
        off += w;
      }
    } else {
      node.value = Tensor({total, cols});
      size_t off = 0;
      for (NodeId p : parts) {
        const Tensor& t = nodes_[p].value;
        std::copy_n(t.data.data(), t.numel(), node.value.data.data() + off * cols);
        off += t.rows();
      }
    }
    return push(std::move(node));
  }

  NodeId slice_cols(NodeId a, size_t lo, size_t hi) {
    const Tensor& t = nodes_[a].value;
    if (lo >= hi || hi > t.cols()) throw DimensionError("slice_cols: bad range");
    Node node;
    node.op = Op::kSliceCols;
    node.a = a;
    node.i0 = int(lo);
    node.i1 = int(hi);
    size_t B = t.rows(), w = t.cols(), out = hi - lo;
    node.value = Tensor({B, out});
    for (size_t r = 0; r < B; ++r)
      std::copy_n(t.data.data() + r * w + lo, out, node.value.data.data() + r * out);
    return push(std::move(node));
  }

  NodeId reshape(NodeId a, Shape s) {
    const Tensor& t = nodes_[a].value;
    if (shape_numel(s) != t.numel()) {
      throw DimensionError("reshape: element count mismatch " + shape_str(t.shape) +
                           " -> " + shape_str(s));
    }
    Node node;
    node.op = Op::kReshape;
    node.a = a;
    node.value = Tensor(std::move(s), t.data);
    return push(std::move(node));
  }

  NodeId reduce_sum(NodeId a) {
    Node node;
    node.op = Op::kReduceSum;
    node.a = a;
    double acc = 0.0;
    for (double v : nodes_[a].value.data) acc += v;
    node.value = Tensor::scalar(acc);
    return push(std::move(node));
  }

  NodeId reduce_mean(NodeId a) {
    Node node;
    node.op = Op::kReduceMean;
    node.a = a;
    double acc = 0.0;
    for (double v : nodes_[a].value.data) acc += v;
    node.value = Tensor::scalar(acc / double(nodes_[a].value.numel()));
    return push(std::move(node));
  }

  // Per-row matrix-vector product: row r of wflat holds a [p x q] matrix,
  // applied to row r of x[B x q]. Realizes per-sample generated weights.
  NodeId rowwise_matvec(NodeId wflat, NodeId x, size_t p, size_t q) {
    const Tensor& tw = nodes_[wflat].value;
    const Tensor& tx = nodes_[x].value;
    if (tw.cols() != p * q)
      throw DimensionError("rowwise_matvec: flat width != p*q");
    if (tx.cols() != q)
      throw DimensionError("rowwise_matvec: input width != q");
    if (tw.rows() != tx.rows())
      throw DimensionError("rowwise_matvec: batch sizes differ");
    size_t B = tx.rows();
    Node node;
    node.op = Op::kRowwiseMatvec;
    node.a = wflat;
    node.b = x;
    node.i0 = int(p);
    node.i1 = int(q);
    node.value = Tensor({B, p});
    const double* W = tw.data.data();
    const double* X = tx.data.data();
    double* Y = node.value.data.data();
    for (size_t r = 0; r < B; ++r) {
      const double* wr = W + r * p * q;
      const double* xr = X + r * q;
      double* yr = Y + r * p;
      for (size_t i = 0; i < p; ++i) {
        const double* wrow = wr + i * q;
        double acc = 0.0;
        for (size_t j = 0; j < q; ++j) acc += wrow[j] * xr[j];
        yr[i] = acc;
      }
    }
    return push(std::move(node));
  }

  // Embedding lookup: table[D x N], ids laid out row-major [B x k].
  // Output row r is the concatenation of the k id embeddings, each length D.
  NodeId gather_concat(NodeId table, std::vector<int64_t> ids, size_t batch, size_t k) {
    const Tensor& te = nodes_[table].value;
    if (te.ndim() != 2) throw DimensionError("gather_concat: table must be 2-D");
    if (ids.size() != batch * k) throw DimensionError("gather_concat: ids size mismatch");
    size_t D = te.rows(), N = te.cols();
    for (int64_t id : ids)
      if (id < 0 || size_t(id) >= N)
        throw DimensionError("gather_concat: id out of range");
    Node node;
    node.op = Op::kGatherConcat;
    node.a = table;
    node.i0 = int(k);
    node.idx = std::move(ids);
    node.value = Tensor({batch, k * D});
    const double* E = te.data.data();
    double* Y = node.value.data.data();
    for (size_t r = 0; r < batch; ++r) {
      for (size_t j = 0; j < k; ++j) {
        int64_t id = node.idx[r * k + j];
        double* dst = Y + r * k * D + j * D;
        for (size_t d = 0; d < D; ++d) dst[d] = E[d * N + size_t(id)];
      }
    }
    return push(std::move(node));
  }

  // Mean-pooled event embeddings. Events for row r occupy
  // idx[offsets[r]*slots .. offsets[r+1]*slots); each event contributes the
  // concatenation of its `slots` feature embeddings. Rows without events
  // yield zeros.
  NodeId gather_pool(NodeId table, std::vector<int64_t> flat_ids,
                     std::vector<int64_t> offsets, size_t slots) {
    const Tensor& te = nodes_[table].value;
    if (te.ndim() != 2) throw DimensionError("gather_pool: table must be 2-D");
    if (offsets.size() < 2) throw DimensionError("gather_pool: offsets must cover >= 1 row");
    size_t D = te.rows(), N = te.cols();
    size_t batch = offsets.size() - 1;
    if (size_t(offsets.back()) * slots != flat_ids.size())
      throw DimensionError("gather_pool: ids size mismatch");
    for (int64_t id : flat_ids)
      if (id < 0 || size_t(id) >= N)
        throw DimensionError("gather_pool: id out of range");
    Node node;
    node.op = Op::kGatherPool;
    node.a = table;
    node.i0 = int(slots);
    node.idx = std::move(flat_ids);
    node.aux.assign(offsets.begin(), offsets.end());
    node.value = Tensor({batch, slots * D});
    const double* E = te.data.data();
    double* Y = node.value.data.data();
    for (size_t r = 0; r < batch; ++r) {
      int64_t lo = offsets[r], hi = offsets[r + 1];
      if (hi <= lo) continue;
      double inv = 1.0 / double(hi - lo);
      double* yr = Y + r * slots * D;
      for (int64_t e = lo; e < hi; ++e) {
        for (size_t s = 0; s < slots; ++s) {
          int64_t id = node.idx[size_t(e) * slots + s];
          const double* col = E + size_t(id);
          double* dst = yr + s * D;
          for (size_t d = 0; d < D; ++d) dst[d] += col[d * N];
        }
      }
      for (size_t j = 0; j < slots * D; ++j) yr[j] *= inv;
    }
    return push(std::move(node));
  }

  // Normalization without the affine part: (x - mu) / sqrt(var + eps).
  // Train mode uses batch statistics (biased variance) and, when
  // update_stats, folds them into the running estimates; eval mode uses the
  // running estimates.
  NodeId batch_norm(NodeId x, BnState& state, bool train, bool update_stats) {
    const Tensor& tx = nodes_[x].value;
    size_t B = tx.rows(), w = tx.cols();
    if (state.running_mean.numel() != w)
      throw DimensionError("batch_norm: state width mismatch");
    if (train && B < 2)
      throw Error(ErrorCategory::kUsage, "batch_norm: train mode requires batch size >= 2");
    Node node;
    node.op = Op::kBatchNorm;
    node.a = x;
    node.bn = &state;
    node.i0 = train ? 1 : 0;
    node.value = Tensor({B, w});
    node.aux.resize(2 * w);  // mean, inv_std
    double* mean = node.aux.data();
    double* inv_std = node.aux.data() + w;
    if (train) {
      for (size_t j = 0; j < w; ++j) {
        double m = 0.0;
        for (size_t r = 0; r < B; ++r) m += tx.data[r * w + j];
        m /= double(B);
        double v = 0.0;
        for (size_t r = 0; r < B; ++r) {
          double d = tx.data[r * w + j] - m;
          v += d * d;
        }
        v /= double(B);
        mean[j] = m;
        inv_std[j] = 1.0 / std::sqrt(v + state.eps);
        if (update_stats) {
          state.running_mean.data[j] =
              state.momentum * state.running_mean.data[j] + (1.0 - state.momentum) * m;
          state.running_var.data[j] =
              state.momentum * state.running_var.data[j] + (1.0 - state.momentum) * v;
        }
      }
    } else {
      for (size_t j = 0; j < w; ++j) {
        mean[j] = state.running_mean.data[j];
        inv_std[j] = 1.0 / std::sqrt(state.running_var.data[j] + state.eps);
      }
    }
    for (size_t r = 0; r < B; ++r)
      for (size_t j = 0; j < w; ++j)
        node.value.data[r * w + j] = (tx.data[r * w + j] - mean[j]) * inv_std[j];
    return push(std::move(node));
  }

  // Mean binary cross-entropy over the batch. Predictions are clamped to
  // [1e-7, 1-1e-7] before the log; labels must be exactly 0 or 1.
  NodeId bce_mean(NodeId p, const std::vector<double>& labels) {
    const Tensor& tp = nodes_[p].value;
    if (tp.numel() != labels.size())
      throw DimensionError("bce_mean: prediction/label count mismatch");
    for (double y : labels)
      if (y != 0.0 && y != 1.0)
        throw DataError("bce_mean: label outside {0,1}");
    Node node;
    node.op = Op::kBceMean;
    node.a = p;
    node.aux = labels;
    double acc = 0.0;
    size_t B = labels.size();
    for (size_t i = 0; i < B; ++i) {
      double pi = clamp_prob(tp.data[i]);
      double y = labels[i];
      acc += -y * std::log(pi) - (1.0 - y) * std::log(1.0 - pi);
    }
    node.value = Tensor::scalar(acc / double(B));
    return push(std::move(node));
  }

  // Accumulate d(loss)/d(leaf) into every trainable ancestor of `loss`,
  // adding into Parameter::grad for parameter leaves.
  void backward(NodeId loss) {
    const Tensor& lt = nodes_[loss].value;
    if (!lt.is_scalar())
      throw Error(ErrorCategory::kUsage, "backward: loss must be scalar, got " +
                                             shape_str(lt.shape));
    // mark the ancestry of the loss so unrelated nodes are skipped
    std::vector<char> needed(nodes_.size(), 0);
    std::vector<NodeId> stack{loss};
    needed[loss] = 1;
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      const Node& n = nodes_[id];
      auto visit = [&](NodeId in) {
        if (in >= 0 && !needed[in]) {
          needed[in] = 1;
          stack.push_back(in);
        }
      };
      visit(n.a);
      visit(n.b);
      visit(n.c);
      for (NodeId p : n.parts) visit(p);
    }
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (needed[i]) nodes_[i].grad = Tensor::zeros(nodes_[i].value.shape);
    nodes_[loss].grad.data[0] = 1.0;

    for (int id = int(nodes_.size()) - 1; id >= 0; --id) {
      if (!needed[id]) continue;
      backward_node(nodes_[id]);
    }
    for (size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (needed[i] && n.op == Op::kLeaf && n.param != nullptr) {
        for (size_t j = 0; j < n.grad.data.size(); ++j)
          n.param->grad.data[j] += n.grad.data[j];
      }
    }
  }

  static double stable_sigmoid(double x) {
    if (x >= 0.0) {
      return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
  }

  static double clamp_prob(double p) {
    const double lo = 1e-7, hi = 1.0 - 1e-7;
    return p < lo ? lo : (p > hi ? hi : p);
  }

 private:
  NodeId push(Node n) {
    if (!n.value.all_finite()) {
      throw NumericError("non-finite value produced by op #" +
                         std::to_string(int(n.op)) + " at node " +
                         std::to_string(nodes_.size()));
    }
    nodes_.push_back(std::move(n));
    return NodeId(nodes_.size() - 1);
  }

  void backward_node(Node& n) {
    const std::vector<double>& g = n.grad.data;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kMatmul: {
        const Tensor& ta = nodes_[n.a].value;
        const Tensor& tb = nodes_[n.b].value;
        size_t m = ta.rows(), k = ta.cols(), nn = tb.cols();
        double* dA = nodes_[n.a].grad.data.data();
        double* dB = nodes_[n.b].grad.data.data();
        const double* A = ta.data.data();
        const double* B = tb.data.data();
        const double* dC = g.data();
        for (size_t i = 0; i < m; ++i) {
          for (size_t kk = 0; kk < k; ++kk) {
            const double* brow = B + kk * nn;
            const double* gr = dC + i * nn;
            double acc = 0.0;
            for (size_t j = 0; j < nn; ++j) acc += gr[j] * brow[j];
            dA[i * k + kk] += acc;
          }
        }
        for (size_t i = 0; i < m; ++i) {
          for (size_t kk = 0; kk < k; ++kk) {
            double av = A[i * k + kk];
            if (av == 0.0) continue;
            const double* gr = dC + i * nn;
            double* dbrow = dB + kk * nn;
            for (size_t j = 0; j < nn; ++j) dbrow[j] += av * gr[j];
          }
        }
        break;
      }
      case Op::kLinear: {
        const Tensor& tx = nodes_[n.a].value;
        const Tensor& tw = nodes_[n.b].value;
        size_t B = tx.rows(), in = tx.cols(), out = tw.rows();
        double* dX = nodes_[n.a].grad.data.data();
        double* dW = nodes_[n.b].grad.data.data();
        const double* X = tx.data.data();
        const double* W = tw.data.data();
        const double* dY = g.data();
        for (size_t r = 0; r < B; ++r) {
          const double* gr = dY + r * out;
          const double* xr = X + r * in;
          double* dxr = dX + r * in;
          for (size_t o = 0; o < out; ++o) {
            double gv = gr[o];
            if (gv == 0.0) continue;
            const double* wr = W + o * in;
            double* dwr = dW + o * in;
            for (size_t i = 0; i < in; ++i) {
              dxr[i] += gv * wr[i];
              dwr[i] += gv * xr[i];
            }
          }
        }
        if (n.c >= 0) {
          double* db = nodes_[n.c].grad.data.data();
          for (size_t r = 0; r < B; ++r)
            for (size_t o = 0; o < out; ++o) db[o] += dY[r * out + o];
        }
        break;
      }
      case Op::kAdd: {
        double* da = nodes_[n.a].grad.data.data();
        double* db = nodes_[n.b].grad.data.data();
        for (size_t i = 0; i < g.size(); ++i) {
          da[i] += g[i];
          db[i] += g[i];
        }
        break;
      }
      case Op::kHadamard: {
        const std::vector<double>& av = nodes_[n.a].value.data;
        const std::vector<double>& bv = nodes_[n.b].value.data;
        double* da = nodes_[n.a].grad.data.data();
        double* db = nodes_[n.b].grad.data.data();
        for (size_t i = 0; i < g.size(); ++i) {
          da[i] += g[i] * bv[i];
          db[i] += g[i] * av[i];
        }
        break;
      }
      case Op::kAddRowVec: {
        size_t B = n.value.rows(), w = n.value.cols();
        double* dx = nodes_[n.a].grad.data.data();
        double* dv = nodes_[n.b].grad.data.data();
        for (size_t r = 0; r < B; ++r)
          for (size_t j = 0; j < w; ++j) {
            dx[r * w + j] += g[r * w + j];
            dv[j] += g[r * w + j];
          }
        break;
      }
      case Op::kMulRowVec: {
        size_t B = n.value.rows(), w = n.value.cols();
        const std::vector<double>& xv = nodes_[n.a].value.data;
        const std::vector<double>& vv = nodes_[n.b].value.data;
        double* dx = nodes_[n.a].grad.data.data();
        double* dv = nodes_[n.b].grad.data.data();
        for (size_t r = 0; r < B; ++r)
          for (size_t j = 0; j < w; ++j) {
            dx[r * w + j] += g[r * w + j] * vv[j];
            dv[j] += g[r * w + j] * xv[r * w + j];
          }
        break;
      }
      case Op::kScaleRows: {
        size_t B = n.value.rows(), w = n.value.cols();
        const std::vector<double>& xv = nodes_[n.a].value.data;
        const std::vector<double>& sv = nodes_[n.b].value.data;
        double* dx = nodes_[n.a].grad.data.data();
        double* ds = nodes_[n.b].grad.data.data();
        for (size_t r = 0; r < B; ++r) {
          double acc = 0.0;
          for (size_t j = 0; j < w; ++j) {
            dx[r * w + j] += g[r * w + j] * sv[r];
            acc += g[r * w + j] * xv[r * w + j];
          }
          ds[r] += acc;
        }
        break;
      }
      case Op::kSigmoid: {
        const std::vector<double>& yv = n.value.data;
        double* da = nodes_[n.a].grad.data.data();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * yv[i] * (1.0 - yv[i]);
        break;
      }
      case Op::kLeakyRelu: {
        const std::vector<double>& xv = nodes_[n.a].value.data;
        double* da = nodes_[n.a].grad.data.data();
        for (size_t i = 0; i < g.size(); ++i)
          da[i] += g[i] * (xv[i] >= 0.0 ? 1.0 : n.scalar);
        break;
      }
      case Op::kScalarMul: {
        double* da = nodes_[n.a].grad.data.data();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.scalar;
        break;
      }
      case Op::kConcat: {
        size_t rows = n.value.rows(), total = n.value.cols();
        if (n.i0 == 1) {
          size_t off = 0;
          for (NodeId p : n.parts) {
            Tensor& pg = nodes_[p].grad;
            size_t w = nodes_[p].value.cols();
            for (size_t r = 0; r < rows; ++r)
              for (size_t j = 0; j < w; ++j)
                pg.data[r * w + j] += g[r * total + off + j];
            off += w;
          }
        } else {
          size_t off = 0;
          for (NodeId p : n.parts) {
            Tensor& pg = nodes_[p].grad;
            size_t cnt = nodes_[p].value.numel();
            for (size_t i = 0; i < cnt; ++i) pg.data[i] += g[off * total + i];
            off += nodes_[p].value.rows();
          }
        }
        break;
      }
      case Op::kSliceCols: {
        size_t B = n.value.rows(), out = n.value.cols();
        size_t w = nodes_[n.a].value.cols();
        double* da = nodes_[n.a].grad.data.data();
        for (size_t r = 0; r < B; ++r)
          for (size_t j = 0; j < out; ++j)
            da[r * w + size_t(n.i0) + j] += g[r * out + j];
        break;
      }
      case Op::kReshape: {
        double* da = nodes_[n.a].grad.data.data();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        break;
      }
      case Op::kReduceSum: {
        double* da = nodes_[n.a].grad.data.data();
        double gv = g[0];
        for (size_t i = 0; i < nodes_[n.a].value.numel(); ++i) da[i] += gv;
        break;
      }
      case Op::kReduceMean: {
        double* da = nodes_[n.a].grad.data.data();
        double gv = g[0] / double(nodes_[n.a].value.numel());
        for (size_t i = 0; i < nodes_[n.a].value.numel(); ++i) da[i] += gv;
        break;
      }
      case Op::kRowwiseMatvec: {
        size_t p = size_t(n.i0), q = size_t(n.i1);
        size_t B = n.value.rows();
        const double* W = nodes_[n.a].value.data.data();
        const double* X = nodes_[n.b].value.data.data();
        double* dW = nodes_[n.a].grad.data.data();
        double* dX = nodes_[n.b].grad.data.data();
        for (size_t r = 0; r < B; ++r) {
          const double* gr = g.data() + r * p;
          const double* wr = W + r * p * q;
          const double* xr = X + r * q;
          double* dwr = dW + r * p * q;
          double* dxr = dX + r * q;
          for (size_t i = 0; i < p; ++i) {
            double gv = gr[i];
            if (gv == 0.0) continue;
            const double* wrow = wr + i * q;
            double* dwrow = dwr + i * q;
            for (size_t j = 0; j < q; ++j) {
              dwrow[j] += gv * xr[j];
              dxr[j] += gv * wrow[j];
            }
          }
        }
        break;
      }
      case Op::kGatherConcat: {
        size_t k = size_t(n.i0);
        size_t N = nodes_[n.a].value.cols();
        size_t D = nodes_[n.a].value.rows();
        size_t B = n.value.rows();
        double* dE = nodes_[n.a].grad.data.data();
        for (size_t r = 0; r < B; ++r)
          for (size_t j = 0; j < k; ++j) {
            size_t id = size_t(n.idx[r * k + j]);
            const double* gsrc = g.data() + r * k * D + j * D;
            for (size_t d = 0; d < D; ++d) dE[d * N + id] += gsrc[d];
          }
        break;
      }
      case Op::kGatherPool: {
        size_t slots = size_t(n.i0);
        size_t N = nodes_[n.a].value.cols();
        size_t D = nodes_[n.a].value.rows();
        size_t B = n.value.rows();
        double* dE = nodes_[n.a].grad.data.data();
        for (size_t r = 0; r < B; ++r) {
          int64_t lo = int64_t(n.aux[r]), hi = int64_t(n.aux[r + 1]);
          if (hi <= lo) continue;
          double inv = 1.0 / double(hi - lo);
          const double* gr = g.data() + r * slots * D;
          for (int64_t e = lo; e < hi; ++e)
            for (size_t s = 0; s < slots; ++s) {
              size_t id = size_t(n.idx[size_t(e) * slots + s]);
              const double* gsrc = gr + s * D;
              for (size_t d = 0; d < D; ++d) dE[d * N + id] += inv * gsrc[d];
            }
        }
        break;
      }
      case Op::kBatchNorm: {
        size_t B = n.value.rows(), w = n.value.cols();
        const double* inv_std = n.aux.data() + w;
        double* dx = nodes_[n.a].grad.data.data();
        const std::vector<double>& xhat = n.value.data;
        if (n.i0 == 1) {
          // train mode: gradient flows through the batch statistics
          for (size_t j = 0; j < w; ++j) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (size_t r = 0; r < B; ++r) {
              sum_g += g[r * w + j];
              sum_gx += g[r * w + j] * xhat[r * w + j];
            }
            double mg = sum_g / double(B);
            double mgx = sum_gx / double(B);
            for (size_t r = 0; r < B; ++r)
              dx[r * w + j] += inv_std[j] * (g[r * w + j] - mg - xhat[r * w + j] * mgx);
          }
        } else {
          for (size_t r = 0; r < B; ++r)
            for (size_t j = 0; j < w; ++j) dx[r * w + j] += g[r * w + j] * inv_std[j];
        }
        break;
      }
      case Op::kBceMean: {
        size_t B = n.aux.size();
        const std::vector<double>& pv = nodes_[n.a].value.data;
        double* dp = nodes_[n.a].grad.data.data();
        double gv = g[0] / double(B);
        const double lo = 1e-7, hi = 1.0 - 1e-7;
        for (size_t i = 0; i < B; ++i) {
          double p = pv[i];
          if (p <= lo || p >= hi) continue;  // clamped flat region
          double y = n.aux[i];
          dp[i] += gv * (p - y) / (p * (1.0 - p));
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::map<Parameter*, NodeId> param_nodes_;
};

}  // namespace stctr
