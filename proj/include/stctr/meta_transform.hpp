#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "stctr/graph.hpp"

namespace stctr {

// Semantic transformation layer: a meta network turns the spatiotemporal
// summary [x_c; h_ui] into per-sample dynamic weights applied to h_hat.
//
// Full-rank mode generates the whole d_out x d_in matrix and starts as the
// exact identity (zero weights, bias = flattened I). Low-rank mode generates
// factors U:[d_out x r], V:[r x d_in] and applies them around a structural
// skip, h* = h_hat + U*V*h_hat + b_stl. With both factors at zero the product
// is a stationary point (each factor's gradient carries the other as a
// coefficient), so the U head's bias starts random while V stays zero: the
// transform is still an exact identity, but V has a live gradient path.
struct MetaNet {
  size_t d_in = 0, d_out = 0, rank = 0;  // rank 0 selects the full-rank path
  Parameter* w_w = nullptr;  // full-rank head
  Parameter* b_w = nullptr;
  Parameter* w_u = nullptr;  // low-rank heads
  Parameter* b_u = nullptr;
  Parameter* w_v = nullptr;
  Parameter* b_v = nullptr;
  Parameter* w_b = nullptr;  // dynamic bias head
  Parameter* b_b = nullptr;

  static MetaNet create(ParameterStore& ps, size_t meta_in, size_t d_in, size_t d_out,
                        size_t rank, Rng& rng, const std::string& prefix = "meta") {
    if (d_out != d_in)
      throw ConfigError("meta: d_out != d_in is unsupported (identity init and "
                        "shape-neutral ablation both require square transforms)");
    MetaNet m;
    m.d_in = d_in;
    m.d_out = d_out;
    m.rank = rank;
    if (rank == 0) {
      if (d_in > 256)
        throw ConfigError("meta: full-rank path limited to d_in <= 256; enable low rank");
      m.w_w = &ps.add(prefix + ".w_w", Tensor::zeros({d_out * d_in, meta_in}));
      Tensor ident = Tensor::identity(d_out);
      m.b_w = &ps.add(prefix + ".b_w", Tensor({d_out * d_in}, ident.data));
    } else {
      double bound = std::sqrt(6.0 / double(rank + d_out));
      m.w_u = &ps.add(prefix + ".w_u", Tensor::zeros({d_out * rank, meta_in}));
      m.b_u = &ps.add(prefix + ".b_u", Tensor::uniform({d_out * rank}, rng, -bound, bound));
      m.w_v = &ps.add(prefix + ".w_v", Tensor::zeros({rank * d_in, meta_in}));
      m.b_v = &ps.add(prefix + ".b_v", Tensor::zeros({rank * d_in}));
    }
    m.w_b = &ps.add(prefix + ".w_b", Tensor::zeros({d_out, meta_in}));
    m.b_b = &ps.add(prefix + ".b_b", Tensor::zeros({d_out}));
    return m;
  }
};

// batch transform: meta_in = concat(x_c, h_ui) per row, h_hat [B x d_in]
inline NodeId meta_transform(Graph& g, const MetaNet& m, NodeId meta_in, NodeId h_hat) {
  NodeId b_stl = g.linear(meta_in, g.param(*m.w_b), g.param(*m.b_b));
  if (m.rank == 0) {
    NodeId w_flat = g.linear(meta_in, g.param(*m.w_w), g.param(*m.b_w));
    NodeId wh = g.rowwise_matvec(w_flat, h_hat, m.d_out, m.d_in);
    return g.add(wh, b_stl);
  }
  NodeId u_flat = g.linear(meta_in, g.param(*m.w_u), g.param(*m.b_u));
  NodeId v_flat = g.linear(meta_in, g.param(*m.w_v), g.param(*m.b_v));
  NodeId vh = g.rowwise_matvec(v_flat, h_hat, m.rank, m.d_in);
  NodeId uvh = g.rowwise_matvec(u_flat, vh, m.d_out, m.rank);
  return g.add(g.add(h_hat, uvh), b_stl);
}

// single-sample view of the effective generated transform, for inspection
// and tests: h* = w_stl * h_hat + b_stl in both modes (the low-rank skip
// contributes the identity term)
struct MetaParams {
  Tensor w_stl;  // [d_out x d_in]
  Tensor b_stl;  // [d_out]
};

inline MetaParams meta_generate(const MetaNet& m, const Tensor& meta_in) {
  Graph g;
  NodeId in = g.input(Tensor({1, meta_in.numel()}, meta_in.data));
  NodeId b = g.linear(in, g.param(*m.w_b), g.param(*m.b_b));
  MetaParams out;
  out.b_stl = Tensor({m.d_out}, g.value(b).data);
  if (m.rank == 0) {
    NodeId w = g.linear(in, g.param(*m.w_w), g.param(*m.b_w));
    out.w_stl = Tensor({m.d_out, m.d_in}, g.value(w).data);
  } else {
    NodeId u = g.linear(in, g.param(*m.w_u), g.param(*m.b_u));
    NodeId v = g.linear(in, g.param(*m.w_v), g.param(*m.b_v));
    NodeId uv = g.matmul(g.reshape(u, {m.d_out, m.rank}), g.reshape(v, {m.rank, m.d_in}));
    out.w_stl = g.value(uv);
    for (size_t i = 0; i < std::min(m.d_out, m.d_in); ++i)
      out.w_stl.data[i * m.d_in + i] += 1.0;
  }
  return out;
}

// ablation stand-in: one static affine layer of the same shape, identity at init
struct StaticTransform {
  Parameter* w = nullptr;
  Parameter* b = nullptr;

  static StaticTransform create(ParameterStore& ps, size_t d, const std::string& prefix = "meta_static") {
    StaticTransform st;
    st.w = &ps.add(prefix + ".w", Tensor::identity(d));
    st.b = &ps.add(prefix + ".b", Tensor::zeros({d}));
    return st;
  }
};

inline NodeId static_transform(Graph& g, const StaticTransform& st, NodeId h_hat) {
  return g.linear(h_hat, g.param(*st.w), g.param(*st.b));
}

}  // namespace stctr
