#pragma once

#include <string>
#include <vector>

#include "stctr/features.hpp"
#include "stctr/graph.hpp"

namespace stctr {

// Per-field gate attention: every non-context field j gets a scalar weight
// alpha_j = 2*sigmoid(W_p*[x_j; x_c] + b_p) in (0,2). The context field feeds
// every gate but is itself passed through unscaled.
struct GateLayer {
  std::vector<Parameter*> w;  // slot per field, null for context
  std::vector<Parameter*> b;

  // zero init: alpha = 1 everywhere, so training starts from the ungated model
  static GateLayer create(ParameterStore& ps, const FieldLayout& layout,
                          const std::string& prefix = "gate") {
    GateLayer gl;
    for (size_t fi = 0; fi < layout.fields.size(); ++fi) {
      if (fi == layout.context_index) {
        gl.w.push_back(nullptr);
        gl.b.push_back(nullptr);
        continue;
      }
      size_t in = layout.fields[fi].width + layout.context_width;
      gl.w.push_back(&ps.add(prefix + "." + layout.fields[fi].name + ".w",
                             Tensor::zeros({1, in})));
      gl.b.push_back(&ps.add(prefix + "." + layout.fields[fi].name + ".b",
                             Tensor::zeros({1})));
    }
    return gl;
  }
};

struct GateResult {
  NodeId h_hat = -1;           // concat of gated fields, context unscaled
  std::vector<NodeId> alphas;  // [B x 1] per field, -1 for context
};

// enabled=false realizes the ablated variant: alpha fixed at 1, so h_hat is
// the raw field concatenation
inline GateResult apply_gates(Graph& g, const GateLayer& gl, const FieldLayout& layout,
                              const BatchEmbeddings& emb, bool enabled) {
  GateResult res;
  std::vector<NodeId> parts;
  for (size_t fi = 0; fi < layout.fields.size(); ++fi) {
    if (!enabled || fi == layout.context_index) {
      parts.push_back(emb.fields[fi]);
      res.alphas.push_back(-1);
      continue;
    }
    NodeId gate_in = g.concat({emb.fields[fi], emb.x_c}, 1);
    NodeId logit = g.linear(gate_in, g.param(*gl.w[fi]), g.param(*gl.b[fi]));
    NodeId alpha = g.scalar_mul(g.sigmoid(logit), 2.0);
    parts.push_back(g.scale_rows(emb.fields[fi], alpha));
    res.alphas.push_back(alpha);
  }
  res.h_hat = g.concat(parts, 1);
  return res;
}

}  // namespace stctr
