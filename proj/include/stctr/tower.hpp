#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stctr/graph.hpp"

namespace stctr {

// One hidden block: fusion BN then fusion FC then activation. The context
// representation h_c drives four small nets per block; multiplicative
// modulators go through 2*sigmoid (neutral 1 at zero init), additive ones are
// identity (neutral 0), so a zero-initialized block computes exactly the
// plain BN+FC it wraps.
struct TowerBlock {
  size_t in = 0, out = 0;
  // fusion BN over the block input
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* w_gamma = nullptr;
  Parameter* b_gamma = nullptr;
  Parameter* w_beta = nullptr;
  Parameter* b_beta = nullptr;
  std::unique_ptr<BnState> bn;
  // fusion FC
  Parameter* w_t = nullptr;
  Parameter* b_t = nullptr;
  Parameter* w_gain = nullptr;
  Parameter* b_gain = nullptr;
  Parameter* w_shift = nullptr;
  Parameter* b_shift = nullptr;
};

struct TowerConfig {
  std::vector<size_t> widths{256, 128, 64};
  double leaky_slope = 0.01;
  double bn_momentum = 0.99;
  double bn_eps = 1e-5;
};

struct Tower {
  TowerConfig cfg;
  std::vector<TowerBlock> blocks;
  Parameter* w_o = nullptr;
  Parameter* b_o = nullptr;

  static Tower create(ParameterStore& ps, size_t d_in, size_t ctx_width,
                      const TowerConfig& cfg, Rng& rng,
                      const std::string& prefix = "tower") {
    Tower t;
    t.cfg = cfg;
    size_t in = d_in;
    for (size_t m = 0; m < cfg.widths.size(); ++m) {
      size_t out = cfg.widths[m];
      std::string p = prefix + "." + std::to_string(m);
      TowerBlock blk;
      blk.in = in;
      blk.out = out;
      blk.gamma = &ps.add(p + ".bn.gamma", Tensor::full({in}, 1.0));
      blk.beta = &ps.add(p + ".bn.beta", Tensor::zeros({in}));
      blk.w_gamma = &ps.add(p + ".bn.w_gamma", Tensor::zeros({in, ctx_width}));
      blk.b_gamma = &ps.add(p + ".bn.b_gamma", Tensor::zeros({in}));
      blk.w_beta = &ps.add(p + ".bn.w_beta", Tensor::zeros({in, ctx_width}));
      blk.b_beta = &ps.add(p + ".bn.b_beta", Tensor::zeros({in}));
      blk.bn = std::make_unique<BnState>(in, cfg.bn_momentum, cfg.bn_eps);
      double bound = std::sqrt(6.0 / double(in + out));
      blk.w_t = &ps.add(p + ".fc.w", Tensor::uniform({out, in}, rng, -bound, bound));
      blk.b_t = &ps.add(p + ".fc.b", Tensor::zeros({out}));
      blk.w_gain = &ps.add(p + ".fc.w_gain", Tensor::zeros({out, ctx_width}));
      blk.b_gain = &ps.add(p + ".fc.b_gain", Tensor::zeros({out}));
      blk.w_shift = &ps.add(p + ".fc.w_shift", Tensor::zeros({out, ctx_width}));
      blk.b_shift = &ps.add(p + ".fc.b_shift", Tensor::zeros({out}));
      t.blocks.push_back(std::move(blk));
      in = out;
    }
    double bound = std::sqrt(6.0 / double(in + 1));
    t.w_o = &ps.add(prefix + ".head.w", Tensor::uniform({1, in}, rng, -bound, bound));
    t.b_o = &ps.add(prefix + ".head.b", Tensor::zeros({1}));
    return t;
  }
};

// out = gamma_bias (.) gamma (.) (x-mu)/sqrt(var+eps) + beta + beta_bias
inline NodeId fusion_bn_forward(Graph& g, const TowerBlock& blk, NodeId x, NodeId h_c,
                                bool modulated, bool train, bool update_stats) {
  NodeId xhat = g.batch_norm(x, *blk.bn, train, update_stats);
  NodeId scaled = g.mul_rowvec(xhat, g.param(*blk.gamma));
  if (modulated) {
    NodeId gb = g.scalar_mul(
        g.sigmoid(g.linear(h_c, g.param(*blk.w_gamma), g.param(*blk.b_gamma))), 2.0);
    scaled = g.hadamard(scaled, gb);
  }
  NodeId out = g.add_rowvec(scaled, g.param(*blk.beta));
  if (modulated) {
    NodeId bb = g.linear(h_c, g.param(*blk.w_beta), g.param(*blk.b_beta));
    out = g.add(out, bb);
  }
  return out;
}

// out = act((gain (.) W_t) * h_in + b_t + shift); gain is per output unit
inline NodeId fusion_fc_forward(Graph& g, const TowerBlock& blk, NodeId x, NodeId h_c,
                                bool modulated, double leaky_slope) {
  NodeId z = g.linear(x, g.param(*blk.w_t));
  if (modulated) {
    NodeId gain = g.scalar_mul(
        g.sigmoid(g.linear(h_c, g.param(*blk.w_gain), g.param(*blk.b_gain))), 2.0);
    z = g.hadamard(z, gain);
  }
  z = g.add_rowvec(z, g.param(*blk.b_t));
  if (modulated) {
    NodeId shift = g.linear(h_c, g.param(*blk.w_shift), g.param(*blk.b_shift));
    z = g.add(z, shift);
  }
  return g.leaky_relu(z, leaky_slope);
}

// full tower: hidden blocks then sigmoid head, yhat in (0,1), shape [B x 1]
inline NodeId tower_forward(Graph& g, const Tower& t, NodeId x, NodeId h_c,
                            bool modulated, bool train, bool update_stats) {
  NodeId h = x;
  for (const TowerBlock& blk : t.blocks) {
    h = fusion_bn_forward(g, blk, h, h_c, modulated, train, update_stats);
    h = fusion_fc_forward(g, blk, h, h_c, modulated, t.cfg.leaky_slope);
  }
  return g.sigmoid(g.linear(h, g.param(*t.w_o), g.param(*t.b_o)));
}

}  // namespace stctr
