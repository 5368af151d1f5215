#pragma once

#include <string>
#include <vector>

#include "stctr/features.hpp"
#include "stctr/gates.hpp"
#include "stctr/graph.hpp"
#include "stctr/meta_transform.hpp"
#include "stctr/schema.hpp"
#include "stctr/tower.hpp"

namespace stctr {

// Ablation variants. Every variant keeps identical tensor shapes at module
// boundaries: gates collapse to alpha=1, the meta transform is replaced by a
// static affine layer, tower modulation is simply dropped.
enum class Variant { kFull, kNoGates, kNoMeta, kNoModulation, kStatic };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoGates: return "no_gates";
    case Variant::kNoMeta: return "no_meta";
    case Variant::kNoModulation: return "no_modulation";
    case Variant::kStatic: return "static";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  for (Variant v : {Variant::kFull, Variant::kNoGates, Variant::kNoMeta,
                    Variant::kNoModulation, Variant::kStatic})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown variant: " + s);
}

struct ModelConfig {
  size_t meta_rank = 0;  // 0 = full-rank dynamic matrix
  double embed_init = 0.05;
  TowerConfig tower;
  uint64_t init_seed = 1;
};

// randomly initialized pieces (embedding table, tower trunk) consume the rng
// in a fixed order regardless of variant, so two variants with the same seed
// share their trunk initialization exactly
class Model {
 public:
  Model(const Vocabulary& vocab, const ModelConfig& cfg, Variant variant)
      : layout_(FieldLayout::from_vocab(vocab)), cfg_(cfg), variant_(variant) {
    Rng rng(cfg.init_seed);
    size_t D = layout_.D;
    size_t N = vocab.total_features();
    embed_ = &params_.add("embed",
                          Tensor::uniform({D, N}, rng, -cfg.embed_init, cfg.embed_init));
    size_t d = layout_.total_width;
    tower_ = Tower::create(params_, d, layout_.context_width, cfg.tower, rng);
    if (use_gates()) gates_ = GateLayer::create(params_, layout_);
    size_t meta_in = layout_.context_width + layout_.behavior_width;
    if (use_meta())
      meta_ = MetaNet::create(params_, meta_in, d, d, cfg.meta_rank, rng);
    else
      static_ = StaticTransform::create(params_, d);
  }

  bool use_gates() const {
    return variant_ == Variant::kFull || variant_ == Variant::kNoMeta ||
           variant_ == Variant::kNoModulation;
  }
  bool use_meta() const {
    return variant_ == Variant::kFull || variant_ == Variant::kNoGates ||
           variant_ == Variant::kNoModulation;
  }
  bool use_modulation() const {
    return variant_ == Variant::kFull || variant_ == Variant::kNoGates ||
           variant_ == Variant::kNoMeta;
  }

  struct Forward {
    NodeId yhat = -1;            // [B x 1]
    std::vector<NodeId> alphas;  // per field, -1 where ungated/ablated
  };

  Forward forward(Graph& g, const std::vector<const EncodedImpression*>& batch,
                  bool train, bool update_stats) {
    BatchEmbeddings emb = embed_batch(g, *embed_, layout_, batch);
    GateResult gr = apply_gates(g, gates_, layout_, emb, use_gates());
    NodeId h;
    if (use_meta()) {
      NodeId meta_in = g.concat({emb.x_c, emb.h_ui}, 1);
      h = meta_transform(g, meta_, meta_in, gr.h_hat);
    } else {
      h = static_transform(g, static_, gr.h_hat);
    }
    Forward out;
    out.yhat = tower_forward(g, tower_, h, emb.x_c, use_modulation(), train, update_stats);
    out.alphas = std::move(gr.alphas);
    return out;
  }

  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const FieldLayout& layout() const { return layout_; }
  const ModelConfig& config() const { return cfg_; }
  Variant variant() const { return variant_; }

  std::vector<BnState*> bn_states() {
    std::vector<BnState*> out;
    for (TowerBlock& blk : tower_.blocks) out.push_back(blk.bn.get());
    return out;
  }

 private:
  FieldLayout layout_;
  ModelConfig cfg_;
  Variant variant_;
  ParameterStore params_;
  Parameter* embed_ = nullptr;
  Tower tower_;
  GateLayer gates_;
  MetaNet meta_;
  StaticTransform static_;
};

}  // namespace stctr
