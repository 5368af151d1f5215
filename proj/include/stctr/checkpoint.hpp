#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "stctr/model.hpp"
#include "stctr/optimizer.hpp"

namespace stctr {

// structural identity of a model; a checkpoint only loads into a model whose
// descriptor matches exactly
inline nlohmann::json model_descriptor(const Model& model) {
  const ModelConfig& cfg = model.config();
  nlohmann::json j;
  j["variant"] = variant_name(model.variant());
  j["meta_rank"] = cfg.meta_rank;
  j["embed_init"] = cfg.embed_init;
  j["tower_widths"] = cfg.tower.widths;
  j["leaky_slope"] = cfg.tower.leaky_slope;
  j["bn_momentum"] = cfg.tower.bn_momentum;
  j["bn_eps"] = cfg.tower.bn_eps;
  j["init_seed"] = cfg.init_seed;
  j["embedding_dim"] = model.layout().D;
  nlohmann::json fields = nlohmann::json::array();
  for (const auto& f : model.layout().fields)
    fields.push_back({{"name", f.name}, {"width", f.width}, {"events", f.events}});
  j["fields"] = fields;
  return j;
}

// rebuilds the configuration a checkpoint was saved under, so tools can
// reconstruct the exact model without a separate config file
inline ModelConfig model_config_from_descriptor(const nlohmann::json& d,
                                                Variant* variant) {
  ModelConfig cfg;
  try {
    if (variant) *variant = variant_from_name(d.at("variant").get<std::string>());
    cfg.meta_rank = d.at("meta_rank").get<size_t>();
    cfg.embed_init = d.at("embed_init").get<double>();
    cfg.tower.widths = d.at("tower_widths").get<std::vector<size_t>>();
    cfg.tower.leaky_slope = d.at("leaky_slope").get<double>();
    cfg.tower.bn_momentum = d.at("bn_momentum").get<double>();
    cfg.tower.bn_eps = d.at("bn_eps").get<double>();
    cfg.init_seed = d.at("init_seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed model descriptor: ") + e.what());
  }
  return cfg;
}

inline nlohmann::json checkpoint_to_json(Model& model, const Adagrad* opt, size_t step) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["model"] = model_descriptor(model);
  j["step"] = step;
  nlohmann::json params;
  for (auto& p : model.params()) {
    nlohmann::json pj;
    pj["shape"] = p->value.shape;
    pj["data"] = p->value.data;
    params[p->name] = pj;
  }
  j["params"] = params;
  nlohmann::json bn = nlohmann::json::array();
  for (BnState* s : model.bn_states())
    bn.push_back({{"mean", s->running_mean.data}, {"var", s->running_var.data}});
  j["bn"] = bn;
  if (opt) {
    nlohmann::json acc;
    size_t i = 0;
    for (auto& p : model.params()) acc[p->name] = opt->accumulators()[i++].data;
    j["adagrad"] = acc;
  }
  return j;
}

inline void save_checkpoint(const std::string& path, Model& model, const Adagrad* opt,
                            size_t step) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << checkpoint_to_json(model, opt, step).dump(2) << "\n";
}

// restores parameters, BN statistics and (when present and requested)
// optimizer accumulators; returns the stored global step
inline size_t load_checkpoint_json(const nlohmann::json& j, Model& model, Adagrad* opt) {
  try {
    if (j.at("format_version").get<int>() != 1)
      throw ConfigError("checkpoint: unsupported format version");
    if (j.at("model") != model_descriptor(model))
      throw ConfigError("checkpoint: model configuration mismatch");
    const nlohmann::json& params = j.at("params");
    for (auto& p : model.params()) {
      const nlohmann::json& pj = params.at(p->name);
      Shape shape = pj.at("shape").get<Shape>();
      if (shape != p->value.shape)
        throw ConfigError("checkpoint: shape mismatch for " + p->name);
      p->value.data = pj.at("data").get<std::vector<double>>();
      if (p->value.data.size() != p->value.numel())
        throw DataError("checkpoint: data length mismatch for " + p->name);
    }
    const nlohmann::json& bn = j.at("bn");
    std::vector<BnState*> states = model.bn_states();
    if (bn.size() != states.size())
      throw ConfigError("checkpoint: batch-norm state count mismatch");
    for (size_t i = 0; i < states.size(); ++i) {
      states[i]->running_mean.data = bn[i].at("mean").get<std::vector<double>>();
      states[i]->running_var.data = bn[i].at("var").get<std::vector<double>>();
      if (states[i]->running_mean.data.size() != states[i]->running_mean.numel() ||
          states[i]->running_var.data.size() != states[i]->running_var.numel())
        throw DataError("checkpoint: batch-norm stat length mismatch");
    }
    if (opt) {
      if (!j.contains("adagrad"))
        throw ConfigError("checkpoint: no optimizer state stored");
      size_t i = 0;
      for (auto& p : model.params()) {
        opt->accumulators()[i].data =
            j.at("adagrad").at(p->name).get<std::vector<double>>();
        if (opt->accumulators()[i].data.size() != p->value.numel())
          throw DataError("checkpoint: optimizer state length mismatch for " + p->name);
        ++i;
      }
    }
    return j.at("step").get<size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed json: ") + e.what());
  }
}

inline size_t load_checkpoint(const std::string& path, Model& model, Adagrad* opt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: parse failed: ") + e.what());
  }
  return load_checkpoint_json(j, model, opt);
}

}  // namespace stctr
