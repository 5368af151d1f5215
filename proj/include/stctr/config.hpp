#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "stctr/model.hpp"
#include "stctr/optimizer.hpp"
#include "stctr/synth.hpp"

namespace stctr {

// Model hyperparameters as they appear in config files. Unlike ModelConfig
// this carries the embedding dim, which otherwise lives in the vocabulary.
struct ModelSettings {
  size_t embedding_dim = 8;
  size_t meta_rank = 0;  // 0 = full-rank dynamic matrix
  double embed_init = 0.05;
  std::vector<size_t> tower_widths{256, 128, 64};
  double leaky_slope = 0.01;
  double bn_momentum = 0.99;
  double bn_eps = 1e-5;
  uint64_t init_seed = 1;

  ModelConfig to_model_config() const {
    ModelConfig c;
    c.meta_rank = meta_rank;
    c.embed_init = embed_init;
    c.tower.widths = tower_widths;
    c.tower.leaky_slope = leaky_slope;
    c.tower.bn_momentum = bn_momentum;
    c.tower.bn_eps = bn_eps;
    c.init_seed = init_seed;
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["embedding_dim"] = embedding_dim;
    j["meta_rank"] = meta_rank;
    j["embed_init"] = embed_init;
    j["tower_widths"] = tower_widths;
    j["leaky_slope"] = leaky_slope;
    j["bn_momentum"] = bn_momentum;
    j["bn_eps"] = bn_eps;
    j["init_seed"] = init_seed;
    return j;
  }

  static ModelSettings from_json(const nlohmann::json& j) {
    ModelSettings s;
    s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
    s.meta_rank = j.value("meta_rank", s.meta_rank);
    s.embed_init = j.value("embed_init", s.embed_init);
    if (j.contains("tower_widths"))
      s.tower_widths = j.at("tower_widths").get<std::vector<size_t>>();
    s.leaky_slope = j.value("leaky_slope", s.leaky_slope);
    s.bn_momentum = j.value("bn_momentum", s.bn_momentum);
    s.bn_eps = j.value("bn_eps", s.bn_eps);
    s.init_seed = j.value("init_seed", s.init_seed);
    return s;
  }
};

// The single declarative config consumed by every subcommand; sections are
// optional and unknown keys inside them are ignored.
struct RunConfig {
  GenConfig gen;
  ModelSettings model;
  TrainConfig train;
  std::string variant = "full";
  size_t repeats = 5;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["gen"] = gen.to_json();
    j["model"] = model.to_json();
    j["train"] = train.to_json();
    j["variant"] = variant;
    j["repeats"] = repeats;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("gen")) c.gen = GenConfig::from_json(j.at("gen"));
    if (j.contains("model")) c.model = ModelSettings::from_json(j.at("model"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    c.variant = j.value("variant", c.variant);
    c.repeats = j.value("repeats", c.repeats);
    variant_from_name(c.variant);  // reject unknown names early
    return c;
  }
};

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: parse failed: ") + e.what());
  }
  return RunConfig::from_json(j);
}

}  // namespace stctr
