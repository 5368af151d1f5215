#pragma once

// Shared hand-sized vocabulary and impression builders for the layer tests.

#include <string>
#include <vector>

#include <stctr/features.hpp>
#include <stctr/schema.hpp>

namespace fixtures {

inline stctr::Vocabulary tiny_vocab(size_t D) {
  std::vector<stctr::FieldSpec> fields;
  fields.push_back({"user", false, {{"uid", 10}, {"bucket", 6}}});
  fields.push_back({"behavior",
                    true,
                    {{"item", 12},
                     {"category", 5},
                     {"time_period", 6},
                     {"hour", 25},
                     {"city", 7},
                     {"geohash", 16}}});
  fields.push_back({"candidate", false, {{"item", 12}, {"category", 5}}});
  fields.push_back({"context", false,
                    {{"time_period", 6}, {"hour", 25}, {"city", 7}, {"geohash", 16}}});
  fields.push_back({"combine", false, {{"match", 8}}});
  return stctr::Vocabulary(D, 4, std::move(fields));
}

inline stctr::Impression random_impression(stctr::Rng& rng, int64_t request_id) {
  static const std::vector<std::string> spots = {"wx4g09", "wx4g55", "zz11aa",
                                                 "qq02bb", "wx4gzz"};
  stctr::Impression imp;
  imp.request_id = request_id;
  imp.label = rng.bernoulli(0.3) ? 1 : 0;
  imp.user = {int64_t(rng.uniform_index(9)), int64_t(rng.uniform_index(5))};
  imp.candidate = {int64_t(rng.uniform_index(11)), int64_t(rng.uniform_index(4))};
  imp.combine = {int64_t(rng.uniform_index(7))};
  imp.time_period = int64_t(rng.uniform_index(5));
  imp.hour = int64_t(rng.uniform_index(24));
  imp.city = int64_t(rng.uniform_index(6));
  imp.geohash = spots[rng.uniform_index(spots.size())];
  size_t events = rng.uniform_index(5);
  for (size_t e = 0; e < events; ++e) {
    stctr::BehaviorEvent ev;
    ev.item = int64_t(rng.uniform_index(11));
    ev.category = int64_t(rng.uniform_index(4));
    ev.time_period = int64_t(rng.uniform_index(5));
    ev.hour = int64_t(rng.uniform_index(24));
    ev.city = int64_t(rng.uniform_index(6));
    ev.geohash = spots[rng.uniform_index(spots.size())];
    imp.behaviors.push_back(std::move(ev));
  }
  return imp;
}

// vocabulary, encoder and an encoded random batch bundled so lifetimes line up
struct TinyBatch {
  stctr::Vocabulary vocab;
  stctr::Encoder enc;
  std::vector<stctr::EncodedImpression> encoded;
  std::vector<const stctr::EncodedImpression*> batch;

  TinyBatch(size_t D, size_t rows, uint64_t seed) : vocab(tiny_vocab(D)), enc(vocab) {
    stctr::Rng rng(seed);
    std::vector<stctr::Impression> imps;
    for (size_t i = 0; i < rows; ++i)
      imps.push_back(random_impression(rng, int64_t(i)));
    encoded = enc.encode_all(imps);
    for (const auto& e : encoded) batch.push_back(&e);
  }
};

}  // namespace fixtures
