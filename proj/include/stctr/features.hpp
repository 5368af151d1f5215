#pragma once

#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "stctr/graph.hpp"
#include "stctr/schema.hpp"

namespace stctr {

// Per-field tensor widths derived from the vocabulary. The behavior field is
// mean-pooled over events, so its width is slots-per-event times D.
struct FieldLayout {
  struct Field {
    std::string name;
    bool events = false;
    size_t slot_count = 0;
    size_t width = 0;
  };
  size_t D = 0;
  std::vector<Field> fields;
  size_t context_index = 0;
  size_t behavior_index = 0;
  size_t total_width = 0;    // sum of widths across all fields, context included
  size_t context_width = 0;
  size_t behavior_width = 0;

  static FieldLayout from_vocab(const Vocabulary& vocab) {
    FieldLayout lay;
    lay.D = vocab.embedding_dim();
    bool saw_context = false, saw_behavior = false;
    for (size_t i = 0; i < vocab.fields().size(); ++i) {
      const FieldSpec& f = vocab.fields()[i];
      Field fl;
      fl.name = f.name;
      fl.events = f.events;
      fl.slot_count = f.slots.size();
      fl.width = f.slots.size() * lay.D;
      if (f.name == "context") {
        lay.context_index = i;
        lay.context_width = fl.width;
        saw_context = true;
      }
      if (f.events) {
        if (saw_behavior) throw ConfigError("layout: multiple event fields unsupported");
        lay.behavior_index = i;
        lay.behavior_width = fl.width;
        saw_behavior = true;
      }
      lay.total_width += fl.width;
      lay.fields.push_back(std::move(fl));
    }
    if (!saw_context) throw ConfigError("layout: vocabulary must declare a context field");
    if (!saw_behavior) throw ConfigError("layout: vocabulary must declare an event field");
    return lay;
  }
};

// events kept for h_ui: same time-period and geohash prefix as the request;
// none matching falls back to the whole sequence; empty stays empty
inline std::vector<size_t> matching_behaviors(const Impression& imp, size_t geo_prefix) {
  std::vector<size_t> keep;
  for (size_t i = 0; i < imp.behaviors.size(); ++i) {
    const BehaviorEvent& e = imp.behaviors[i];
    if (e.time_period != imp.time_period) continue;
    size_t n = geo_prefix;
    if (e.geohash.compare(0, n, imp.geohash, 0, n) != 0) continue;
    keep.push_back(i);
  }
  if (keep.empty() && !imp.behaviors.empty()) {
    keep.resize(imp.behaviors.size());
    for (size_t i = 0; i < keep.size(); ++i) keep[i] = i;
  }
  return keep;
}

// Impression with all ids resolved to embedding-table columns, ready for
// batch assembly. Filtering happens once here, not per step. Impressions of
// one request share their behavior id lists, which keeps large datasets
// memory-friendly.
struct EncodedImpression {
  int64_t request_id = 0;
  int label = 0;
  int64_t time_period = 0;
  int64_t city = 0;
  std::vector<int64_t> field_ids;  // non-event fields, concatenated slot ids
  std::shared_ptr<std::vector<int64_t>> beh_all;   // all events, slot-major
  std::shared_ptr<std::vector<int64_t>> beh_kept;  // filtered events (or fallback)
};

class Encoder {
 public:
  explicit Encoder(const Vocabulary& vocab)
      : vocab_(vocab), layout_(FieldLayout::from_vocab(vocab)) {}

  const FieldLayout& layout() const { return layout_; }
  const Vocabulary& vocab() const { return vocab_; }
  size_t oov_count() const { return oov_; }

  // `share_with` reuses the behavior id lists of a prior impression from the
  // same request instead of recomputing them
  EncodedImpression encode(const Impression& imp,
                           const EncodedImpression* share_with = nullptr) {
    EncodedImpression enc;
    enc.request_id = imp.request_id;
    enc.label = imp.label;
    enc.time_period = imp.time_period;
    enc.city = imp.city;
    for (size_t fi = 0; fi < vocab_.fields().size(); ++fi) {
      const FieldSpec& f = vocab_.fields()[fi];
      if (f.events) continue;
      for (size_t si = 0; si < f.slots.size(); ++si)
        enc.field_ids.push_back(resolve(imp, fi, si));
    }
    if (share_with && share_with->request_id == imp.request_id) {
      enc.beh_all = share_with->beh_all;
      enc.beh_kept = share_with->beh_kept;
      return enc;
    }
    size_t bfi = layout_.behavior_index;
    const FieldSpec& bf = vocab_.fields()[bfi];
    enc.beh_all = std::make_shared<std::vector<int64_t>>();
    enc.beh_kept = std::make_shared<std::vector<int64_t>>();
    for (const BehaviorEvent& e : imp.behaviors)
      append_event_ids(e, bfi, bf, *enc.beh_all);
    for (size_t idx : matching_behaviors(imp, vocab_.geohash_prefix()))
      append_event_ids(imp.behaviors[idx], bfi, bf, *enc.beh_kept);
    return enc;
  }

  std::vector<EncodedImpression> encode_all(const std::vector<Impression>& imps) {
    std::vector<EncodedImpression> out;
    out.reserve(imps.size());
    size_t before = oov_;
    for (const Impression& imp : imps)
      out.push_back(encode(imp, out.empty() ? nullptr : &out.back()));
    if (oov_ > before)
      std::fprintf(stderr, "encoder: %zu id(s) mapped to reserved OOV slot\n",
                   oov_ - before);
    return out;
  }

 private:
  // slot values for the non-event fields, in (field, slot) declaration order
  int64_t resolve(const Impression& imp, size_t fi, size_t si) {
    const FieldSpec& f = vocab_.fields()[fi];
    const std::string& slot = f.slots[si].name;
    if (f.name == "context") {
      if (slot == "geohash") return vocab_.geohash_id(fi, si, imp.geohash, &oov_);
      int64_t v = slot == "time_period" ? imp.time_period
                  : slot == "hour"      ? imp.hour
                  : slot == "city"      ? imp.city
                                        : throw_slot(f.name, slot);
      return vocab_.global_id(fi, si, v, &oov_);
    }
    const std::vector<int64_t>* src = nullptr;
    if (f.name == "user") src = &imp.user;
    else if (f.name == "candidate") src = &imp.candidate;
    else if (f.name == "combine") src = &imp.combine;
    else throw ConfigError("encoder: unsupported field " + f.name);
    if (si >= src->size())
      throw DataError("impression " + std::to_string(imp.request_id) + ": field " +
                      f.name + " has too few ids");
    return vocab_.global_id(fi, si, (*src)[si], &oov_);
  }

  void append_event_ids(const BehaviorEvent& e, size_t fi, const FieldSpec& f,
                        std::vector<int64_t>& out) {
    for (size_t si = 0; si < f.slots.size(); ++si) {
      const std::string& slot = f.slots[si].name;
      if (slot == "geohash") {
        out.push_back(vocab_.geohash_id(fi, si, e.geohash, &oov_));
        continue;
      }
      int64_t v = slot == "item"        ? e.item
                  : slot == "category"  ? e.category
                  : slot == "time_period" ? e.time_period
                  : slot == "hour"      ? e.hour
                  : slot == "city"      ? e.city
                                        : throw_slot(f.name, slot);
      out.push_back(vocab_.global_id(fi, si, v, &oov_));
    }
  }

  [[noreturn]] static int64_t throw_slot(const std::string& field, const std::string& slot) {
    throw ConfigError("encoder: field " + field + " has unsupported slot " + slot);
  }

  const Vocabulary& vocab_;
  FieldLayout layout_;
  size_t oov_ = 0;
};

// Streaming load-and-encode: raw impressions are dropped as soon as their ids
// are resolved, so peak memory stays near the encoded size.
inline std::vector<EncodedImpression> encode_jsonl(const std::string& path, Encoder& enc,
                                                   const ParseLimits& limits = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<EncodedImpression> out;
  std::string line;
  size_t lineno = 0;
  size_t oov_before = enc.oov_count();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    Impression imp = impression_from_json(j, limits);
    out.push_back(enc.encode(imp, out.empty() ? nullptr : &out.back()));
  }
  if (enc.oov_count() > oov_before)
    std::fprintf(stderr, "encoder: %zu id(s) mapped to reserved OOV slot\n",
                 enc.oov_count() - oov_before);
  return out;
}

// Graph nodes for one batch: per-field embeddings, the context field, and the
// filtered behavior summary h_ui.
struct BatchEmbeddings {
  std::vector<NodeId> fields;  // declaration order, behavior pooled
  NodeId x_c = -1;
  NodeId h_ui = -1;
};

// Assembles embedding lookups for a batch of encoded impressions against the
// shared table E[D x N].
inline BatchEmbeddings embed_batch(Graph& g, Parameter& table, const FieldLayout& layout,
                                   const std::vector<const EncodedImpression*>& batch) {
  size_t B = batch.size();
  if (B == 0) throw Error(ErrorCategory::kUsage, "embed_batch: empty batch");
  NodeId tab = g.param(table);
  BatchEmbeddings out;

  size_t flat_off = 0;
  for (size_t fi = 0; fi < layout.fields.size(); ++fi) {
    const FieldLayout::Field& f = layout.fields[fi];
    if (f.events) {
      std::vector<int64_t> ids;
      std::vector<int64_t> offsets(B + 1, 0);
      for (size_t r = 0; r < B; ++r) {
        const std::vector<int64_t>& ev = *batch[r]->beh_all;
        ids.insert(ids.end(), ev.begin(), ev.end());
        offsets[r + 1] = offsets[r] + int64_t(ev.size() / f.slot_count);
      }
      out.fields.push_back(g.gather_pool(tab, std::move(ids), std::move(offsets),
                                         f.slot_count));
      continue;
    }
    std::vector<int64_t> ids(B * f.slot_count);
    for (size_t r = 0; r < B; ++r)
      for (size_t s = 0; s < f.slot_count; ++s)
        ids[r * f.slot_count + s] = batch[r]->field_ids[flat_off + s];
    NodeId node = g.gather_concat(tab, std::move(ids), B, f.slot_count);
    if (fi == layout.context_index) out.x_c = node;
    out.fields.push_back(node);
    flat_off += f.slot_count;
  }

  {
    const FieldLayout::Field& f = layout.fields[layout.behavior_index];
    std::vector<int64_t> ids;
    std::vector<int64_t> offsets(B + 1, 0);
    for (size_t r = 0; r < B; ++r) {
      const std::vector<int64_t>& ev = *batch[r]->beh_kept;
      ids.insert(ids.end(), ev.begin(), ev.end());
      offsets[r + 1] = offsets[r] + int64_t(ev.size() / f.slot_count);
    }
    out.h_ui = g.gather_pool(tab, std::move(ids), std::move(offsets), f.slot_count);
  }
  return out;
}

}  // namespace stctr
