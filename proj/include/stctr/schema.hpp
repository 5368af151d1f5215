#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stctr/common.hpp"

namespace stctr {

// One categorical id space inside a field. Local id 0 is reserved for
// out-of-vocabulary in every slot, so `cardinality` counts natural values
// plus the reserved slot. Raw data carries natural values; lookup shifts by
// one (value v -> local id v+1).
struct SlotSpec {
  std::string name;
  int64_t cardinality = 0;
};

struct FieldSpec {
  std::string name;
  bool events = false;  // true for the pooled behavior-sequence field
  std::vector<SlotSpec> slots;
};

// Field/slot declaration plus derived global id offsets. Each slot owns a
// disjoint range of the embedding table's columns.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(size_t embedding_dim, size_t geohash_prefix, std::vector<FieldSpec> fields)
      : embedding_dim_(embedding_dim),
        geohash_prefix_(geohash_prefix),
        fields_(std::move(fields)) {
    build_offsets();
  }

  size_t embedding_dim() const { return embedding_dim_; }
  size_t geohash_prefix() const { return geohash_prefix_; }
  const std::vector<FieldSpec>& fields() const { return fields_; }
  size_t total_features() const { return total_; }

  size_t field_index(const std::string& name) const {
    for (size_t i = 0; i < fields_.size(); ++i)
      if (fields_[i].name == name) return i;
    throw ConfigError("vocabulary: unknown field " + name);
  }

  // start of the slot's column range in the embedding table
  int64_t slot_offset(size_t field, size_t slot) const {
    return offsets_.at(field).at(slot);
  }

  // natural value -> global column id; anything out of range lands on the
  // slot's reserved id 0
  int64_t global_id(size_t field, size_t slot, int64_t natural, size_t* oov_counter) const {
    const SlotSpec& s = fields_[field].slots[slot];
    int64_t local = natural + 1;
    if (natural < 0 || local >= s.cardinality) {
      if (oov_counter) ++*oov_counter;
      local = 0;
    }
    return offsets_[field][slot] + local;
  }

  int64_t geohash_id(size_t field, size_t slot, const std::string& geohash,
                     size_t* oov_counter) const {
    const SlotSpec& s = fields_[field].slots[slot];
    if (geohash.empty()) {
      if (oov_counter) ++*oov_counter;
      return offsets_[field][slot];
    }
    uint64_t h = 1469598103934665603ull;
    size_t n = std::min(geohash.size(), geohash_prefix_);
    for (size_t i = 0; i < n; ++i) {
      h ^= uint64_t(uint8_t(geohash[i]));
      h *= 1099511628211ull;
    }
    int64_t local = 1 + int64_t(h % uint64_t(s.cardinality - 1));
    return offsets_[field][slot] + local;
  }

  nlohmann::json to_json() const {
    nlohmann::json fields = nlohmann::json::array();
    for (const FieldSpec& f : fields_) {
      nlohmann::json slots = nlohmann::json::array();
      for (const SlotSpec& s : f.slots) slots.push_back({s.name, s.cardinality});
      nlohmann::json jf;
      jf["name"] = f.name;
      jf["events"] = f.events;
      jf["slots"] = slots;
      fields.push_back(jf);
    }
    nlohmann::json j;
    j["embedding_dim"] = embedding_dim_;
    j["geohash_prefix_len"] = geohash_prefix_;
    j["fields"] = fields;
    return j;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    try {
      v.embedding_dim_ = j.at("embedding_dim").get<size_t>();
      v.geohash_prefix_ = j.at("geohash_prefix_len").get<size_t>();
      for (const auto& jf : j.at("fields")) {
        FieldSpec f;
        f.name = jf.at("name").get<std::string>();
        f.events = jf.value("events", false);
        for (const auto& js : jf.at("slots"))
          f.slots.push_back({js.at(0).get<std::string>(), js.at(1).get<int64_t>()});
        v.fields_.push_back(std::move(f));
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("vocabulary: malformed json: ") + e.what());
    }
    v.build_offsets();
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << to_json().dump(2) << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("vocabulary: parse failed: ") + e.what());
    }
    return from_json(j);
  }

 private:
  void build_offsets() {
    if (embedding_dim_ == 0) throw ConfigError("vocabulary: embedding_dim must be positive");
    offsets_.clear();
    int64_t off = 0;
    for (const FieldSpec& f : fields_) {
      if (f.slots.empty()) throw ConfigError("vocabulary: field without slots: " + f.name);
      std::vector<int64_t> fo;
      for (const SlotSpec& s : f.slots) {
        if (s.cardinality < 2)
          throw ConfigError("vocabulary: slot cardinality must be >= 2: " + s.name);
        fo.push_back(off);
        off += s.cardinality;
      }
      offsets_.push_back(std::move(fo));
    }
    total_ = size_t(off);
  }

  size_t embedding_dim_ = 0;
  size_t geohash_prefix_ = 4;
  std::vector<FieldSpec> fields_;
  std::vector<std::vector<int64_t>> offsets_;
  size_t total_ = 0;
};

struct BehaviorEvent {
  int64_t item = 0;
  int64_t category = 0;
  int64_t time_period = 0;
  int64_t hour = 0;
  int64_t city = 0;
  std::string geohash;
};

struct Impression {
  int64_t request_id = 0;
  int label = 0;
  std::vector<int64_t> user;
  std::vector<BehaviorEvent> behaviors;
  std::vector<int64_t> candidate;
  int64_t time_period = 0;
  int64_t hour = 0;
  int64_t city = 0;
  std::string geohash;
  std::vector<int64_t> combine;
};

// JSONL line layout:
// {"request_id":..,"label":..,"user":[..],"behaviors":[[item,cat,tp,hour,city,"gh"],..],
//  "candidate":[..],"context":[tp,hour,city,"gh"],"combine":[..]}
inline nlohmann::json impression_to_json(const Impression& imp) {
  nlohmann::json j;
  j["request_id"] = imp.request_id;
  j["label"] = imp.label;
  j["user"] = imp.user;
  nlohmann::json evs = nlohmann::json::array();
  for (const BehaviorEvent& e : imp.behaviors)
    evs.push_back({e.item, e.category, e.time_period, e.hour, e.city, e.geohash});
  j["behaviors"] = evs;
  j["candidate"] = imp.candidate;
  j["context"] = {imp.time_period, imp.hour, imp.city, imp.geohash};
  j["combine"] = imp.combine;
  return j;
}

struct ParseLimits {
  int64_t time_periods = 0;  // 0 disables the range check
  size_t max_behaviors = 0;  // 0 disables the length check
};

inline Impression impression_from_json(const nlohmann::json& j,
                                       const ParseLimits& limits = {}) {
  Impression imp;
  try {
    imp.request_id = j.at("request_id").get<int64_t>();
    imp.label = j.at("label").get<int>();
    imp.user = j.at("user").get<std::vector<int64_t>>();
    for (const auto& je : j.at("behaviors")) {
      BehaviorEvent e;
      e.item = je.at(0).get<int64_t>();
      e.category = je.at(1).get<int64_t>();
      e.time_period = je.at(2).get<int64_t>();
      e.hour = je.at(3).get<int64_t>();
      e.city = je.at(4).get<int64_t>();
      e.geohash = je.at(5).get<std::string>();
      imp.behaviors.push_back(std::move(e));
    }
    imp.candidate = j.at("candidate").get<std::vector<int64_t>>();
    const auto& ctx = j.at("context");
    imp.time_period = ctx.at(0).get<int64_t>();
    imp.hour = ctx.at(1).get<int64_t>();
    imp.city = ctx.at(2).get<int64_t>();
    imp.geohash = ctx.at(3).get<std::string>();
    imp.combine = j.at("combine").get<std::vector<int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("impression: malformed json: ") + e.what());
  }
  if (imp.label != 0 && imp.label != 1)
    throw DataError("impression " + std::to_string(imp.request_id) + ": label must be 0 or 1");
  if (imp.hour < 0 || imp.hour >= 24)
    throw DataError("impression " + std::to_string(imp.request_id) + ": hour out of range");
  if (limits.time_periods > 0 &&
      (imp.time_period < 0 || imp.time_period >= limits.time_periods))
    throw DataError("impression " + std::to_string(imp.request_id) +
                    ": time_period out of range");
  if (limits.max_behaviors > 0 && imp.behaviors.size() > limits.max_behaviors)
    throw DataError("impression " + std::to_string(imp.request_id) +
                    ": behavior sequence exceeds max length");
  return imp;
}

inline std::vector<Impression> load_jsonl(const std::string& path,
                                          const ParseLimits& limits = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<Impression> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(impression_from_json(j, limits));
  }
  return out;
}

inline void save_jsonl(const std::string& path, const std::vector<Impression>& imps) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const Impression& imp : imps) out << impression_to_json(imp).dump() << "\n";
}

}  // namespace stctr
