#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "stctr/common.hpp"

namespace stctr {

struct ScoredRecord {
  double score = 0.0;
  int label = 0;
  int64_t time_period = 0;
  int64_t city = 0;
  int64_t request_id = 0;
  // stable tie-break key for NDCG; callers default it to input order
  int64_t item_key = 0;
};

// Mann-Whitney AUC via midranks: (sum of positive ranks - P(P+1)/2) / (P*N).
// Single-class input has no defined value.
inline std::optional<double> auc(const std::vector<ScoredRecord>& recs) {
  size_t n = recs.size();
  size_t pos = 0;
  for (const ScoredRecord& r : recs) pos += size_t(r.label == 1);
  size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return recs[a].score < recs[b].score; });

  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && recs[order[j + 1]].score == recs[order[i]].score) ++j;
    double midrank = (double(i + 1) + double(j + 1)) / 2.0;
    for (size_t t = i; t <= j; ++t)
      if (recs[order[t]].label == 1) pos_rank_sum += midrank;
    i = j + 1;
  }
  double P = double(pos), N = double(neg);
  return (pos_rank_sum - P * (P + 1.0) / 2.0) / (P * N);
}

struct GroupStat {
  int64_t key = 0;
  size_t impressions = 0;
  double auc = 0.0;
  bool valid = false;  // false when the group has a single class
};

enum class GroupKey { kTimePeriod, kCity };

// Impression-weighted average of per-group AUC; single-class groups are
// excluded from both sums but still listed. Weights are normalized before
// combining so a lone valid group reproduces its AUC exactly.
inline std::optional<double> grouped_auc(const std::vector<ScoredRecord>& recs,
                                         GroupKey key,
                                         std::vector<GroupStat>* stats = nullptr) {
  std::map<int64_t, std::vector<ScoredRecord>> groups;
  for (const ScoredRecord& r : recs)
    groups[key == GroupKey::kTimePeriod ? r.time_period : r.city].push_back(r);

  std::vector<GroupStat> local;
  double den = 0.0;
  for (const auto& [k, g] : groups) {
    GroupStat st;
    st.key = k;
    st.impressions = g.size();
    std::optional<double> a = auc(g);
    if (a) {
      st.valid = true;
      st.auc = *a;
      den += double(g.size());
    }
    local.push_back(st);
  }
  if (stats) *stats = local;
  if (den == 0.0) return std::nullopt;
  double acc = 0.0;
  for (const GroupStat& st : local)
    if (st.valid) acc += (double(st.impressions) / den) * st.auc;
  return acc;
}

// Mean NDCG@k over requests; binary gains, log2(position+1) discount, ties
// broken by ascending item_key. Requests without a positive are skipped.
inline std::optional<double> ndcg_at_k(const std::vector<ScoredRecord>& recs, size_t k) {
  std::map<int64_t, std::vector<const ScoredRecord*>> requests;
  for (const ScoredRecord& r : recs) requests[r.request_id].push_back(&r);

  double total = 0.0;
  size_t kept = 0;
  for (auto& [rid, items] : requests) {
    size_t pos = 0;
    for (const ScoredRecord* r : items) pos += size_t(r->label == 1);
    if (pos == 0) continue;
    std::sort(items.begin(), items.end(),
              [](const ScoredRecord* a, const ScoredRecord* b) {
                if (a->score != b->score) return a->score > b->score;
                return a->item_key < b->item_key;
              });
    double dcg = 0.0;
    for (size_t p = 0; p < std::min(k, items.size()); ++p)
      if (items[p]->label == 1) dcg += 1.0 / std::log2(double(p) + 2.0);
    double idcg = 0.0;
    for (size_t p = 0; p < std::min(k, pos); ++p)
      idcg += 1.0 / std::log2(double(p) + 2.0);
    total += dcg / idcg;
    ++kept;
  }
  if (kept == 0) return std::nullopt;
  return total / double(kept);
}

inline double logloss(const std::vector<ScoredRecord>& recs) {
  // summed in sorted order so record permutations cannot shift the rounding
  std::vector<double> losses;
  losses.reserve(recs.size());
  for (const ScoredRecord& r : recs) {
    double p = std::min(std::max(r.score, 1e-7), 1.0 - 1e-7);
    losses.push_back(r.label == 1 ? -std::log(p) : -std::log(1.0 - p));
  }
  std::sort(losses.begin(), losses.end());
  double acc = 0.0;
  for (double l : losses) acc += l;
  return acc / double(recs.size());
}

struct MetricReport {
  std::optional<double> auc, tauc, cauc, ndcg3, ndcg10;
  double logloss = 0.0;
  std::vector<GroupStat> period_groups;
  std::vector<GroupStat> city_groups;
};

inline MetricReport compute_metrics(const std::vector<ScoredRecord>& recs) {
  if (recs.empty()) throw DataError("metrics: no records");
  MetricReport rep;
  rep.auc = auc(recs);
  rep.tauc = grouped_auc(recs, GroupKey::kTimePeriod, &rep.period_groups);
  rep.cauc = grouped_auc(recs, GroupKey::kCity, &rep.city_groups);
  rep.ndcg3 = ndcg_at_k(recs, 3);
  rep.ndcg10 = ndcg_at_k(recs, 10);
  rep.logloss = logloss(recs);
  return rep;
}

}  // namespace stctr
