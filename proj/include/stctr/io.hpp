#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stctr/heatmap.hpp"
#include "stctr/metrics.hpp"
#include "stctr/synth.hpp"
#include "stctr/train.hpp"

namespace stctr {

// shortest representation that round-trips, locale-independent
inline std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_predictions_csv(const std::string& path,
                                  const std::vector<ScoredRecord>& recs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "request_id,time_period_id,city_id,label,score\n";
  for (const ScoredRecord& r : recs)
    out << r.request_id << "," << r.time_period << "," << r.city << "," << r.label
        << "," << fmt_double(r.score) << "\n";
}

// accepts an optional trailing item_id column; otherwise the line index is
// the stable tie-break key
inline std::vector<ScoredRecord> read_predictions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<ScoredRecord> recs;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("request_id", 0) == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5 && cells.size() != 6)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 5 or 6 columns");
    try {
      ScoredRecord r;
      r.request_id = std::stoll(cells[0]);
      r.time_period = std::stoll(cells[1]);
      r.city = std::stoll(cells[2]);
      r.label = std::stoi(cells[3]);
      r.score = std::stod(cells[4]);
      r.item_key = cells.size() == 6 ? std::stoll(cells[5]) : int64_t(recs.size());
      if (r.label != 0 && r.label != 1)
        throw DataError(path + ":" + std::to_string(lineno) + ": label must be 0 or 1");
      recs.push_back(r);
    } catch (const std::invalid_argument&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed number");
    } catch (const std::out_of_range&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": number out of range");
    }
  }
  return recs;
}

inline nlohmann::json metrics_to_json(const MetricReport& rep) {
  nlohmann::json j;
  auto put = [&](const char* name, const std::optional<double>& v) {
    if (v) j[name] = *v;
    else j[name] = nullptr;
  };
  put("auc", rep.auc);
  put("tauc", rep.tauc);
  put("cauc", rep.cauc);
  put("ndcg3", rep.ndcg3);
  put("ndcg10", rep.ndcg10);
  j["logloss"] = rep.logloss;
  auto groups = [&](const std::vector<GroupStat>& gs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const GroupStat& g : gs) {
      nlohmann::json gj;
      gj["key"] = g.key;
      gj["impressions"] = g.impressions;
      gj["valid"] = g.valid;
      if (g.valid) gj["auc"] = g.auc;
      arr.push_back(gj);
    }
    return arr;
  };
  j["time_period_groups"] = groups(rep.period_groups);
  j["city_groups"] = groups(rep.city_groups);
  return j;
}

inline void write_metrics_json(const std::string& path, const MetricReport& rep) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << metrics_to_json(rep).dump(2) << "\n";
}

inline void write_groups_csv(const std::string& path, const MetricReport& rep) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "group_type,key,impressions,valid,auc\n";
  for (const GroupStat& g : rep.period_groups)
    out << "time_period," << g.key << "," << g.impressions << "," << (g.valid ? 1 : 0)
        << "," << (g.valid ? fmt_double(g.auc) : "") << "\n";
  for (const GroupStat& g : rep.city_groups)
    out << "city," << g.key << "," << g.impressions << "," << (g.valid ? 1 : 0) << ","
        << (g.valid ? fmt_double(g.auc) : "") << "\n";
}

inline void write_curve_csv(const std::string& path, const std::vector<CurveRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "step,lr,train_loss,eval_auc,eval_tauc,eval_cauc,eval_logloss\n";
  for (const CurveRow& r : rows) {
    out << r.step << "," << fmt_double(r.lr) << "," << fmt_double(r.train_loss);
    if (r.eval) {
      auto opt = [&](const std::optional<double>& v) {
        return v ? fmt_double(*v) : std::string();
      };
      out << "," << opt(r.eval->auc) << "," << opt(r.eval->tauc) << ","
          << opt(r.eval->cauc) << "," << fmt_double(r.eval->logloss);
    } else {
      out << ",,,,";
    }
    out << "\n";
  }
}

inline void write_stats_csv(const std::string& path,
                            const std::vector<std::vector<CellStat>>& stats,
                            size_t time_periods) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "time_period_id,time_period_name,city_id,impressions,empirical_ctr,mean_planted_p\n";
  for (size_t t = 0; t < stats.size(); ++t) {
    for (size_t c = 0; c < stats[t].size(); ++c) {
      const CellStat& s = stats[t][c];
      out << t << "," << SynthGenerator::period_name(t, time_periods) << "," << c << ","
          << s.impressions;
      if (s.impressions > 0) {
        out << "," << fmt_double(double(s.clicks) / double(s.impressions)) << ","
            << fmt_double(s.p_sum / double(s.impressions));
      } else {
        out << ",,";
      }
      out << "\n";
    }
  }
}

// context_key is "time_period:<id>" or "city:<id>"
inline void write_heatmap_csv(const std::string& path, const AlphaStats& st,
                              const FieldLayout& layout) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "context_key,field_name,mean_alpha,count\n";
  for (const auto& [f, keys] : st.by_period)
    for (const auto& [k, cell] : keys)
      out << "time_period:" << k << "," << layout.fields[f].name << ","
          << fmt_double(cell.mean()) << "," << cell.count << "\n";
  for (const auto& [f, keys] : st.by_city)
    for (const auto& [k, cell] : keys)
      out << "city:" << k << "," << layout.fields[f].name << ","
          << fmt_double(cell.mean()) << "," << cell.count << "\n";
}

}  // namespace stctr
