#pragma once

#include <map>
#include <string>
#include <vector>

#include "stctr/features.hpp"

namespace stctr {

// Accumulated gate weights, keyed by (field, time-period) and (field, city).
struct AlphaStats {
  struct Cell {
    double sum = 0.0;
    size_t count = 0;
    double mean() const { return count == 0 ? 0.0 : sum / double(count); }
  };
  // field index -> context key -> cell
  std::map<size_t, std::map<int64_t, Cell>> by_period;
  std::map<size_t, std::map<int64_t, Cell>> by_city;

  void add(size_t field, int64_t period, int64_t city, double alpha) {
    Cell& p = by_period[field][period];
    p.sum += alpha;
    ++p.count;
    Cell& c = by_city[field][city];
    c.sum += alpha;
    ++c.count;
  }

  void merge(const AlphaStats& other) {
    for (const auto& [f, keys] : other.by_period)
      for (const auto& [k, cell] : keys) {
        by_period[f][k].sum += cell.sum;
        by_period[f][k].count += cell.count;
      }
    for (const auto& [f, keys] : other.by_city)
      for (const auto& [k, cell] : keys) {
        by_city[f][k].sum += cell.sum;
        by_city[f][k].count += cell.count;
      }
  }

  bool empty() const { return by_period.empty() && by_city.empty(); }
};

// mean alpha per field for one time-period, ordered by field index; fields
// without gates are skipped
inline std::vector<double> period_alpha_row(const AlphaStats& st, int64_t period,
                                            const std::vector<size_t>& fields) {
  std::vector<double> row;
  for (size_t f : fields) {
    auto fit = st.by_period.find(f);
    if (fit == st.by_period.end()) {
      row.push_back(0.0);
      continue;
    }
    auto kit = fit->second.find(period);
    row.push_back(kit == fit->second.end() ? 0.0 : kit->second.mean());
  }
  return row;
}

}  // namespace stctr
