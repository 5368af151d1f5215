#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stctr/common.hpp"
#include "stctr/graph.hpp"
#include "stctr/schema.hpp"

namespace stctr {

// Synthetic click-data generator. Per-(time-period, city) bias plus planted
// per-period field importances drive the click probability:
//
//   p = sigmoid(b[t][c] + sum_f phi[t][f] * s_f(u, v, t))
//
// where the per-field affinity scores s_f are bounded in [-1, 1] and each is
// observable through that field's features, so a model can only exploit
// phi[t][f] by actually reading field f.
struct GenConfig {
  size_t time_periods = 5;
  size_t cities = 32;
  size_t users = 2000;
  size_t items = 300;
  size_t categories = 20;
  size_t latent_dim = 8;
  double bias_amp = 1.0;
  std::vector<std::vector<double>> phi;  // T x 5 field weights; empty = default pattern
  size_t requests = 100000;
  size_t impressions_per_request = 10;
  size_t max_behaviors = 8;
  size_t profile_buckets = 16;
  size_t match_buckets = 16;
  size_t geohash_buckets = 1024;
  size_t geohash_prefix = 4;
  double zipf_exponent = 1.2;
  double travel_prob = 0.15;  // chance the request city is uniform instead of Zipf
  uint64_t seed = 1;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["time_periods"] = time_periods;
    j["cities"] = cities;
    j["users"] = users;
    j["items"] = items;
    j["categories"] = categories;
    j["latent_dim"] = latent_dim;
    j["bias_amp"] = bias_amp;
    j["phi"] = phi;
    j["requests"] = requests;
    j["impressions_per_request"] = impressions_per_request;
    j["max_behaviors"] = max_behaviors;
    j["profile_buckets"] = profile_buckets;
    j["match_buckets"] = match_buckets;
    j["geohash_buckets"] = geohash_buckets;
    j["geohash_prefix"] = geohash_prefix;
    j["zipf_exponent"] = zipf_exponent;
    j["travel_prob"] = travel_prob;
    j["seed"] = seed;
    return j;
  }

  static GenConfig from_json(const nlohmann::json& j) {
    GenConfig c;
    c.time_periods = j.value("time_periods", c.time_periods);
    c.cities = j.value("cities", c.cities);
    c.users = j.value("users", c.users);
    c.items = j.value("items", c.items);
    c.categories = j.value("categories", c.categories);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.bias_amp = j.value("bias_amp", c.bias_amp);
    if (j.contains("phi")) c.phi = j.at("phi").get<std::vector<std::vector<double>>>();
    c.requests = j.value("requests", c.requests);
    c.impressions_per_request = j.value("impressions_per_request", c.impressions_per_request);
    c.max_behaviors = j.value("max_behaviors", c.max_behaviors);
    c.profile_buckets = j.value("profile_buckets", c.profile_buckets);
    c.match_buckets = j.value("match_buckets", c.match_buckets);
    c.geohash_buckets = j.value("geohash_buckets", c.geohash_buckets);
    c.geohash_prefix = j.value("geohash_prefix", c.geohash_prefix);
    c.zipf_exponent = j.value("zipf_exponent", c.zipf_exponent);
    c.travel_prob = j.value("travel_prob", c.travel_prob);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

// field order for phi columns matches vocabulary declaration order
enum PlantedField { kFieldUser = 0, kFieldBehavior = 1, kFieldCandidate = 2,
                    kFieldContext = 3, kFieldCombine = 4 };
constexpr size_t kPlantedFields = 5;

// per-period weights over the gated fields, cycled across rows; the context
// column stays zero because context acts through b[t][c]
inline std::vector<std::vector<double>> default_phi(size_t T) {
  const double base[5][kPlantedFields] = {
      {1.00, 0.30, 0.60, 0.0, 0.05},
      {0.05, 1.00, 0.30, 0.0, 0.60},
      {0.60, 0.05, 1.00, 0.0, 0.30},
      {0.30, 0.60, 0.05, 0.0, 1.00},
      {0.60, 1.00, 0.05, 0.0, 0.30},
  };
  std::vector<std::vector<double>> phi(T);
  for (size_t t = 0; t < T; ++t)
    phi[t].assign(base[t % 5], base[t % 5] + kPlantedFields);
  return phi;
}

struct GroundTruth {
  GenConfig cfg;
  std::vector<std::vector<double>> z_u;   // users x latent_dim
  std::vector<std::vector<double>> z_v;   // items x latent_dim
  std::vector<double> dir_user, dir_item; // projection directions
  std::vector<std::vector<double>> bias;  // T x C
  std::vector<std::vector<double>> phi;   // T x kPlantedFields, row-normalized
  std::vector<int64_t> item_category;     // items
  // users x T bitmasks: which categories the user likes in that period. Each
  // mask holds exactly half the categories, so the behavior affinity is
  // balanced and only period-matched history reveals it.
  std::vector<std::vector<uint64_t>> pref_mask;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = cfg.to_json();
    j["z_u"] = z_u;
    j["z_v"] = z_v;
    j["dir_user"] = dir_user;
    j["dir_item"] = dir_item;
    j["bias"] = bias;
    j["phi"] = phi;
    j["item_category"] = item_category;
    j["pref_mask"] = pref_mask;
    return j;
  }

  static GroundTruth from_json(const nlohmann::json& j) {
    GroundTruth t;
    try {
      t.cfg = GenConfig::from_json(j.at("config"));
      t.z_u = j.at("z_u").get<std::vector<std::vector<double>>>();
      t.z_v = j.at("z_v").get<std::vector<std::vector<double>>>();
      t.dir_user = j.at("dir_user").get<std::vector<double>>();
      t.dir_item = j.at("dir_item").get<std::vector<double>>();
      t.bias = j.at("bias").get<std::vector<std::vector<double>>>();
      t.phi = j.at("phi").get<std::vector<std::vector<double>>>();
      t.item_category = j.at("item_category").get<std::vector<int64_t>>();
      t.pref_mask = j.at("pref_mask").get<std::vector<std::vector<uint64_t>>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("ground truth: malformed json: ") + e.what());
    }
    return t;
  }
};

struct CellStat {
  size_t impressions = 0;
  size_t clicks = 0;
  double p_sum = 0.0;
};

inline size_t quantize_score(double s, size_t buckets) {
  double u = (s + 1.0) / 2.0;
  auto b = int64_t(u * double(buckets));
  if (b < 0) b = 0;
  if (b >= int64_t(buckets)) b = int64_t(buckets) - 1;
  return size_t(b);
}

class SynthGenerator {
 public:
  explicit SynthGenerator(GenConfig cfg) {
    validate(cfg);
    truth_.cfg = cfg;
    truth_.phi = cfg.phi.empty() ? default_phi(cfg.time_periods) : cfg.phi;
    normalize_phi(truth_.phi, cfg.time_periods);

    Rng rng = Rng(cfg.seed).fork(1);  // truth stream, decoupled from sampling
    truth_.z_u.assign(cfg.users, std::vector<double>(cfg.latent_dim));
    for (auto& z : truth_.z_u)
      for (double& v : z) v = rng.normal();
    truth_.z_v.assign(cfg.items, std::vector<double>(cfg.latent_dim));
    for (auto& z : truth_.z_v)
      for (double& v : z) v = rng.normal();
    truth_.dir_user.resize(cfg.latent_dim);
    for (double& v : truth_.dir_user) v = rng.normal() / std::sqrt(double(cfg.latent_dim));
    truth_.dir_item.resize(cfg.latent_dim);
    for (double& v : truth_.dir_item) v = rng.normal() / std::sqrt(double(cfg.latent_dim));
    truth_.bias.assign(cfg.time_periods, std::vector<double>(cfg.cities));
    for (auto& row : truth_.bias)
      for (double& v : row) v = rng.uniform(-cfg.bias_amp, cfg.bias_amp);
    truth_.item_category.resize(cfg.items);
    for (size_t v = 0; v < cfg.items; ++v)
      truth_.item_category[v] = int64_t(v % cfg.categories);
    truth_.pref_mask.assign(cfg.users, std::vector<uint64_t>(cfg.time_periods, 0));
    std::vector<size_t> cats(cfg.categories);
    for (size_t c = 0; c < cfg.categories; ++c) cats[c] = c;
    for (size_t u = 0; u < cfg.users; ++u)
      for (size_t t = 0; t < cfg.time_periods; ++t) {
        rng.shuffle(cats);
        uint64_t m = 0;
        for (size_t k = 0; k < cfg.categories / 2; ++k) m |= uint64_t(1) << cats[k];
        truth_.pref_mask[u][t] = m;
      }

    s_user_.resize(cfg.users);
    for (size_t u = 0; u < cfg.users; ++u)
      s_user_[u] = std::tanh(dot(truth_.z_u[u], truth_.dir_user));
    s_cand_.resize(cfg.items);
    for (size_t v = 0; v < cfg.items; ++v)
      s_cand_[v] = std::tanh(dot(truth_.z_v[v], truth_.dir_item));
  }

  const GroundTruth& truth() const { return truth_; }

  double affinity_user(size_t u) const { return s_user_[u]; }
  double affinity_candidate(size_t v) const { return s_cand_[v]; }
  double affinity_combine(size_t u, size_t v) const {
    return std::tanh(dot(truth_.z_u[u], truth_.z_v[v]) /
                     std::sqrt(double(truth_.cfg.latent_dim)));
  }
  // +-1 by whether the candidate's category is in the user's liked half for
  // this period; only period-matched history reveals which half that is
  double affinity_behavior(size_t u, size_t v, size_t t) const {
    uint64_t cat = uint64_t(truth_.item_category[v]);
    return (truth_.pref_mask[u][t] >> cat) & 1 ? 1.0 : -1.0;
  }

  double planted_ctr(size_t u, size_t v, size_t t, size_t c) const {
    const std::vector<double>& ph = truth_.phi[t];
    double logit = truth_.bias[t][c];
    logit += ph[kFieldUser] * affinity_user(u);
    logit += ph[kFieldBehavior] * affinity_behavior(u, v, t);
    logit += ph[kFieldCandidate] * affinity_candidate(v);
    logit += ph[kFieldCombine] * affinity_combine(u, v);
    return Graph::stable_sigmoid(logit);
  }

  Vocabulary make_vocab(size_t embedding_dim) const {
    const GenConfig& c = truth_.cfg;
    auto card = [](size_t n) { return int64_t(n) + 1; };  // +1 for reserved OOV
    std::vector<FieldSpec> fields;
    fields.push_back({"user", false,
                      {{"user_id", card(c.users)}, {"profile_bucket", card(c.profile_buckets)}}});
    fields.push_back({"behavior", true,
                      {{"item", card(c.items)},
                       {"category", card(c.categories)},
                       {"time_period", card(c.time_periods)},
                       {"hour", 25},
                       {"city", card(c.cities)},
                       {"geohash", card(c.geohash_buckets)}}});
    fields.push_back({"candidate", false,
                      {{"item", card(c.items)},
                       {"category", card(c.categories)},
                       {"stats_bucket", card(c.profile_buckets)}}});
    fields.push_back({"context", false,
                      {{"time_period", card(c.time_periods)},
                       {"hour", 25},
                       {"city", card(c.cities)},
                       {"geohash", card(c.geohash_buckets)}}});
    fields.push_back({"combine", false, {{"match_bucket", card(c.match_buckets)}}});
    return Vocabulary(embedding_dim, c.geohash_prefix, std::move(fields));
  }

  // Streams impressions in request order. Each request draws from its own
  // forked rng stream, so the sequence is reproducible and shardable.
  void run(const std::function<void(const Impression&)>& sink) {
    const GenConfig& c = truth_.cfg;
    Rng master(c.seed);
    ZipfSampler zipf(c.cities, c.zipf_exponent);
    std::vector<double> period_w = period_weights(c.time_periods);
    double period_total = 0.0;
    for (double w : period_w) period_total += w;
    std::vector<std::vector<BehaviorEvent>> history(c.users);
    stats_.assign(c.time_periods, std::vector<CellStat>(c.cities));

    for (size_t req = 0; req < c.requests; ++req) {
      Rng rng = master.fork(0x100000 + req);
      size_t u = rng.uniform_index(c.users);
      size_t t = sample_weighted(rng, period_w, period_total);
      int64_t hour = sample_hour(rng, t, c.time_periods);
      size_t city = rng.uniform() < c.travel_prob ? rng.uniform_index(c.cities)
                                                  : zipf.sample(rng);
      std::string gh = geohash_of(city) + suffix(rng);

      Impression base;
      base.request_id = int64_t(req);
      base.user = {int64_t(u), int64_t(quantize_score(s_user_[u], c.profile_buckets))};
      base.time_period = int64_t(t);
      base.hour = hour;
      base.city = int64_t(city);
      base.geohash = gh;
      const std::vector<BehaviorEvent>& h = history[u];
      size_t take = std::min(h.size(), c.max_behaviors);
      base.behaviors.assign(h.end() - std::ptrdiff_t(take), h.end());

      std::vector<BehaviorEvent> clicked;
      for (size_t k = 0; k < c.impressions_per_request; ++k) {
        size_t v = rng.uniform_index(c.items);
        double p = planted_ctr(u, v, t, city);
        int y = rng.bernoulli(p) ? 1 : 0;
        Impression imp = base;
        imp.label = y;
        imp.candidate = {int64_t(v), truth_.item_category[v],
                         int64_t(quantize_score(s_cand_[v], c.profile_buckets))};
        imp.combine = {int64_t(quantize_score(affinity_combine(u, v), c.match_buckets))};
        sink(imp);
        CellStat& st = stats_[t][city];
        ++st.impressions;
        st.clicks += size_t(y);
        st.p_sum += p;
        if (y == 1)
          clicked.push_back({int64_t(v), truth_.item_category[v], int64_t(t), hour,
                             int64_t(city), gh});
      }
      // clicked items join the history only after the whole request, so no
      // impression can see an event from its own request
      history[u].insert(history[u].end(), clicked.begin(), clicked.end());
      if (history[u].size() > 4 * c.max_behaviors)
        history[u].erase(history[u].begin(),
                         history[u].end() - std::ptrdiff_t(2 * c.max_behaviors));
    }
  }

  const std::vector<std::vector<CellStat>>& stats() const { return stats_; }

  static std::vector<double> period_weights(size_t T) {
    // lunch and dinner peak at triple the breakfast/night exposure
    if (T == 5) return {1.0, 3.0, 1.0, 3.0, 1.0};
    return std::vector<double>(T, 1.0);
  }

  static const char* period_name(size_t t, size_t T) {
    static const char* names[5] = {"breakfast", "lunch", "afternoon_tea", "dinner",
                                   "night"};
    if (T == 5 && t < 5) return names[t];
    return "period";
  }

  static std::string geohash_of(size_t city) {
    static const char* alpha = "0123456789bcdefghjkmnpqrstuvwxyz";
    std::string s = "wx";
    s += alpha[(city / 32) % 32];
    s += alpha[city % 32];
    return s;
  }

 private:
  static void validate(const GenConfig& c) {
    if (c.time_periods < 2 || c.cities < 2)
      throw ConfigError("gen: time_periods and cities must both be >= 2");
    if (c.users == 0 || c.items == 0 || c.requests == 0 ||
        c.impressions_per_request == 0 || c.latent_dim == 0 || c.categories == 0)
      throw ConfigError("gen: users, items, categories, latent_dim, requests and "
                        "impressions_per_request must be positive");
    if (c.categories < 2 || c.categories > 64)
      throw ConfigError("gen: categories must be in [2, 64] to form liked halves");
    if (!(c.bias_amp >= 0.0)) throw ConfigError("gen: bias_amp must be >= 0");
  }

  static void normalize_phi(std::vector<std::vector<double>>& phi, size_t T) {
    if (phi.size() != T) throw ConfigError("gen: phi must have one row per time-period");
    for (auto& row : phi) {
      if (row.size() != kPlantedFields)
        throw ConfigError("gen: phi rows must have 5 field weights");
      double mx = 0.0;
      for (double v : row) {
        if (v < 0.0) throw ConfigError("gen: phi must be non-negative");
        mx = std::max(mx, v);
      }
      if (mx > 0.0)
        for (double& v : row) v /= mx;
    }
  }

  static double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  static size_t sample_weighted(Rng& rng, const std::vector<double>& w, double total) {
    double x = rng.uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
      acc += w[i];
      if (x < acc) return i;
    }
    return w.size() - 1;
  }

  static int64_t sample_hour(Rng& rng, size_t t, size_t T) {
    // named meal windows at T = 5, uniform slices of the day otherwise
    if (T == 5) {
      static const int lo[5] = {6, 10, 14, 17, 21};
      static const int hi[5] = {10, 14, 17, 21, 24};
      return lo[t] + int64_t(rng.uniform_index(size_t(hi[t] - lo[t])));
    }
    size_t lo = 24 * t / T, hi = 24 * (t + 1) / T;
    if (hi <= lo) hi = lo + 1;
    return int64_t(lo + rng.uniform_index(hi - lo));
  }

  static std::string suffix(Rng& rng) {
    static const char* alpha = "0123456789bcdefghjkmnpqrstuvwxyz";
    std::string s;
    s += alpha[rng.uniform_index(32)];
    s += alpha[rng.uniform_index(32)];
    return s;
  }

  GroundTruth truth_;
  std::vector<double> s_user_, s_cand_;
  std::vector<std::vector<CellStat>> stats_;
};

}  // namespace stctr
