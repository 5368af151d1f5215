#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include <stctr/features.hpp>
#include <stctr/synth.hpp>

using namespace stctr;

namespace {

GenConfig small_cfg() {
  GenConfig cfg;
  cfg.time_periods = 5;
  cfg.cities = 6;
  cfg.users = 40;
  cfg.items = 30;
  cfg.categories = 6;
  cfg.latent_dim = 4;
  cfg.requests = 800;
  cfg.impressions_per_request = 3;
  cfg.max_behaviors = 5;
  cfg.geohash_buckets = 64;
  cfg.seed = 11;
  return cfg;
}

std::vector<Impression> collect(SynthGenerator& gen) {
  std::vector<Impression> out;
  gen.run([&](const Impression& imp) { out.push_back(imp); });
  return out;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  GenConfig cfg = small_cfg();
  SynthGenerator a(cfg), b(cfg);
  std::vector<Impression> ia = collect(a), ib = collect(b);
  REQUIRE(ia.size() == ib.size());
  for (size_t i = 0; i < ia.size(); ++i)
    REQUIRE(impression_to_json(ia[i]).dump() == impression_to_json(ib[i]).dump());
  REQUIRE(a.truth().to_json().dump() == b.truth().to_json().dump());

  SECTION("a different seed moves the data") {
    GenConfig other = cfg;
    other.seed = 12;
    SynthGenerator c(other);
    std::vector<Impression> ic = collect(c);
    bool any_diff = false;
    for (size_t i = 0; i < std::min(ia.size(), ic.size()); ++i)
      if (impression_to_json(ia[i]).dump() != impression_to_json(ic[i]).dump())
        any_diff = true;
    REQUIRE(any_diff);
  }
}

TEST_CASE("zero bias and zero field weights give coin-flip probabilities") {
  GenConfig cfg = small_cfg();
  cfg.bias_amp = 0.0;
  cfg.phi.assign(cfg.time_periods, std::vector<double>(kPlantedFields, 0.0));
  SynthGenerator gen(cfg);
  Rng rng(3);
  for (int n = 0; n < 50; ++n) {
    size_t u = rng.uniform_index(cfg.users);
    size_t v = rng.uniform_index(cfg.items);
    size_t t = rng.uniform_index(cfg.time_periods);
    size_t c = rng.uniform_index(cfg.cities);
    REQUIRE(gen.planted_ctr(u, v, t, c) == 0.5);
  }
}

TEST_CASE("dominant bias reproduces its own sigmoid in the empirical table") {
  GenConfig cfg;
  cfg.time_periods = 2;
  cfg.cities = 3;
  cfg.users = 50;
  cfg.items = 40;
  cfg.categories = 5;
  cfg.latent_dim = 4;
  cfg.bias_amp = 6.0;
  cfg.phi.assign(2, std::vector<double>(kPlantedFields, 0.0));
  cfg.requests = 30000;
  cfg.impressions_per_request = 2;
  cfg.seed = 7;
  SynthGenerator gen(cfg);
  gen.run([](const Impression&) {});

  size_t total = 0;
  for (size_t t = 0; t < cfg.time_periods; ++t)
    for (size_t c = 0; c < cfg.cities; ++c) {
      const CellStat& st = gen.stats()[t][c];
      total += st.impressions;
      if (st.impressions < 500) continue;
      double want = 1.0 / (1.0 + std::exp(-gen.truth().bias[t][c]));
      double got = double(st.clicks) / double(st.impressions);
      REQUIRE(got == Catch::Approx(want).margin(0.02));
    }
  REQUIRE(total == cfg.requests * cfg.impressions_per_request);
}

TEST_CASE("labels track the planted mixture") {
  GenConfig cfg = small_cfg();
  cfg.requests = 20000;
  SynthGenerator gen(cfg);
  gen.run([](const Impression&) {});
  size_t imps = 0, clicks = 0;
  double p_sum = 0.0;
  for (const auto& row : gen.stats())
    for (const CellStat& st : row) {
      imps += st.impressions;
      clicks += st.clicks;
      p_sum += st.p_sum;
    }
  double empirical = double(clicks) / double(imps);
  double analytic = p_sum / double(imps);
  REQUIRE(analytic > 0.0);
  REQUIRE(analytic < 1.0);
  REQUIRE(empirical == Catch::Approx(analytic).margin(0.01));
}

TEST_CASE("behavior sequences replay the user's own earlier clicks") {
  GenConfig cfg = small_cfg();
  cfg.requests = 2000;
  SynthGenerator gen(cfg);
  std::vector<Impression> imps = collect(gen);

  std::map<int64_t, std::vector<BehaviorEvent>> clicks;  // user -> click history
  size_t checked = 0;
  for (size_t i = 0; i < imps.size();) {
    int64_t req = imps[i].request_id;
    int64_t u = imps[i].user[0];
    const std::vector<BehaviorEvent>& hist = clicks[u];
    size_t take = std::min(hist.size(), cfg.max_behaviors);
    // every impression of the request sees the same pre-request tail
    for (size_t j = i; j < imps.size() && imps[j].request_id == req; ++j) {
      REQUIRE(imps[j].behaviors.size() == take);
      for (size_t b = 0; b < take; ++b) {
        const BehaviorEvent& want = hist[hist.size() - take + b];
        const BehaviorEvent& got = imps[j].behaviors[b];
        REQUIRE(got.item == want.item);
        REQUIRE(got.category == want.category);
        REQUIRE(got.time_period == want.time_period);
        REQUIRE(got.hour == want.hour);
        REQUIRE(got.city == want.city);
        REQUIRE(got.geohash == want.geohash);
      }
      ++checked;
    }
    // only then do this request's clicks enter the history
    size_t j = i;
    for (; j < imps.size() && imps[j].request_id == req; ++j)
      if (imps[j].label == 1)
        clicks[u].push_back({imps[j].candidate[0], imps[j].candidate[1],
                             imps[j].time_period, imps[j].hour, imps[j].city,
                             imps[j].geohash});
    i = j;
  }
  REQUIRE(checked == imps.size());
}

TEST_CASE("a one-impression run emits one schema-valid line") {
  GenConfig cfg = small_cfg();
  cfg.requests = 1;
  cfg.impressions_per_request = 1;
  SynthGenerator gen(cfg);
  std::vector<Impression> imps = collect(gen);
  REQUIRE(imps.size() == 1);

  ParseLimits limits;
  limits.time_periods = int64_t(cfg.time_periods);
  limits.max_behaviors = cfg.max_behaviors;
  Impression back = impression_from_json(impression_to_json(imps[0]), limits);
  REQUIRE(back.request_id == 0);
  REQUIRE(back.user.size() == 2);
  REQUIRE(back.candidate.size() == 3);
  REQUIRE(back.combine.size() == 1);
}

TEST_CASE("generated ids always fit the published vocabulary") {
  GenConfig cfg = small_cfg();
  SynthGenerator gen(cfg);
  Vocabulary vocab = gen.make_vocab(3);
  REQUIRE(vocab.total_features() > 0);
  REQUIRE(vocab.geohash_prefix() == cfg.geohash_prefix);

  Encoder enc(vocab);
  std::vector<Impression> imps = collect(gen);
  enc.encode_all(imps);
  REQUIRE(enc.oov_count() == 0);

  SECTION("distinct cities map to distinct geohash prefixes") {
    REQUIRE(SynthGenerator::geohash_of(0) != SynthGenerator::geohash_of(1));
    REQUIRE(SynthGenerator::geohash_of(5) != SynthGenerator::geohash_of(37));
  }
}

TEST_CASE("exposure is peaked over meal periods and head cities") {
  GenConfig cfg = small_cfg();
  cfg.requests = 20000;
  cfg.travel_prob = 0.15;
  SynthGenerator gen(cfg);
  std::vector<size_t> per_period(cfg.time_periods, 0);
  std::vector<size_t> per_city(cfg.cities, 0);
  static const int lo[5] = {6, 10, 14, 17, 21};
  static const int hi[5] = {10, 14, 17, 21, 24};
  gen.run([&](const Impression& imp) {
    per_period[size_t(imp.time_period)]++;
    per_city[size_t(imp.city)]++;
    REQUIRE(imp.hour >= lo[imp.time_period]);
    REQUIRE(imp.hour < hi[imp.time_period]);
    REQUIRE(imp.geohash.substr(0, 4) == SynthGenerator::geohash_of(size_t(imp.city)));
  });
  // lunch and dinner carry triple weight
  REQUIRE(double(per_period[1]) > 2.0 * double(per_period[0]));
  REQUIRE(double(per_period[3]) > 2.0 * double(per_period[4]));
  // Zipf head beats the tail
  REQUIRE(per_city[0] > 2 * per_city[cfg.cities - 1]);
}

TEST_CASE("swapped field-weight rows swap the affinity contribution exactly") {
  GenConfig cfg = small_cfg();
  cfg.time_periods = 2;
  cfg.bias_amp = 0.0;
  // behavior column zeroed: the remaining affinities are period-independent
  std::vector<double> r0 = {1.0, 0.0, 0.4, 0.0, 0.2};
  std::vector<double> r1 = {0.3, 0.0, 1.0, 0.0, 0.6};
  GenConfig swapped = cfg;
  cfg.phi = {r0, r1};
  swapped.phi = {r1, r0};

  SynthGenerator a(cfg), b(swapped);
  Rng rng(9);
  for (int n = 0; n < 100; ++n) {
    size_t u = rng.uniform_index(cfg.users);
    size_t v = rng.uniform_index(cfg.items);
    size_t c = rng.uniform_index(cfg.cities);
    REQUIRE(a.planted_ctr(u, v, 0, c) == b.planted_ctr(u, v, 1, c));
    REQUIRE(a.planted_ctr(u, v, 1, c) == b.planted_ctr(u, v, 0, c));
  }
}

TEST_CASE("ground truth round-trips through json with normalized weights") {
  GenConfig cfg = small_cfg();
  SynthGenerator gen(cfg);
  const GroundTruth& t = gen.truth();
  for (const auto& row : t.phi) {
    double mx = 0.0;
    for (double v : row) {
      REQUIRE(v >= 0.0);
      mx = std::max(mx, v);
    }
    REQUIRE(mx == 1.0);
  }

  GroundTruth back = GroundTruth::from_json(t.to_json());
  REQUIRE(back.z_u == t.z_u);
  REQUIRE(back.z_v == t.z_v);
  REQUIRE(back.bias == t.bias);
  REQUIRE(back.phi == t.phi);
  REQUIRE(back.item_category == t.item_category);
  REQUIRE(back.pref_mask == t.pref_mask);
  REQUIRE(back.cfg.requests == cfg.requests);
}

TEST_CASE("degenerate generator configs are rejected") {
  GenConfig cfg = small_cfg();
  cfg.time_periods = 1;
  REQUIRE_THROWS_AS(SynthGenerator(cfg), ConfigError);
  cfg = small_cfg();
  cfg.cities = 1;
  REQUIRE_THROWS_AS(SynthGenerator(cfg), ConfigError);
  cfg = small_cfg();
  cfg.users = 0;
  REQUIRE_THROWS_AS(SynthGenerator(cfg), ConfigError);
  cfg = small_cfg();
  cfg.phi = {{1.0, 0.0, 0.0, 0.0, 0.0}};  // wrong row count
  REQUIRE_THROWS_AS(SynthGenerator(cfg), ConfigError);
  cfg = small_cfg();
  cfg.phi.assign(cfg.time_periods, std::vector<double>(3, 0.5));  // wrong width
  REQUIRE_THROWS_AS(SynthGenerator(cfg), ConfigError);
  cfg = small_cfg();
  cfg.phi.assign(cfg.time_periods, std::vector<double>(kPlantedFields, 0.5));
  cfg.phi[0][2] = -0.1;
  REQUIRE_THROWS_AS(SynthGenerator(cfg), ConfigError);
  cfg = small_cfg();
  cfg.bias_amp = -1.0;
  REQUIRE_THROWS_AS(SynthGenerator(cfg), ConfigError);
}
