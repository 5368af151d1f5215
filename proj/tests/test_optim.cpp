#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include <stctr/optimizer.hpp>

using namespace stctr;

TEST_CASE("warmup schedule interpolates linearly then flattens") {
  TrainConfig cfg;
  cfg.lr_start = 0.001;
  cfg.lr_peak = 0.012;
  cfg.warmup_steps = 2000;
  cfg.total_steps = 20000;

  REQUIRE(lr_at(0, cfg) == 0.001);
  REQUIRE(lr_at(2000, cfg) == 0.012);
  REQUIRE(lr_at(1000, cfg) == Catch::Approx(0.0065).margin(1e-15));
  REQUIRE(lr_at(2001, cfg) == 0.012);
  REQUIRE(lr_at(20000, cfg) == 0.012);

  for (size_t s = 1; s < 2000; s += 97)
    REQUIRE(lr_at(s, cfg) > lr_at(s - 1, cfg));

  SECTION("zero warmup starts at the peak") {
    cfg.warmup_steps = 0;
    REQUIRE(lr_at(0, cfg) == 0.012);
  }
}

TEST_CASE("adagrad matches the hand-rolled recurrence") {
  ParameterStore ps;
  Parameter& w = ps.add("w", Tensor({2}, {1.0, -2.0}));
  Adagrad opt(ps, 0.1, 1e-8);

  // three steps with fixed gradients, tracked by a scalar oracle
  std::vector<std::vector<double>> grads = {{0.5, -1.0}, {-0.25, 2.0}, {1.5, 0.5}};
  double acc[2] = {0.1, 0.1};
  double theta[2] = {1.0, -2.0};
  double lr = 0.01;
  for (const auto& gstep : grads) {
    for (size_t k = 0; k < 2; ++k) {
      w.grad.data[k] = gstep[k];
      acc[k] += gstep[k] * gstep[k];
      theta[k] -= lr * gstep[k] / std::sqrt(acc[k] + 1e-8);
    }
    REQUIRE(opt.step(ps, lr));
    for (size_t k = 0; k < 2; ++k)
      REQUIRE(w.value.data[k] == Catch::Approx(theta[k]).margin(1e-12));
  }

  SECTION("first-step magnitude follows the accumulator seed") {
    ParameterStore ps2;
    Parameter& v = ps2.add("v", Tensor({1}, {0.0}));
    Adagrad opt2(ps2, 0.1, 1e-8);
    v.grad.data[0] = 1.0;
    REQUIRE(opt2.step(ps2, 0.1));
    // delta = -0.1 * 1 / sqrt(1.1 + 1e-8)
    REQUIRE(v.value.data[0] ==
            Catch::Approx(-0.1 / std::sqrt(1.1 + 1e-8)).margin(1e-15));
  }
}

TEST_CASE("zero gradients leave parameters fixed but cost nothing") {
  ParameterStore ps;
  Parameter& w = ps.add("w", Tensor({3}, {0.5, -0.5, 2.0}));
  Adagrad opt(ps, 0.1, 1e-8);
  std::vector<double> before = w.value.data;
  REQUIRE(opt.step(ps, 0.05));
  REQUIRE(w.value.data == before);
  REQUIRE(opt.accumulators()[0].data == std::vector<double>{0.1, 0.1, 0.1});
}

TEST_CASE("a non-finite gradient aborts the whole step") {
  ParameterStore ps;
  Parameter& a = ps.add("a", Tensor({2}, {1.0, 1.0}));
  Parameter& b = ps.add("b", Tensor({1}, {3.0}));
  Adagrad opt(ps, 0.1, 1e-8);

  a.grad.data[0] = 0.7;
  a.grad.data[1] = 0.7;
  b.grad.data[0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> va = a.value.data, vb = b.value.data;
  std::vector<Tensor> acc = opt.accumulators();

  REQUIRE_FALSE(opt.step(ps, 0.01));
  REQUIRE(a.value.data == va);  // even the finite parameter is untouched
  REQUIRE(b.value.data == vb);
  for (size_t i = 0; i < acc.size(); ++i)
    REQUIRE(opt.accumulators()[i].data == acc[i].data);

  SECTION("infinities are rejected too") {
    b.grad.data[0] = std::numeric_limits<double>::infinity();
    REQUIRE_FALSE(opt.step(ps, 0.01));
    b.grad.data[0] = 0.0;
    REQUIRE(opt.step(ps, 0.01));
  }
}

TEST_CASE("accumulators keep shrinking the effective step") {
  ParameterStore ps;
  Parameter& w = ps.add("w", Tensor({1}, {0.0}));
  Adagrad opt(ps, 0.1, 1e-8);
  double prev = 0.0, prev_delta = 1e9;
  for (int s = 0; s < 6; ++s) {
    w.grad.data[0] = 1.0;
    opt.step(ps, 0.1);
    double delta = std::abs(w.value.data[0] - prev);
    REQUIRE(delta < prev_delta);
    prev_delta = delta;
    prev = w.value.data[0];
  }
}

TEST_CASE("train config validation guards the schedule") {
  TrainConfig cfg;
  cfg.validate();  // defaults are fine

  TrainConfig bad = cfg;
  bad.lr_start = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lr_peak = 0.0005;  // below lr_start
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.warmup_steps = bad.total_steps + 1;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.eval_fraction = 1.0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train config json round-trips and tolerates omissions") {
  TrainConfig cfg;
  cfg.batch_size = 256;
  cfg.lr_start = 0.002;
  cfg.lr_peak = 0.02;
  cfg.warmup_steps = 50;
  cfg.total_steps = 500;
  cfg.adagrad_init = 0.2;
  cfg.eval_every = 100;
  cfg.eval_fraction = 0.25;
  cfg.shuffle_seed = 99;

  TrainConfig back = TrainConfig::from_json(cfg.to_json());
  REQUIRE(back.batch_size == 256);
  REQUIRE(back.lr_start == 0.002);
  REQUIRE(back.lr_peak == 0.02);
  REQUIRE(back.warmup_steps == 50);
  REQUIRE(back.total_steps == 500);
  REQUIRE(back.adagrad_init == 0.2);
  REQUIRE(back.eval_every == 100);
  REQUIRE(back.eval_fraction == 0.25);
  REQUIRE(back.shuffle_seed == 99);

  TrainConfig sparse = TrainConfig::from_json(nlohmann::json{{"batch_size", 64}});
  REQUIRE(sparse.batch_size == 64);
  REQUIRE(sparse.lr_peak == 0.012);  // untouched default
}
