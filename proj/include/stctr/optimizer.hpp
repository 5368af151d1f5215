#pragma once

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "stctr/graph.hpp"

namespace stctr {

struct TrainConfig {
  size_t batch_size = 1024;
  double lr_start = 0.001;
  double lr_peak = 0.012;
  size_t warmup_steps = 2000;
  size_t total_steps = 20000;
  double adagrad_init = 0.1;
  double adagrad_eps = 1e-8;
  size_t log_every = 100;
  size_t eval_every = 0;  // 0 = evaluate only after the last step
  double eval_fraction = 0.1;
  uint64_t shuffle_seed = 7;

  void validate() const {
    if (!(lr_start > 0.0) || !(lr_peak >= lr_start))
      throw ConfigError("train: need 0 < lr_start <= lr_peak");
    if (warmup_steps > total_steps)
      throw ConfigError("train: warmup_steps must be <= total_steps");
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0))
      throw ConfigError("train: eval_fraction must lie in (0,1)");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["batch_size"] = batch_size;
    j["lr_start"] = lr_start;
    j["lr_peak"] = lr_peak;
    j["warmup_steps"] = warmup_steps;
    j["total_steps"] = total_steps;
    j["adagrad_init"] = adagrad_init;
    j["adagrad_eps"] = adagrad_eps;
    j["log_every"] = log_every;
    j["eval_every"] = eval_every;
    j["eval_fraction"] = eval_fraction;
    j["shuffle_seed"] = shuffle_seed;
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_start = j.value("lr_start", c.lr_start);
    c.lr_peak = j.value("lr_peak", c.lr_peak);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.adagrad_init = j.value("adagrad_init", c.adagrad_init);
    c.adagrad_eps = j.value("adagrad_eps", c.adagrad_eps);
    c.log_every = j.value("log_every", c.log_every);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_fraction = j.value("eval_fraction", c.eval_fraction);
    c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
    return c;
  }
};

// linear warm-up from lr_start to lr_peak, constant afterwards
inline double lr_at(size_t step, const TrainConfig& c) {
  if (step >= c.warmup_steps) return c.lr_peak;
  return c.lr_start +
         (c.lr_peak - c.lr_start) * (double(step) / double(c.warmup_steps));
}

// acc += g^2; theta -= lr * g / sqrt(acc + eps)
class Adagrad {
 public:
  Adagrad(ParameterStore& ps, double init_acc = 0.1, double eps = 1e-8) : eps_(eps) {
    for (auto& p : ps) acc_.push_back(Tensor::full(p->value.shape, init_acc));
  }

  // applies one update; a non-finite gradient anywhere aborts the whole step
  // (logged), leaving parameters and accumulators untouched
  bool step(ParameterStore& ps, double lr) {
    size_t i = 0;
    for (auto& p : ps) {
      if (!p->grad.all_finite()) {
        std::fprintf(stderr, "adagrad: non-finite gradient in %s, step skipped\n",
                     p->name.c_str());
        return false;
      }
      (void)i;
    }
    i = 0;
    for (auto& p : ps) {
      Tensor& a = acc_[i++];
      for (size_t k = 0; k < p->value.data.size(); ++k) {
        double g = p->grad.data[k];
        a.data[k] += g * g;
        p->value.data[k] -= lr * g / std::sqrt(a.data[k] + eps_);
      }
    }
    return true;
  }

  std::vector<Tensor>& accumulators() { return acc_; }
  const std::vector<Tensor>& accumulators() const { return acc_; }

 private:
  double eps_;
  std::vector<Tensor> acc_;
};

}  // namespace stctr
