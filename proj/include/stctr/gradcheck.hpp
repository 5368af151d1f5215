#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "stctr/graph.hpp"

namespace stctr {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  size_t entries_checked = 0;
};

// Central-difference check of d(loss)/d(theta) for every entry of every
// parameter in the store. `loss_fn(with_grads)` must rebuild the same graph
// each call (any randomness fixed by the caller), return the scalar loss,
// and when with_grads is true also populate Parameter::grad.
inline GradCheckReport grad_check(ParameterStore& params,
                                  const std::function<double(bool)>& loss_fn,
                                  double eps = 1e-5) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");

  params.zero_grads();
  double base = loss_fn(true);
  if (!std::isfinite(base)) throw NumericError("grad_check: loss is non-finite");

  GradCheckReport rep;
  for (auto& pp : params) {
    Parameter& p = *pp;
    for (size_t i = 0; i < p.value.numel(); ++i) {
      double saved = p.value.data[i];
      p.value.data[i] = saved + eps;
      double up = loss_fn(false);
      p.value.data[i] = saved - eps;
      double down = loss_fn(false);
      p.value.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: perturbed loss non-finite at " + p.name +
                           "[" + std::to_string(i) + "]");
      }
      double numeric = (up - down) / (2.0 * eps);
      double analytic = p.grad.data[i];
      double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      double rel = std::fabs(analytic - numeric) / denom;
      ++rep.entries_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = p.name;
        rep.worst_index = i;
        rep.worst_analytic = analytic;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace stctr
