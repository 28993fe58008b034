#pragma once

#include <functional>
#include <string>
#include <vector>

#include "i2st/tensor.hpp"

namespace i2st {

struct ParamCheck {
  std::string name;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  // The coordinate behind max_rel_err, for diagnosing failures.
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  double eps = 0.0;
  std::vector<ParamCheck> params;

  double max_rel_err() const;
  double max_abs_err() const;
};

// Central finite differences against tape gradients, one coordinate at a
// time. `forward` must rebuild the loss from the current parameter values and
// be deterministic; determinism is verified by evaluating the base point
// twice. Relative error is |analytic - numeric| / max(|analytic|, |numeric|,
// 1e-8). eps must lie in [1e-7, 1e-3].
GradCheckReport gradcheck(const std::function<Tensor()>& forward,
                          const std::vector<std::pair<std::string, Tensor>>& params,
                          double eps);

}  // namespace i2st
