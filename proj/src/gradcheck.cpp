#include "i2st/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace i2st {

double GradCheckReport::max_rel_err() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_err);
  return m;
}

double GradCheckReport::max_abs_err() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_abs_err);
  return m;
}

GradCheckReport gradcheck(
    const std::function<Tensor()>& forward,
    const std::vector<std::pair<std::string, Tensor>>& params, double eps) {
  if (eps < 1e-7 || eps > 1e-3)
    throw ContractError("gradcheck: eps " + std::to_string(eps) +
                        " outside [1e-7, 1e-3]");

  const double base = forward().item();
  if (forward().item() != base)
    throw ContractError(
        "gradcheck: forward is not deterministic at the base point");

  // Analytic gradients from one tape sweep.
  std::vector<Eigen::ArrayXd> analytic;
  {
    for (auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = forward();
    }
    tape.backward(loss);
    for (const auto& [name, p] : params) {
      analytic.push_back(p.grad().size() > 0
                             ? p.grad()
                             : Eigen::ArrayXd::Zero(p.size()));
    }
    for (auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
  }

  GradCheckReport report;
  report.eps = eps;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& [name, p] = params[pi];
    ParamCheck pc;
    pc.name = name;
    Eigen::ArrayXd& values = const_cast<Tensor&>(p).data();
    for (long long i = 0; i < p.size(); ++i) {
      const double saved = values(i);
      values(i) = saved + eps;
      const double hi = forward().item();
      values(i) = saved - eps;
      const double lo = forward().item();
      values(i) = saved;
      const double numeric = (hi - lo) / (2.0 * eps);
      const double a = analytic[pi](i);
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
      pc.max_abs_err = std::max(pc.max_abs_err, abs_err);
      if (rel_err > pc.max_rel_err) {
        pc.max_rel_err = rel_err;
        pc.worst_analytic = a;
        pc.worst_numeric = numeric;
      }
    }
    report.params.push_back(std::move(pc));
  }
  return report;
}

}  // namespace i2st
