#include "i2st/matching.hpp"

namespace i2st {

namespace {

constexpr double kNormFloor = 1e-12;

// Row norms of [T x C], floored; the inner clamp keeps the sqrt gradient
// finite at exactly-zero rows, the outer one applies the contract floor.
Tensor floored_row_norms(const Tensor& x) {
  Tensor ss = sum_axis(mul(x, x), 1);  // [T]
  return clamp_min(sqrt(clamp_min(ss, kNormFloor * kNormFloor)), kNormFloor);
}

}  // namespace

void MatchConfig::validate() const {
  if (metric == LocalMetric::otam)
    throw ConfigError("local metric 'otam' is reserved but not implemented");
  if (w_global < 0.0 || w_local < 0.0)
    throw ConfigError("matching weights must be >= 0");
  const bool local_active = metric != LocalMetric::none && w_local > 0.0;
  if (!local_active && w_global <= 0.0)
    throw ConfigError("matching needs a live local or global term");
}

Tensor cosine_sim(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape() || u.rank() != 1)
    throw DimensionError("cosine_sim: expected equal rank-1 shapes, got " +
                         shape_str(u.shape()) + " and " + shape_str(v.shape()));
  Tensor dot = sum_all(mul(u, v));
  Tensor nu = clamp_min(sqrt(clamp_min(sum_all(mul(u, u)),
                                       kNormFloor * kNormFloor)),
                        kNormFloor);
  Tensor nv = clamp_min(sqrt(clamp_min(sum_all(mul(v, v)),
                                       kNormFloor * kNormFloor)),
                        kNormFloor);
  return div(dot, mul(nu, nv));
}

Tensor bi_mhm(const Tensor& locals_a, const Tensor& locals_b) {
  if (locals_a.rank() != 2 || locals_b.rank() != 2 ||
      locals_a.extent(1) != locals_b.extent(1))
    throw DimensionError("bi_mhm: expected [T x C] sequences, got " +
                         shape_str(locals_a.shape()) + " and " +
                         shape_str(locals_b.shape()));
  const int ta = locals_a.extent(0), tb = locals_b.extent(0);
  Tensor na = floored_row_norms(locals_a);  // [ta]
  Tensor nb = floored_row_norms(locals_b);  // [tb]
  Tensor numer = matmul(locals_a, transpose(locals_b, {1, 0}));  // [ta x tb]
  Tensor denom = matmul(reshape(na, {ta, 1}), reshape(nb, {1, tb}));
  Tensor dist = add_scalar(scale(div(numer, denom), -1.0), 1.0);  // 1 - cos
  Tensor ab = mean_all(min_axis(dist, 1));  // each a-frame to its nearest b
  Tensor ba = mean_all(min_axis(dist, 0));  // each b-frame to its nearest a
  return scale(add(ab, ba), -0.5);
}

Tensor global_local_score(const Prototype& support, const Prototype& query,
                          const MatchConfig& cfg) {
  cfg.validate();
  if (support.locals.extent(0) != query.locals.extent(0))
    throw DimensionError("global_local_score: local sequence lengths differ");
  const bool local_active = cfg.metric != LocalMetric::none && cfg.w_local > 0.0;
  const bool global_active = cfg.w_global > 0.0;
  Tensor score;
  if (local_active) {
    score = scale(bi_mhm(support.locals, query.locals), cfg.w_local);
  }
  if (global_active) {
    Tensor g = scale(cosine_sim(support.token, query.token), cfg.w_global);
    score = local_active ? add(score, g) : g;
  }
  return score;
}

Prototype average_prototypes(const std::vector<Prototype>& protos) {
  if (protos.empty())
    throw ContractError("average_prototypes: empty prototype list");
  Prototype avg = protos[0];
  for (std::size_t i = 1; i < protos.size(); ++i) {
    avg.token = add(avg.token, protos[i].token);
    avg.locals = add(avg.locals, protos[i].locals);
  }
  const double inv = 1.0 / static_cast<double>(protos.size());
  avg.token = scale(avg.token, inv);
  avg.locals = scale(avg.locals, inv);
  return avg;
}

Tensor classify(const Prototype& query,
                const std::vector<Prototype>& class_protos,
                const MatchConfig& cfg) {
  if (class_protos.size() < 2)
    throw ContractError("classify: need at least 2 classes, got " +
                        std::to_string(class_protos.size()));
  std::vector<Tensor> scores;
  scores.reserve(class_protos.size());
  for (const Prototype& proto : class_protos)
    scores.push_back(reshape(global_local_score(proto, query, cfg), {1}));
  return concat(scores, 0);
}

}  // namespace i2st
