#pragma once

#include <vector>

#include "i2st/attention.hpp"
#include "i2st/tensor.hpp"

namespace i2st {

// otam is reserved for comparison configs and not implemented here.
enum class LocalMetric { bi_mhm, otam, none };

struct MatchConfig {
  LocalMetric metric = LocalMetric::bi_mhm;
  double w_global = 1.0;
  double w_local = 1.0;

  void validate() const;
};

// u.v / (|u||v|), each norm floored at 1e-12; range [-1, 1].
Tensor cosine_sim(const Tensor& u, const Tensor& v);

// Negated bidirectional mean Hausdorff similarity of two frame sequences
// [T x C], with frame distance 1 - cosine: zero for perfectly aligned
// sequences, lower bound -2.
Tensor bi_mhm(const Tensor& locals_a, const Tensor& locals_b);

// w_local * bi_mhm(locals) + w_global * cosine(tokens). Zero-weight terms
// are omitted from the graph, so w_global = 0 reproduces local-only matching
// exactly.
Tensor global_local_score(const Prototype& support, const Prototype& query,
                          const MatchConfig& cfg);

// Elementwise mean of K prototypes (token and each local slot).
Prototype average_prototypes(const std::vector<Prototype>& protos);

// Logits [N]: scores[i] = global_local_score(class_protos[i], query).
Tensor classify(const Prototype& query,
                const std::vector<Prototype>& class_protos,
                const MatchConfig& cfg);

}  // namespace i2st
