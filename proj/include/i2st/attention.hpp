#pragma once

#include <string>
#include <utility>
#include <vector>

#include "i2st/rng.hpp"
#include "i2st/tensor.hpp"

namespace i2st {

// One pre-norm multi-head self-attention block: y = x + MultiHead(norm(x)).
// Projections carry no biases, so a zeroed value/output pair silences the
// whole block exactly.
struct MhaParams {
  int channels = 16;
  int heads = 4;
  Tensor ln_g, ln_b, wq, wk, wv, wo;

  static MhaParams init(int channels, int heads, Rng& rng);
  void register_params(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor>>& out);
};

// Pre-norm residual feed-forward: y = x + W2 relu(W1 norm(x) + b1) + b2.
struct FfnParams {
  int channels = 16;
  int hidden = 32;
  Tensor ln_g, ln_b, w1, b1, w2, b2;

  static FfnParams init(int channels, int hidden, Rng& rng);
  void register_params(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor>>& out);
};

struct MhaResult {
  Tensor y;     // same shape as the input
  Tensor attn;  // [B*heads x L x L] row-stochastic attention maps
};

// x: [L x C] or [B x L x C].
MhaResult mha_forward(const Tensor& x, const MhaParams& p);
Tensor mha(const Tensor& x, const MhaParams& p);

// Cross-attention with queries from x_q and keys/values from x_kv; the
// residual follows the query stream. x_q and x_kv share L and C.
MhaResult cross_mha_forward(const Tensor& x_q, const Tensor& x_kv,
                            const MhaParams& p, const Tensor& q_ln_g,
                            const Tensor& q_ln_b);

Tensor ffn(const Tensor& x, const FfnParams& p);

// Parameters of one fusion branch (spatial or temporal): independent blocks
// for the image and instance streams plus the shared feed-forward.
struct BranchParams {
  MhaParams img;
  MhaParams ins;
  FfnParams mix;

  static BranchParams init(int channels, int heads, int ffn_hidden, Rng& rng);
  void register_params(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor>>& out);
};

// Self-attention fusion of Image and instance tokens over one axis.
// f_img/f_ins: [T x C x h x w]. Pass f_ins == nullptr to run the image-only
// pathway; set cross_attention to use instance queries against image
// keys/values instead of two self-attention streams.
Tensor spatial_attention(const Tensor& f_img, const Tensor* f_ins,
                         const BranchParams& p, bool cross_attention);
// Same contract with the roles of time and space swapped: [hw x T x C] out.
Tensor temporal_attention(const Tensor& f_img, const Tensor* f_ins,
                          const BranchParams& p, bool cross_attention);

// One video's prototype: a global token feature plus T per-timestamp locals.
struct Prototype {
  Tensor token;   // [C]
  Tensor locals;  // [T x C]
};

struct GlobalFusionParams {
  int channels = 16;
  int t_max = 16;  // positional table covers sequences up to this length
  Tensor token;    // [C]
  Tensor pos;      // [(t_max+1) x C]; row 0 belongs to the token slot
  MhaParams block;

  static GlobalFusionParams init(int channels, int heads, int t_max, Rng& rng);
  void register_params(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor>>& out);
};

// Pools both branch outputs over their spatial axis to [T x C], sums them,
// prepends the learnable token, adds positions, runs one attention block and
// splits the result into the prototype. Either branch may be absent (null),
// not both.
Prototype global_fusion(const Tensor* f_s, const Tensor* f_t,
                        const GlobalFusionParams& p);

}  // namespace i2st
