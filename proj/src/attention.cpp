#include "i2st/attention.hpp"

#include <cmath>

namespace i2st {

namespace {

Tensor proj_init(int channels, Rng& rng) {
  return Tensor::randn({channels, channels}, rng,
                       std::sqrt(1.0 / channels));
}

}  // namespace

MhaParams MhaParams::init(int channels, int heads, Rng& rng) {
  if (channels % heads != 0)
    throw ConfigError("attention channels must divide into heads");
  MhaParams p;
  p.channels = channels;
  p.heads = heads;
  p.ln_g = Tensor::constant({channels}, 1.0);
  p.ln_b = Tensor::zeros({channels});
  p.wq = proj_init(channels, rng);
  p.wk = proj_init(channels, rng);
  p.wv = proj_init(channels, rng);
  // Zero output projection: every block starts as the identity, so matching
  // initially sees pooled backbone features instead of random mixtures.
  p.wo = Tensor::zeros({channels, channels});
  return p;
}

void MhaParams::register_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".ln.g", ln_g);
  out.emplace_back(prefix + ".ln.b", ln_b);
  out.emplace_back(prefix + ".wq", wq);
  out.emplace_back(prefix + ".wk", wk);
  out.emplace_back(prefix + ".wv", wv);
  out.emplace_back(prefix + ".wo", wo);
}

FfnParams FfnParams::init(int channels, int hidden, Rng& rng) {
  FfnParams p;
  p.channels = channels;
  p.hidden = hidden;
  p.ln_g = Tensor::constant({channels}, 1.0);
  p.ln_b = Tensor::zeros({channels});
  p.w1 = Tensor::randn({channels, hidden}, rng, std::sqrt(2.0 / channels));
  p.b1 = Tensor::zeros({hidden});
  // Identity start, matching the attention blocks.
  p.w2 = Tensor::zeros({hidden, channels});
  p.b2 = Tensor::zeros({channels});
  return p;
}

void FfnParams::register_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".ln.g", ln_g);
  out.emplace_back(prefix + ".ln.b", ln_b);
  out.emplace_back(prefix + ".w1", w1);
  out.emplace_back(prefix + ".b1", b1);
  out.emplace_back(prefix + ".w2", w2);
  out.emplace_back(prefix + ".b2", b2);
}

namespace {

struct SeqView {
  Tensor batched;  // [B x L x C]
  bool was_rank2 = false;
};

SeqView as_batched(const Tensor& x, int channels, const char* who) {
  if (x.rank() == 2) {
    if (x.extent(1) != channels)
      throw DimensionError(std::string(who) + ": expected last extent " +
                           std::to_string(channels) + ", got " +
                           shape_str(x.shape()));
    return {reshape(x, {1, x.extent(0), x.extent(1)}), true};
  }
  if (x.rank() == 3) {
    if (x.extent(2) != channels)
      throw DimensionError(std::string(who) + ": expected last extent " +
                           std::to_string(channels) + ", got " +
                           shape_str(x.shape()));
    return {x, false};
  }
  throw DimensionError(std::string(who) + ": expected [L x C] or [B x L x C], got " +
                       shape_str(x.shape()));
}

// [B*L x C] -> [B*heads x L x dh]
Tensor split_heads(const Tensor& flat, int b, int l, int heads, int dh) {
  Tensor x = reshape(flat, {b, l, heads, dh});
  x = transpose(x, {0, 2, 1, 3});
  return reshape(x, {b * heads, l, dh});
}

MhaResult attention_core(const Tensor& x_residual, const Tensor& q_src,
                         const Tensor& kv_src, const MhaParams& p) {
  const int b = q_src.extent(0), l = q_src.extent(1), c = p.channels;
  const int lk = kv_src.extent(1);
  const int dh = c / p.heads;

  Tensor qf = matmul(reshape(q_src, {b * l, c}), p.wq);
  Tensor kf = matmul(reshape(kv_src, {b * lk, c}), p.wk);
  Tensor vf = matmul(reshape(kv_src, {b * lk, c}), p.wv);

  Tensor qh = split_heads(qf, b, l, p.heads, dh);
  Tensor kh = split_heads(kf, b, lk, p.heads, dh);
  Tensor vh = split_heads(vf, b, lk, p.heads, dh);

  Tensor scores = scale(bmm(qh, transpose(kh, {0, 2, 1})),
                        1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax(scores, 2);  // [b*heads x l x lk]
  Tensor ctx = bmm(attn, vh);        // [b*heads x l x dh]

  ctx = reshape(ctx, {b, p.heads, l, dh});
  ctx = transpose(ctx, {0, 2, 1, 3});
  Tensor proj = matmul(reshape(ctx, {b * l, c}), p.wo);
  Tensor y = add(x_residual, reshape(proj, {b, l, c}));
  return {y, attn};
}

}  // namespace

MhaResult mha_forward(const Tensor& x, const MhaParams& p) {
  SeqView v = as_batched(x, p.channels, "mha");
  Tensor normed = layer_norm(v.batched, p.ln_g, p.ln_b);
  MhaResult r = attention_core(v.batched, normed, normed, p);
  if (v.was_rank2) r.y = reshape(r.y, {x.extent(0), x.extent(1)});
  return r;
}

Tensor mha(const Tensor& x, const MhaParams& p) { return mha_forward(x, p).y; }

MhaResult cross_mha_forward(const Tensor& x_q, const Tensor& x_kv,
                            const MhaParams& p, const Tensor& q_ln_g,
                            const Tensor& q_ln_b) {
  SeqView vq = as_batched(x_q, p.channels, "cross_mha(query)");
  SeqView vk = as_batched(x_kv, p.channels, "cross_mha(kv)");
  if (vq.batched.extent(0) != vk.batched.extent(0))
    throw DimensionError("cross_mha: batch extents differ");
  Tensor qn = layer_norm(vq.batched, q_ln_g, q_ln_b);
  Tensor kn = layer_norm(vk.batched, p.ln_g, p.ln_b);
  MhaResult r = attention_core(vq.batched, qn, kn, p);
  if (vq.was_rank2) r.y = reshape(r.y, {x_q.extent(0), x_q.extent(1)});
  return r;
}

Tensor ffn(const Tensor& x, const FfnParams& p) {
  SeqView v = as_batched(x, p.channels, "ffn");
  const int b = v.batched.extent(0), l = v.batched.extent(1), c = p.channels;
  Tensor normed = layer_norm(v.batched, p.ln_g, p.ln_b);
  Tensor h = relu(add_rowvec(matmul(reshape(normed, {b * l, c}), p.w1), p.b1));
  Tensor o = add_rowvec(matmul(h, p.w2), p.b2);
  Tensor y = add(v.batched, reshape(o, {b, l, c}));
  if (v.was_rank2) y = reshape(y, {x.extent(0), x.extent(1)});
  return y;
}

BranchParams BranchParams::init(int channels, int heads, int ffn_hidden,
                                Rng& rng) {
  BranchParams p;
  p.img = MhaParams::init(channels, heads, rng);
  p.ins = MhaParams::init(channels, heads, rng);
  p.mix = FfnParams::init(channels, ffn_hidden, rng);
  return p;
}

void BranchParams::register_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>& out) {
  img.register_params(prefix + ".img", out);
  ins.register_params(prefix + ".ins", out);
  mix.register_params(prefix + ".ffn", out);
}

namespace {

void check_volume(const Tensor& v, const char* who) {
  if (v.rank() != 4)
    throw DimensionError(std::string(who) + ": expected [T x C x h x w], got " +
                         shape_str(v.shape()));
}

// [T x C x h x w] -> [T x hw x C]
Tensor unfold_spatial(const Tensor& v) {
  const int t = v.extent(0), c = v.extent(1), hw = v.extent(2) * v.extent(3);
  return transpose(reshape(v, {t, c, hw}), {0, 2, 1});
}

// [T x C x h x w] -> [hw x T x C]
Tensor unfold_temporal(const Tensor& v) {
  const int t = v.extent(0), c = v.extent(1), hw = v.extent(2) * v.extent(3);
  return transpose(reshape(v, {t, c, hw}), {2, 0, 1});
}

Tensor fuse_streams(const Tensor& img_tokens, const Tensor* ins_tokens,
                    const BranchParams& p, bool cross_attention) {
  if (ins_tokens == nullptr)
    return ffn(mha(img_tokens, p.img), p.mix);
  if (cross_attention) {
    // Single block: instance queries attend over image keys/values.
    MhaResult r = cross_mha_forward(*ins_tokens, img_tokens, p.img,
                                    p.ins.ln_g, p.ins.ln_b);
    return ffn(r.y, p.mix);
  }
  Tensor mixed = add(mha(img_tokens, p.img), mha(*ins_tokens, p.ins));
  return ffn(mixed, p.mix);
}

}  // namespace

Tensor spatial_attention(const Tensor& f_img, const Tensor* f_ins,
                         const BranchParams& p, bool cross_attention) {
  check_volume(f_img, "spatial_attention");
  if (f_ins != nullptr && f_ins->shape() != f_img.shape())
    throw DimensionError("spatial_attention: image features " +
                         shape_str(f_img.shape()) +
                         " vs instance embeddings " +
                         shape_str(f_ins->shape()));
  Tensor img_tokens = unfold_spatial(f_img);
  if (f_ins == nullptr) return fuse_streams(img_tokens, nullptr, p, false);
  Tensor ins_tokens = unfold_spatial(*f_ins);
  return fuse_streams(img_tokens, &ins_tokens, p, cross_attention);
}

Tensor temporal_attention(const Tensor& f_img, const Tensor* f_ins,
                          const BranchParams& p, bool cross_attention) {
  check_volume(f_img, "temporal_attention");
  if (f_ins != nullptr && f_ins->shape() != f_img.shape())
    throw DimensionError("temporal_attention: image features " +
                         shape_str(f_img.shape()) +
                         " vs instance embeddings " +
                         shape_str(f_ins->shape()));
  Tensor img_tokens = unfold_temporal(f_img);
  if (f_ins == nullptr) return fuse_streams(img_tokens, nullptr, p, false);
  Tensor ins_tokens = unfold_temporal(*f_ins);
  return fuse_streams(img_tokens, &ins_tokens, p, cross_attention);
}

GlobalFusionParams GlobalFusionParams::init(int channels, int heads, int t_max,
                                            Rng& rng) {
  GlobalFusionParams p;
  p.channels = channels;
  p.t_max = t_max;
  p.token = Tensor::randn({channels}, rng, 0.02);
  p.pos = Tensor::randn({t_max + 1, channels}, rng, 0.02);
  p.block = MhaParams::init(channels, heads, rng);
  return p;
}

void GlobalFusionParams::register_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".token", token);
  out.emplace_back(prefix + ".pos", pos);
  block.register_params(prefix + ".mha", out);
}

Prototype global_fusion(const Tensor* f_s, const Tensor* f_t,
                        const GlobalFusionParams& p) {
  if (f_s == nullptr && f_t == nullptr)
    throw ContractError("global_fusion: both branches absent");
  Tensor fst;
  if (f_s != nullptr) fst = mean_axis(*f_s, 1);       // [T x hw x C] -> [T x C]
  if (f_t != nullptr) {
    Tensor pooled = mean_axis(*f_t, 0);               // [hw x T x C] -> [T x C]
    fst = f_s != nullptr ? add(fst, pooled) : pooled;
  }
  const int t = fst.extent(0);
  if (t > p.t_max)
    throw ConfigError("sequence length " + std::to_string(t) +
                      " exceeds positional table (t_max=" +
                      std::to_string(p.t_max) + ")");
  Tensor seq = concat({reshape(p.token, {1, p.channels}), fst}, 0);
  seq = add(seq, slice(p.pos, 0, 0, t + 1));
  Tensor out = mha(seq, p.block);
  Prototype proto;
  proto.token = reshape(slice(out, 0, 0, 1), {p.channels});
  proto.locals = slice(out, 0, 1, t + 1);
  return proto;
}

}  // namespace i2st
