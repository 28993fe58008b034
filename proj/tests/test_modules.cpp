#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "i2st/attention.hpp"
#include "i2st/backbone.hpp"
#include "i2st/instance_perception.hpp"
#include "i2st/matching.hpp"
#include "i2st/runtime.hpp"
#include "oracles.hpp"

using namespace i2st;

namespace {

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> rows;
  const int n = t.extent(0), c = t.extent(1);
  for (int i = 0; i < n; ++i) {
    std::vector<double> r(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) r[static_cast<std::size_t>(j)] = t.at({i, j});
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// backbone
// ---------------------------------------------------------------------------

TEST_CASE("backbone output shape and zero propagation") {
  Rng rng(1);
  Backbone bb = Backbone::init(3, 16, 32, rng);
  Tensor zero = Tensor::zeros({4, 3, 32, 32});
  Tensor out = bb.forward(zero);
  CHECK(out.shape() == Shape{4, 16, 8, 8});
  for (long long i = 0; i < out.size(); ++i) CHECK(out.data()(i) == 0.0);

  CHECK_THROWS_AS(bb.forward(Tensor::zeros({4, 3, 16, 16})), DimensionError);
  CHECK_THROWS_AS(bb.forward(Tensor::zeros({4, 1, 32, 32})), DimensionError);
}

TEST_CASE("backbone is pure per frame: permutation equivariance over time") {
  Rng rng(2);
  Backbone bb = Backbone::init(3, 8, 16, rng);
  Tensor x = Tensor::zeros({3, 3, 16, 16});
  for (long long i = 0; i < x.size(); ++i) x.data()(i) = rng.uniform();
  // Frame 2 == frame 0.
  const long long fsz = 3 * 16 * 16;
  for (long long i = 0; i < fsz; ++i) x.data()(2 * fsz + i) = x.data()(i);

  Tensor y = bb.forward(x);
  const long long osz = 8 * 4 * 4;
  for (long long i = 0; i < osz; ++i)
    CHECK(y.data()(2 * osz + i) == y.data()(i));

  // Permuting input frames permutes output slices identically.
  Tensor xp = transpose(x, {0, 1, 2, 3});  // copy
  // swap frames 0 and 1
  for (long long i = 0; i < fsz; ++i) {
    xp.data()(i) = x.data()(fsz + i);
    xp.data()(fsz + i) = x.data()(i);
  }
  Tensor yp = bb.forward(xp);
  for (long long i = 0; i < osz; ++i) {
    CHECK(yp.data()(i) == y.data()(osz + i));
    CHECK(yp.data()(osz + i) == y.data()(i));
  }
}

// ---------------------------------------------------------------------------
// instance perception
// ---------------------------------------------------------------------------

TEST_CASE("instance encoder/decoder shapes, ranges and purity") {
  Rng rng(3);
  InstancePerception ipm = InstancePerception::init(16, rng);
  Tensor f = Tensor::randn({4, 16, 8, 8}, rng, 0.5);

  Tensor emb = ipm.encode(f);
  CHECK(emb.shape() == Shape{4, 16, 8, 8});

  Tensor zero_in = Tensor::zeros({4, 16, 8, 8});
  Tensor zero_out = ipm.encode(zero_in);
  for (long long i = 0; i < zero_out.size(); ++i)
    CHECK(zero_out.data()(i) == 0.0);

  // Swapping frames 1 and 2 of the input swaps them in the output.
  Tensor swapped = Tensor::zeros({4, 16, 8, 8});
  const long long fsz = 16 * 8 * 8;
  for (int t = 0; t < 4; ++t) {
    const int src = t == 1 ? 2 : (t == 2 ? 1 : t);
    for (long long i = 0; i < fsz; ++i)
      swapped.data()(t * fsz + i) = f.data()(src * fsz + i);
  }
  Tensor emb_swapped = ipm.encode(swapped);
  for (long long i = 0; i < fsz; ++i) {
    CHECK(emb_swapped.data()(1 * fsz + i) == emb.data()(2 * fsz + i));
    CHECK(emb_swapped.data()(2 * fsz + i) == emb.data()(1 * fsz + i));
  }

  Tensor pred = ipm.decode(emb);
  CHECK(pred.shape() == Shape{4, 1, 32, 32});
  for (long long i = 0; i < pred.size(); ++i) {
    CHECK(pred.data()(i) > 0.0);
    CHECK(pred.data()(i) < 1.0);
  }
}

TEST_CASE("mask loss: exact values and nonnegativity") {
  Tensor target = Tensor::constant({2, 1, 4, 4}, 1.0);
  CHECK(mask_loss(target, target).item() == 0.0);

  Tensor zeros = Tensor::zeros({2, 1, 4, 4});
  CHECK(mask_loss(target, zeros).item() == doctest::Approx(1.0).epsilon(1e-15));

  Tensor half = Tensor::constant({2, 1, 4, 4}, 0.5);
  CHECK(mask_loss(target, half).item() ==
        doctest::Approx(0.25).epsilon(1e-15));

  CHECK_THROWS_AS(mask_loss(target, Tensor::zeros({2, 1, 8, 8})),
                  DimensionError);

  // Zero iff equal.
  Rng rng(5);
  Tensor a = Tensor::randn({3, 1, 4, 4}, rng);
  Tensor b = Tensor::randn({3, 1, 4, 4}, rng);
  CHECK(mask_loss(a, b).item() > 0.0);
}

TEST_CASE("mask-loss descent on a frozen backbone reduces the loss sharply") {
  // Small-scale version of the learnability property; the acceptance suite
  // runs the full 8-video, 200-step variant.
  GenSpec spec;
  spec.train_classes = 2;
  spec.test_classes = 2;
  spec.samples_per_class = 2;
  spec.t_raw = 4;
  spec.render_size = 20;
  spec.crop_size = 16;
  spec.distractors = 1;
  auto classes = build_classes(spec);

  Rng rng(7);
  Backbone bb = Backbone::init(3, 8, 16, rng);
  InstancePerception ipm = InstancePerception::init(8, rng);

  // Two videos, frozen backbone features and teacher masks.
  std::vector<Tensor> feats, targets;
  for (int ci = 0; ci < 2; ++ci) {
    RawVideo raw = render_sample(spec, classes[static_cast<std::size_t>(ci)], 3, 0);
    VideoSample v = augment(raw, 16, SampleMode::eval, rng);
    SampledFrames sf = sparse_sample_frames(v, 4, SampleMode::eval, rng);
    feats.push_back(bb.forward(sf.frames));
    targets.push_back(sf.masks);
  }

  std::vector<std::pair<std::string, Tensor>> params;
  ipm.register_params("ipm", params);
  for (auto& [n, p] : params) p.set_requires_grad(true);
  Adam adam(params, 3e-3, 0.9, 0.999, 1e-8);

  double first = 0.0, last = 0.0;
  for (int step = 0; step < 80; ++step) {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      Tensor sum = mask_loss(targets[0], ipm.decode(ipm.encode(feats[0])));
      sum = add(sum, mask_loss(targets[1], ipm.decode(ipm.encode(feats[1]))));
      loss = scale(sum, 0.5);
    }
    if (step == 0) first = loss.item();
    last = loss.item();
    tape.backward(loss);
    adam.step();
    adam.zero_grad();
  }
  CHECK(last < 0.5 * first);
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

TEST_CASE("attention maps are row-stochastic") {
  Rng rng(11);
  MhaParams p = MhaParams::init(16, 4, rng);
  Tensor x = Tensor::randn({6, 16}, rng);
  MhaResult r = mha_forward(x, p);
  CHECK(r.y.shape() == Shape{6, 16});
  CHECK(r.attn.shape() == Shape{4, 6, 6});
  for (int h = 0; h < 4; ++h)
    for (int i = 0; i < 6; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 6; ++j) {
        const double w = r.attn.at({h, i, j});
        CHECK(w >= 0.0);
        sum += w;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("single-token attention: weight exactly 1, output x + Wo Wv norm(x)") {
  Rng rng(13);
  MhaParams p = MhaParams::init(8, 2, rng);
  Tensor x = Tensor::randn({1, 8}, rng);
  MhaResult r = mha_forward(x, p);
  for (int h = 0; h < 2; ++h) CHECK(r.attn.at({h, 0, 0}) == 1.0);

  Tensor normed = layer_norm(x, p.ln_g, p.ln_b);
  Tensor manual = add(x, matmul(matmul(normed, p.wv), p.wo));
  for (long long i = 0; i < manual.size(); ++i)
    CHECK(r.y.data()(i) == doctest::Approx(manual.data()(i)).epsilon(1e-12));
}

TEST_CASE("mha is permutation-equivariant without positions") {
  Rng rng(17);
  MhaParams p = MhaParams::init(16, 4, rng);
  const int L = 7;
  Tensor x = Tensor::randn({L, 16}, rng);
  Tensor y = mha(x, p);

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> perm(L);
    for (int i = 0; i < L; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    Tensor xp = Tensor::zeros({L, 16});
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < 16; ++j)
        xp.at({i, j}) = x.at({perm[static_cast<std::size_t>(i)], j});
    Tensor yp = mha(xp, p);
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < 16; ++j)
        CHECK(yp.at({i, j}) ==
              doctest::Approx(y.at({perm[static_cast<std::size_t>(i)], j}))
                  .epsilon(1e-12));
  }
}

TEST_CASE("spatial attention: shape, frame independence, ablation identity") {
  Rng rng(19);
  BranchParams p = BranchParams::init(16, 4, 32, rng);
  Tensor f_img = Tensor::randn({4, 16, 8, 8}, rng, 0.5);
  Tensor f_ins = Tensor::randn({4, 16, 8, 8}, rng, 0.5);

  Tensor f_s = spatial_attention(f_img, &f_ins, p, false);
  CHECK(f_s.shape() == Shape{4, 64, 16});

  // Changing frame 3 of the inputs only changes slice 3 of the output.
  Tensor f_img2 = transpose(f_img, {0, 1, 2, 3});
  const long long fsz = 16 * 64;
  for (long long i = 0; i < fsz; ++i) f_img2.data()(3 * fsz + i) += 0.25;
  Tensor f_s2 = spatial_attention(f_img2, &f_ins, p, false);
  const long long osz = 64 * 16;
  for (long long i = 0; i < 3 * osz; ++i)
    CHECK(f_s2.data()(i) == f_s.data()(i));
  double delta = 0.0;
  for (long long i = 3 * osz; i < 4 * osz; ++i)
    delta += std::abs(f_s2.data()(i) - f_s.data()(i));
  CHECK(delta > 0.0);

  // Zero instance embeddings + zeroed instance value/output projections
  // reproduce the image-only pathway bit for bit.
  BranchParams pz = p;
  pz.ins.wv = Tensor::zeros({16, 16});
  pz.ins.wo = Tensor::zeros({16, 16});
  Tensor zeros = Tensor::zeros({4, 16, 8, 8});
  Tensor with_dead_stream = spatial_attention(f_img, &zeros, pz, false);
  Tensor image_only = spatial_attention(f_img, nullptr, pz, false);
  for (long long i = 0; i < with_dead_stream.size(); ++i)
    CHECK(with_dead_stream.data()(i) == image_only.data()(i));

  CHECK_THROWS_AS(
      spatial_attention(f_img, &f_s, p, false),  // wrong-shape instance input
      DimensionError);
}

TEST_CASE("temporal attention: shape and location independence") {
  Rng rng(23);
  BranchParams p = BranchParams::init(16, 4, 32, rng);
  Tensor f_img = Tensor::randn({4, 16, 8, 8}, rng, 0.5);
  Tensor f_ins = Tensor::randn({4, 16, 8, 8}, rng, 0.5);

  Tensor f_t = temporal_attention(f_img, &f_ins, p, false);
  CHECK(f_t.shape() == Shape{64, 4, 16});

  // Perturb one spatial location (y=2, x=5) across all frames/channels:
  // only that location's row block may change.
  Tensor f_img2 = transpose(f_img, {0, 1, 2, 3});
  const int loc = 2 * 8 + 5;
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < 16; ++c) f_img2.at({t, c, 2, 5}) += 0.5;
  Tensor f_t2 = temporal_attention(f_img2, &f_ins, p, false);
  for (int l = 0; l < 64; ++l) {
    double delta = 0.0;
    for (int t = 0; t < 4; ++t)
      for (int c = 0; c < 16; ++c)
        delta += std::abs(f_t2.at({l, t, c}) - f_t.at({l, t, c}));
    if (l == loc)
      CHECK(delta > 0.0);
    else
      CHECK(delta == 0.0);
  }
}

TEST_CASE("cross-attention variant differs from self-attention fusion") {
  Rng rng(29);
  BranchParams p = BranchParams::init(16, 4, 32, rng);
  Tensor f_img = Tensor::randn({2, 16, 4, 4}, rng, 0.5);
  Tensor f_ins = Tensor::randn({2, 16, 4, 4}, rng, 0.5);
  Tensor self_out = spatial_attention(f_img, &f_ins, p, false);
  Tensor cross_out = spatial_attention(f_img, &f_ins, p, true);
  CHECK(self_out.shape() == cross_out.shape());
  double delta = 0.0;
  for (long long i = 0; i < self_out.size(); ++i)
    delta += std::abs(self_out.data()(i) - cross_out.data()(i));
  CHECK(delta > 0.0);
}

TEST_CASE("global fusion: shapes, symmetry without positions, sensitivity with") {
  Rng rng(31);
  GlobalFusionParams p = GlobalFusionParams::init(16, 4, 8, rng);
  Tensor f_s = Tensor::randn({4, 64, 16}, rng, 0.5);
  Tensor f_t = Tensor::randn({64, 4, 16}, rng, 0.5);

  Prototype proto = global_fusion(&f_s, &f_t, p);
  CHECK(proto.token.shape() == Shape{16});
  CHECK(proto.locals.shape() == Shape{4, 16});

  // f^ST = avgpool(f^S) + avgpool(f^T), both over the spatial axis.
  Tensor pooled = add(mean_axis(f_s, 1), mean_axis(f_t, 0));
  CHECK(pooled.shape() == Shape{4, 16});

  // Zero positions + identical fst rows => identical local outputs.
  GlobalFusionParams pz = p;
  pz.pos = Tensor::zeros({9, 16});
  Tensor row = Tensor::randn({1, 64, 16}, rng, 0.5);
  std::vector<Tensor> reps(4, row);
  Tensor f_s_dup = concat(reps, 0);  // four identical frame slices
  Prototype sym = global_fusion(&f_s_dup, nullptr, pz);
  for (int t = 1; t < 4; ++t)
    for (int c = 0; c < 16; ++c)
      CHECK(sym.locals.at({t, c}) ==
            doctest::Approx(sym.locals.at({0, c})).epsilon(1e-12));

  // With nonzero positions, swapping two fst rows changes the locals.
  Tensor f_s_swapped = concat(
      {slice(f_s, 0, 1, 2), slice(f_s, 0, 0, 1), slice(f_s, 0, 2, 4)}, 0);
  Prototype swapped = global_fusion(&f_s_swapped, nullptr, p);
  Prototype base = global_fusion(&f_s, nullptr, p);
  double delta = 0.0;
  for (int c = 0; c < 16; ++c)
    delta += std::abs(swapped.locals.at({0, c}) - base.locals.at({1, c}));
  CHECK(delta > 0.0);

  // Branch toggles: single-branch fusion uses that branch's pool alone.
  Prototype only_s = global_fusion(&f_s, nullptr, p);
  Prototype only_t = global_fusion(nullptr, &f_t, p);
  CHECK(only_s.locals.shape() == Shape{4, 16});
  CHECK(only_t.locals.shape() == Shape{4, 16});
  CHECK_THROWS_AS(global_fusion(nullptr, nullptr, p), ContractError);

  // Sequence longer than the positional table is rejected.
  Tensor long_seq = Tensor::randn({9, 4, 16}, rng);
  CHECK_THROWS_AS(global_fusion(&long_seq, nullptr, p), ConfigError);
}

// ---------------------------------------------------------------------------
// matching
// ---------------------------------------------------------------------------

TEST_CASE("cosine similarity: fixed points, scale invariance, zero guard") {
  Rng rng(37);
  Tensor u = Tensor::randn({8}, rng);
  CHECK(cosine_sim(u, u).item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_sim(u, scale(u, -1.0)).item() ==
        doctest::Approx(-1.0).epsilon(1e-12));

  Tensor v = Tensor::randn({8}, rng);
  const double base = cosine_sim(u, v).item();
  CHECK(cosine_sim(scale(u, 3.7), v).item() ==
        doctest::Approx(base).epsilon(1e-12));
  CHECK(std::abs(base) <= 1.0);

  Tensor zero = Tensor::zeros({8});
  CHECK(std::isfinite(cosine_sim(zero, v).item()));
  CHECK(cosine_sim(zero, v).item() == 0.0);
}

TEST_CASE("bi_mhm: fixed points, symmetry, permutation invariance, oracle") {
  Rng rng(41);
  Tensor a = Tensor::randn({4, 8}, rng);
  CHECK(bi_mhm(a, a).item() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor b = Tensor::randn({4, 8}, rng);
  const double ab = bi_mhm(a, b).item();
  CHECK(bi_mhm(b, a).item() == doctest::Approx(ab).epsilon(1e-12));
  CHECK(ab <= 0.0);
  CHECK(ab >= -2.0);

  // Frame order of b is irrelevant (min over an unordered set).
  Tensor b_perm = concat({slice(b, 0, 2, 4), slice(b, 0, 0, 2)}, 0);
  CHECK(bi_mhm(a, b_perm).item() == doctest::Approx(ab).epsilon(1e-12));

  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = Tensor::randn({4, 6}, rng);
    Tensor y = Tensor::randn({4, 6}, rng);
    const double got = bi_mhm(x, y).item();
    const double want = oracle::bi_mhm(rows_of(x), rows_of(y));
    CHECK(std::abs(got - want) < 1e-12);
  }
}

TEST_CASE("global-local score composition and weight semantics") {
  Rng rng(43);
  auto mk_proto = [&](Tensor locals, Tensor token) {
    Prototype p;
    p.locals = std::move(locals);
    p.token = std::move(token);
    return p;
  };
  Prototype p1 = mk_proto(Tensor::randn({4, 8}, rng), Tensor::randn({8}, rng));
  Prototype p2 = mk_proto(Tensor::randn({4, 8}, rng), Tensor::randn({8}, rng));

  MatchConfig cfg;
  const double both = global_local_score(p1, p2, cfg).item();
  const double want = bi_mhm(p1.locals, p2.locals).item() +
                      cosine_sim(p1.token, p2.token).item();
  CHECK(both == doctest::Approx(want).epsilon(1e-12));

  // Identical prototypes with default weights: 0 + 1.
  CHECK(global_local_score(p1, p1, cfg).item() ==
        doctest::Approx(1.0).epsilon(1e-12));

  // w_global = 0 reduces exactly to the local term.
  MatchConfig local_only;
  local_only.w_global = 0.0;
  CHECK(global_local_score(p1, p2, local_only).item() ==
        bi_mhm(p1.locals, p2.locals).item());
  CHECK(both != global_local_score(p1, p2, local_only).item());

  MatchConfig bad;
  bad.metric = LocalMetric::otam;
  CHECK_THROWS_AS(global_local_score(p1, p2, bad), ConfigError);
  MatchConfig dead;
  dead.w_global = 0.0;
  dead.w_local = 0.0;
  CHECK_THROWS_AS(dead.validate(), ConfigError);
}

TEST_CASE("prototype averaging") {
  Rng rng(47);
  Prototype a{Tensor::randn({8}, rng), Tensor::randn({4, 8}, rng)};
  Prototype b{scale(a.token, -1.0), Tensor::randn({4, 8}, rng)};

  Prototype one = average_prototypes({a});
  for (int i = 0; i < 8; ++i) CHECK(one.token.data()(i) == a.token.data()(i));

  Prototype same = average_prototypes({a, a});
  for (int i = 0; i < 8; ++i)
    CHECK(same.token.data()(i) == doctest::Approx(a.token.data()(i)).epsilon(1e-15));

  // Mean of {v, -v} tokens is the zero token; the cosine guard downstream
  // keeps scores finite.
  Prototype mixed = average_prototypes({a, b});
  for (int i = 0; i < 8; ++i) CHECK(mixed.token.data()(i) == 0.0);
  CHECK(std::isfinite(cosine_sim(mixed.token, a.token).item()));

  CHECK_THROWS_AS(average_prototypes({}), ContractError);
}

TEST_CASE("classify: argmax, permutation, scale invariance") {
  Rng rng(53);
  MatchConfig cfg;
  std::vector<Prototype> classes;
  for (int i = 0; i < 3; ++i)
    classes.push_back(
        {Tensor::randn({8}, rng), Tensor::randn({4, 8}, rng)});

  // Query equal to class 2's prototype wins.
  Prototype query = classes[2];
  Tensor logits = classify(query, classes, cfg);
  REQUIRE(logits.shape() == Shape{3});
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (logits.data()(i) > logits.data()(best)) best = i;
  CHECK(best == 2);

  // Permuting class order permutes the scores identically.
  std::vector<Prototype> permuted = {classes[1], classes[2], classes[0]};
  Tensor plog = classify(query, permuted, cfg);
  CHECK(plog.data()(0) == logits.data()(1));
  CHECK(plog.data()(1) == logits.data()(2));
  CHECK(plog.data()(2) == logits.data()(0));

  // Scaling every prototype (tokens and locals) by the same positive
  // constant leaves the scores unchanged: both terms are cosine-based.
  std::vector<Prototype> scaled;
  for (const auto& p : classes)
    scaled.push_back({scale(p.token, 2.5), scale(p.locals, 2.5)});
  Prototype squery{scale(query.token, 2.5), scale(query.locals, 2.5)};
  Tensor slog = classify(squery, scaled, cfg);
  for (int i = 0; i < 3; ++i)
    CHECK(slog.data()(i) == doctest::Approx(logits.data()(i)).epsilon(1e-12));

  CHECK_THROWS_AS(classify(query, {classes[0]}, cfg), ContractError);
}

TEST_CASE("classify matches an independent scalar recomputation") {
  Rng rng(59);
  MatchConfig cfg;
  std::vector<Prototype> classes;
  for (int i = 0; i < 4; ++i)
    classes.push_back({Tensor::randn({6}, rng), Tensor::randn({5, 6}, rng)});
  Prototype query{Tensor::randn({6}, rng), Tensor::randn({5, 6}, rng)};

  Tensor logits = classify(query, classes, cfg);
  for (int i = 0; i < 4; ++i) {
    std::vector<double> tok_s, tok_q;
    for (int j = 0; j < 6; ++j) {
      tok_s.push_back(classes[static_cast<std::size_t>(i)].token.data()(j));
      tok_q.push_back(query.token.data()(j));
    }
    const double want =
        oracle::bi_mhm(rows_of(classes[static_cast<std::size_t>(i)].locals),
                       rows_of(query.locals)) +
        oracle::cosine(tok_s, tok_q);
    CHECK(std::abs(logits.data()(i) - want) < 1e-12);
  }
}
