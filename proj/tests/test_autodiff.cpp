#include <gtest/gtest.h>

#include <cmath>

#include "abmt/autodiff.hpp"
#include "abmt/gradcheck.hpp"
#include "abmt/nn.hpp"
#include "abmt/rng.hpp"

namespace {

using namespace abmt;

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
  Var loss = tape.sum_all(tape.square(x));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.value(loss).v[0], 5.0);
  EXPECT_DOUBLE_EQ(tape.grad(x).v[0], 2.0);
  EXPECT_DOUBLE_EQ(tape.grad(x).v[1], 4.0);
}

TEST(Backward, ConstantHasZeroGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {1.0, -2.0, 0.5}), true);
  Var loss = tape.mean_all(tape.constant(Tensor({2}, {3.0, 5.0})));
  // x does not feed the loss.
  Var unused = tape.square(x);
  (void)unused;
  tape.backward(loss);
  for (double g : tape.grad(x).v) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SecondCallWithoutNewForwardThrows) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
  Var loss = tape.sum_all(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), std::logic_error);
}

TEST(Backward, NonScalarLossThrows) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
  Var y = tape.square(x);
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
}

TEST(Ops, ShapeMismatchesThrow) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}), true);
  Var b = tape.leaf(Tensor({3, 2}), true);
  EXPECT_THROW(tape.add(a, b), std::invalid_argument);
  EXPECT_THROW(tape.mul(a, b), std::invalid_argument);
  Var w = tape.leaf(Tensor({4, 2}), true);
  EXPECT_THROW(tape.matmul(a, w), std::invalid_argument);
  Var bias = tape.leaf(Tensor({5}), true);
  EXPECT_THROW(tape.bias_add(a, bias), std::invalid_argument);
  EXPECT_THROW(tape.reshape(a, {7}), std::invalid_argument);
}

TEST(Ops, NonFiniteForwardIsCheckedFailure) {
  Tape tape;
  Var x = tape.leaf(Tensor({1}, {1000.0}), true);
  EXPECT_THROW(tape.exp_(x), NumericError);
}

TEST(Ops, MatMulAgainstHandComputation) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), true);
  Var w = tape.leaf(Tensor({3, 2}, {7, 8, 9, 10, 11, 12}), true);
  Var y = tape.matmul(a, w);
  const Tensor& t = tape.value(y);
  EXPECT_EQ(t.shape, (std::vector<int>{2, 2}));
  EXPECT_DOUBLE_EQ(t.v[0], 58.0);
  EXPECT_DOUBLE_EQ(t.v[1], 64.0);
  EXPECT_DOUBLE_EQ(t.v[2], 139.0);
  EXPECT_DOUBLE_EQ(t.v[3], 154.0);
  tape.backward(tape.sum_all(y));
  // d/dA (sum A W) = row sums of W broadcast.
  EXPECT_DOUBLE_EQ(tape.grad(a).v[0], 15.0);
  EXPECT_DOUBLE_EQ(tape.grad(a).v[1], 19.0);
  EXPECT_DOUBLE_EQ(tape.grad(a).v[2], 23.0);
  // d/dW = column sums of A broadcast.
  EXPECT_DOUBLE_EQ(tape.grad(w).v[0], 5.0);
  EXPECT_DOUBLE_EQ(tape.grad(w).v[2], 7.0);
  EXPECT_DOUBLE_EQ(tape.grad(w).v[4], 9.0);
}

// The PPO surrogate path (exp, clamp, min, mul) checked by central finite
// differences at a point with all ratios well away from the clip kinks.
TEST(Gradcheck, ClippedSurrogateComposite) {
  Rng rng(17);
  const MlpSpec spec{{3, 5, 2}, 0.5};
  ParamSet params;
  add_mlp_params(params, "pi", spec, rng);
  params.add("log_std", Tensor({2}, {-0.2, 0.1}));
  Tensor input({4, 3});
  for (double& x : input.v) x = rng.normal() * 0.7;
  Tensor actions({4, 2});
  for (double& x : actions.v) x = rng.normal() * 0.8;
  Tensor adv({4}, {1.3, -0.7, 0.4, -1.1});

  // Choose logp_old so ratios land near 0.9 / 1.35 (one side clipped, both
  // at least 1e-2 from the 0.8 / 1.2 kinks so finite differences stay on
  // one side).
  Tensor logp_old({4});
  {
    Tape t;
    BoundParams b;
    for (int i = 0; i < params.size(); ++i)
      b.vars.push_back(t.leaf(params.tensor(i), false));
    Var mean = mlp_forward(t, params, b, "pi", spec, t.constant(input));
    Var lp = gaussian_log_prob(t, mean, b.vars[static_cast<std::size_t>(params.index_of("log_std"))],
                               t.constant(actions));
    const Tensor& lpv = t.value(lp);
    logp_old.v[0] = lpv.v[0] - std::log(0.9);
    logp_old.v[1] = lpv.v[1] - std::log(1.35);
    logp_old.v[2] = lpv.v[2] - std::log(1.05);
    logp_old.v[3] = lpv.v[3] - std::log(0.6);
  }

  auto forward = [&](Tape& t, const ParamSet& ps, const BoundParams& b) {
    Var mean = mlp_forward(t, ps, b, "pi", spec, t.constant(input));
    Var lp = gaussian_log_prob(t, mean, b.vars[static_cast<std::size_t>(ps.index_of("log_std"))],
                               t.constant(actions));
    Var ratio = t.exp_(t.sub(lp, t.constant(logp_old)));
    Var a = t.constant(adv);
    Var s1 = t.mul(ratio, a);
    Var s2 = t.mul(t.clamp_(ratio, 0.8, 1.2), a);
    return t.neg(t.mean_all(t.minimum(s1, s2)));
  };

  Tape tape;
  BoundParams bound = bind_params(tape, params);
  Var loss = forward(tape, params, bound);
  tape.backward(loss);

  const double h = 1e-6;
  double max_rel = 0.0;
  for (int i = 0; i < params.size(); ++i) {
    Tensor& t = params.tensor(i);
    for (long k = 0; k < t.numel(); ++k) {
      const double saved = t.v[k];
      auto eval = [&](double x) {
        t.v[k] = x;
        Tape tp;
        BoundParams b;
        for (int q = 0; q < params.size(); ++q)
          b.vars.push_back(tp.leaf(params.tensor(q), false));
        const double out = tp.value(forward(tp, params, b)).v[0];
        t.v[k] = saved;
        return out;
      };
      const double fd = (eval(saved + h) - eval(saved - h)) / (2 * h);
      const double ad = tape.grad(bound[i]).v[k];
      max_rel = std::max(max_rel,
                         std::abs(ad - fd) / std::max(std::abs(ad) + std::abs(fd), 1e-6));
    }
  }
  EXPECT_LT(max_rel, 1e-4);
}

TEST(Gradcheck, AllArchitecturesUnderTolerance) {
  const GradCheckReport rep = run_gradcheck(10, 21);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst_case;
  EXPECT_EQ(rep.draws, 30);
}

TEST(Attention, SingleTokenForcesUnitWeight) {
  Rng rng(3);
  const AttentionEncoderSpec spec{5, 8, 2, 4};
  ParamSet params;
  add_attention_params(params, "enc", spec, rng);
  Tensor tokens({1, 1, 5}, {0.3, -0.2, 0.9, 0.0, 0.4});
  const Tensor mask = Tensor::full({1, 1}, 1.0);

  Tape tape;
  BoundParams bound = bind_params(tape, params);
  Var out = attention_encode(tape, params, bound, "enc", spec,
                             tape.constant(tokens), mask);

  // With one token, softmax weight is exactly 1, so the block reduces to
  // out = (emb + (emb Wv + bv) Wo + bo) Wout + bout for that token.
  auto mm = [&](const Tensor& x, const Tensor& w) {
    Tensor y({1, w.dim(1)});
    kern::matmul_nn(x.v.data(), w.v.data(), y.v.data(), 1, w.dim(0), w.dim(1), false);
    return y;
  };
  auto addb = [&](Tensor x, const Tensor& b) {
    for (long j = 0; j < x.numel(); ++j) x.v[j] += b.v[j];
    return x;
  };
  Tensor flat({1, 5}, tokens.v);
  Tensor emb = addb(mm(flat, params.by_name("enc.embed.w")), params.by_name("enc.embed.b"));
  Tensor v = addb(mm(emb, params.by_name("enc.wv")), params.by_name("enc.bv"));
  Tensor att = addb(mm(v, params.by_name("enc.wo")), params.by_name("enc.bo"));
  Tensor res = emb;
  for (long j = 0; j < res.numel(); ++j) res.v[j] += att.v[j];
  Tensor expect = addb(mm(res, params.by_name("enc.out.w")), params.by_name("enc.out.b"));
  for (long j = 0; j < expect.numel(); ++j)
    EXPECT_NEAR(tape.value(out).v[j], expect.v[j], 1e-12);
}

TEST(Attention, IdenticalTokensGetUniformWeights) {
  // Probe the kernel directly: equal logits + mask -> exactly uniform.
  const double logits[4] = {0.7, 0.7, 0.7, 0.7};
  const double mask[4] = {1, 1, 1, 1};
  double out[4];
  kern::masked_softmax(logits, mask, out, 4);
  for (double p : out) EXPECT_DOUBLE_EQ(p, 0.25);

  // And through the full encoder: identical tokens mean the per-token
  // attention rows are uniform, so every token's output is identical.
  Rng rng(5);
  const AttentionEncoderSpec spec{4, 8, 4, 3};
  ParamSet params;
  add_attention_params(params, "enc", spec, rng);
  Tensor tokens({1, 3, 4});
  for (int t = 0; t < 3; ++t)
    for (int k = 0; k < 4; ++k) tokens.v[static_cast<std::size_t>(t) * 4 + k] = 0.1 * (k + 1);
  Tape tape;
  BoundParams bound = bind_params(tape, params);
  Var emb = tape.bias_add(tape.matmul(tape.constant(tokens),
                                      bound[params.index_of("enc.embed.w")]),
                          bound[params.index_of("enc.embed.b")]);
  Var att = tape.multi_head_attention(
      emb, bound[params.index_of("enc.wq")], bound[params.index_of("enc.bq")],
      bound[params.index_of("enc.wk")], bound[params.index_of("enc.bk")],
      bound[params.index_of("enc.wv")], bound[params.index_of("enc.bv")],
      bound[params.index_of("enc.wo")], bound[params.index_of("enc.bo")],
      Tensor::full({1, 3}, 1.0), spec.heads);
  const Tensor& a = tape.value(att);
  for (int t = 1; t < 3; ++t)
    for (int k = 0; k < 8; ++k)
      EXPECT_NEAR(a.v[static_cast<std::size_t>(t) * 8 + k], a.v[static_cast<std::size_t>(k)], 1e-12);
}

TEST(Attention, MaskedSoftmaxRowsSumToOneAndMaskedGetZero) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 6;
    double logits[6], mask[6], out[6];
    bool any = false;
    for (int j = 0; j < n; ++j) {
      logits[j] = rng.normal() * 3.0;
      mask[j] = rng.uniform() < 0.7 ? 1.0 : 0.0;
      any = any || mask[j] != 0.0;
    }
    if (!any) mask[0] = 1.0;
    kern::masked_softmax(logits, mask, out, n);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      if (mask[j] == 0.0) {
        EXPECT_EQ(out[j], 0.0);
      }
      sum += out[j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Attention, PermutationInvariantPooledOutput) {
  Rng rng(13);
  const AttentionEncoderSpec spec{6, 16, 4, 5};
  ParamSet params;
  add_attention_params(params, "enc", spec, rng);
  const int T = 7;
  Tensor tokens({1, T, 6});
  for (double& x : tokens.v) x = rng.normal();
  const Tensor mask = Tensor::full({1, T}, 1.0);

  auto encode = [&](const Tensor& toks) {
    Tape tape;
    BoundParams bound;
    for (int i = 0; i < params.size(); ++i)
      bound.vars.push_back(tape.leaf(params.tensor(i), false));
    Var out = attention_encode(tape, params, bound, "enc", spec,
                               tape.constant(toks), mask);
    return tape.value(out);
  };
  const Tensor base = encode(tokens);

  Rng perm_rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> perm(T);
    for (int i = 0; i < T; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int i = T - 1; i > 0; --i)
      std::swap(perm[static_cast<std::size_t>(i)],
                perm[static_cast<std::size_t>(perm_rng.uniform_int(static_cast<std::uint64_t>(i + 1)))]);
    Tensor shuffled({1, T, 6});
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < 6; ++k)
        shuffled.v[static_cast<std::size_t>(t) * 6 + k] =
            tokens.v[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)]) * 6 + k];
    const Tensor out = encode(shuffled);
    for (long j = 0; j < base.numel(); ++j)
      ASSERT_NEAR(out.v[j], base.v[j], 1e-10);
  }
}

TEST(Attention, AllMaskedRowThrows) {
  Rng rng(19);
  const AttentionEncoderSpec spec{4, 8, 2, 3};
  ParamSet params;
  add_attention_params(params, "enc", spec, rng);
  Tensor tokens({1, 2, 4});
  Tensor mask({1, 2});  // all zeros
  Tape tape;
  BoundParams bound = bind_params(tape, params);
  EXPECT_THROW(attention_encode(tape, params, bound, "enc", spec,
                                tape.constant(tokens), mask),
               std::invalid_argument);
}

TEST(Attention, ForwardDeterminism) {
  Rng rng(23);
  const AttentionEncoderSpec spec{5, 8, 2, 4};
  ParamSet params;
  add_attention_params(params, "enc", spec, rng);
  Tensor tokens({2, 3, 5});
  for (double& x : tokens.v) x = rng.normal();
  const Tensor mask = Tensor::full({2, 3}, 1.0);
  auto run = [&] {
    Tape tape;
    BoundParams bound;
    for (int i = 0; i < params.size(); ++i)
      bound.vars.push_back(tape.leaf(params.tensor(i), false));
    return tape.value(attention_encode(tape, params, bound, "enc", spec,
                                       tape.constant(tokens), mask)).v;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
