#pragma once

#include <functional>
#include <string>
#include <vector>

#include "abmt/nn.hpp"

namespace abmt {

// Central finite differences against reverse-mode gradients for each network
// architecture the trainers use. Shared by the `gradcheck` CLI subcommand
// and the test suites.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_case;
  int draws = 0;
};

namespace gradcheck_detail {

inline double rel_err(double a, double b) {
  const double denom = std::max(std::abs(a) + std::abs(b), 1e-6);
  return std::abs(a - b) / denom;
}

// Checks every parameter scalar of `params` for the loss functional
// `loss_of` (forward-only) against the tape gradients in `grads`.
inline void check_params(ParamSet& params,
                         const std::function<double(const ParamSet&)>& loss_of,
                         const std::vector<Tensor>& grads,
                         const std::string& label, double h,
                         GradCheckReport& rep) {
  for (int i = 0; i < params.size(); ++i) {
    Tensor& t = params.tensor(i);
    for (long k = 0; k < t.numel(); ++k) {
      const double saved = t.v[k];
      t.v[k] = saved + h;
      const double up = loss_of(params);
      t.v[k] = saved - h;
      const double down = loss_of(params);
      t.v[k] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double ad = grads[static_cast<std::size_t>(i)].v[k];
      const double e = rel_err(ad, fd);
      if (e > rep.max_rel_err) {
        rep.max_rel_err = e;
        rep.worst_case = label + ":" + params.name(i) + "[" +
                         std::to_string(k) + "]";
      }
    }
  }
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (double& x : t.v) x = rng.normal() * scale;
  return t;
}

}  // namespace gradcheck_detail

// One MLP draw: loss = mean((mlp(x) - target)^2).
inline void gradcheck_mlp(Rng& rng, GradCheckReport& rep) {
  using namespace gradcheck_detail;
  const MlpSpec spec{{5, 7, 6, 3}, 1.0};
  ParamSet params;
  add_mlp_params(params, "net", spec, rng);
  for (int i = 0; i < params.size(); ++i)  // nonzero biases too
    for (double& x : params.tensor(i).v) x += 0.05 * rng.normal();
  const Tensor input = random_tensor({4, 5}, rng, 0.8);
  const Tensor target = random_tensor({4, 3}, rng, 0.8);

  auto loss_of = [&](const ParamSet& ps) {
    Tape tape;
    BoundParams bound;
    for (int i = 0; i < ps.size(); ++i)
      bound.vars.push_back(tape.leaf(ps.tensor(i), false));
    Var out = mlp_forward(tape, ps, bound, "net", spec, tape.constant(input));
    Var loss = tape.mean_all(tape.square(tape.sub(out, tape.constant(target))));
    return tape.value(loss).v[0];
  };

  Tape tape;
  BoundParams bound = bind_params(tape, params);
  Var out = mlp_forward(tape, params, bound, "net", spec, tape.constant(input));
  Var loss = tape.mean_all(tape.square(tape.sub(out, tape.constant(target))));
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (int i = 0; i < params.size(); ++i) grads.push_back(tape.grad(bound[i]));
  check_params(params, loss_of, grads, "mlp", 1e-5, rep);
  ++rep.draws;
}

// One attention-encoder draw with a partially masked token set.
inline void gradcheck_attention(Rng& rng, GradCheckReport& rep) {
  using namespace gradcheck_detail;
  const AttentionEncoderSpec spec{6, 8, 2, 4};
  ParamSet params;
  add_attention_params(params, "enc", spec, rng);
  for (int i = 0; i < params.size(); ++i)
    for (double& x : params.tensor(i).v) x += 0.05 * rng.normal();
  const Tensor tokens = random_tensor({2, 4, 6}, rng, 0.8);
  Tensor mask = Tensor::full({2, 4}, 1.0);
  mask.v[3] = 0.0;  // one masked token in the first batch row
  const Tensor target = random_tensor({2, 4}, rng, 0.8);

  auto forward = [&](Tape& tape, const ParamSet& ps, const BoundParams& bound) {
    Var out = attention_encode(tape, ps, bound, "enc", spec,
                               tape.constant(tokens), mask);
    return tape.mean_all(tape.square(tape.sub(out, tape.constant(target))));
  };
  auto loss_of = [&](const ParamSet& ps) {
    Tape tape;
    BoundParams bound;
    for (int i = 0; i < ps.size(); ++i)
      bound.vars.push_back(tape.leaf(ps.tensor(i), false));
    return tape.value(forward(tape, ps, bound)).v[0];
  };

  Tape tape;
  BoundParams bound = bind_params(tape, params);
  Var loss = forward(tape, params, bound);
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (int i = 0; i < params.size(); ++i) grads.push_back(tape.grad(bound[i]));
  check_params(params, loss_of, grads, "attention", 1e-5, rep);
  ++rep.draws;
}

// One gaussian-head draw: mean head + log_std through log-prob and entropy.
inline void gradcheck_gaussian(Rng& rng, GradCheckReport& rep) {
  using namespace gradcheck_detail;
  const MlpSpec spec{{4, 6, 2}, 0.5};
  ParamSet params;
  add_mlp_params(params, "pi", spec, rng);
  Tensor log_std({2});
  log_std.v[0] = -0.3 + 0.2 * rng.normal();
  log_std.v[1] = 0.1 + 0.2 * rng.normal();
  params.add("log_std", log_std);
  const Tensor input = random_tensor({5, 4}, rng, 0.8);
  const Tensor actions = random_tensor({5, 2}, rng, 1.0);

  auto forward = [&](Tape& tape, const ParamSet& ps, const BoundParams& bound) {
    Var mean = mlp_forward(tape, ps, bound, "pi", spec, tape.constant(input));
    Var lp = gaussian_log_prob(tape, mean, bound[ps.index_of("log_std")],
                               tape.constant(actions));
    Var ent = gaussian_entropy(tape, bound[ps.index_of("log_std")]);
    return tape.add(tape.scale(tape.mean_all(lp), 0.7), tape.scale(ent, 0.3));
  };
  auto loss_of = [&](const ParamSet& ps) {
    Tape tape;
    BoundParams bound;
    for (int i = 0; i < ps.size(); ++i)
      bound.vars.push_back(tape.leaf(ps.tensor(i), false));
    return tape.value(forward(tape, ps, bound)).v[0];
  };

  Tape tape;
  BoundParams bound = bind_params(tape, params);
  Var loss = forward(tape, params, bound);
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (int i = 0; i < params.size(); ++i) grads.push_back(tape.grad(bound[i]));
  check_params(params, loss_of, grads, "gaussian", 1e-5, rep);
  ++rep.draws;
}

inline GradCheckReport run_gradcheck(int draws_per_arch, std::uint64_t seed) {
  GradCheckReport rep;
  Rng rng(seed);
  for (int d = 0; d < draws_per_arch; ++d) {
    Rng r1 = rng.split(3 * static_cast<std::uint64_t>(d));
    Rng r2 = rng.split(3 * static_cast<std::uint64_t>(d) + 1);
    Rng r3 = rng.split(3 * static_cast<std::uint64_t>(d) + 2);
    gradcheck_mlp(r1, rep);
    gradcheck_attention(r2, rep);
    gradcheck_gaussian(r3, rep);
  }
  return rep;
}

}  // namespace abmt
