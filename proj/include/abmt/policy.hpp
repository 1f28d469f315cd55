#pragma once

#include <string>
#include <vector>

#include "abmt/adam.hpp"
#include "abmt/env.hpp"
#include "abmt/nn.hpp"

namespace abmt {

enum class EncoderVariant { FlatMlp = 0, Attention = 1 };

inline std::string variant_name(EncoderVariant v) {
  return v == EncoderVariant::FlatMlp ? "mappo" : "ab-mappo";
}

inline EncoderVariant variant_from_name(const std::string& s) {
  if (s == "mappo") return EncoderVariant::FlatMlp;
  if (s == "ab-mappo") return EncoderVariant::Attention;
  throw ConfigError("unknown variant \"" + s + "\" (use mappo or ab-mappo)");
}

struct PolicyArch {
  int hidden_dim = 64;
  int embed_dim = 64;
  int heads = 4;
  double log_std_init = 0.0;
};

// One parameter-shared actor plus one centralized critic. The two encoder
// variants differ only in parameters and the encoder forward; sampling,
// log-prob and update math are the same code path.
class PolicyBundle {
 public:
  PolicyBundle() = default;

  static PolicyBundle create(const Env& env, EncoderVariant variant,
                             const PolicyArch& arch, std::uint64_t seed) {
    PolicyBundle b;
    b.variant_ = variant;
    b.arch_ = arch;
    b.obs_dim_ = env.obs_flat_dim();
    b.obs_tokens_ = env.obs_token_count();
    b.gs_dim_ = env.global_state_dim();
    b.gs_tokens_ = env.global_token_count();
    b.token_width_ = kTokenWidth;
    b.action_dim_ = env.action_dim();
    b.init_params(seed);
    return b;
  }

  // Builds a bundle with the right tensor structure; the checkpoint loader
  // overwrites every value by name.
  static PolicyBundle create_empty(const Env& env, EncoderVariant variant,
                                   const PolicyArch& arch) {
    return create(env, variant, arch, 0);
  }

  EncoderVariant variant() const { return variant_; }
  const PolicyArch& arch() const { return arch_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  int action_dim() const { return action_dim_; }
  int obs_dim() const { return obs_dim_; }
  int global_state_dim() const { return gs_dim_; }

  // Actor mean head on a tape. `obs` is [B, obs_dim] for FlatMlp or
  // [B, n_tokens, token_width] for Attention.
  Var actor_mean(Tape& tape, const BoundParams& bound, Var obs) const {
    if (variant_ == EncoderVariant::FlatMlp)
      return mlp_forward(tape, params_, bound, "actor", actor_mlp_, obs);
    Var feat = attention_encode(tape, params_, bound, "actor.enc", actor_enc_,
                                obs, all_valid_mask(tape.value(obs).dim(0),
                                                    tape.value(obs).dim(1)));
    Var h = tape.tanh_(feat);
    return tape.bias_add(tape.matmul(h, bound[params_.index_of("actor.head.w")]),
                         bound[params_.index_of("actor.head.b")]);
  }

  // Critic value on a tape; returns [B, 1]. `gs` is [B, gs_dim] or
  // [B, gs_tokens, token_width] depending on the variant.
  Var critic_value(Tape& tape, const BoundParams& bound, Var gs) const {
    if (variant_ == EncoderVariant::FlatMlp)
      return mlp_forward(tape, params_, bound, "critic", critic_mlp_, gs);
    Var feat = attention_encode(tape, params_, bound, "critic.enc", critic_enc_,
                                gs, all_valid_mask(tape.value(gs).dim(0),
                                                   tape.value(gs).dim(1)));
    Var h = tape.tanh_(feat);
    return tape.bias_add(
        tape.matmul(h, bound[params_.index_of("critic.head.w")]),
        bound[params_.index_of("critic.head.b")]);
  }

  Var log_std_var(const BoundParams& bound) const {
    return bound[params_.index_of("log_std")];
  }

  struct ActResult {
    Tensor mean;       // [B, A]
    Tensor actions;    // [B, A]
    Tensor log_probs;  // [B]
  };

  // Sampling-mode forward used during collection and evaluation. Log-probs
  // are computed with the same tape ops as the training graph so that the
  // PPO ratio is exactly one before any parameter change.
  ActResult act(const Tensor& obs, Rng& rng, bool deterministic) const {
    Tape tape;
    BoundParams bound = bind_params_no_grad(tape);
    Var mean = actor_mean(tape, bound, tape.constant(obs));
    ActResult r;
    r.mean = tape.value(mean);
    gaussian_sample(r.mean, params_.by_name("log_std"), rng, deterministic,
                    r.actions);
    Var lp = gaussian_log_prob(tape, mean, log_std_var(bound),
                               tape.constant(r.actions));
    r.log_probs = tape.value(lp);
    return r;
  }

  // Critic values for a batch; returns one value per row.
  std::vector<double> values(const Tensor& gs) const {
    Tape tape;
    BoundParams bound = bind_params_no_grad(tape);
    Var v = critic_value(tape, bound, tape.constant(gs));
    return tape.value(v).v;
  }

  // Observation tensor for this variant from per-agent observations.
  Tensor obs_tensor(const std::vector<const Observation*>& obs) const {
    const int B = static_cast<int>(obs.size());
    if (variant_ == EncoderVariant::FlatMlp) {
      Tensor t({B, obs_dim_});
      for (int r = 0; r < B; ++r)
        std::copy(obs[static_cast<std::size_t>(r)]->flat.begin(),
                  obs[static_cast<std::size_t>(r)]->flat.end(),
                  t.v.begin() + static_cast<long>(r) * obs_dim_);
      return t;
    }
    Tensor t({B, obs_tokens_, token_width_});
    const long row = static_cast<long>(obs_tokens_) * token_width_;
    for (int r = 0; r < B; ++r)
      std::copy(obs[static_cast<std::size_t>(r)]->tokens.begin(),
                obs[static_cast<std::size_t>(r)]->tokens.end(),
                t.v.begin() + r * row);
    return t;
  }

  // Global-state tensor for this variant, one row per environment.
  Tensor gs_tensor(const Env& env, const std::vector<const WorldState*>& states) const {
    const int B = static_cast<int>(states.size());
    if (variant_ == EncoderVariant::FlatMlp) {
      Tensor t({B, gs_dim_});
      for (int r = 0; r < B; ++r) {
        auto g = env.global_state(*states[static_cast<std::size_t>(r)]);
        std::copy(g.begin(), g.end(), t.v.begin() + static_cast<long>(r) * gs_dim_);
      }
      return t;
    }
    Tensor t({B, gs_tokens_, token_width_});
    const long row = static_cast<long>(gs_tokens_) * token_width_;
    for (int r = 0; r < B; ++r) {
      auto g = env.global_tokens(*states[static_cast<std::size_t>(r)]);
      std::copy(g.begin(), g.end(), t.v.begin() + r * row);
    }
    return t;
  }

  BoundParams bind_params_no_grad(Tape& tape) const {
    BoundParams b;
    b.vars.reserve(params_.size());
    for (int i = 0; i < params_.size(); ++i)
      b.vars.push_back(tape.leaf(params_.tensor(i), /*requires_grad=*/false));
    return b;
  }

  // Round-trips every tensor through 32-bit floats; matches what a
  // checkpoint save/load cycle does to the values.
  PolicyBundle truncated_to_f32() const {
    PolicyBundle b = *this;
    for (int i = 0; i < b.params_.size(); ++i)
      for (double& x : b.params_.tensor(i).v) x = static_cast<float>(x);
    return b;
  }

 private:
  void init_params(std::uint64_t seed) {
    Rng rng(seed, /*stream=*/0x70617261);  // independent of env streams
    if (variant_ == EncoderVariant::FlatMlp) {
      actor_mlp_ = MlpSpec{{obs_dim_, arch_.hidden_dim, arch_.hidden_dim,
                            action_dim_},
                           0.01};
      critic_mlp_ = MlpSpec{{gs_dim_, arch_.hidden_dim, arch_.hidden_dim, 1},
                            1.0};
      add_mlp_params(params_, "actor", actor_mlp_, rng);
      add_mlp_params(params_, "critic", critic_mlp_, rng);
    } else {
      actor_enc_ = AttentionEncoderSpec{token_width_, arch_.embed_dim,
                                        arch_.heads, arch_.hidden_dim};
      critic_enc_ = actor_enc_;
      add_attention_params(params_, "actor.enc", actor_enc_, rng);
      params_.add("actor.head.w",
                  orthogonal_init(arch_.hidden_dim, action_dim_, 0.01, rng));
      params_.add("actor.head.b", Tensor({action_dim_}));
      add_attention_params(params_, "critic.enc", critic_enc_, rng);
      params_.add("critic.head.w", orthogonal_init(arch_.hidden_dim, 1, 1.0, rng));
      params_.add("critic.head.b", Tensor({1}));
    }
    params_.add("log_std", Tensor::full({action_dim_}, arch_.log_std_init));
  }

  static Tensor all_valid_mask(int b, int t) {
    return Tensor::full({b, t}, 1.0);
  }

  EncoderVariant variant_ = EncoderVariant::FlatMlp;
  PolicyArch arch_;
  int obs_dim_ = 0, obs_tokens_ = 0, gs_dim_ = 0, gs_tokens_ = 0;
  int token_width_ = 0, action_dim_ = 0;
  ParamSet params_;
  MlpSpec actor_mlp_, critic_mlp_;
  AttentionEncoderSpec actor_enc_, critic_enc_;
};

}  // namespace abmt
