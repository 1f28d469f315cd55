#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "abmt/autodiff.hpp"
#include "abmt/rng.hpp"
#include "abmt/tensor.hpp"

namespace abmt {

// Ordered collection of named parameter tensors. Order is fixed at build
// time; checkpoints address tensors by name.
class ParamSet {
 public:
  int add(const std::string& name, Tensor t) {
    if (index_.count(name))
      throw std::invalid_argument("ParamSet: duplicate name " + name);
    index_[name] = static_cast<int>(names_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    return static_cast<int>(names_.size()) - 1;
  }

  int size() const { return static_cast<int>(tensors_.size()); }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  Tensor& tensor(int i) { return tensors_[static_cast<std::size_t>(i)]; }
  const Tensor& tensor(int i) const { return tensors_[static_cast<std::size_t>(i)]; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("ParamSet: unknown name " + name);
    return it->second;
  }
  Tensor& by_name(const std::string& name) {
    return tensors_[static_cast<std::size_t>(index_of(name))];
  }
  const Tensor& by_name(const std::string& name) const {
    return const_cast<ParamSet*>(this)->by_name(name);
  }

  long total_scalars() const {
    long n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, int> index_;
};

// Leaves of one ParamSet on a tape; lets callers read gradients back by
// parameter index after backward.
struct BoundParams {
  std::vector<Var> vars;
  Var operator[](int i) const { return vars[static_cast<std::size_t>(i)]; }
};

inline BoundParams bind_params(Tape& tape, const ParamSet& params) {
  BoundParams b;
  b.vars.reserve(params.size());
  for (int i = 0; i < params.size(); ++i)
    b.vars.push_back(tape.leaf(params.tensor(i), /*requires_grad=*/true));
  return b;
}

// ---- Initialization -------------------------------------------------------

// Orthogonal [rows, cols] matrix scaled by gain, via modified Gram-Schmidt
// on a Gaussian draw. For rows < cols the transpose is orthogonalized first,
// matching the usual convention.
inline Tensor orthogonal_init(int rows, int cols, double gain, Rng& rng) {
  const bool transpose = rows < cols;
  const int r = transpose ? cols : rows;
  const int c = transpose ? rows : cols;
  std::vector<std::vector<double>> col(static_cast<std::size_t>(c),
                                       std::vector<double>(static_cast<std::size_t>(r)));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = rng.normal();
  for (int j = 0; j < c; ++j) {
    auto& vj = col[static_cast<std::size_t>(j)];
    for (int pass = 0; pass < 2; ++pass) {
      for (int p = 0; p < j; ++p) {
        const auto& vp = col[static_cast<std::size_t>(p)];
        double dot = 0.0;
        for (int i = 0; i < r; ++i) dot += vj[static_cast<std::size_t>(i)] * vp[static_cast<std::size_t>(i)];
        for (int i = 0; i < r; ++i) vj[static_cast<std::size_t>(i)] -= dot * vp[static_cast<std::size_t>(i)];
      }
    }
    double norm = 0.0;
    for (int i = 0; i < r; ++i) norm += vj[static_cast<std::size_t>(i)] * vj[static_cast<std::size_t>(i)];
    norm = std::sqrt(norm);
    for (int i = 0; i < r; ++i) vj[static_cast<std::size_t>(i)] /= norm;
  }
  Tensor out({rows, cols});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double q = transpose ? col[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]
                                 : col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
      out.v[static_cast<std::size_t>(i) * cols + j] = gain * q;
    }
  return out;
}

// ---- MLP -------------------------------------------------------------------

struct MlpSpec {
  std::vector<int> widths;  // input, hidden..., output
  double output_gain = 1.0;

  void validate() const {
    if (widths.size() < 3)
      throw std::invalid_argument("MlpSpec: need at least one hidden layer");
  }
  int n_layers() const { return static_cast<int>(widths.size()) - 1; }
};

// Adds orthogonally-initialized weights (gain sqrt(2) hidden, output_gain on
// the last layer) and zero biases under `prefix.l<i>.{w,b}`.
inline void add_mlp_params(ParamSet& ps, const std::string& prefix,
                           const MlpSpec& spec, Rng& rng) {
  spec.validate();
  for (int l = 0; l < spec.n_layers(); ++l) {
    const int in = spec.widths[static_cast<std::size_t>(l)];
    const int out = spec.widths[static_cast<std::size_t>(l) + 1];
    const bool last = l == spec.n_layers() - 1;
    const double gain = last ? spec.output_gain : std::sqrt(2.0);
    ps.add(prefix + ".l" + std::to_string(l) + ".w",
           orthogonal_init(in, out, gain, rng));
    ps.add(prefix + ".l" + std::to_string(l) + ".b", Tensor({out}));
  }
}

// Affine-tanh stack: tanh on hidden layers, identity output.
inline Var mlp_forward(Tape& tape, const ParamSet& ps, const BoundParams& bound,
                       const std::string& prefix, const MlpSpec& spec,
                       Var input) {
  if (tape.value(input).cols() != spec.widths.front())
    throw std::invalid_argument("mlp_forward: input width mismatch");
  Var x = input;
  for (int l = 0; l < spec.n_layers(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    x = tape.bias_add(tape.matmul(x, bound[ps.index_of(base + ".w")]),
                      bound[ps.index_of(base + ".b")]);
    if (l != spec.n_layers() - 1) x = tape.tanh_(x);
  }
  return x;
}

// ---- Attention encoder ------------------------------------------------------

// Per-token linear embed -> one multi-head self-attention block with a
// residual connection -> masked mean-pool -> linear projection.
struct AttentionEncoderSpec {
  int token_width = 0;
  int embed_dim = 64;
  int heads = 4;
  int output_dim = 64;

  void validate() const {
    if (token_width < 1) throw std::invalid_argument("attention: token_width");
    if (heads < 1 || embed_dim % heads != 0)
      throw std::invalid_argument("attention: embed_dim must divide by heads");
    if (output_dim < 1) throw std::invalid_argument("attention: output_dim");
  }
};

inline void add_attention_params(ParamSet& ps, const std::string& prefix,
                                 const AttentionEncoderSpec& spec, Rng& rng) {
  spec.validate();
  const int d = spec.embed_dim;
  ps.add(prefix + ".embed.w", orthogonal_init(spec.token_width, d, 1.0, rng));
  ps.add(prefix + ".embed.b", Tensor({d}));
  for (const char* n : {"wq", "wk", "wv", "wo"})
    ps.add(prefix + "." + std::string(n), orthogonal_init(d, d, 1.0, rng));
  for (const char* n : {"bq", "bk", "bv", "bo"})
    ps.add(prefix + "." + std::string(n), Tensor({d}));
  ps.add(prefix + ".out.w", orthogonal_init(d, spec.output_dim, 1.0, rng));
  ps.add(prefix + ".out.b", Tensor({spec.output_dim}));
}

// tokens: [B, T, token_width]; mask: [B, T] with >= 1 valid token per row.
// Returns [B, output_dim]; invariant under any permutation of tokens.
inline Var attention_encode(Tape& tape, const ParamSet& ps,
                            const BoundParams& bound, const std::string& prefix,
                            const AttentionEncoderSpec& spec, Var tokens,
                            const Tensor& mask) {
  auto find = [&](const std::string& suffix) {
    return bound[ps.index_of(prefix + "." + suffix)];
  };
  Var emb = tape.bias_add(tape.matmul(tokens, find("embed.w")), find("embed.b"));
  Var att = tape.multi_head_attention(
      emb, find("wq"), find("bq"), find("wk"), find("bk"), find("wv"),
      find("bv"), find("wo"), find("bo"), mask, spec.heads);
  Var res = tape.add(emb, att);
  Var pooled = tape.masked_mean_pool(res, mask);
  return tape.bias_add(tape.matmul(pooled, find("out.w")), find("out.b"));
}

// ---- Diagonal Gaussian policy head ------------------------------------------

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline const double kLog2Pi = std::log(2.0 * M_PI);

// log N(action | mean, diag exp(2*log_std)) per batch row. `log_std` is a
// rank-1 parameter broadcast across the batch; it is clamped inside.
inline Var gaussian_log_prob(Tape& tape, Var mean, Var log_std, Var actions) {
  const Tensor& tm = tape.value(mean);
  const long B = tm.rows(), A = tm.cols();
  Var ls = tape.clamp_(log_std, kLogStdMin, kLogStdMax);
  Var lsb = tape.broadcast_rows(ls, static_cast<int>(B));
  Var inv_sigma = tape.exp_(tape.neg(lsb));
  Var z = tape.mul(tape.sub(actions, mean), inv_sigma);
  Var quad = tape.scale(tape.sum_last(tape.square(z)), -0.5);
  Var log_det = tape.sum_last(lsb);
  return tape.add_const(tape.sub(quad, log_det),
                        -0.5 * kLog2Pi * static_cast<double>(A));
}

// Entropy of the diagonal Gaussian; state-independent scalar.
inline Var gaussian_entropy(Tape& tape, Var log_std) {
  Var ls = tape.clamp_(log_std, kLogStdMin, kLogStdMax);
  const long A = tape.value(log_std).numel();
  return tape.add_const(tape.sum_all(ls),
                        0.5 * (1.0 + kLog2Pi) * static_cast<double>(A));
}

// Sampling (values only, outside the tape): action = mean + exp(log_std)*z.
inline void gaussian_sample(const Tensor& mean, const Tensor& log_std,
                            Rng& rng, bool deterministic, Tensor& actions_out) {
  const long B = mean.rows(), A = mean.cols();
  actions_out = Tensor(mean.shape);
  for (long r = 0; r < B; ++r) {
    for (long a = 0; a < A; ++a) {
      const double ls = clamp(log_std.v[static_cast<std::size_t>(a)], kLogStdMin, kLogStdMax);
      const double noise = deterministic ? 0.0 : rng.normal();
      actions_out.v[r * A + a] = mean.v[r * A + a] + std::exp(ls) * noise;
    }
  }
}

}  // namespace abmt
