#pragma once

#include <cmath>
#include <vector>

#include "abmt/nn.hpp"
#include "abmt/tensor.hpp"

namespace abmt {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool clip_enabled = true;
  double max_grad_norm = 0.5;
};

// Bias-corrected Adam over a ParamSet, with optional global gradient-norm
// clipping applied before the moment updates.
class Adam {
 public:
  Adam(const ParamSet& params, AdamConfig cfg) : cfg_(cfg), t_(0) {
    m_.reserve(static_cast<std::size_t>(params.size()));
    v_.reserve(static_cast<std::size_t>(params.size()));
    for (int i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.tensor(i).shape);
      v_.emplace_back(params.tensor(i).shape);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long step_count() const { return t_; }

  // Mutates `params` in place. `grads` must be shape-parallel to `params`.
  void step(ParamSet& params, std::vector<Tensor>& grads) {
    if (static_cast<int>(grads.size()) != params.size())
      throw std::invalid_argument("adam: gradient count mismatch");
    for (int i = 0; i < params.size(); ++i)
      if (!grads[static_cast<std::size_t>(i)].same_shape(params.tensor(i)))
        throw std::invalid_argument("adam: gradient shape mismatch for " +
                                    params.name(i));

    if (cfg_.clip_enabled) {
      double norm2 = 0.0;
      for (const auto& g : grads)
        for (double x : g.v) norm2 += x * x;
      const double norm = std::sqrt(norm2);
      if (norm > cfg_.max_grad_norm) {
        const double s = cfg_.max_grad_norm / norm;
        for (auto& g : grads)
          for (double& x : g.v) x *= s;
      }
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (int i = 0; i < params.size(); ++i) {
      Tensor& p = params.tensor(i);
      Tensor& m = m_[static_cast<std::size_t>(i)];
      Tensor& v = v_[static_cast<std::size_t>(i)];
      const Tensor& g = grads[static_cast<std::size_t>(i)];
      for (long k = 0; k < p.numel(); ++k) {
        m.v[k] = cfg_.beta1 * m.v[k] + (1.0 - cfg_.beta1) * g.v[k];
        v.v[k] = cfg_.beta2 * v.v[k] + (1.0 - cfg_.beta2) * g.v[k] * g.v[k];
        const double mhat = m.v[k] / bc1;
        const double vhat = v.v[k] / bc2;
        p.v[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  long t_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace abmt
