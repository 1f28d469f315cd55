#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "abmt/tensor.hpp"

namespace abmt {

// Handle to a node on a Tape.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Reverse-mode autodiff tape. Nodes are appended in SSA order (parents
// always precede children), so reverse insertion order is a valid reverse
// topological order for backward. One tape describes one forward pass;
// backward may be called once per tape.
class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  // ---- leaves ----
  Var leaf(Tensor value, bool requires_grad) {
    return push(Op::Leaf, {}, std::move(value), requires_grad);
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // ---- accessors ----
  const Tensor& value(Var x) const { return node(x).val; }
  const Tensor& grad(Var x) const {
    if (!backward_done_)
      throw std::logic_error("grad: backward has not been run");
    return node(x).grad;
  }

  // ---- elementwise / structural ops ----
  Var add(Var a, Var b) {
    const Tensor& ta = node(a).val;
    const Tensor& tb = node(b).val;
    require_same_shape(ta, tb, "add");
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i) out.v[i] = ta.v[i] + tb.v[i];
    return push(Op::Add, {a, b}, std::move(out));
  }

  Var sub(Var a, Var b) {
    const Tensor& ta = node(a).val;
    const Tensor& tb = node(b).val;
    require_same_shape(ta, tb, "sub");
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i) out.v[i] = ta.v[i] - tb.v[i];
    return push(Op::Sub, {a, b}, std::move(out));
  }

  Var mul(Var a, Var b) {
    const Tensor& ta = node(a).val;
    const Tensor& tb = node(b).val;
    require_same_shape(ta, tb, "mul");
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i) out.v[i] = ta.v[i] * tb.v[i];
    return push(Op::Mul, {a, b}, std::move(out));
  }

  Var neg(Var a) { return scale(a, -1.0); }

  Var scale(Var a, double c) {
    const Tensor& ta = node(a).val;
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i) out.v[i] = ta.v[i] * c;
    Var r = push(Op::Scale, {a}, std::move(out));
    node(r).c0 = c;
    return r;
  }

  Var add_const(Var a, double c) {
    const Tensor& ta = node(a).val;
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i) out.v[i] = ta.v[i] + c;
    return push(Op::AddConst, {a}, std::move(out));
  }

  Var tanh_(Var a) {
    const Tensor& ta = node(a).val;
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i) out.v[i] = std::tanh(ta.v[i]);
    return push(Op::Tanh, {a}, std::move(out));
  }

  Var exp_(Var a) {
    const Tensor& ta = node(a).val;
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i) out.v[i] = std::exp(ta.v[i]);
    return push(Op::Exp, {a}, std::move(out));
  }

  Var square(Var a) {
    const Tensor& ta = node(a).val;
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i) out.v[i] = ta.v[i] * ta.v[i];
    return push(Op::Square, {a}, std::move(out));
  }

  Var clamp_(Var a, double lo, double hi) {
    const Tensor& ta = node(a).val;
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i)
      out.v[i] = ta.v[i] < lo ? lo : (ta.v[i] > hi ? hi : ta.v[i]);
    Var r = push(Op::Clamp, {a}, std::move(out));
    node(r).c0 = lo;
    node(r).c1 = hi;
    return r;
  }

  Var minimum(Var a, Var b) {
    const Tensor& ta = node(a).val;
    const Tensor& tb = node(b).val;
    require_same_shape(ta, tb, "minimum");
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i)
      out.v[i] = ta.v[i] <= tb.v[i] ? ta.v[i] : tb.v[i];
    return push(Op::Minimum, {a, b}, std::move(out));
  }

  Var maximum(Var a, Var b) {
    const Tensor& ta = node(a).val;
    const Tensor& tb = node(b).val;
    require_same_shape(ta, tb, "maximum");
    Tensor out(ta.shape);
    for (long i = 0; i < out.numel(); ++i)
      out.v[i] = ta.v[i] >= tb.v[i] ? ta.v[i] : tb.v[i];
    return push(Op::Maximum, {a, b}, std::move(out));
  }

  Var reshape(Var a, std::vector<int> new_shape) {
    const Tensor& ta = node(a).val;
    if (Tensor::numel_of(new_shape) != ta.numel())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(std::move(new_shape), ta.v);
    return push(Op::Reshape, {a}, std::move(out));
  }

  // X[..., k] * W[k, n] -> [..., n]; leading dims are batch.
  Var matmul(Var x, Var w) {
    const Tensor& tx = node(x).val;
    const Tensor& tw = node(w).val;
    if (tw.rank() != 2)
      throw std::invalid_argument("matmul: weight must be rank 2");
    const long k = tw.dim(0), n = tw.dim(1);
    if (tx.cols() != k)
      throw std::invalid_argument("matmul: inner dims mismatch " +
                                  shape_str(tx.shape) + " x " +
                                  shape_str(tw.shape));
    const long m = tx.rows();
    std::vector<int> out_shape = tx.shape;
    out_shape.back() = static_cast<int>(n);
    Tensor out(out_shape);
    kern::matmul_nn(tx.v.data(), tw.v.data(), out.v.data(), m, k, n, false);
    return push(Op::MatMul, {x, w}, std::move(out));
  }

  // X[..., n] + b[n], broadcast over leading dims.
  Var bias_add(Var x, Var b) {
    const Tensor& tx = node(x).val;
    const Tensor& tb = node(b).val;
    if (tb.rank() != 1 || tb.dim(0) != tx.cols())
      throw std::invalid_argument("bias_add: bias shape mismatch");
    Tensor out(tx.shape);
    const long rows = tx.rows(), n = tx.cols();
    for (long r = 0; r < rows; ++r)
      for (long j = 0; j < n; ++j)
        out.v[r * n + j] = tx.v[r * n + j] + tb.v[j];
    return push(Op::BiasAdd, {x, b}, std::move(out));
  }

  // v[n] -> [rows, n]
  Var broadcast_rows(Var v, int rows) {
    const Tensor& tv = node(v).val;
    if (tv.rank() != 1)
      throw std::invalid_argument("broadcast_rows: input must be rank 1");
    const long n = tv.dim(0);
    Tensor out({rows, static_cast<int>(n)});
    for (int r = 0; r < rows; ++r)
      for (long j = 0; j < n; ++j) out.v[r * n + j] = tv.v[j];
    return push(Op::BroadcastRows, {v}, std::move(out));
  }

  // [..., n] -> [...] (sums over the last dim; scalar result gets shape [1]).
  Var sum_last(Var a) {
    const Tensor& ta = node(a).val;
    const long rows = ta.rows(), n = ta.cols();
    std::vector<int> out_shape(ta.shape.begin(), ta.shape.end() - 1);
    if (out_shape.empty()) out_shape = {1};
    Tensor out(out_shape);
    for (long r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (long j = 0; j < n; ++j) acc += ta.v[r * n + j];
      out.v[r] = acc;
    }
    return push(Op::SumLast, {a}, std::move(out));
  }

  Var sum_all(Var a) {
    const Tensor& ta = node(a).val;
    double acc = 0.0;
    for (double x : ta.v) acc += x;
    return push(Op::SumAll, {a}, Tensor::scalar(acc));
  }

  Var mean_all(Var a) {
    const Tensor& ta = node(a).val;
    double acc = 0.0;
    for (double x : ta.v) acc += x;
    return push(Op::MeanAll, {a}, Tensor::scalar(acc / ta.numel()));
  }

  // Fused masked multi-head self-attention:
  //   Q,K,V = X Wq + bq, ...; per head softmax(Q K^T / sqrt(d_h)) V over
  //   valid keys; heads concatenated; output projection Wo, bo.
  // The residual connection is composed outside via add().
  Var multi_head_attention(Var x, Var wq, Var bq, Var wk, Var bk, Var wv,
                           Var bv, Var wo, Var bo, const Tensor& mask,
                           int heads) {
    const Tensor& tx = node(x).val;
    if (tx.rank() != 3)
      throw std::invalid_argument("attention: input must be [B, T, d]");
    const long B = tx.dim(0), T = tx.dim(1), d = tx.dim(2);
    if (heads < 1 || d % heads != 0)
      throw std::invalid_argument("attention: embed dim not divisible by heads");
    if (mask.rank() != 2 || mask.dim(0) != B || mask.dim(1) != T)
      throw std::invalid_argument("attention: mask must be [B, T]");
    for (long b = 0; b < B; ++b) {
      bool any = false;
      for (long t = 0; t < T; ++t) any = any || mask.v[b * T + t] != 0.0;
      if (!any)
        throw std::invalid_argument("attention: batch row with all tokens masked");
    }
    for (Var w : {wq, wk, wv, wo}) {
      const Tensor& tw = node(w).val;
      if (tw.rank() != 2 || tw.dim(0) != d || tw.dim(1) != d)
        throw std::invalid_argument("attention: projection must be [d, d]");
    }

    auto ctx = std::make_shared<MhaCtx>();
    ctx->B = B;
    ctx->T = T;
    ctx->d = d;
    ctx->h = heads;
    ctx->mask = mask;
    const long dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    auto project = [&](Var w, Var b) {
      Tensor out({static_cast<int>(B), static_cast<int>(T), static_cast<int>(d)});
      kern::matmul_nn(tx.v.data(), node(w).val.v.data(), out.v.data(), B * T, d,
                      d, false);
      const Tensor& tb = node(b).val;
      for (long r = 0; r < B * T; ++r)
        for (long j = 0; j < d; ++j) out.v[r * d + j] += tb.v[j];
      return out;
    };
    ctx->q = project(wq, bq);
    ctx->k = project(wk, bk);
    ctx->vv = project(wv, bv);
    ctx->p.assign(B * heads * T * T, 0.0);
    ctx->concat = Tensor({static_cast<int>(B), static_cast<int>(T),
                          static_cast<int>(d)});

    std::vector<double> logits(T);
    for (long b = 0; b < B; ++b) {
      const double* mrow = mask.v.data() + b * T;
      for (int hh = 0; hh < heads; ++hh) {
        const long off = hh * dh;
        for (long i = 0; i < T; ++i) {
          const double* qi = ctx->q.v.data() + (b * T + i) * d + off;
          for (long j = 0; j < T; ++j) {
            const double* kj = ctx->k.v.data() + (b * T + j) * d + off;
            double acc = 0.0;
            for (long e = 0; e < dh; ++e) acc += qi[e] * kj[e];
            logits[j] = acc * sc;
          }
          double* prow = ctx->p.data() + ((b * heads + hh) * T + i) * T;
          kern::masked_softmax(logits.data(), mrow, prow, T);
          double* orow = ctx->concat.v.data() + (b * T + i) * d + off;
          std::fill(orow, orow + dh, 0.0);
          for (long j = 0; j < T; ++j) {
            const double pij = prow[j];
            if (pij == 0.0) continue;
            const double* vj = ctx->vv.v.data() + (b * T + j) * d + off;
            for (long e = 0; e < dh; ++e) orow[e] += pij * vj[e];
          }
        }
      }
    }

    Tensor out({static_cast<int>(B), static_cast<int>(T), static_cast<int>(d)});
    kern::matmul_nn(ctx->concat.v.data(), node(wo).val.v.data(), out.v.data(),
                    B * T, d, d, false);
    const Tensor& tbo = node(bo).val;
    for (long r = 0; r < B * T; ++r)
      for (long j = 0; j < d; ++j) out.v[r * d + j] += tbo.v[j];

    Var r = push(Op::Mha, {x, wq, bq, wk, bk, wv, bv, wo, bo}, std::move(out));
    node(r).mha = std::move(ctx);
    return r;
  }

  // X[B, T, d], mask[B, T] -> [B, d]; mean over valid tokens.
  Var masked_mean_pool(Var x, const Tensor& mask) {
    const Tensor& tx = node(x).val;
    if (tx.rank() != 3)
      throw std::invalid_argument("masked_mean_pool: input must be [B, T, d]");
    const long B = tx.dim(0), T = tx.dim(1), d = tx.dim(2);
    if (mask.rank() != 2 || mask.dim(0) != B || mask.dim(1) != T)
      throw std::invalid_argument("masked_mean_pool: mask must be [B, T]");
    Tensor out({static_cast<int>(B), static_cast<int>(d)});
    for (long b = 0; b < B; ++b) {
      double count = 0.0;
      for (long t = 0; t < T; ++t) count += mask.v[b * T + t] != 0.0 ? 1.0 : 0.0;
      if (count == 0.0)
        throw std::invalid_argument("masked_mean_pool: all tokens masked");
      for (long t = 0; t < T; ++t) {
        if (mask.v[b * T + t] == 0.0) continue;
        const double* row = tx.v.data() + (b * T + t) * d;
        for (long j = 0; j < d; ++j) out.v[b * d + j] += row[j];
      }
      for (long j = 0; j < d; ++j) out.v[b * d + j] /= count;
    }
    Var r = push(Op::MaskedMeanPool, {x}, std::move(out));
    node(r).pool_mask = std::make_shared<Tensor>(mask);
    return r;
  }

  // Reverse-mode sweep from a scalar loss. May be called once per tape.
  void backward(Var loss) {
    if (backward_done_)
      throw std::logic_error("backward: called twice without a new forward");
    Node& ln = node(loss);
    if (ln.val.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    for (auto& nd : nodes_) {
      nd.grad = Tensor(nd.val.shape);  // zeroed accumulators
    }
    ln.grad.v[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (!nodes_[i].requires_grad) continue;
      backward_node(i);
    }
    backward_done_ = true;
  }

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    Leaf, Add, Sub, Mul, Scale, AddConst, Tanh, Exp, Square, Clamp, Minimum,
    Maximum, Reshape, MatMul, BiasAdd, BroadcastRows, SumLast, SumAll,
    MeanAll, Mha, MaskedMeanPool,
  };

  struct MhaCtx {
    long B = 0, T = 0, d = 0;
    int h = 0;
    Tensor q, k, vv, concat;
    std::vector<double> p;  // [B, h, T, T]
    Tensor mask;
  };

  struct Node {
    Op op = Op::Leaf;
    std::vector<int> parents;
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    double c0 = 0.0, c1 = 0.0;
    std::shared_ptr<MhaCtx> mha;
    std::shared_ptr<Tensor> pool_mask;
  };

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.idx)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)]; }

  static void require_same_shape(const Tensor& a, const Tensor& b,
                                 const char* op) {
    if (!a.same_shape(b))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_str(a.shape) + " vs " +
                                  shape_str(b.shape));
  }

  Var push(Op op, std::initializer_list<Var> parents, Tensor val,
           bool requires_grad_override = false) {
    Node nd;
    nd.op = op;
    nd.requires_grad = requires_grad_override;
    for (Var p : parents) {
      nd.parents.push_back(p.idx);
      if (node(p).requires_grad) nd.requires_grad = true;
    }
    if (check_finite_ && !val.all_finite())
      throw NumericError(std::string("non-finite value produced by op #") +
                         std::to_string(static_cast<int>(op)));
    nd.val = std::move(val);
    nodes_.push_back(std::move(nd));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Tensor& pgrad(int parent) { return nodes_[static_cast<std::size_t>(parent)].grad; }
  const Tensor& pval(int parent) const {
    return nodes_[static_cast<std::size_t>(parent)].val;
  }
  bool preq(int parent) const {
    return nodes_[static_cast<std::size_t>(parent)].requires_grad;
  }

  void backward_node(int i) {
    Node& nd = nodes_[static_cast<std::size_t>(i)];
    const Tensor& g = nd.grad;
    switch (nd.op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        for (int side = 0; side < 2; ++side) {
          const int p = nd.parents[side];
          if (!preq(p)) continue;
          Tensor& pg = pgrad(p);
          for (long t = 0; t < g.numel(); ++t) pg.v[t] += g.v[t];
        }
        break;
      }
      case Op::Sub: {
        if (preq(nd.parents[0])) {
          Tensor& pg = pgrad(nd.parents[0]);
          for (long t = 0; t < g.numel(); ++t) pg.v[t] += g.v[t];
        }
        if (preq(nd.parents[1])) {
          Tensor& pg = pgrad(nd.parents[1]);
          for (long t = 0; t < g.numel(); ++t) pg.v[t] -= g.v[t];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& a = pval(nd.parents[0]);
        const Tensor& b = pval(nd.parents[1]);
        if (preq(nd.parents[0])) {
          Tensor& pg = pgrad(nd.parents[0]);
          for (long t = 0; t < g.numel(); ++t) pg.v[t] += g.v[t] * b.v[t];
        }
        if (preq(nd.parents[1])) {
          Tensor& pg = pgrad(nd.parents[1]);
          for (long t = 0; t < g.numel(); ++t) pg.v[t] += g.v[t] * a.v[t];
        }
        break;
      }
      case Op::Scale: {
        if (!preq(nd.parents[0])) break;
        Tensor& pg = pgrad(nd.parents[0]);
        for (long t = 0; t < g.numel(); ++t) pg.v[t] += g.v[t] * nd.c0;
        break;
      }
      case Op::AddConst:
      case Op::Reshape: {
        if (!preq(nd.parents[0])) break;
        Tensor& pg = pgrad(nd.parents[0]);
        for (long t = 0; t < g.numel(); ++t) pg.v[t] += g.v[t];
        break;
      }
      case Op::Tanh: {
        if (!preq(nd.parents[0])) break;
        Tensor& pg = pgrad(nd.parents[0]);
        for (long t = 0; t < g.numel(); ++t)
          pg.v[t] += g.v[t] * (1.0 - nd.val.v[t] * nd.val.v[t]);
        break;
      }
      case Op::Exp: {
        if (!preq(nd.parents[0])) break;
        Tensor& pg = pgrad(nd.parents[0]);
        for (long t = 0; t < g.numel(); ++t) pg.v[t] += g.v[t] * nd.val.v[t];
        break;
      }
      case Op::Square: {
        if (!preq(nd.parents[0])) break;
        const Tensor& a = pval(nd.parents[0]);
        Tensor& pg = pgrad(nd.parents[0]);
        for (long t = 0; t < g.numel(); ++t) pg.v[t] += g.v[t] * 2.0 * a.v[t];
        break;
      }
      case Op::Clamp: {
        if (!preq(nd.parents[0])) break;
        const Tensor& a = pval(nd.parents[0]);
        Tensor& pg = pgrad(nd.parents[0]);
        for (long t = 0; t < g.numel(); ++t)
          if (a.v[t] >= nd.c0 && a.v[t] <= nd.c1) pg.v[t] += g.v[t];
        break;
      }
      case Op::Minimum:
      case Op::Maximum: {
        const Tensor& a = pval(nd.parents[0]);
        const Tensor& b = pval(nd.parents[1]);
        const bool is_min = nd.op == Op::Minimum;
        for (long t = 0; t < g.numel(); ++t) {
          const bool first = is_min ? a.v[t] <= b.v[t] : a.v[t] >= b.v[t];
          const int p = nd.parents[first ? 0 : 1];
          if (preq(p)) pgrad(p).v[t] += g.v[t];
        }
        break;
      }
      case Op::MatMul: {
        const Tensor& x = pval(nd.parents[0]);
        const Tensor& w = pval(nd.parents[1]);
        const long m = x.rows(), k = x.cols(), n = w.dim(1);
        if (preq(nd.parents[0]))
          kern::matmul_nt(g.v.data(), w.v.data(), pgrad(nd.parents[0]).v.data(),
                          m, n, k, true);
        if (preq(nd.parents[1]))
          kern::matmul_tn(x.v.data(), g.v.data(), pgrad(nd.parents[1]).v.data(),
                          m, k, n, true);
        break;
      }
      case Op::BiasAdd: {
        const long rows = nd.val.rows(), n = nd.val.cols();
        if (preq(nd.parents[0])) {
          Tensor& pg = pgrad(nd.parents[0]);
          for (long t = 0; t < g.numel(); ++t) pg.v[t] += g.v[t];
        }
        if (preq(nd.parents[1])) {
          Tensor& pg = pgrad(nd.parents[1]);
          for (long r = 0; r < rows; ++r)
            for (long j = 0; j < n; ++j) pg.v[j] += g.v[r * n + j];
        }
        break;
      }
      case Op::BroadcastRows: {
        if (!preq(nd.parents[0])) break;
        const long rows = nd.val.dim(0), n = nd.val.dim(1);
        Tensor& pg = pgrad(nd.parents[0]);
        for (long r = 0; r < rows; ++r)
          for (long j = 0; j < n; ++j) pg.v[j] += g.v[r * n + j];
        break;
      }
      case Op::SumLast: {
        if (!preq(nd.parents[0])) break;
        const Tensor& a = pval(nd.parents[0]);
        const long rows = a.rows(), n = a.cols();
        Tensor& pg = pgrad(nd.parents[0]);
        for (long r = 0; r < rows; ++r)
          for (long j = 0; j < n; ++j) pg.v[r * n + j] += g.v[r];
        break;
      }
      case Op::SumAll: {
        if (!preq(nd.parents[0])) break;
        Tensor& pg = pgrad(nd.parents[0]);
        for (long t = 0; t < pg.numel(); ++t) pg.v[t] += g.v[0];
        break;
      }
      case Op::MeanAll: {
        if (!preq(nd.parents[0])) break;
        Tensor& pg = pgrad(nd.parents[0]);
        const double inv = 1.0 / pg.numel();
        for (long t = 0; t < pg.numel(); ++t) pg.v[t] += g.v[0] * inv;
        break;
      }
      case Op::Mha:
        backward_mha(nd);
        break;
      case Op::MaskedMeanPool: {
        if (!preq(nd.parents[0])) break;
        const Tensor& mask = *nd.pool_mask;
        const Tensor& x = pval(nd.parents[0]);
        const long B = x.dim(0), T = x.dim(1), d = x.dim(2);
        Tensor& pg = pgrad(nd.parents[0]);
        for (long b = 0; b < B; ++b) {
          double count = 0.0;
          for (long t = 0; t < T; ++t)
            count += mask.v[b * T + t] != 0.0 ? 1.0 : 0.0;
          const double inv = 1.0 / count;
          for (long t = 0; t < T; ++t) {
            if (mask.v[b * T + t] == 0.0) continue;
            double* prow = pg.v.data() + (b * T + t) * d;
            const double* grow = g.v.data() + b * d;
            for (long j = 0; j < d; ++j) prow[j] += grow[j] * inv;
          }
        }
        break;
      }
    }
  }

  void backward_mha(Node& nd) {
    MhaCtx& c = *nd.mha;
    const long B = c.B, T = c.T, d = c.d;
    const int h = c.h;
    const long dh = d / h;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor& g = nd.grad;  // [B, T, d] w.r.t. projected output
    const int px = nd.parents[0];
    const Var wq{nd.parents[1]}, bq{nd.parents[2]}, wk{nd.parents[3]},
        bk{nd.parents[4]}, wv{nd.parents[5]}, bv{nd.parents[6]},
        wo{nd.parents[7]}, bo{nd.parents[8]};

    // Output projection.
    if (preq(wo.idx))
      kern::matmul_tn(c.concat.v.data(), g.v.data(), pgrad(wo.idx).v.data(),
                      B * T, d, d, true);
    if (preq(bo.idx)) {
      Tensor& pg = pgrad(bo.idx);
      for (long r = 0; r < B * T; ++r)
        for (long j = 0; j < d; ++j) pg.v[j] += g.v[r * d + j];
    }
    Tensor d_concat({static_cast<int>(B), static_cast<int>(T),
                     static_cast<int>(d)});
    kern::matmul_nt(g.v.data(), pval(wo.idx).v.data(), d_concat.v.data(), B * T,
                    d, d, false);

    // Attention core.
    Tensor dq(c.q.shape), dk(c.k.shape), dv(c.vv.shape);
    std::vector<double> dp(T), ds(T);
    for (long b = 0; b < B; ++b) {
      for (int hh = 0; hh < h; ++hh) {
        const long off = hh * dh;
        for (long i = 0; i < T; ++i) {
          const double* do_row = d_concat.v.data() + (b * T + i) * d + off;
          const double* prow = c.p.data() + ((b * h + hh) * T + i) * T;
          // dP and dV.
          double dot_pp = 0.0;
          for (long j = 0; j < T; ++j) {
            if (prow[j] == 0.0) {
              dp[j] = 0.0;
              continue;
            }
            const double* vj = c.vv.v.data() + (b * T + j) * d + off;
            double acc = 0.0;
            for (long e = 0; e < dh; ++e) acc += do_row[e] * vj[e];
            dp[j] = acc;
            double* dvj = dv.v.data() + (b * T + j) * d + off;
            for (long e = 0; e < dh; ++e) dvj[e] += prow[j] * do_row[e];
            dot_pp += dp[j] * prow[j];
          }
          // Softmax backward, then into Q and K.
          double* dqi = dq.v.data() + (b * T + i) * d + off;
          const double* qi = c.q.v.data() + (b * T + i) * d + off;
          for (long j = 0; j < T; ++j) {
            ds[j] = prow[j] * (dp[j] - dot_pp);
            if (ds[j] == 0.0) continue;
            const double w = ds[j] * sc;
            const double* kj = c.k.v.data() + (b * T + j) * d + off;
            double* dkj = dk.v.data() + (b * T + j) * d + off;
            for (long e = 0; e < dh; ++e) {
              dqi[e] += w * kj[e];
              dkj[e] += w * qi[e];
            }
          }
        }
      }
    }

    // Through the Q/K/V projections back to X and the weights.
    const Tensor& x = pval(px);
    auto back_projection = [&](const Tensor& dproj, Var w, Var b) {
      if (preq(w.idx))
        kern::matmul_tn(x.v.data(), dproj.v.data(), pgrad(w.idx).v.data(), B * T,
                        d, d, true);
      if (preq(b.idx)) {
        Tensor& pg = pgrad(b.idx);
        for (long r = 0; r < B * T; ++r)
          for (long j = 0; j < d; ++j) pg.v[j] += dproj.v[r * d + j];
      }
      if (preq(px))
        kern::matmul_nt(dproj.v.data(), pval(w.idx).v.data(),
                        pgrad(px).v.data(), B * T, d, d, true);
    };
    back_projection(dq, wq, bq);
    back_projection(dk, wk, bk);
    back_projection(dv, wv, bv);
  }

  std::vector<Node> nodes_;
  bool check_finite_;
  bool backward_done_ = false;
};

}  // namespace abmt
