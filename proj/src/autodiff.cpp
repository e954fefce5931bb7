#include "dualcog/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "dualcog/errors.hpp"
#include "dualcog/kernels.hpp"

namespace dualcog::ad {
namespace {

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw PreconditionError(std::string(op) + ": shape mismatch");
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// ---- Graph -----------------------------------------------------------------

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(const Tensor& external, bool requires_grad) {
  Node n;
  n.external = &external;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Graph::value(Var v) const { return value_of(v.id); }

const Tensor& Graph::value_of(int id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.value;
}

Var Graph::push(Tensor value, std::initializer_list<Var> parents, Backward fn) {
  Node n;
  n.value = std::move(value);
  for (Var p : parents) n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_mut(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Tensor& v = value_of(id);
    n.grad = Tensor(v.rows, v.cols);
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  const Tensor& v = value(loss);
  if (v.rows != 1 || v.cols != 1) {
    throw PreconditionError("backward: loss must be a 1x1 tensor");
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_mut(loss.id)(0, 0) += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

// ---- elementwise -----------------------------------------------------------

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_same(av, bv, "add");
  Tensor out = av;
  accumulate(out, bv);
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    if (g.needs(a)) accumulate(g.grad_mut(a.id), g.grad_of(self));
    if (g.needs(b)) accumulate(g.grad_mut(b.id), g.grad_of(self));
  });
}

Var sub(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_same(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    if (g.needs(a)) accumulate(g.grad_mut(a.id), go);
    if (g.needs(b)) {
      Tensor& gb = g.grad_mut(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] -= go.data[i];
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_same(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    if (g.needs(a)) {
      const Tensor& bv = g.value(b);
      Tensor& ga = g.grad_mut(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += go.data[i] * bv.data[i];
    }
    if (g.needs(b)) {
      const Tensor& av = g.value(a);
      Tensor& gb = g.grad_mut(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] += go.data[i] * av.data[i];
    }
  });
}

Var add_row(Graph& g, Var a, Var bias) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(bias);
  if (bv.rows != 1 || bv.cols != av.cols) throw PreconditionError("add_row: bad bias shape");
  Tensor out = av;
  for (int r = 0; r < out.rows; ++r) {
    double* o = out.row(r);
    for (int c = 0; c < out.cols; ++c) o[c] += bv.data[c];
  }
  return g.push(std::move(out), {a, bias}, [a, bias](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    if (g.needs(a)) accumulate(g.grad_mut(a.id), go);
    if (g.needs(bias)) {
      Tensor& gb = g.grad_mut(bias.id);
      for (int r = 0; r < go.rows; ++r) {
        const double* o = go.row(r);
        for (int c = 0; c < go.cols; ++c) gb.data[c] += o[c];
      }
    }
  });
}

Var add_const(Graph& g, Var x, const Tensor& c) {
  const Tensor& xv = g.value(x);
  check_same(xv, c, "add_const");
  Tensor out = xv;
  accumulate(out, c);
  return g.push(std::move(out), {x}, [x](Graph& g, int self) {
    accumulate(g.grad_mut(x.id), g.grad_of(self));
  });
}

Var mul_const(Graph& g, Var x, const Tensor& c) {
  const Tensor& xv = g.value(x);
  check_same(xv, c, "mul_const");
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= c.data[i];
  return g.push(std::move(out), {x}, [x, c](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    Tensor& gx = g.grad_mut(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += go.data[i] * c.data[i];
  });
}

Var scale(Graph& g, Var x, double s) {
  Tensor out = g.value(x);
  for (double& v : out.data) v *= s;
  return g.push(std::move(out), {x}, [x, s](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    Tensor& gx = g.grad_mut(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += go.data[i] * s;
  });
}

Var exp(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (double& v : out.data) v = std::exp(v);
  return g.push(std::move(out), {x}, [x](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& y = g.value_of(self);
    Tensor& gx = g.grad_mut(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += go.data[i] * y.data[i];
  });
}

// Ties route the gradient to `a`.
Var minimum(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_same(av, bv, "minimum");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::min(av.data[i], bv.data[i]);
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const bool pick_a = av.data[i] <= bv.data[i];
      if (pick_a && g.needs(a)) g.grad_mut(a.id).data[i] += go.data[i];
      if (!pick_a && g.needs(b)) g.grad_mut(b.id).data[i] += go.data[i];
    }
  });
}

// Gradient passes where lo <= x <= hi.
Var clamp(Graph& g, Var x, double lo, double hi) {
  Tensor out = g.value(x);
  for (double& v : out.data) v = std::clamp(v, lo, hi);
  return g.push(std::move(out), {x}, [x, lo, hi](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& xv = g.value(x);
    Tensor& gx = g.grad_mut(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv.data[i] >= lo && xv.data[i] <= hi) gx.data[i] += go.data[i];
    }
  });
}

Var sum(Graph& g, Var x) {
  double s = 0.0;
  for (double v : g.value(x).data) s += v;
  return g.push(Tensor(1, 1, s), {x}, [x](Graph& g, int self) {
    const double go = g.grad_of(self)(0, 0);
    for (double& v : g.grad_mut(x.id).data) v += go;
  });
}

Var slice_rows(Graph& g, Var x, int start, int count) {
  const Tensor& xv = g.value(x);
  if (start < 0 || count < 0 || start + count > xv.rows) {
    throw RangeError("slice_rows: range out of bounds");
  }
  Tensor out(count, xv.cols);
  std::copy_n(xv.row(start), static_cast<std::size_t>(count) * xv.cols, out.data.begin());
  return g.push(std::move(out), {x}, [x, start](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    double* dst = g.grad_mut(x.id).row(start);
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go.data[i];
  });
}

// ---- linear algebra --------------------------------------------------------

Var embed(Graph& g, Var table, std::span<const int> ids) {
  const Tensor& t = g.value(table);
  Tensor out(static_cast<int>(ids.size()), t.cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= t.rows) throw RangeError("embed: id out of range");
    std::copy_n(t.row(ids[r]), t.cols, out.row(static_cast<int>(r)));
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return g.push(std::move(out), {table}, [table, saved](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    Tensor& gt = g.grad_mut(table.id);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      double* dst = gt.row(saved[r]);
      const double* src = go.row(static_cast<int>(r));
      for (int c = 0; c < gt.cols; ++c) dst[c] += src[c];
    }
  });
}

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.cols != bv.rows) throw PreconditionError("matmul: inner dimension mismatch");
  Tensor out(av.rows, bv.cols);
  kernels::gemm_nn(av.data.data(), bv.data.data(), out.data.data(), av.rows, av.cols,
                   bv.cols);
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.needs(a)) {  // dA = dC · Bᵀ
      kernels::gemm_nt(go.data.data(), bv.data.data(), g.grad_mut(a.id).data.data(),
                       go.rows, go.cols, bv.rows);
    }
    if (g.needs(b)) {  // dB = Aᵀ · dC
      kernels::gemm_tn(av.data.data(), go.data.data(), g.grad_mut(b.id).data.data(),
                       av.cols, av.rows, go.cols);
    }
  });
}

Var matmul_nt(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.cols != bv.cols) throw PreconditionError("matmul_nt: inner dimension mismatch");
  Tensor out(av.rows, bv.rows);
  kernels::gemm_nt(av.data.data(), bv.data.data(), out.data.data(), av.rows, av.cols,
                   bv.rows);
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.needs(a)) {  // dA = dC · B
      kernels::gemm_nn(go.data.data(), bv.data.data(), g.grad_mut(a.id).data.data(),
                       go.rows, go.cols, bv.cols);
    }
    if (g.needs(b)) {  // dB = dCᵀ · A
      kernels::gemm_tn(go.data.data(), av.data.data(), g.grad_mut(b.id).data.data(),
                       go.cols, go.rows, av.cols);
    }
  });
}

// ---- normalization and activations -----------------------------------------

Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = g.value(x);
  const Tensor& gv = g.value(gain);
  const Tensor& bv = g.value(bias);
  const int n = xv.cols;
  Tensor out(xv.rows, n);
  Tensor xhat(xv.rows, n);
  std::vector<double> rstd(xv.rows);
  for (int r = 0; r < xv.rows; ++r) {
    const double* xr = xv.row(r);
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += xr[c];
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= n;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    double* hr = xhat.row(r);
    double* orow = out.row(r);
    for (int c = 0; c < n; ++c) {
      hr[c] = (xr[c] - mean) * rstd[r];
      orow[c] = hr[c] * gv.data[c] + bv.data[c];
    }
  }
  return g.push(std::move(out), {x, gain, bias},
                [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](
                    Graph& g, int self) {
                  const Tensor& go = g.grad_of(self);
                  const Tensor& gv = g.value(gain);
                  const int n = go.cols;
                  if (g.needs(gain) || g.needs(bias)) {
                    Tensor* gg = g.needs(gain) ? &g.grad_mut(gain.id) : nullptr;
                    Tensor* gb = g.needs(bias) ? &g.grad_mut(bias.id) : nullptr;
                    for (int r = 0; r < go.rows; ++r) {
                      const double* dy = go.row(r);
                      const double* hr = xhat.row(r);
                      for (int c = 0; c < n; ++c) {
                        if (gg) gg->data[c] += dy[c] * hr[c];
                        if (gb) gb->data[c] += dy[c];
                      }
                    }
                  }
                  if (!g.needs(x)) return;
                  Tensor& gx = g.grad_mut(x.id);
                  std::vector<double> dxhat(n);
                  for (int r = 0; r < go.rows; ++r) {
                    const double* dy = go.row(r);
                    const double* hr = xhat.row(r);
                    double m1 = 0.0, m2 = 0.0;
                    for (int c = 0; c < n; ++c) {
                      dxhat[c] = dy[c] * gv.data[c];
                      m1 += dxhat[c];
                      m2 += dxhat[c] * hr[c];
                    }
                    m1 /= n;
                    m2 /= n;
                    double* dx = gx.row(r);
                    for (int c = 0; c < n; ++c) {
                      dx[c] += rstd[r] * (dxhat[c] - m1 - hr[c] * m2);
                    }
                  }
                });
}

Var gelu(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (double& v : out.data) {
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    v = 0.5 * v * (1.0 + t);
  }
  return g.push(std::move(out), {x}, [x](Graph& g, int self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& xv = g.value(x);
    Tensor& gx = g.grad_mut(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xv.data[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx.data[i] += go.data[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

// ---- attention -------------------------------------------------------------

Var causal_attention(Graph& g, Var qkv, int n_heads) {
  const Tensor& in = g.value(qkv);
  if (in.cols % 3 != 0 || (in.cols / 3) % n_heads != 0) {
    throw PreconditionError("causal_attention: width not divisible into heads");
  }
  const int len = in.rows;
  const int d = in.cols / 3;
  const int hd = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor out(len, d);
  // probs[h] is len×len, lower triangle used.
  std::vector<Tensor> probs(n_heads, Tensor(len, len));
  std::vector<double> scores(len);
  for (int h = 0; h < n_heads; ++h) {
    const int qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
    Tensor& p = probs[h];
    for (int i = 0; i < len; ++i) {
      const double* qi = in.row(i) + qo;
      double mx = -INFINITY;
      for (int j = 0; j <= i; ++j) {
        const double* kj = in.row(j) + ko;
        double s = 0.0;
        for (int c = 0; c < hd; ++c) s += qi[c] * kj[c];
        scores[j] = s * inv_sqrt;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (int j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      double* pi = p.row(i);
      double* oi = out.row(i) + qo;
      for (int j = 0; j <= i; ++j) {
        pi[j] = scores[j] / z;
        const double* vj = in.row(j) + vo;
        for (int c = 0; c < hd; ++c) oi[c] += pi[j] * vj[c];
      }
    }
  }
  return g.push(std::move(out), {qkv},
                [qkv, n_heads, probs = std::move(probs)](Graph& g, int self) {
                  const Tensor& go = g.grad_of(self);
                  const Tensor& in = g.value(qkv);
                  Tensor& gin = g.grad_mut(qkv.id);
                  const int len = in.rows;
                  const int d = in.cols / 3;
                  const int hd = d / n_heads;
                  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
                  std::vector<double> dp(len);
                  for (int h = 0; h < n_heads; ++h) {
                    const int qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
                    const Tensor& p = probs[h];
                    for (int i = 0; i < len; ++i) {
                      const double* doi = go.row(i) + qo;
                      const double* pi = p.row(i);
                      double dot = 0.0;
                      for (int j = 0; j <= i; ++j) {
                        const double* vj = in.row(j) + vo;
                        double s = 0.0;
                        for (int c = 0; c < hd; ++c) s += doi[c] * vj[c];
                        dp[j] = s;
                        dot += pi[j] * s;
                        double* dvj = gin.row(j) + vo;
                        for (int c = 0; c < hd; ++c) dvj[c] += pi[j] * doi[c];
                      }
                      const double* qi = in.row(i) + qo;
                      double* dqi = gin.row(i) + qo;
                      for (int j = 0; j <= i; ++j) {
                        const double ds = pi[j] * (dp[j] - dot) * inv_sqrt;
                        if (ds == 0.0) continue;
                        const double* kj = in.row(j) + ko;
                        double* dkj = gin.row(j) + ko;
                        for (int c = 0; c < hd; ++c) {
                          dqi[c] += ds * kj[c];
                          dkj[c] += ds * qi[c];
                        }
                      }
                    }
                  }
                });
}

// ---- output ----------------------------------------------------------------

Var pick_log_softmax(Graph& g, Var logits, std::span<const int> rows,
                     std::span<const int> targets) {
  const Tensor& lv = g.value(logits);
  if (rows.size() != targets.size()) {
    throw PreconditionError("pick_log_softmax: rows/targets size mismatch");
  }
  const int n = static_cast<int>(rows.size());
  Tensor out(n, 1);
  std::vector<double> lse(n);
  for (int i = 0; i < n; ++i) {
    if (rows[i] < 0 || rows[i] >= lv.rows || targets[i] < 0 || targets[i] >= lv.cols) {
      throw RangeError("pick_log_softmax: index out of range");
    }
    const double* l = lv.row(rows[i]);
    double mx = -INFINITY;
    for (int c = 0; c < lv.cols; ++c) mx = std::max(mx, l[c]);
    double z = 0.0;
    for (int c = 0; c < lv.cols; ++c) z += std::exp(l[c] - mx);
    lse[i] = mx + std::log(z);
    out(i, 0) = l[targets[i]] - lse[i];
  }
  std::vector<int> saved_rows(rows.begin(), rows.end());
  std::vector<int> saved_targets(targets.begin(), targets.end());
  return g.push(std::move(out), {logits},
                [logits, saved_rows, saved_targets, lse = std::move(lse)](Graph& g,
                                                                          int self) {
                  const Tensor& go = g.grad_of(self);
                  const Tensor& lv = g.value(logits);
                  Tensor& gl = g.grad_mut(logits.id);
                  for (std::size_t i = 0; i < saved_rows.size(); ++i) {
                    const double gi = go(static_cast<int>(i), 0);
                    if (gi == 0.0) continue;
                    const double* l = lv.row(saved_rows[i]);
                    double* d = gl.row(saved_rows[i]);
                    for (int c = 0; c < lv.cols; ++c) d[c] -= gi * std::exp(l[c] - lse[i]);
                    d[saved_targets[i]] += gi;
                  }
                });
}

}  // namespace dualcog::ad
