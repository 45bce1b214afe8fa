#include "lsc/autograd.h"

#include <cmath>
#include <utility>

#include "lsc/scalar_ops.h"

namespace lsc::nn {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr double kLn2 = 0.6931471805599453;
constexpr double kProbFloor = 1e-40;

double norm_pdf(double t) { return kInvSqrt2Pi * std::exp(-0.5 * t * t); }

// Phi(hi) - Phi(lo) evaluated on the tail side to avoid cancellation.
double phi_diff(double lo, double hi) {
  if (lo >= 0.0) return 0.5 * (std::erfc(lo / kSqrt2) - std::erfc(hi / kSqrt2));
  if (hi <= 0.0) return 0.5 * (std::erfc(-hi / kSqrt2) - std::erfc(-lo / kSqrt2));
  return 0.5 * (std::erf(hi / kSqrt2) - std::erf(lo / kSqrt2));
}
}  // namespace

double gaussian_bin_probability(double x, double mu, double sigma) {
  const double hi = (x - mu + 0.5) / sigma;
  const double lo = (x - mu - 0.5) / sigma;
  double p = phi_diff(lo, hi);
  if (!(p > kProbFloor)) p = kProbFloor;
  return p;
}

Var Tape::constant(Tensor v) {
  int id = emit(std::move(v), {}, nullptr, false);
  return Var{this, id};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.val = p.value;
  n.needs_grad = true;
  n.param = &p;
  n.back = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    if (node.grad_alloc) node.param->grad += node.grad;
  };
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

int Tape::emit(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> back, bool needs_grad) {
  Node n;
  n.val = std::move(value);
  n.parents = std::move(parents);
  n.back = std::move(back);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tensor& Tape::value(Var v) const {
  LSC_CHECK(v.tape == this && v.id >= 0 && v.id < static_cast<int>(nodes_.size()), invalid_argument,
            "stale Var handle");
  return nodes_[v.id].val;
}

Tensor& Tape::node_grad_accum(int id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.val.dims(), 0.0);
    n.grad_alloc = true;
  }
  return n.grad;
}

Tensor& Tape::grad(Var v) { return node_grad_accum(v.id); }

bool Tape::requires_grad(Var v) const { return nodes_[v.id].needs_grad; }

void Tape::backward(Var root) {
  LSC_CHECK(root.tape == this, invalid_argument, "root from another tape");
  LSC_CHECK(nodes_[root.id].val.size() == 1, invalid_argument, "backward root must be scalar");
  node_grad_accum(root.id)[0] = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.grad_alloc && n.back) n.back(*this, i);
  }
}

namespace {

struct OpCtx {
  Tape* tape;
  bool needs_grad = false;
  std::vector<int> parents;

  explicit OpCtx(std::initializer_list<Var> vars) {
    tape = nullptr;
    for (const Var& v : vars) {
      if (!v.valid()) continue;
      if (!tape) tape = v.tape;
      LSC_CHECK(tape == v.tape, invalid_argument, "vars from different tapes");
      parents.push_back(v.id);
      needs_grad = needs_grad || v.tape->requires_grad(v);
    }
    LSC_CHECK(tape != nullptr, invalid_argument, "op needs at least one valid var");
  }
};

const Tensor& val(Tape& t, int id) { return t.value(Var{&t, id}); }
bool needs(Tape& t, int id) { return t.requires_grad(Var{&t, id}); }

Var unary_ew(Var a, std::function<double(double)> f, std::function<double(double, double)> dfdx_from_xy) {
  OpCtx ctx({a});
  const Tensor& x = a.tape->value(a);
  Tensor y(x.dims());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  int pa = a.id;
  auto back = [pa, dfdx_from_xy](Tape& t, int self) {
    if (!needs(t, pa)) return;
    const Tensor& g = t.node_grad_accum(self);
    const Tensor& x = val(t, pa);
    const Tensor& y = val(t, self);
    Tensor& gx = t.node_grad_accum(pa);
    for (std::int64_t i = 0; i < x.size(); ++i) gx[i] += g[i] * dfdx_from_xy(x[i], y[i]);
  };
  int id = a.tape->emit(std::move(y), ctx.parents, ctx.needs_grad ? back : std::function<void(Tape&, int)>(),
                        ctx.needs_grad);
  return Var{a.tape, id};
}

}  // namespace

Var add(Var a, Var b) {
  OpCtx ctx({a, b});
  const Tensor& xa = a.tape->value(a);
  const Tensor& xb = b.tape->value(b);
  LSC_CHECK(xa.same_shape(xb), shape_mismatch, "add: " + xa.shape_str() + " vs " + xb.shape_str());
  Tensor y = xa;
  y += xb;
  int pa = a.id, pb = b.id;
  auto back = [pa, pb](Tape& t, int self) {
    const Tensor& g = t.node_grad_accum(self);
    if (needs(t, pa)) t.node_grad_accum(pa) += g;
    if (needs(t, pb)) t.node_grad_accum(pb) += g;
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var sub(Var a, Var b) {
  OpCtx ctx({a, b});
  const Tensor& xa = a.tape->value(a);
  const Tensor& xb = b.tape->value(b);
  LSC_CHECK(xa.same_shape(xb), shape_mismatch, "sub: " + xa.shape_str() + " vs " + xb.shape_str());
  Tensor y = xa;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] -= xb[i];
  int pa = a.id, pb = b.id;
  auto back = [pa, pb](Tape& t, int self) {
    const Tensor& g = t.node_grad_accum(self);
    if (needs(t, pa)) t.node_grad_accum(pa) += g;
    if (needs(t, pb)) {
      Tensor& gb = t.node_grad_accum(pb);
      for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var mul(Var a, Var b) {
  OpCtx ctx({a, b});
  const Tensor& xa = a.tape->value(a);
  const Tensor& xb = b.tape->value(b);
  LSC_CHECK(xa.same_shape(xb), shape_mismatch, "mul: " + xa.shape_str() + " vs " + xb.shape_str());
  Tensor y = xa;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] *= xb[i];
  int pa = a.id, pb = b.id;
  auto back = [pa, pb](Tape& t, int self) {
    const Tensor& g = t.node_grad_accum(self);
    const Tensor& xa = val(t, pa);
    const Tensor& xb = val(t, pb);
    if (needs(t, pa)) {
      Tensor& ga = t.node_grad_accum(pa);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
    }
    if (needs(t, pb)) {
      Tensor& gb = t.node_grad_accum(pb);
      for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
    }
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var div(Var a, Var b) {
  OpCtx ctx({a, b});
  const Tensor& xa = a.tape->value(a);
  const Tensor& xb = b.tape->value(b);
  LSC_CHECK(xa.same_shape(xb), shape_mismatch, "div: " + xa.shape_str() + " vs " + xb.shape_str());
  Tensor y = xa;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] /= xb[i];
  int pa = a.id, pb = b.id;
  auto back = [pa, pb](Tape& t, int self) {
    const Tensor& g = t.node_grad_accum(self);
    const Tensor& xa = val(t, pa);
    const Tensor& xb = val(t, pb);
    if (needs(t, pa)) {
      Tensor& ga = t.node_grad_accum(pa);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / xb[i];
    }
    if (needs(t, pb)) {
      Tensor& gb = t.node_grad_accum(pb);
      for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * xa[i] / (xb[i] * xb[i]);
    }
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  return unary_ew(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary_ew(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(Var a) {
  return unary_ew(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary_ew(
      a, [slope](double x) { return leaky_relu_scalar(x, slope); },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var softplus(Var a) {
  return unary_ew(
      a, [](double x) { return softplus_scalar(x); },
      [](double x, double) { return sigmoid_scalar(x); });
}

Var tanh_op(Var a) {
  return unary_ew(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary_ew(
      a, [](double x) { return sigmoid_scalar(x); }, [](double, double y) { return y * (1.0 - y); });
}

Var log2_clamped(Var a, double floor) {
  return unary_ew(
      a, [floor](double x) { return std::log2(x > floor ? x : floor); },
      [floor](double x, double) { return x > floor ? 1.0 / (x * 0.6931471805599453) : 0.0; });
}

Var crop_spatial(Var a, int h, int w) {
  OpCtx ctx({a});
  const Tensor& x = a.tape->value(a);
  LSC_CHECK(h >= 1 && w >= 1 && h <= x.h() && w <= x.w(), invalid_argument, "crop_spatial target too large");
  if (h == x.h() && w == x.w()) return a;
  Tensor y = Tensor::hwc(h, w, x.c());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < x.c(); ++k) y.at(i, j, k) = x.at(i, j, k);
  int pa = a.id;
  auto back = [pa, h, w](Tape& t, int self) {
    if (!needs(t, pa)) return;
    const Tensor& g = t.node_grad_accum(self);
    Tensor& gx = t.node_grad_accum(pa);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int k = 0; k < gx.c(); ++k) gx.at(i, j, k) += g.at(i, j, k);
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var square(Var a) {
  return unary_ew(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var pow_scalar(Var a, double p) {
  return unary_ew(
      a, [p](double x) { return std::pow(x, p); }, [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Var exp_op(Var a) {
  return unary_ew(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sum(Var a) {
  OpCtx ctx({a});
  const Tensor& x = a.tape->value(a);
  Tensor y = Tensor::scalar(x.sum());
  int pa = a.id;
  auto back = [pa](Tape& t, int self) {
    if (!needs(t, pa)) return;
    const double g = t.node_grad_accum(self)[0];
    Tensor& gx = t.node_grad_accum(pa);
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var mean(Var a) {
  const double n = static_cast<double>(a.tape->value(a).size());
  return scale(sum(a), 1.0 / n);
}

Var concat_c(const std::vector<Var>& parts) {
  LSC_CHECK(!parts.empty(), invalid_argument, "concat_c of nothing");
  Tape* tape = parts[0].tape;
  const Tensor& first = tape->value(parts[0]);
  int h = first.h(), w = first.w();
  int ctot = 0;
  bool needs_grad = false;
  std::vector<int> parents;
  for (const Var& v : parts) {
    LSC_CHECK(v.tape == tape, invalid_argument, "concat_c across tapes");
    const Tensor& x = tape->value(v);
    LSC_CHECK(x.h() == h && x.w() == w, shape_mismatch, "concat_c spatial mismatch");
    ctot += x.c();
    parents.push_back(v.id);
    needs_grad = needs_grad || tape->requires_grad(v);
  }
  Tensor y = Tensor::hwc(h, w, ctot);
  int off = 0;
  for (const Var& v : parts) {
    const Tensor& x = tape->value(v);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int k = 0; k < x.c(); ++k) y.at(i, j, off + k) = x.at(i, j, k);
    off += x.c();
  }
  std::vector<int> ps = parents;
  auto back = [ps](Tape& t, int self) {
    const Tensor& g = t.node_grad_accum(self);
    int off = 0;
    for (int pid : ps) {
      const Tensor& x = val(t, pid);
      if (needs(t, pid)) {
        Tensor& gx = t.node_grad_accum(pid);
        for (int i = 0; i < x.h(); ++i)
          for (int j = 0; j < x.w(); ++j)
            for (int k = 0; k < x.c(); ++k) gx.at(i, j, k) += g.at(i, j, off + k);
      }
      off += x.c();
    }
  };
  return Var{tape, tape->emit(std::move(y), parents, back, needs_grad)};
}

Var slice_c(Var a, int c0, int len) {
  OpCtx ctx({a});
  const Tensor& x = a.tape->value(a);
  LSC_CHECK(c0 >= 0 && len > 0 && c0 + len <= x.c(), invalid_argument, "slice_c out of range");
  Tensor y = Tensor::hwc(x.h(), x.w(), len);
  for (int i = 0; i < x.h(); ++i)
    for (int j = 0; j < x.w(); ++j)
      for (int k = 0; k < len; ++k) y.at(i, j, k) = x.at(i, j, c0 + k);
  int pa = a.id;
  auto back = [pa, c0, len](Tape& t, int self) {
    if (!needs(t, pa)) return;
    const Tensor& g = t.node_grad_accum(self);
    Tensor& gx = t.node_grad_accum(pa);
    for (int i = 0; i < g.h(); ++i)
      for (int j = 0; j < g.w(); ++j)
        for (int k = 0; k < len; ++k) gx.at(i, j, c0 + k) += g.at(i, j, k);
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var sum_channels(Var a) {
  OpCtx ctx({a});
  const Tensor& x = a.tape->value(a);
  Tensor y = Tensor::hwc(x.h(), x.w(), 1);
  for (int i = 0; i < x.h(); ++i)
    for (int j = 0; j < x.w(); ++j) {
      double s = 0.0;
      for (int k = 0; k < x.c(); ++k) s += x.at(i, j, k);
      y.at(i, j, 0) = s;
    }
  int pa = a.id;
  auto back = [pa](Tape& t, int self) {
    if (!needs(t, pa)) return;
    const Tensor& g = t.node_grad_accum(self);
    Tensor& gx = t.node_grad_accum(pa);
    for (int i = 0; i < gx.h(); ++i)
      for (int j = 0; j < gx.w(); ++j)
        for (int k = 0; k < gx.c(); ++k) gx.at(i, j, k) += g.at(i, j, 0);
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var global_avg_pool(Var a) {
  OpCtx ctx({a});
  const Tensor& x = a.tape->value(a);
  Tensor y = Tensor::hwc(1, 1, x.c());
  const double inv = 1.0 / (static_cast<double>(x.h()) * x.w());
  for (int i = 0; i < x.h(); ++i)
    for (int j = 0; j < x.w(); ++j)
      for (int k = 0; k < x.c(); ++k) y.at(0, 0, k) += x.at(i, j, k) * inv;
  int pa = a.id;
  auto back = [pa, inv](Tape& t, int self) {
    if (!needs(t, pa)) return;
    const Tensor& g = t.node_grad_accum(self);
    Tensor& gx = t.node_grad_accum(pa);
    for (int i = 0; i < gx.h(); ++i)
      for (int j = 0; j < gx.w(); ++j)
        for (int k = 0; k < gx.c(); ++k) gx.at(i, j, k) += g.at(0, 0, k) * inv;
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var upsample_nearest(Var a, int r) {
  OpCtx ctx({a});
  LSC_CHECK(r >= 1, invalid_argument, "upsample factor must be >= 1");
  const Tensor& x = a.tape->value(a);
  Tensor y = Tensor::hwc(x.h() * r, x.w() * r, x.c());
  for (int i = 0; i < y.h(); ++i)
    for (int j = 0; j < y.w(); ++j)
      for (int k = 0; k < y.c(); ++k) y.at(i, j, k) = x.at(i / r, j / r, k);
  int pa = a.id;
  auto back = [pa, r](Tape& t, int self) {
    if (!needs(t, pa)) return;
    const Tensor& g = t.node_grad_accum(self);
    Tensor& gx = t.node_grad_accum(pa);
    for (int i = 0; i < g.h(); ++i)
      for (int j = 0; j < g.w(); ++j)
        for (int k = 0; k < g.c(); ++k) gx.at(i / r, j / r, k) += g.at(i, j, k);
  };
  return Var{a.tape, a.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var channel_affine(Var x, Var a, Var b) {
  OpCtx ctx({x, a, b});
  const Tensor& xv = x.tape->value(x);
  const Tensor& av = a.tape->value(a);
  const Tensor& bv = b.tape->value(b);
  LSC_CHECK(av.rank() == 1 && bv.rank() == 1 && av.size() == xv.c() && bv.size() == xv.c(), shape_mismatch,
            "channel_affine parameter shapes");
  Tensor y = xv;
  for (int i = 0; i < xv.h(); ++i)
    for (int j = 0; j < xv.w(); ++j)
      for (int k = 0; k < xv.c(); ++k) y.at(i, j, k) = av[k] * xv.at(i, j, k) + bv[k];
  int px = x.id, pa = a.id, pb = b.id;
  auto back = [px, pa, pb](Tape& t, int self) {
    const Tensor& g = t.node_grad_accum(self);
    const Tensor& xv = val(t, px);
    const Tensor& av = val(t, pa);
    if (needs(t, px)) {
      Tensor& gx = t.node_grad_accum(px);
      for (int i = 0; i < xv.h(); ++i)
        for (int j = 0; j < xv.w(); ++j)
          for (int k = 0; k < xv.c(); ++k) gx.at(i, j, k) += g.at(i, j, k) * av[k];
    }
    if (needs(t, pa)) {
      Tensor& ga = t.node_grad_accum(pa);
      for (int i = 0; i < xv.h(); ++i)
        for (int j = 0; j < xv.w(); ++j)
          for (int k = 0; k < xv.c(); ++k) ga[k] += g.at(i, j, k) * xv.at(i, j, k);
    }
    if (needs(t, pb)) {
      Tensor& gb = t.node_grad_accum(pb);
      for (int i = 0; i < xv.h(); ++i)
        for (int j = 0; j < xv.w(); ++j)
          for (int k = 0; k < xv.c(); ++k) gb[k] += g.at(i, j, k);
    }
  };
  return Var{x.tape, x.tape->emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var mse(Var a, Var b) { return mean(square(sub(a, b))); }

Var conv2d(Var x, Var w, Var b, int stride, int pad, int groups) {
  OpCtx ctx(b.valid() ? std::initializer_list<Var>{x, w, b} : std::initializer_list<Var>{x, w});
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  LSC_CHECK(xv.rank() == 3 && wv.rank() == 4, shape_mismatch, "conv2d expects HWC input and KKIO weights");
  const int H = xv.dims()[0], W = xv.dims()[1], Cin = xv.dims()[2];
  const int kh = wv.dims()[0], kw = wv.dims()[1], cing = wv.dims()[2], Cout = wv.dims()[3];
  LSC_CHECK(groups >= 1 && Cin % groups == 0 && Cout % groups == 0, invalid_argument, "conv2d group split");
  LSC_CHECK(cing == Cin / groups, shape_mismatch, "conv2d weight in-channel dim");
  LSC_CHECK(stride >= 1 && pad >= 0, invalid_argument, "conv2d stride/pad");
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  LSC_CHECK(OH > 0 && OW > 0, shape_mismatch, "conv2d output collapses to zero");
  const int coutg = Cout / groups;

  Tensor y = Tensor::hwc(OH, OW, Cout);
  if (b.valid()) {
    const Tensor& bv = t.value(b);
    LSC_CHECK(bv.rank() == 1 && bv.size() == Cout, shape_mismatch, "conv2d bias shape");
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox)
        for (int oc = 0; oc < Cout; ++oc) y.at(oy, ox, oc) = bv[oc];
  }
  for (int oy = 0; oy < OH; ++oy) {
    for (int ox = 0; ox < OW; ++ox) {
      double* yrow = &y.at(oy, ox, 0);
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= W) continue;
          const double* xrow = xv.row(iy, ix);
          const double* wbase = wv.data() + (static_cast<std::size_t>(ky) * kw + kx) * cing * Cout;
          for (int g = 0; g < groups; ++g) {
            for (int icl = 0; icl < cing; ++icl) {
              const double xval = xrow[g * cing + icl];
              if (xval == 0.0) continue;
              const double* wrow = wbase + static_cast<std::size_t>(icl) * Cout + g * coutg;
              double* ydst = yrow + g * coutg;
              for (int ocl = 0; ocl < coutg; ++ocl) ydst[ocl] += xval * wrow[ocl];
            }
          }
        }
      }
    }
  }

  int px = x.id, pw = w.id, pb = b.valid() ? b.id : -1;
  auto back = [px, pw, pb, stride, pad, groups, kh, kw, cing, coutg, H, W, Cout](Tape& t, int self) {
    const Tensor& g = t.node_grad_accum(self);
    const Tensor& xv = val(t, px);
    const Tensor& wv = val(t, pw);
    const int OH = g.dims()[0], OW = g.dims()[1];
    const bool nx = needs(t, px), nw = needs(t, pw), nb = pb >= 0 && needs(t, pb);
    Tensor* gx = nx ? &t.node_grad_accum(px) : nullptr;
    Tensor* gw = nw ? &t.node_grad_accum(pw) : nullptr;
    Tensor* gb = nb ? &t.node_grad_accum(pb) : nullptr;
    if (gb) {
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox)
          for (int oc = 0; oc < Cout; ++oc) (*gb)[oc] += g.at(oy, ox, oc);
    }
    if (!nx && !nw) return;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        const double* grow = g.row(oy, ox);
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            const std::size_t woff = (static_cast<std::size_t>(ky) * kw + kx) * cing * Cout;
            for (int gr = 0; gr < groups; ++gr) {
              for (int icl = 0; icl < cing; ++icl) {
                const double xval = xv.at(iy, ix, gr * cing + icl);
                const double* wrow = wv.data() + woff + static_cast<std::size_t>(icl) * Cout + gr * coutg;
                const double* gsrc = grow + gr * coutg;
                if (nw) {
                  double* gwrow = gw->data() + woff + static_cast<std::size_t>(icl) * Cout + gr * coutg;
                  for (int ocl = 0; ocl < coutg; ++ocl) gwrow[ocl] += xval * gsrc[ocl];
                }
                if (nx) {
                  double acc = 0.0;
                  for (int ocl = 0; ocl < coutg; ++ocl) acc += wrow[ocl] * gsrc[ocl];
                  gx->at(iy, ix, gr * cing + icl) += acc;
                }
              }
            }
          }
        }
      }
    }
  };
  return Var{x.tape, t.emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var conv2d_transpose(Var x, Var w, Var b, int stride, int pad, int opad) {
  OpCtx ctx(b.valid() ? std::initializer_list<Var>{x, w, b} : std::initializer_list<Var>{x, w});
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  LSC_CHECK(xv.rank() == 3 && wv.rank() == 4, shape_mismatch, "conv2d_transpose shapes");
  const int H = xv.dims()[0], W = xv.dims()[1], Cin = xv.dims()[2];
  const int kh = wv.dims()[0], kw = wv.dims()[1], wcin = wv.dims()[2], Cout = wv.dims()[3];
  LSC_CHECK(wcin == Cin, shape_mismatch, "conv2d_transpose weight in-channel dim");
  const int OH = (H - 1) * stride - 2 * pad + kh + opad;
  const int OW = (W - 1) * stride - 2 * pad + kw + opad;
  LSC_CHECK(OH > 0 && OW > 0, shape_mismatch, "conv2d_transpose output collapses");

  Tensor y = Tensor::hwc(OH, OW, Cout);
  if (b.valid()) {
    const Tensor& bv = t.value(b);
    LSC_CHECK(bv.rank() == 1 && bv.size() == Cout, shape_mismatch, "conv2d_transpose bias shape");
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox)
        for (int oc = 0; oc < Cout; ++oc) y.at(oy, ox, oc) = bv[oc];
  }
  for (int iy = 0; iy < H; ++iy) {
    for (int ix = 0; ix < W; ++ix) {
      const double* xrow = xv.row(iy, ix);
      for (int ky = 0; ky < kh; ++ky) {
        const int oy = iy * stride + ky - pad;
        if (oy < 0 || oy >= OH) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ox = ix * stride + kx - pad;
          if (ox < 0 || ox >= OW) continue;
          double* yrow = &y.at(oy, ox, 0);
          const double* wbase = wv.data() + (static_cast<std::size_t>(ky) * kw + kx) * Cin * Cout;
          for (int ic = 0; ic < Cin; ++ic) {
            const double xval = xrow[ic];
            if (xval == 0.0) continue;
            const double* wrow = wbase + static_cast<std::size_t>(ic) * Cout;
            for (int oc = 0; oc < Cout; ++oc) yrow[oc] += xval * wrow[oc];
          }
        }
      }
    }
  }

  int px = x.id, pw = w.id, pb = b.valid() ? b.id : -1;
  auto back = [px, pw, pb, stride, pad, kh, kw, Cin, Cout, H, W](Tape& t, int self) {
    const Tensor& g = t.node_grad_accum(self);
    const Tensor& xv = val(t, px);
    const Tensor& wv = val(t, pw);
    const int OH = g.dims()[0], OW = g.dims()[1];
    const bool nx = needs(t, px), nw = needs(t, pw), nb = pb >= 0 && needs(t, pb);
    if (nb) {
      Tensor& gb = t.node_grad_accum(pb);
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox)
          for (int oc = 0; oc < Cout; ++oc) gb[oc] += g.at(oy, ox, oc);
    }
    if (!nx && !nw) return;
    Tensor* gx = nx ? &t.node_grad_accum(px) : nullptr;
    Tensor* gw = nw ? &t.node_grad_accum(pw) : nullptr;
    for (int iy = 0; iy < H; ++iy) {
      for (int ix = 0; ix < W; ++ix) {
        for (int ky = 0; ky < kh; ++ky) {
          const int oy = iy * stride + ky - pad;
          if (oy < 0 || oy >= OH) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ox = ix * stride + kx - pad;
            if (ox < 0 || ox >= OW) continue;
            const double* grow = g.row(oy, ox);
            const std::size_t woff = (static_cast<std::size_t>(ky) * kw + kx) * Cin * Cout;
            for (int ic = 0; ic < Cin; ++ic) {
              const double xval = xv.at(iy, ix, ic);
              const double* wrow = wv.data() + woff + static_cast<std::size_t>(ic) * Cout;
              if (nw) {
                double* gwrow = gw->data() + woff + static_cast<std::size_t>(ic) * Cout;
                for (int oc = 0; oc < Cout; ++oc) gwrow[oc] += xval * grow[oc];
              }
              if (nx) {
                double acc = 0.0;
                for (int oc = 0; oc < Cout; ++oc) acc += wrow[oc] * grow[oc];
                gx->at(iy, ix, ic) += acc;
              }
            }
          }
        }
      }
    }
  };
  return Var{x.tape, t.emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

Var gaussian_bin_bits(Var x, Var mu, Var sigma) {
  OpCtx ctx({x, mu, sigma});
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& mv = t.value(mu);
  const Tensor& sv = t.value(sigma);
  LSC_CHECK(xv.same_shape(mv) && xv.same_shape(sv), shape_mismatch, "gaussian_bin_bits shapes");
  Tensor y(xv.dims());
  for (std::int64_t i = 0; i < xv.size(); ++i) {
    y[i] = -std::log2(gaussian_bin_probability(xv[i], mv[i], sv[i]));
  }
  int px = x.id, pm = mu.id, ps = sigma.id;
  auto back = [px, pm, ps](Tape& t, int self) {
    const Tensor& g = t.node_grad_accum(self);
    const Tensor& xv = val(t, px);
    const Tensor& mv = val(t, pm);
    const Tensor& sv = val(t, ps);
    const bool nx = needs(t, px), nm = needs(t, pm), ns = needs(t, ps);
    Tensor* gx = nx ? &t.node_grad_accum(px) : nullptr;
    Tensor* gm = nm ? &t.node_grad_accum(pm) : nullptr;
    Tensor* gs = ns ? &t.node_grad_accum(ps) : nullptr;
    for (std::int64_t i = 0; i < xv.size(); ++i) {
      const double sgm = sv[i];
      const double hi = (xv[i] - mv[i] + 0.5) / sgm;
      const double lo = (xv[i] - mv[i] - 0.5) / sgm;
      const double p = gaussian_bin_probability(xv[i], mv[i], sgm);
      const double phi_hi = norm_pdf(hi), phi_lo = norm_pdf(lo);
      const double dbits_dp = -1.0 / (p * kLn2);
      const double dp_dx = (phi_hi - phi_lo) / sgm;
      const double dp_ds = -(hi * phi_hi - lo * phi_lo) / sgm;
      if (gx) (*gx)[i] += g[i] * dbits_dp * dp_dx;
      if (gm) (*gm)[i] -= g[i] * dbits_dp * dp_dx;
      if (gs) (*gs)[i] += g[i] * dbits_dp * dp_ds;
    }
  };
  return Var{x.tape, t.emit(std::move(y), ctx.parents, back, ctx.needs_grad)};
}

}  // namespace lsc::nn
