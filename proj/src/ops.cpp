#include "dsaf/ops.hpp"

#include <algorithm>
#include <cmath>

#include "dsaf/kernels.hpp"

namespace dsaf::ops {

namespace {

void require_nonempty(const Shape& s, const char* op) {
  if (s.empty()) throw ShapeError(std::string(op) + ": empty tensor " + to_string(s));
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <class T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<std::type_identity_t<Var<T>>> bias, std::size_t stride,
              std::size_t padding) {
  Tape<T>& tape = *x.tape;
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  require_nonempty(xs, "conv2d");
  require_nonempty(ws, "conv2d");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + to_string(ws));
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                     std::to_string(ws.c));
  }
  if (bias && bias->value().size() != ws.n) throw ShapeError("conv2d: bias length mismatch");
  const std::size_t k = ws.h;
  if (xs.h + 2 * padding < k || xs.w + 2 * padding < k) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  if ((xs.h + 2 * padding - k) % stride != 0 || (xs.w + 2 * padding - k) % stride != 0) {
    throw ShapeError("conv2d: stride " + std::to_string(stride) + " does not tile padded input " +
                     to_string(xs) + " exactly");
  }
  const kernels::ConvGeometry g{xs.n, xs.c, xs.h, xs.w, ws.n, k, stride, padding};
  Tensor<T> out(Shape{xs.n, ws.n, g.h_out(), g.w_out()});
  std::span<const T> bias_span;
  if (bias) bias_span = bias->value().data();
  kernels::conv2d_forward<T>(g, x.value().data(), weight.value().data(), bias_span, out.data());

  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(
      std::move(out), inputs,
      [x, weight, bias, g](Tape<T>& t, Var<T> result) {
        const Tensor<T>& gout = t.grad(result);
        if (t.requires_grad(x)) {
          kernels::conv2d_backward_input<T>(g, gout.data(), t.value(weight).data(), t.grad(x).data());
        }
        const bool wgrad = t.requires_grad(weight);
        const bool bgrad = bias && t.requires_grad(*bias);
        if (wgrad || bgrad) {
          Tensor<T> scratch_w;
          std::span<T> gw;
          if (wgrad) {
            gw = t.grad(weight).data();
          } else {
            scratch_w = Tensor<T>(t.value(weight).shape());
            gw = scratch_w.data();
          }
          std::span<T> gb;
          if (bgrad) gb = t.grad(*bias).data();
          kernels::conv2d_backward_weight<T>(g, gout.data(), t.value(x).data(), gw, gb);
        }
      },
      "conv2d");
}

template <class T>
Var<T> global_avg_pool(Var<T> x) {
  const Shape s = x.shape();
  require_nonempty(s, "global_avg_pool");
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const auto src = x.value().data();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += src[p * plane + i];
    out[p] = acc / static_cast<T>(plane);
  }
  return x.tape->record(
      std::move(out), {x},
      [x, s, plane](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        auto gx = t.grad(x).data();
        const T inv = T(1) / static_cast<T>(plane);
        for (std::size_t p = 0; p < s.n * s.c; ++p) {
          for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] += gout[p] * inv;
        }
      },
      "global_avg_pool");
}

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<std::type_identity_t<Var<T>>> bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  require_nonempty(xs, "linear");
  require_nonempty(ws, "linear");
  const std::size_t d_out = ws.n;
  const std::size_t d_in = ws.row();
  if (xs.row() != d_in) {
    throw ShapeError("linear: input features " + std::to_string(xs.row()) + " vs weight " +
                     std::to_string(d_in));
  }
  if (bias && bias->value().size() != d_out) throw ShapeError("linear: bias length mismatch");
  const kernels::LinearGeometry g{xs.n, d_in, d_out};
  Tensor<T> out(Shape{xs.n, d_out, 1, 1});
  std::span<const T> bias_span;
  if (bias) bias_span = bias->value().data();
  kernels::linear_forward<T>(g, x.value().data(), weight.value().data(), bias_span, out.data());
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return x.tape->record(
      std::move(out), inputs,
      [x, weight, bias, g](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        std::span<T> gx;
        std::span<T> gw;
        std::span<T> gb;
        if (t.requires_grad(x)) gx = t.grad(x).data();
        if (t.requires_grad(weight)) gw = t.grad(weight).data();
        if (bias && t.requires_grad(*bias)) gb = t.grad(*bias).data();
        Tensor<T> scratch;
        if (gw.empty() && !gb.empty()) {
          scratch = Tensor<T>(t.value(weight).shape());
          gw = scratch.data();
        }
        kernels::linear_backward<T>(g, gout, t.value(x).data(), t.value(weight).data(), gx, gw, gb);
      },
      "linear");
}

template <class T>
Var<T> relu(Var<T> x) {
  require_nonempty(x.shape(), "relu");
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  return x.tape->record(
      std::move(out), {x},
      [x](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        const auto xv = t.value(x).data();
        auto gx = t.grad(x).data();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          if (xv[i] > T(0)) gx[i] += gout[i];
        }
      },
      "relu");
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  require_nonempty(x.shape(), "sigmoid");
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  return x.tape->record(
      std::move(out), {x},
      [x](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        const auto y = t.value(result).data();
        auto gx = t.grad(x).data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * y[i] * (T(1) - y[i]);
      },
      "sigmoid");
}

template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  require_nonempty(as, "concat_channels");
  require_nonempty(bs, "concat_channels");
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: " + to_string(as) + " vs " + to_string(bs));
  }
  const std::size_t plane = as.plane();
  Tensor<T> out(Shape{as.n, as.c + bs.c, as.h, as.w});
  for (std::size_t n = 0; n < as.n; ++n) {
    const T* pa = a.value().data().data() + n * as.c * plane;
    const T* pb = b.value().data().data() + n * bs.c * plane;
    T* dst = out.data().data() + n * (as.c + bs.c) * plane;
    std::copy(pa, pa + as.c * plane, dst);
    std::copy(pb, pb + bs.c * plane, dst + as.c * plane);
  }
  return a.tape->record(
      std::move(out), {a, b},
      [a, b, as, bs, plane](Tape<T>& t, Var<T> result) {
        const T* gout = t.grad(result).data().data();
        const bool ga = t.requires_grad(a);
        const bool gb = t.requires_grad(b);
        for (std::size_t n = 0; n < as.n; ++n) {
          const T* src = gout + n * (as.c + bs.c) * plane;
          if (ga) {
            T* dst = t.grad(a).data().data() + n * as.c * plane;
            for (std::size_t i = 0; i < as.c * plane; ++i) dst[i] += src[i];
          }
          if (gb) {
            T* dst = t.grad(b).data().data() + n * bs.c * plane;
            for (std::size_t i = 0; i < bs.c * plane; ++i) dst[i] += src[as.c * plane + i];
          }
        }
      },
      "concat_channels");
}

template <class T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end) {
  const Shape s = x.shape();
  require_nonempty(s, "slice_channels");
  if (begin >= end) throw ShapeError("slice_channels: empty channel range");
  Tensor<T> out = dsaf::slice_channels(x.value(), begin, end);
  return x.tape->record(
      std::move(out), {x},
      [x, s, begin, end](Tape<T>& t, Var<T> result) {
        const T* gout = t.grad(result).data().data();
        T* gx = t.grad(x).data().data();
        const std::size_t plane = s.plane();
        const std::size_t width = (end - begin) * plane;
        for (std::size_t n = 0; n < s.n; ++n) {
          T* dst = gx + (n * s.c + begin) * plane;
          const T* src = gout + n * width;
          for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
        }
      },
      "slice_channels");
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "add");
  require_nonempty(a.shape(), "add");
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        if (t.requires_grad(a)) accumulate<T>(t.grad(a).data(), gout);
        if (t.requires_grad(b)) accumulate<T>(t.grad(b).data(), gout);
      },
      "add");
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "sub");
  require_nonempty(a.shape(), "sub");
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        if (t.requires_grad(a)) accumulate<T>(t.grad(a).data(), gout);
        if (t.requires_grad(b)) {
          auto gb = t.grad(b).data();
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gout[i];
        }
      },
      "sub");
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "mul");
  require_nonempty(a.shape(), "mul");
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        const auto av = t.value(a).data();
        const auto bv2 = t.value(b).data();
        if (t.requires_grad(a)) {
          auto ga = t.grad(a).data();
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * bv2[i];
        }
        if (t.requires_grad(b)) {
          auto gb = t.grad(b).data();
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * av[i];
        }
      },
      "mul");
}

template <class T>
Var<T> scale(Var<T> x, std::type_identity_t<T> factor) {
  require_nonempty(x.shape(), "scale");
  Tensor<T> out = x.value();
  for (T& v : out.data()) v *= factor;
  return x.tape->record(
      std::move(out), {x},
      [x, factor](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        auto gx = t.grad(x).data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * gout[i];
      },
      "scale");
}

template <class T>
Var<T> average(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("average of zero tensors");
  for (const auto& v : xs) require_same(xs.front().shape(), v.shape(), "average");
  require_nonempty(xs.front().shape(), "average");
  Tensor<T> out(xs.front().shape());
  for (const auto& v : xs) accumulate<T>(out.data(), v.value().data());
  const T inv = T(1) / static_cast<T>(xs.size());
  for (T& v : out.data()) v *= inv;
  return xs.front().tape->record(
      std::move(out), xs,
      [xs, inv](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        for (const auto& v : xs) {
          if (!t.requires_grad(v)) continue;
          auto g = t.grad(v).data();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += inv * gout[i];
        }
      },
      "average");
}

template <class T>
Var<T> sum(Var<T> x) {
  require_nonempty(x.shape(), "sum");
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return x.tape->record(
      Tensor<T>::scalar(acc), {x},
      [x](Tape<T>& t, Var<T> result) {
        const T g = t.grad(result)[0];
        for (T& v : t.grad(x).data()) v += g;
      },
      "sum");
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <class T>
Var<T> softmax_rows(Var<T> x) {
  const Shape s = x.shape();
  require_nonempty(s, "softmax_rows");
  const std::size_t d = s.row();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto row = x.value().row(n);
    auto dst = out.row(n);
    const T mx = *std::max_element(row.begin(), row.end());
    T z = 0;
    for (std::size_t i = 0; i < d; ++i) {
      dst[i] = std::exp(row[i] - mx);
      z += dst[i];
    }
    for (std::size_t i = 0; i < d; ++i) dst[i] /= z;
  }
  return x.tape->record(
      std::move(out), {x},
      [x, s, d](Tape<T>& t, Var<T> result) {
        const Tensor<T>& y = t.value(result);
        const Tensor<T>& gy = t.grad(result);
        Tensor<T>& gx = t.grad(x);
        for (std::size_t n = 0; n < s.n; ++n) {
          const auto yr = y.row(n);
          const auto gr = gy.row(n);
          auto dst = gx.row(n);
          T dot = 0;
          for (std::size_t i = 0; i < d; ++i) dot += yr[i] * gr[i];
          for (std::size_t i = 0; i < d; ++i) dst[i] += yr[i] * (gr[i] - dot);
        }
      },
      "softmax_rows");
}

template <class T>
Var<T> l2_normalize_rows(Var<T> x, std::type_identity_t<T> epsilon) {
  const Shape s = x.shape();
  require_nonempty(s, "l2_normalize_rows");
  const std::size_t d = s.row();
  Tensor<T> out(s);
  std::vector<T> norms(s.n);
  std::vector<bool> clamped(s.n, false);
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto row = x.value().row(n);
    T sq = 0;
    for (T v : row) sq += v * v;
    T norm = std::sqrt(sq);
    if (norm < epsilon || norm == T(0)) {
      if (epsilon <= T(0)) throw NumericalError("l2_normalize_rows: zero-norm row " + std::to_string(n));
      norm = epsilon;
      clamped[n] = true;
    }
    norms[n] = norm;
    auto dst = out.row(n);
    for (std::size_t i = 0; i < d; ++i) dst[i] = row[i] / norm;
  }
  return x.tape->record(
      std::move(out), {x},
      [x, s, d, norms, clamped](Tape<T>& t, Var<T> result) {
        const Tensor<T>& y = t.value(result);
        const Tensor<T>& gy = t.grad(result);
        Tensor<T>& gx = t.grad(x);
        for (std::size_t n = 0; n < s.n; ++n) {
          const auto yr = y.row(n);
          const auto gr = gy.row(n);
          auto dst = gx.row(n);
          const T inv = T(1) / norms[n];
          if (clamped[n]) {
            for (std::size_t i = 0; i < d; ++i) dst[i] += gr[i] * inv;
            continue;
          }
          T dot = 0;
          for (std::size_t i = 0; i < d; ++i) dot += yr[i] * gr[i];
          for (std::size_t i = 0; i < d; ++i) dst[i] += (gr[i] - yr[i] * dot) * inv;
        }
      },
      "l2_normalize_rows");
}

template <class T>
Var<T> channel_affine(Var<T> x, Var<T> gamma, Var<T> beta) {
  const Shape s = x.shape();
  require_nonempty(s, "channel_affine");
  if (gamma.value().size() != s.c || beta.value().size() != s.c) {
    throw ShapeError("channel_affine: affine length must equal channel count " + std::to_string(s.c));
  }
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  const auto xv = x.value().data();
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = gv[c] * xv[base + i] + bv[c];
    }
  }
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, s, plane](Tape<T>& t, Var<T> result) {
        const auto gout = t.grad(result).data();
        const auto xv2 = t.value(x).data();
        const auto gv2 = t.value(gamma).data();
        const bool need_x = t.requires_grad(x);
        const bool need_g = t.requires_grad(gamma);
        const bool need_b = t.requires_grad(beta);
        for (std::size_t c = 0; c < s.c; ++c) {
          T dg = 0;
          T db = 0;
          for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const T go = gout[base + i];
              dg += go * xv2[base + i];
              db += go;
              if (need_x) t.grad(x)[base + i] += go * gv2[c];
            }
          }
          if (need_g) t.grad(gamma)[c] += dg;
          if (need_b) t.grad(beta)[c] += db;
        }
      },
      "channel_affine");
}

#define DSAF_INSTANTIATE_OPS(T)                                                              \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t, std::size_t);   \
  template Var<T> global_avg_pool(Var<T>);                                                   \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                             \
  template Var<T> relu(Var<T>);                                                              \
  template Var<T> sigmoid(Var<T>);                                                           \
  template Var<T> concat_channels(Var<T>, Var<T>);                                           \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);                          \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> sub(Var<T>, Var<T>);                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                       \
  template Var<T> scale(Var<T>, T);                                                          \
  template Var<T> average(const std::vector<Var<T>>&);                                       \
  template Var<T> sum(Var<T>);                                                               \
  template Var<T> mean(Var<T>);                                                              \
  template Var<T> softmax_rows(Var<T>);                                                      \
  template Var<T> l2_normalize_rows(Var<T>, T);                                              \
  template Var<T> channel_affine(Var<T>, Var<T>, Var<T>);

DSAF_INSTANTIATE_OPS(float)
DSAF_INSTANTIATE_OPS(double)

}  // namespace dsaf::ops
