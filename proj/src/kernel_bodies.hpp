#pragma once

// Per-slice loop bodies shared by the serial and OpenMP kernels. A slice owns
// a disjoint set of output elements, so slices may run concurrently.

#include <cstddef>
#include <span>

#include "dsaf/kernels.hpp"

namespace dsaf::kernels::detail {

// Output rows oy whose input row oy*stride - padding + ky lies in [0, extent).
struct ValidRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline ValidRange valid_outputs(std::size_t extent, std::size_t out_extent, std::size_t stride,
                                std::size_t padding, std::size_t kernel_offset) {
  // Solve 0 <= o*stride + kernel_offset - padding <= extent - 1 for o.
  const auto off = static_cast<long long>(kernel_offset) - static_cast<long long>(padding);
  const auto s = static_cast<long long>(stride);
  long long lo = 0;
  if (off < 0) lo = (-off + s - 1) / s;
  long long hi = (static_cast<long long>(extent) - 1 - off);
  if (hi < 0) return {0, 0};
  hi = hi / s + 1;
  if (hi > static_cast<long long>(out_extent)) hi = static_cast<long long>(out_extent);
  if (lo >= hi) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <class T>
void conv_forward_slice(const ConvGeometry& g, std::size_t n, std::size_t co, std::span<const T> in,
                        std::span<const T> weight, std::span<const T> bias, std::span<T> out) {
  const std::size_t ho = g.h_out();
  const std::size_t wo = g.w_out();
  T* dst = out.data() + (n * g.c_out + co) * ho * wo;
  const T b = bias.empty() ? T(0) : bias[co];
  for (std::size_t i = 0; i < ho * wo; ++i) dst[i] = b;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    const T* src = in.data() + (n * g.c_in + ci) * g.h * g.w;
    const T* wk = weight.data() + (co * g.c_in + ci) * g.k * g.k;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const ValidRange ry = valid_outputs(g.h, ho, g.stride, g.padding, ky);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const ValidRange rx = valid_outputs(g.w, wo, g.stride, g.padding, kx);
        const T wv = wk[ky * g.k + kx];
        for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.padding;
          const T* srow = src + iy * g.w;
          T* drow = dst + oy * wo;
          for (std::size_t ox = rx.begin; ox < rx.end; ++ox) {
            drow[ox] += wv * srow[ox * g.stride + kx - g.padding];
          }
        }
      }
    }
  }
}

template <class T>
void conv_backward_input_slice(const ConvGeometry& g, std::size_t n, std::size_t ci,
                               std::span<const T> grad_out, std::span<const T> weight,
                               std::span<T> grad_in) {
  const std::size_t ho = g.h_out();
  const std::size_t wo = g.w_out();
  T* dst = grad_in.data() + (n * g.c_in + ci) * g.h * g.w;
  for (std::size_t co = 0; co < g.c_out; ++co) {
    const T* go = grad_out.data() + (n * g.c_out + co) * ho * wo;
    const T* wk = weight.data() + (co * g.c_in + ci) * g.k * g.k;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const ValidRange ry = valid_outputs(g.h, ho, g.stride, g.padding, ky);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const ValidRange rx = valid_outputs(g.w, wo, g.stride, g.padding, kx);
        const T wv = wk[ky * g.k + kx];
        for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.padding;
          T* drow = dst + iy * g.w;
          const T* grow = go + oy * wo;
          for (std::size_t ox = rx.begin; ox < rx.end; ++ox) {
            drow[ox * g.stride + kx - g.padding] += wv * grow[ox];
          }
        }
      }
    }
  }
}

template <class T>
void conv_backward_weight_slice(const ConvGeometry& g, std::size_t co, std::span<const T> grad_out,
                                std::span<const T> in, std::span<T> grad_weight,
                                std::span<T> grad_bias) {
  const std::size_t ho = g.h_out();
  const std::size_t wo = g.w_out();
  if (!grad_bias.empty()) {
    T acc = 0;
    for (std::size_t n = 0; n < g.n; ++n) {
      const T* go = grad_out.data() + (n * g.c_out + co) * ho * wo;
      for (std::size_t i = 0; i < ho * wo; ++i) acc += go[i];
    }
    grad_bias[co] += acc;
  }
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    T* gw = grad_weight.data() + (co * g.c_in + ci) * g.k * g.k;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const ValidRange ry = valid_outputs(g.h, ho, g.stride, g.padding, ky);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const ValidRange rx = valid_outputs(g.w, wo, g.stride, g.padding, kx);
        T acc = 0;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* go = grad_out.data() + (n * g.c_out + co) * ho * wo;
          const T* src = in.data() + (n * g.c_in + ci) * g.h * g.w;
          for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
            const T* srow = src + (oy * g.stride + ky - g.padding) * g.w;
            const T* grow = go + oy * wo;
            for (std::size_t ox = rx.begin; ox < rx.end; ++ox) {
              acc += grow[ox] * srow[ox * g.stride + kx - g.padding];
            }
          }
        }
        gw[ky * g.k + kx] += acc;
      }
    }
  }
}

template <class T>
void linear_forward_row(const LinearGeometry& g, std::size_t n, std::span<const T> in,
                        std::span<const T> weight, std::span<const T> bias, std::span<T> out) {
  const T* x = in.data() + n * g.d_in;
  T* y = out.data() + n * g.d_out;
  for (std::size_t o = 0; o < g.d_out; ++o) {
    const T* wr = weight.data() + o * g.d_in;
    T acc = bias.empty() ? T(0) : bias[o];
    for (std::size_t i = 0; i < g.d_in; ++i) acc += wr[i] * x[i];
    y[o] = acc;
  }
}

template <class T>
void linear_grad_input_row(const LinearGeometry& g, std::size_t n, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in) {
  const T* gy = grad_out.data() + n * g.d_out;
  T* gx = grad_in.data() + n * g.d_in;
  for (std::size_t o = 0; o < g.d_out; ++o) {
    const T* wr = weight.data() + o * g.d_in;
    const T go = gy[o];
    for (std::size_t i = 0; i < g.d_in; ++i) gx[i] += go * wr[i];
  }
}

template <class T>
void linear_grad_weight_row(const LinearGeometry& g, std::size_t o, std::span<const T> grad_out,
                            std::span<const T> in, std::span<T> grad_weight, std::span<T> grad_bias) {
  T* gw = grad_weight.data() + o * g.d_in;
  T bias_acc = 0;
  for (std::size_t n = 0; n < g.n; ++n) {
    const T go = grad_out[n * g.d_out + o];
    const T* x = in.data() + n * g.d_in;
    for (std::size_t i = 0; i < g.d_in; ++i) gw[i] += go * x[i];
    bias_acc += go;
  }
  if (!grad_bias.empty()) grad_bias[o] += bias_acc;
}

template <class T>
void pairwise_row(std::size_t i, std::size_t rows_b, std::size_t dim, std::span<const T> a,
                  std::span<const T> b, std::span<double> out) {
  const T* x = a.data() + i * dim;
  for (std::size_t j = 0; j < rows_b; ++j) {
    const T* y = b.data() + j * dim;
    double acc = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double d = static_cast<double>(x[k]) - static_cast<double>(y[k]);
      acc += d * d;
    }
    out[i * rows_b + j] = acc;
  }
}

}  // namespace dsaf::kernels::detail

#define DSAF_INSTANTIATE_KERNELS(T)                                                                     \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,  \
                                  std::span<const T>, std::span<T>);                            \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,               \
                                         std::span<const T>, std::span<T>);                     \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,              \
                                          std::span<const T>, std::span<T>, std::span<T>);      \
  template void linear_forward<T>(const LinearGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<const T>, std::span<T>);                            \
  template void linear_backward<T>(const LinearGeometry&, std::span<const T>, std::span<const T>, \
                                   std::span<const T>, std::span<T>, std::span<T>, std::span<T>); \
  template void pairwise_sq_distances<T>(std::size_t, std::size_t, std::size_t,                 \
                                         std::span<const T>, std::span<const T>, std::span<double>);
