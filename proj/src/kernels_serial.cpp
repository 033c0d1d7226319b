#include "kernel_bodies.hpp"

namespace dsaf::kernels::serial {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < g.c_out; ++co) {
      detail::conv_forward_slice(g, n, co, in, weight, bias, out);
    }
  }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in) {
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      detail::conv_backward_input_slice(g, n, ci, grad_out, weight, grad_in);
    }
  }
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,
                            std::span<const T> in, std::span<T> grad_weight,
                            std::span<T> grad_bias) {
  for (std::size_t co = 0; co < g.c_out; ++co) {
    detail::conv_backward_weight_slice(g, co, grad_out, in, grad_weight, grad_bias);
  }
}

template <class T>
void linear_forward(const LinearGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  for (std::size_t n = 0; n < g.n; ++n) detail::linear_forward_row(g, n, in, weight, bias, out);
}

template <class T>
void linear_backward(const LinearGeometry& g, std::span<const T> grad_out, std::span<const T> in,
                     std::span<const T> weight, std::span<T> grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  if (!grad_in.empty()) {
    for (std::size_t n = 0; n < g.n; ++n) detail::linear_grad_input_row(g, n, grad_out, weight, grad_in);
  }
  if (!grad_weight.empty()) {
    for (std::size_t o = 0; o < g.d_out; ++o) {
      detail::linear_grad_weight_row(g, o, grad_out, in, grad_weight, grad_bias);
    }
  }
}

template <class T>
void pairwise_sq_distances(std::size_t rows_a, std::size_t rows_b, std::size_t dim,
                           std::span<const T> a, std::span<const T> b, std::span<double> out) {
  for (std::size_t i = 0; i < rows_a; ++i) detail::pairwise_row(i, rows_b, dim, a, b, out);
}

DSAF_INSTANTIATE_KERNELS(float)
DSAF_INSTANTIATE_KERNELS(double)

}  // namespace dsaf::kernels::serial
