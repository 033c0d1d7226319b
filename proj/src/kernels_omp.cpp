#include <omp.h>

#include "kernel_bodies.hpp"

namespace dsaf::kernels::parallel {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  const auto slices = static_cast<long long>(g.n * g.c_out);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (long long s = 0; s < slices; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    detail::conv_forward_slice(g, idx / g.c_out, idx % g.c_out, in, weight, bias, out);
  }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in) {
  const auto slices = static_cast<long long>(g.n * g.c_in);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (long long s = 0; s < slices; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    detail::conv_backward_input_slice(g, idx / g.c_in, idx % g.c_in, grad_out, weight, grad_in);
  }
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,
                            std::span<const T> in, std::span<T> grad_weight,
                            std::span<T> grad_bias) {
  const auto slices = static_cast<long long>(g.c_out);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (long long co = 0; co < slices; ++co) {
    detail::conv_backward_weight_slice(g, static_cast<std::size_t>(co), grad_out, in, grad_weight,
                                       grad_bias);
  }
}

template <class T>
void linear_forward(const LinearGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  const auto rows = static_cast<long long>(g.n);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (long long n = 0; n < rows; ++n) {
    detail::linear_forward_row(g, static_cast<std::size_t>(n), in, weight, bias, out);
  }
}

template <class T>
void linear_backward(const LinearGeometry& g, std::span<const T> grad_out, std::span<const T> in,
                     std::span<const T> weight, std::span<T> grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  if (!grad_in.empty()) {
    const auto rows = static_cast<long long>(g.n);
#pragma omp parallel for schedule(static) num_threads(num_threads())
    for (long long n = 0; n < rows; ++n) {
      detail::linear_grad_input_row(g, static_cast<std::size_t>(n), grad_out, weight, grad_in);
    }
  }
  if (!grad_weight.empty()) {
    const auto outs = static_cast<long long>(g.d_out);
#pragma omp parallel for schedule(static) num_threads(num_threads())
    for (long long o = 0; o < outs; ++o) {
      detail::linear_grad_weight_row(g, static_cast<std::size_t>(o), grad_out, in, grad_weight,
                                     grad_bias);
    }
  }
}

template <class T>
void pairwise_sq_distances(std::size_t rows_a, std::size_t rows_b, std::size_t dim,
                           std::span<const T> a, std::span<const T> b, std::span<double> out) {
  const auto rows = static_cast<long long>(rows_a);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (long long i = 0; i < rows; ++i) {
    detail::pairwise_row(static_cast<std::size_t>(i), rows_b, dim, a, b, out);
  }
}

DSAF_INSTANTIATE_KERNELS(float)
DSAF_INSTANTIATE_KERNELS(double)

}  // namespace dsaf::kernels::parallel
