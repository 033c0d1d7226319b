#pragma once

// Dense inner loops behind the differentiable ops. Each kernel exists twice:
// `serial` is the reference kept for testing, `parallel` splits the outermost
// independent axis across OpenMP threads. Both accumulate every output element
// in the same order, so their results are bit-identical.

#include <cstddef>
#include <span>

namespace dsaf::kernels {

struct ConvGeometry {
  std::size_t n = 0;
  std::size_t c_in = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c_out = 0;
  std::size_t k = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t h_out() const { return (h + 2 * padding - k) / stride + 1; }
  std::size_t w_out() const { return (w + 2 * padding - k) / stride + 1; }
};

struct LinearGeometry {
  std::size_t n = 0;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
};

// Thread count used by the dispatching entry points below; 1 selects the
// serial kernels. Defaults to the DSAF_THREADS environment variable, else 1.
void set_num_threads(int threads);
int num_threads();

#define DSAF_KERNEL_DECLS                                                                       \
  template <class T>                                                                            \
  void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,  \
                      std::span<const T> bias, std::span<T> out);                               \
  template <class T>                                                                            \
  void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,                \
                             std::span<const T> weight, std::span<T> grad_in);                  \
  template <class T>                                                                            \
  void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,               \
                              std::span<const T> in, std::span<T> grad_weight,                  \
                              std::span<T> grad_bias);                                          \
  template <class T>                                                                            \
  void linear_forward(const LinearGeometry& g, std::span<const T> in, std::span<const T> weight, \
                      std::span<const T> bias, std::span<T> out);                               \
  template <class T>                                                                            \
  void linear_backward(const LinearGeometry& g, std::span<const T> grad_out,                    \
                       std::span<const T> in, std::span<const T> weight, std::span<T> grad_in,  \
                       std::span<T> grad_weight, std::span<T> grad_bias);                       \
  template <class T>                                                                            \
  void pairwise_sq_distances(std::size_t rows_a, std::size_t rows_b, std::size_t dim,           \
                             std::span<const T> a, std::span<const T> b, std::span<double> out);

// Gradient outputs are accumulated into (+=), never overwritten. An empty
// bias span means "no bias".
namespace serial {
DSAF_KERNEL_DECLS
}  // namespace serial

namespace parallel {
DSAF_KERNEL_DECLS
}  // namespace parallel

DSAF_KERNEL_DECLS

#undef DSAF_KERNEL_DECLS

}  // namespace dsaf::kernels
