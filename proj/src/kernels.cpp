#include "dsaf/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "kernel_bodies.hpp"

namespace dsaf::kernels {

namespace {

int threads_from_env() {
  if (const char* env = std::getenv("DSAF_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> threads{threads_from_env()};
  return threads;
}

}  // namespace

void set_num_threads(int threads) { thread_setting().store(threads < 1 ? 1 : threads); }
int num_threads() { return thread_setting().load(); }

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  if (num_threads() > 1) return parallel::conv2d_forward(g, in, weight, bias, out);
  serial::conv2d_forward(g, in, weight, bias, out);
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in) {
  if (num_threads() > 1) return parallel::conv2d_backward_input(g, grad_out, weight, grad_in);
  serial::conv2d_backward_input(g, grad_out, weight, grad_in);
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,
                            std::span<const T> in, std::span<T> grad_weight,
                            std::span<T> grad_bias) {
  if (num_threads() > 1) {
    return parallel::conv2d_backward_weight(g, grad_out, in, grad_weight, grad_bias);
  }
  serial::conv2d_backward_weight(g, grad_out, in, grad_weight, grad_bias);
}

template <class T>
void linear_forward(const LinearGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  if (num_threads() > 1) return parallel::linear_forward(g, in, weight, bias, out);
  serial::linear_forward(g, in, weight, bias, out);
}

template <class T>
void linear_backward(const LinearGeometry& g, std::span<const T> grad_out, std::span<const T> in,
                     std::span<const T> weight, std::span<T> grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  if (num_threads() > 1) {
    return parallel::linear_backward(g, grad_out, in, weight, grad_in, grad_weight, grad_bias);
  }
  serial::linear_backward(g, grad_out, in, weight, grad_in, grad_weight, grad_bias);
}

template <class T>
void pairwise_sq_distances(std::size_t rows_a, std::size_t rows_b, std::size_t dim,
                           std::span<const T> a, std::span<const T> b, std::span<double> out) {
  if (num_threads() > 1) return parallel::pairwise_sq_distances(rows_a, rows_b, dim, a, b, out);
  serial::pairwise_sq_distances(rows_a, rows_b, dim, a, b, out);
}

DSAF_INSTANTIATE_KERNELS(float)
DSAF_INSTANTIATE_KERNELS(double)

}  // namespace dsaf::kernels
