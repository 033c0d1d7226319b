#include "dsaf/tensor.hpp"

namespace dsaf {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w) + ")";
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (begin > end || end > s.c) {
    throw ShapeError("channel slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + to_string(s));
  }
  Tensor<T> out(Shape{s.n, end - begin, s.h, s.w});
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = x.data().data() + (n * s.c + begin) * plane;
    std::copy(src, src + (end - begin) * plane, out.data().data() + n * (end - begin) * plane);
  }
  return out;
}

template <class T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (begin > end || end > s.n) throw ShapeError("batch slice out of range for " + to_string(s));
  std::vector<T> data(x.storage().begin() + static_cast<std::ptrdiff_t>(begin * s.row()),
                      x.storage().begin() + static_cast<std::ptrdiff_t>(end * s.row()));
  return Tensor<T>(Shape{end - begin, s.c, s.h, s.w}, std::move(data));
}

template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("stack_batch of zero tensors");
  Shape base = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.c != base.c || s.h != base.h || s.w != base.w) {
      throw ShapeError("stack_batch shape mismatch: " + to_string(s) + " vs " + to_string(base));
    }
    total += s.n;
  }
  std::vector<T> data;
  data.reserve(total * base.row());
  for (const auto& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
  base.n = total;
  return Tensor<T>(base, std::move(data));
}

template Tensor<float> slice_channels(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> slice_channels(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> slice_batch(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> slice_batch(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> stack_batch(std::span<const Tensor<float>>);
template Tensor<double> stack_batch(std::span<const Tensor<double>>);

}  // namespace dsaf
