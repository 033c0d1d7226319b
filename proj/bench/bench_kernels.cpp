// Times the serial reference kernels against their OpenMP counterparts on
// shapes typical of the standard backbone and checks that both agree bit for bit.
//
//   dsaf_bench [--threads N] [--reps R] [--batch B]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsaf/kernels.hpp"

namespace k = dsaf::kernels;

namespace {

std::vector<float> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

double best_ms(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

struct Row {
  std::string name;
  double serial_ms;
  double parallel_ms;
  bool identical;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs OpenMP kernel benchmark"};
  int threads = 4, reps = 5;
  std::size_t batch = 32;
  app.add_option("--threads", threads, "OpenMP threads for the parallel kernels")->check(CLI::PositiveNumber);
  app.add_option("--reps", reps, "Repetitions; the best time is reported")->check(CLI::PositiveNumber);
  app.add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  k::set_num_threads(threads);

  std::mt19937_64 rng(42);
  std::vector<Row> rows;

  const k::ConvGeometry convs[] = {
      {batch, 3, 64, 32, 32, 3, 1, 1},
      {batch, 32, 64, 32, 64, 4, 2, 1},
      {batch, 64, 32, 16, 64, 3, 1, 1},
  };
  for (const auto& g : convs) {
    const std::string tag = std::to_string(g.c_in) + "->" + std::to_string(g.c_out) + " " + std::to_string(g.h) + "x" +
                            std::to_string(g.w) + " k" + std::to_string(g.k) + " s" + std::to_string(g.stride);
    const auto in = random_vector(g.n * g.c_in * g.h * g.w, rng);
    const auto w = random_vector(g.c_out * g.c_in * g.k * g.k, rng);
    const std::size_t out_size = g.n * g.c_out * g.h_out() * g.w_out();
    const auto grad_out = random_vector(out_size, rng);
    std::vector<float> a(out_size), b(out_size);

    const double fs = best_ms(reps, [&] { k::serial::conv2d_forward<float>(g, in, w, {}, a); });
    const double fp = best_ms(reps, [&] { k::parallel::conv2d_forward<float>(g, in, w, {}, b); });
    rows.push_back({"conv fwd " + tag, fs, fp, a == b});

    std::vector<float> gi_a(in.size()), gi_b(in.size());
    const double bs = best_ms(reps, [&] {
      std::fill(gi_a.begin(), gi_a.end(), 0.0f);
      k::serial::conv2d_backward_input<float>(g, grad_out, w, gi_a);
    });
    const double bp = best_ms(reps, [&] {
      std::fill(gi_b.begin(), gi_b.end(), 0.0f);
      k::parallel::conv2d_backward_input<float>(g, grad_out, w, gi_b);
    });
    rows.push_back({"conv bwd-in " + tag, bs, bp, gi_a == gi_b});

    std::vector<float> gw_a(w.size()), gw_b(w.size());
    const double ws = best_ms(reps, [&] {
      std::fill(gw_a.begin(), gw_a.end(), 0.0f);
      k::serial::conv2d_backward_weight<float>(g, grad_out, in, gw_a, {});
    });
    const double wp = best_ms(reps, [&] {
      std::fill(gw_b.begin(), gw_b.end(), 0.0f);
      k::parallel::conv2d_backward_weight<float>(g, grad_out, in, gw_b, {});
    });
    rows.push_back({"conv bwd-w " + tag, ws, wp, gw_a == gw_b});
  }

  {
    const k::LinearGeometry g{batch * 8, 256, 512};
    const auto in = random_vector(g.n * g.d_in, rng);
    const auto w = random_vector(g.d_out * g.d_in, rng);
    const auto bias = random_vector(g.d_out, rng);
    std::vector<float> a(g.n * g.d_out), b(g.n * g.d_out);
    const double s = best_ms(reps, [&] { k::serial::linear_forward<float>(g, in, w, bias, a); });
    const double p = best_ms(reps, [&] { k::parallel::linear_forward<float>(g, in, w, bias, b); });
    rows.push_back({"linear fwd 256->512", s, p, a == b});
  }
  {
    const std::size_t n = 2000, dim = 256;
    const auto x = random_vector(n * dim, rng);
    std::vector<double> a(n * n), b(n * n);
    const double s = best_ms(reps, [&] { k::serial::pairwise_sq_distances<float>(n, n, dim, x, x, a); });
    const double p = best_ms(reps, [&] { k::parallel::pairwise_sq_distances<float>(n, n, dim, x, x, b); });
    rows.push_back({"pairwise 2000x2000 d256", s, p, a == b});
  }

  std::printf("%-34s %12s %12s %8s  %s\n", "kernel", "serial ms", "openmp ms", "speedup", "identical");
  bool all_identical = true;
  for (const auto& r : rows) {
    all_identical = all_identical && r.identical;
    std::printf("%-34s %12.3f %12.3f %7.2fx  %s\n", r.name.c_str(), r.serial_ms, r.parallel_ms,
                r.serial_ms / r.parallel_ms, r.identical ? "yes" : "NO");
  }
  std::printf("threads %d, best of %d\n", threads, reps);
  return all_identical ? 0 : 1;
}
