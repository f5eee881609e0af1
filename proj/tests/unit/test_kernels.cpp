#include <omp.h>

#include <numeric>

#include "rthare/kernels.hpp"
#include "test_util.hpp"

using namespace rthare;
using namespace rthare::kernels;
using rthare::test::random_tensor;

namespace {

// Direct textbook definitions, independent of the library kernels.
TensorD conv_oracle(const ConvGeometry& g, const TensorD& in, const TensorD& w, const TensorD& b) {
  TensorD out(Shape{g.out_ch, g.out_h(), g.out_w()});
  for (std::size_t o = 0; o < g.out_ch; ++o) {
    for (std::size_t y = 0; y < g.out_h(); ++y) {
      for (std::size_t x = 0; x < g.out_w(); ++x) {
        double s = b[o];
        for (std::size_t c = 0; c < g.in_ch; ++c) {
          for (std::size_t i = 0; i < g.k_h; ++i) {
            for (std::size_t j = 0; j < g.k_w; ++j) {
              const long iy = static_cast<long>(y * g.stride + i) - static_cast<long>(g.pad);
              const long ix = static_cast<long>(x * g.stride + j) - static_cast<long>(g.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) continue;
              s += in[(c * g.in_h + iy) * g.in_w + ix] * w[((o * g.in_ch + c) * g.k_h + i) * g.k_w + j];
            }
          }
        }
        out[(o * g.out_h() + y) * g.out_w() + x] = s;
      }
    }
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

ConvGeometry geometry(std::size_t seed) {
  std::mt19937_64 rng(seed);
  ConvGeometry g;
  g.in_ch = 1 + rng() % 5;
  g.out_ch = 1 + rng() % 7;
  g.k_h = g.k_w = 1 + 2 * (rng() % 3);
  g.stride = 1 + rng() % 2;
  g.pad = g.k_h / 2;
  g.in_h = g.k_h + rng() % 9;
  g.in_w = g.k_w + rng() % 11;
  return g;
}

}  // namespace

TEST_CASE("gemm: serial matches the triple loop and parallel matches serial for all transposes") {
  for (std::size_t trial = 0; trial < 24; ++trial) {
    std::mt19937_64 rng(trial);
    const std::size_t m = 1 + rng() % 70, n = 1 + rng() % 90, k = 1 + rng() % 40;
    const Op oa = trial % 2 ? Op::transpose : Op::none;
    const Op ob = (trial / 2) % 2 ? Op::transpose : Op::none;
    const auto a = random_tensor<double>({m * k}, trial * 3 + 1);
    const auto b = random_tensor<double>({k * n}, trial * 3 + 2);
    const auto c0 = random_tensor<double>({m * n}, trial * 3 + 3);
    TensorD ref = c0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = oa == Op::none ? a[i * k + p] : a[p * m + i];
          const double bv = ob == Op::none ? b[p * n + j] : b[j * k + p];
          s += av * bv;
        }
        ref[i * n + j] += s;
      }
    }
    TensorD cs = c0, cp = c0;
    serial::gemm(oa, ob, m, n, k, a.raw(), b.raw(), cs.raw(), true);
    parallel::gemm(oa, ob, m, n, k, a.raw(), b.raw(), cp.raw(), true);
    CHECK(max_abs_diff(cs, ref) < 1e-12);
    CHECK(max_abs_diff(cp, ref) < 1e-12);

    TensorD overwrite = c0;
    parallel::gemm(oa, ob, m, n, k, a.raw(), b.raw(), overwrite.raw(), false);
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] -= c0[i];
    CHECK(max_abs_diff(overwrite, ref) < 1e-12);
  }
}

TEST_CASE("gemm float: parallel agrees with serial on a large product") {
  const std::size_t m = 130, n = 257, k = 300;
  const auto a = random_tensor<float>({m * k}, 1);
  const auto b = random_tensor<float>({k * n}, 2);
  Tensor cs(Shape{m * n}), cp(Shape{m * n});
  serial::gemm(Op::none, Op::none, m, n, k, a.raw(), b.raw(), cs.raw(), false);
  parallel::gemm(Op::none, Op::none, m, n, k, a.raw(), b.raw(), cp.raw(), false);
  CHECK(max_abs_diff(cs, cp) < 1e-3);
}

TEST_CASE("conv2d forward: both kernels match the direct definition") {
  for (std::size_t trial = 0; trial < 30; ++trial) {
    const ConvGeometry g = geometry(trial);
    CAPTURE(trial);
    const auto in = random_tensor<double>({g.in_ch, g.in_h, g.in_w}, trial + 100);
    const auto w = random_tensor<double>({g.out_ch, g.in_ch, g.k_h, g.k_w}, trial + 200);
    const auto b = random_tensor<double>({g.out_ch}, trial + 300);
    const TensorD ref = conv_oracle(g, in, w, b);
    TensorD s(ref.shape()), p(ref.shape());
    serial::conv2d(g, in.raw(), w.raw(), b.raw(), s.raw());
    parallel::conv2d(g, in.raw(), w.raw(), b.raw(), p.raw());
    CHECK(max_abs_diff(s, ref) < 1e-12);
    CHECK(max_abs_diff(p, ref) < 1e-12);
  }
}

TEST_CASE("conv2d backward kernels are adjoints of the forward map") {
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const ConvGeometry g = geometry(trial + 50);
    CAPTURE(trial);
    const auto x = random_tensor<double>({g.in_ch, g.in_h, g.in_w}, trial + 1);
    const auto w = random_tensor<double>({g.out_ch, g.in_ch, g.k_h, g.k_w}, trial + 2);
    const auto gy = random_tensor<double>({g.out_ch, g.out_h(), g.out_w()}, trial + 3);
    const TensorD zero_b(Shape{g.out_ch});
    const TensorD y = conv_oracle(g, x, w, zero_b);

    // <conv(x; w), gy> = <x, gin> = <w, gw>; gb = sum of gy over positions
    for (int impl = 0; impl < 2; ++impl) {
      TensorD gin(x.shape()), gw(w.shape()), gb(Shape{g.out_ch});
      if (impl == 0) {
        serial::conv2d_grad_input(g, w.raw(), gy.raw(), gin.raw());
        serial::conv2d_grad_weight(g, x.raw(), gy.raw(), gw.raw(), gb.raw());
      } else {
        parallel::conv2d_grad_input(g, w.raw(), gy.raw(), gin.raw());
        parallel::conv2d_grad_weight(g, x.raw(), gy.raw(), gw.raw(), gb.raw());
      }
      const double lhs = dot(y.data(), gy.data());
      CHECK(dot(x.data(), gin.data()) == doctest::Approx(lhs).epsilon(1e-10));
      CHECK(dot(w.data(), gw.data()) == doctest::Approx(lhs).epsilon(1e-10));
      for (std::size_t o = 0; o < g.out_ch; ++o) {
        double s = 0;
        for (std::size_t q = 0; q < g.out_plane(); ++q) s += gy[o * g.out_plane() + q];
        CHECK(gb[o] == doctest::Approx(s).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("correlation matches all-pairs dot products; its gradient is the adjoint") {
  const std::size_t D = 7, P = 23;
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  const auto fa = random_tensor<double>({D, P}, 1);
  const auto fb = random_tensor<double>({D, P}, 2);
  TensorD ref(Shape{P, P});
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t q = 0; q < P; ++q) {
      double s = 0;
      for (std::size_t d = 0; d < D; ++d) s += fa[d * P + p] * fb[d * P + q];
      ref[p * P + q] = scale * s;
    }
  }
  TensorD s(Shape{P, P}), p(Shape{P, P});
  serial::correlate(D, P, fa.raw(), fb.raw(), scale, s.raw());
  parallel::correlate(D, P, fa.raw(), fb.raw(), scale, p.raw());
  CHECK(max_abs_diff(s, ref) < 1e-12);
  CHECK(max_abs_diff(p, ref) < 1e-12);

  const auto gout = random_tensor<double>({P, P}, 3);
  TensorD ga(fa.shape()), gb(fb.shape()), ga2(fa.shape()), gb2(fb.shape());
  serial::correlate_grad(D, P, fa.raw(), fb.raw(), scale, gout.raw(), ga.raw(), gb.raw());
  parallel::correlate_grad(D, P, fa.raw(), fb.raw(), scale, gout.raw(), ga2.raw(), gb2.raw());
  // bilinear: <C(fa, fb), g> = <fa, ga> = <fb, gb>
  const double lhs = dot(ref.data(), gout.data());
  CHECK(dot(fa.data(), ga.data()) == doctest::Approx(lhs).epsilon(1e-12));
  CHECK(dot(fb.data(), gb.data()) == doctest::Approx(lhs).epsilon(1e-12));
  CHECK(max_abs_diff(ga, ga2) < 1e-12);
  CHECK(max_abs_diff(gb, gb2) < 1e-12);
}

TEST_CASE("correlation of identical features is symmetric") {
  const std::size_t D = 4, P = 9;
  const auto f = random_tensor<double>({D, P}, 5);
  TensorD c(Shape{P, P});
  parallel::correlate(D, P, f.raw(), f.raw(), 0.5, c.raw());
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t q = 0; q < P; ++q) CHECK(c[p * P + q] == doctest::Approx(c[q * P + p]));
  }
}

TEST_CASE("group norm forward matches per-group statistics") {
  const std::size_t C = 6, plane = 10, G = 3;
  const auto x = random_tensor<double>({C, plane}, 9, -3, 5);
  const auto gamma = random_tensor<double>({C}, 10);
  const auto beta = random_tensor<double>({C}, 11);
  const double eps = 1e-5;
  TensorD y(x.shape()), mean(Shape{G}), rstd(Shape{G});
  group_norm_forward(C, plane, G, x.raw(), gamma.raw(), beta.raw(), eps, y.raw(), mean.raw(), rstd.raw());
  const std::size_t per = C / G * plane;
  for (std::size_t g = 0; g < G; ++g) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < per; ++i) m += x[g * per + i];
    m /= per;
    for (std::size_t i = 0; i < per; ++i) v += (x[g * per + i] - m) * (x[g * per + i] - m);
    v /= per;
    CHECK(mean[g] == doctest::Approx(m));
    CHECK(rstd[g] == doctest::Approx(1 / std::sqrt(v + eps)));
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t c = (g * per + i) / plane;
      CHECK(y[g * per + i] == doctest::Approx(gamma[c] * (x[g * per + i] - m) / std::sqrt(v + eps) + beta[c]));
    }
  }
}

TEST_CASE("group norm backward matches finite differences") {
  const std::size_t C = 4, plane = 6, G = 2;
  const auto x = random_tensor<double>({C, plane}, 21);
  const auto gamma = random_tensor<double>({C}, 22);
  const auto beta = random_tensor<double>({C}, 23);
  const auto gy = random_tensor<double>({C, plane}, 24);
  auto loss = [&](const TensorD& xx, const TensorD& gm, const TensorD& bt) {
    TensorD y(xx.shape()), mean(Shape{G}), rstd(Shape{G});
    group_norm_forward(C, plane, G, xx.raw(), gm.raw(), bt.raw(), 1e-5, y.raw(), mean.raw(), rstd.raw());
    return dot(y.data(), gy.data());
  };
  TensorD y(x.shape()), mean(Shape{G}), rstd(Shape{G});
  group_norm_forward(C, plane, G, x.raw(), gamma.raw(), beta.raw(), 1e-5, y.raw(), mean.raw(), rstd.raw());
  TensorD gx(x.shape()), gg(Shape{C}), gb(Shape{C});
  group_norm_backward(C, plane, G, x.raw(), gamma.raw(), mean.raw(), rstd.raw(), gy.raw(), gx.raw(), gg.raw(), gb.raw());
  using rthare::test::numeric_grad;
  CHECK(rthare::test::max_rel_error(gx, numeric_grad([&](const TensorD& v) { return loss(v, gamma, beta); }, x)) < 1e-7);
  CHECK(rthare::test::max_rel_error(gg, numeric_grad([&](const TensorD& v) { return loss(x, v, beta); }, gamma)) < 1e-7);
  CHECK(rthare::test::max_rel_error(gb, numeric_grad([&](const TensorD& v) { return loss(x, gamma, v); }, beta)) < 1e-7);
}

TEST_CASE("parallel kernels give bit-identical results for any thread count") {
  ConvGeometry g;
  g.in_ch = 16;
  g.out_ch = 24;
  g.k_h = g.k_w = 3;
  g.pad = 1;
  g.in_h = 20;
  g.in_w = 27;
  const auto x = random_tensor<float>({g.in_ch, g.in_h, g.in_w}, 1);
  const auto w = random_tensor<float>({g.out_ch, g.in_ch, 3, 3}, 2);
  const auto b = random_tensor<float>({g.out_ch}, 3);
  const auto gy = random_tensor<float>({g.out_ch, g.out_h(), g.out_w()}, 4);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    Tensor y(Shape{g.out_ch, g.out_h(), g.out_w()}), gin(x.shape()), gw(w.shape()), gb(Shape{g.out_ch});
    parallel::conv2d(g, x.raw(), w.raw(), b.raw(), y.raw());
    parallel::conv2d_grad_input(g, w.raw(), gy.raw(), gin.raw());
    parallel::conv2d_grad_weight(g, x.raw(), gy.raw(), gw.raw(), gb.raw());
    return std::vector<Tensor>{y, gin, gw, gb};
  };
  const int saved = max_threads();
  const auto one = run(1);
  const auto four = run(4);
  const auto seven = run(7);
  omp_set_num_threads(saved);
  CHECK(one == four);
  CHECK(one == seven);
}

TEST_CASE("conv geometry validation") {
  ConvGeometry g;
  g.in_ch = 1;
  g.out_ch = 1;
  g.k_h = g.k_w = 5;
  g.in_h = g.in_w = 2;
  CHECK_THROWS_AS(g.validate(), DimensionError);
  g.pad = 2;
  CHECK_NOTHROW(g.validate());
  g.stride = 0;
  CHECK_THROWS_AS(g.validate(), DimensionError);
}
