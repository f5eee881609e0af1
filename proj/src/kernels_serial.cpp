#include <cmath>
#include <vector>

#include "rthare/kernels.hpp"

namespace rthare::kernels::serial {

template <typename T>
void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = op_a == Op::none ? a[i * k + p] : a[p * m + i];
        const T bv = op_b == Op::none ? b[p * n + j] : b[j * k + p];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

template <typename T>
void conv2d(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t co = 0; co < g.out_ch; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc = bias ? bias[co] : T{0};
        for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
              acc += weight[((co * g.in_ch + ci) * g.k_h + ky) * g.k_w + kx] *
                     in[(ci * g.in_h + iy) * g.in_w + ix];
            }
          }
        }
        out[(co * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

template <typename T>
void conv2d_grad_input(const ConvGeometry& g, const T* weight, const T* gout, T* gin) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t co = 0; co < g.out_ch; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T go = gout[(co * oh + oy) * ow + ox];
        for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
              gin[(ci * g.in_h + iy) * g.in_w + ix] +=
                  go * weight[((co * g.in_ch + ci) * g.k_h + ky) * g.k_w + kx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_grad_weight(const ConvGeometry& g, const T* in, const T* gout, T* gw, T* gb) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t co = 0; co < g.out_ch; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T go = gout[(co * oh + oy) * ow + ox];
        if (gb) gb[co] += go;
        for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
              gw[((co * g.in_ch + ci) * g.k_h + ky) * g.k_w + kx] += go * in[(ci * g.in_h + iy) * g.in_w + ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void correlate(std::size_t channels, std::size_t positions, const T* fa, const T* fb, T scale, T* out) {
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t q = 0; q < positions; ++q) {
      T acc = 0;
      for (std::size_t d = 0; d < channels; ++d) acc += fa[d * positions + p] * fb[d * positions + q];
      out[p * positions + q] = scale * acc;
    }
  }
}

template <typename T>
void correlate_grad(std::size_t channels, std::size_t positions, const T* fa, const T* fb, T scale,
                    const T* gout, T* ga, T* gb) {
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t q = 0; q < positions; ++q) {
      const T go = scale * gout[p * positions + q];
      for (std::size_t d = 0; d < channels; ++d) {
        if (ga) ga[d * positions + p] += go * fb[d * positions + q];
        if (gb) gb[d * positions + q] += go * fa[d * positions + p];
      }
    }
  }
}

#define RTHARE_INSTANTIATE(T)                                                                        \
  template void gemm<T>(Op, Op, std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void conv2d<T>(const ConvGeometry&, const T*, const T*, const T*, T*);                    \
  template void conv2d_grad_input<T>(const ConvGeometry&, const T*, const T*, T*);                   \
  template void conv2d_grad_weight<T>(const ConvGeometry&, const T*, const T*, T*, T*);              \
  template void correlate<T>(std::size_t, std::size_t, const T*, const T*, T, T*);                   \
  template void correlate_grad<T>(std::size_t, std::size_t, const T*, const T*, T, const T*, T*, T*);

RTHARE_INSTANTIATE(float)
RTHARE_INSTANTIATE(double)
#undef RTHARE_INSTANTIATE

}  // namespace rthare::kernels::serial
