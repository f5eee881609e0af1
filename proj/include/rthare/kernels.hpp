#pragma once

#include <cstddef>
#include <string>

#include "rthare/errors.hpp"

// Compute kernels behind the tensor ops. Every kernel has two implementations:
//
//   serial::    direct loops, kept as the reference the tests compare against
//   parallel::  OpenMP + packed GEMM, used by the production forward/backward path
//
// Parallel kernels split work so that each output element is produced by exactly one
// thread with a fixed reduction order; results do not depend on the thread count.
//
// Layouts are row-major: images [C,H,W], conv weights [Cout,Cin,kh,kw],
// correlation features [D, P] with P = h*w positions.
namespace rthare::kernels {

struct ConvGeometry {
  std::size_t in_ch = 0, in_h = 0, in_w = 0;
  std::size_t out_ch = 0, k_h = 0, k_w = 0;
  std::size_t stride = 1, pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - k_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - k_w) / stride + 1; }
  std::size_t in_plane() const { return in_h * in_w; }
  std::size_t out_plane() const { return out_h() * out_w(); }
  std::size_t patch() const { return in_ch * k_h * k_w; }

  void validate() const {
    if (in_ch == 0 || out_ch == 0 || k_h == 0 || k_w == 0 || stride == 0) {
      throw DimensionError("conv2d: channels, kernel and stride must be positive");
    }
    if (in_h + 2 * pad < k_h || in_w + 2 * pad < k_w) {
      throw DimensionError("conv2d: kernel " + std::to_string(k_h) + "x" + std::to_string(k_w) +
                           " larger than padded input " + std::to_string(in_h) + "x" +
                           std::to_string(in_w) + " (pad " + std::to_string(pad) + ")");
    }
  }
};

enum class Op { none, transpose };

namespace serial {

// C[M,N] (+)= op(A)[M,K] * op(B)[K,N]; A stored [M,K] or [K,M] when transposed, B likewise.
template <typename T>
void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

template <typename T>
void conv2d(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out);

// gin += d(out)/d(in)^T gout
template <typename T>
void conv2d_grad_input(const ConvGeometry& g, const T* weight, const T* gout, T* gin);

// gw += ..., gb += ... (gb may be null)
template <typename T>
void conv2d_grad_weight(const ConvGeometry& g, const T* in, const T* gout, T* gw, T* gb);

// out[p, q] = scale * sum_d fa[d, p] * fb[d, q]
template <typename T>
void correlate(std::size_t channels, std::size_t positions, const T* fa, const T* fb, T scale, T* out);

// ga[d, p] += scale * sum_q gout[p, q] fb[d, q];  gb[d, q] += scale * sum_p gout[p, q] fa[d, p]
template <typename T>
void correlate_grad(std::size_t channels, std::size_t positions, const T* fa, const T* fb, T scale,
                    const T* gout, T* ga, T* gb);

}  // namespace serial

namespace parallel {

template <typename T>
void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

template <typename T>
void conv2d(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out);

template <typename T>
void conv2d_grad_input(const ConvGeometry& g, const T* weight, const T* gout, T* gin);

template <typename T>
void conv2d_grad_weight(const ConvGeometry& g, const T* in, const T* gout, T* gw, T* gb);

template <typename T>
void correlate(std::size_t channels, std::size_t positions, const T* fa, const T* fb, T scale, T* out);

template <typename T>
void correlate_grad(std::size_t channels, std::size_t positions, const T* fa, const T* fb, T scale,
                    const T* gout, T* ga, T* gb);

}  // namespace parallel

// Group normalization over one sample [C, plane]. mean/rstd receive one value per group.
template <typename T>
void group_norm_forward(std::size_t channels, std::size_t plane, std::size_t groups, const T* x,
                        const T* gamma, const T* beta, T eps, T* y, T* mean, T* rstd);

// gx += ..., ggamma += ..., gbeta += ...
template <typename T>
void group_norm_backward(std::size_t channels, std::size_t plane, std::size_t groups, const T* x,
                         const T* gamma, const T* mean, const T* rstd, const T* gy, T* gx, T* ggamma,
                         T* gbeta);

int max_threads();

}  // namespace rthare::kernels
