#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "iln/autodiff.hpp"
#include "iln/errors.hpp"
#include "iln/tensor.hpp"

/**
 * \file
 * \brief Differentiable ops: exactly the set the encoder and heads need.
 *
 * Broadcasting is limited to adding a rank-1 bias along the last axis.
 */

namespace iln::ad {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

/// (outer, axis, inner) extents around `axis`.
inline void split_axis(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& mid, std::size_t& inner) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  mid = s[axis];
}

}  // namespace detail

/// [N,K] x [K,M] -> [N,M]
template <typename T>
[[nodiscard]] Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) detail::shape_mismatch("matmul", sa, sb);
  const std::size_t n = sa[0], k = sa[1], m = sb[1];
  Tensor<T> out({n, m}, uninitialized);
  using detail::ConstMatMap;
  using detail::MatMap;
  MatMap<T>(out.data(), n, m).noalias() = ConstMatMap<T>(a.value().data(), n, k) * ConstMatMap<T>(b.value().data(), k, m);
  return detail::make_op(std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    const ConstMatMap<T> g(self.grad.data(), n, m);
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    if (na.requires_grad) {
      MatMap<T>(na.grad_buffer().data(), n, k).noalias() += g * ConstMatMap<T>(nb.value.data(), k, m).transpose();
    }
    if (nb.requires_grad) {
      MatMap<T>(nb.grad_buffer().data(), k, m).noalias() += ConstMatMap<T>(na.value.data(), n, k).transpose() * g;
    }
  });
}

/// Elementwise sum of equal shapes, or `a` plus a rank-1 bias over its last axis.
template <typename T>
[[nodiscard]] Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return detail::make_op(std::move(out), {a, b}, [](Node<T>& self) {
      for (std::size_t j = 0; j < 2; ++j) {
        Node<T>& in = *self.inputs[j];
        if (!in.requires_grad) continue;
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  if (sb.size() != 1 || sa.empty() || sa.back() != sb[0]) detail::shape_mismatch("add", sa, sb);
  const std::size_t width = sb[0];
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i % width];
  return detail::make_op(std::move(out), {a, b}, [width](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % width] += self.grad[i];
    }
  });
}

/// Elementwise product of equal shapes.
template <typename T>
[[nodiscard]] Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_op(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

template <typename T>
[[nodiscard]] Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return detail::make_op(std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
[[nodiscard]] Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::max(v, T{0});
  return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T{0}) g[i] += self.grad[i];
    }
  });
}

/// Same values, new shape.
template <typename T>
[[nodiscard]] Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value();
  out.reshape(std::move(shape));
  return detail::make_op(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Sum over the last axis; a rank-1 input reduces to shape [1].
template <typename T>
[[nodiscard]] Var<T> sum_last(const Var<T>& a) {
  const Shape& s = a.shape();
  const std::size_t width = s.back();
  Shape out_shape(s.begin(), s.end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < a.value().size(); ++i) out[i / width] += a.value()[i];
  return detail::make_op(std::move(out), {a}, [width](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / width];
  });
}

/// Concatenation along `axis`; all other extents must agree.
template <typename T>
[[nodiscard]] Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  Shape out_shape = s0;
  out_shape.at(axis) = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) detail::shape_mismatch("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) detail::shape_mismatch("concat", s0, s);
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 0, total = 0, inner = 0;
  detail::split_axis(out_shape, axis, outer, total, inner);
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  Tensor<T> out(out_shape, uninitialized);
  const std::size_t row = total * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t j = 0; j < parts.size(); ++j) {
      const T* src = parts[j].value().data() + o * widths[j];
      std::copy(src, src + widths[j], out.data() + o * row + offset);
      offset += widths[j];
    }
  }
  return detail::make_op_n<T>(std::move(out), parts, [widths, outer, row](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t j = 0; j < self.inputs.size(); ++j) {
      Node<T>& in = *self.inputs[j];
      if (in.requires_grad) {
        auto& g = in.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * row + offset;
          T* dst = g.data() + o * widths[j];
          for (std::size_t i = 0; i < widths[j]; ++i) dst[i] += src[i];
        }
      }
      offset += widths[j];
    }
  });
}

/// Softmax along `axis`, computed with the max subtracted for stability.
template <typename T>
[[nodiscard]] Var<T> softmax(const Var<T>& a, std::size_t axis) {
  std::size_t outer = 0, mid = 0, inner = 0;
  detail::split_axis(a.shape(), axis, outer, mid, inner);
  Tensor<T> out(a.shape(), uninitialized);
  const T* x = a.value().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * mid * inner + i;
      T hi = x[base];
      for (std::size_t m = 1; m < mid; ++m) hi = std::max(hi, x[base + m * inner]);
      T total{0};
      for (std::size_t m = 0; m < mid; ++m) {
        const T e = std::exp(x[base + m * inner] - hi);
        out[base + m * inner] = e;
        total += e;
      }
      for (std::size_t m = 0; m < mid; ++m) out[base + m * inner] /= total;
    }
  }
  return detail::make_op(std::move(out), {a}, [outer, mid, inner](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * mid * inner + i;
        T dot{0};
        for (std::size_t m = 0; m < mid; ++m) dot += self.grad[base + m * inner] * y[base + m * inner];
        for (std::size_t m = 0; m < mid; ++m) {
          const std::size_t k = base + m * inner;
          g[k] += y[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

/// Layer normalization over the last axis with gain and bias of that width.
template <typename T>
[[nodiscard]] Var<T> layernorm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const Shape& s = x.shape();
  const std::size_t width = s.back();
  if (gain.shape() != Shape{width}) detail::shape_mismatch("layernorm", s, gain.shape());
  if (bias.shape() != Shape{width}) detail::shape_mismatch("layernorm", s, bias.shape());
  const std::size_t rows = x.value().size() / width;
  Tensor<T> out(s, uninitialized);
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * width;
    T mean{0};
    for (std::size_t i = 0; i < width; ++i) mean += in[i];
    mean /= static_cast<T>(width);
    T var{0};
    for (std::size_t i = 0; i < width; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<T>(width);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < width; ++i) {
      const T h = (in[i] - mean) * is;
      (*xhat)[r * width + i] = h;
      out[r * width + i] = h * gain.value()[i] + bias.value()[i];
    }
  }
  return detail::make_op(std::move(out), {x, gain, bias}, [rows, width, xhat, inv_std](Node<T>& self) {
    Node<T>& nx = *self.inputs[0];
    Node<T>& ng = *self.inputs[1];
    Node<T>& nb = *self.inputs[2];
    const T* dy = self.grad.data();
    if (ng.requires_grad) {
      auto& g = ng.grad_buffer();
      for (std::size_t k = 0; k < rows * width; ++k) g[k % width] += dy[k] * (*xhat)[k];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t k = 0; k < rows * width; ++k) g[k % width] += dy[k];
    }
    if (nx.requires_grad) {
      auto& g = nx.grad_buffer();
      std::vector<T> dh(width);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh{0}, mean_dh_h{0};
        for (std::size_t i = 0; i < width; ++i) {
          dh[i] = dy[r * width + i] * ng.value[i];
          mean_dh += dh[i];
          mean_dh_h += dh[i] * (*xhat)[r * width + i];
        }
        mean_dh /= static_cast<T>(width);
        mean_dh_h /= static_cast<T>(width);
        for (std::size_t i = 0; i < width; ++i) {
          g[r * width + i] += (*inv_std)[r] * (dh[i] - mean_dh - (*xhat)[r * width + i] * mean_dh_h);
        }
      }
    }
  });
}

/// Mean absolute difference, shape [1]. The subgradient at equality is 0.
template <typename T>
[[nodiscard]] Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape()) detail::shape_mismatch("l1_loss", pred.shape(), target.shape());
  const std::size_t n = pred.value().size();
  T total{0};
  for (std::size_t i = 0; i < n; ++i) total += std::abs(pred.value()[i] - target.value()[i]);
  return detail::make_op(Tensor<T>::scalar(total / static_cast<T>(n)), {pred, target}, [n](Node<T>& self) {
    Node<T>& np = *self.inputs[0];
    Node<T>& nt = *self.inputs[1];
    const T g = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = np.value[i] - nt.value[i];
      const T sign = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
      if (np.requires_grad) np.grad_buffer()[i] += g * sign;
      if (nt.requires_grad) nt.grad_buffer()[i] -= g * sign;
    }
  });
}

/// Rows of a [B,C,H,W] map at flat pixel indices b*H*W + y*W + x -> [N,C].
template <typename T>
[[nodiscard]] Var<T> gather_pixels(const Var<T>& fmap, std::vector<std::size_t> pixels) {
  const Shape& s = fmap.shape();
  if (s.size() != 4) throw ShapeError("gather_pixels needs a [B,C,H,W] map, got " + shape_str(s));
  const std::size_t channels = s[1], plane = s[2] * s[3];
  for (const auto p : pixels) {
    if (p >= s[0] * plane) throw IndexError("gather_pixels index " + std::to_string(p) + " outside " + shape_str(s));
  }
  const std::size_t n = pixels.size();
  Tensor<T> out({n, channels}, uninitialized);
  const T* src = fmap.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = pixels[i] / plane, p = pixels[i] % plane;
    for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] = src[(b * channels + c) * plane + p];
  }
  return detail::make_op(std::move(out), {fmap}, [pixels = std::move(pixels), channels, plane](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const std::size_t b = pixels[i] / plane, p = pixels[i] % plane;
      for (std::size_t c = 0; c < channels; ++c) g[(b * channels + c) * plane + p] += self.grad[i * channels + c];
    }
  });
}

/// [A,B,C,D] -> [A,C,B,D]; splits tokens into attention heads and back.
template <typename T>
[[nodiscard]] Var<T> swap_middle(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("swap_middle needs rank 4, got " + shape_str(s));
  const std::size_t A = s[0], B = s[1], C = s[2], D = s[3];
  Tensor<T> out({A, C, B, D}, uninitialized);
  const T* src = x.value().data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        std::copy_n(src + ((a * B + b) * C + c) * D, D, out.data() + ((a * C + c) * B + b) * D);
  return detail::make_op(std::move(out), {x}, [A, B, C, D](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const T* src = self.grad.data() + ((a * C + c) * B + b) * D;
          T* dst = g.data() + ((a * B + b) * C + c) * D;
          for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
        }
  });
}

/// Batched product: [Bt,M,K] x [Bt,K,N], or [Bt,M,K] x [Bt,N,K]^T when transpose_b.
template <typename T>
[[nodiscard]] Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b = false) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0]) detail::shape_mismatch("bmm", sa, sb);
  const std::size_t batch = sa[0], M = sa[1], K = sa[2];
  const std::size_t N = transpose_b ? sb[1] : sb[2];
  if ((transpose_b ? sb[2] : sb[1]) != K) detail::shape_mismatch("bmm", sa, sb);
  // element (k, n) of the right operand
  const auto b_index = [=](std::size_t k, std::size_t n) { return transpose_b ? n * K + k : k * N + n; };
  Tensor<T> out({batch, M, N}, uninitialized);
  for (std::size_t t = 0; t < batch; ++t) {
    const T* pa = a.value().data() + t * M * K;
    const T* pb = b.value().data() + t * K * N;
    T* pc = out.data() + t * M * N;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t n = 0; n < N; ++n) {
        T acc{0};
        for (std::size_t k = 0; k < K; ++k) acc += pa[m * K + k] * pb[b_index(k, n)];
        pc[m * N + n] = acc;
      }
  }
  return detail::make_op(std::move(out), {a, b}, [=](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    for (std::size_t t = 0; t < batch; ++t) {
      const T* pa = na.value.data() + t * M * K;
      const T* pb = nb.value.data() + t * K * N;
      const T* gc = self.grad.data() + t * M * N;
      if (na.requires_grad) {
        T* ga = na.grad_buffer().data() + t * M * K;
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t n = 0; n < N; ++n) {
            const T g = gc[m * N + n];
            for (std::size_t k = 0; k < K; ++k) ga[m * K + k] += g * pb[b_index(k, n)];
          }
      }
      if (nb.requires_grad) {
        T* gb = nb.grad_buffer().data() + t * K * N;
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t n = 0; n < N; ++n) {
            const T g = gc[m * N + n];
            for (std::size_t k = 0; k < K; ++k) gb[b_index(k, n)] += g * pa[m * K + k];
          }
      }
    }
  });
}

enum class Padding { zero, replicate, circular };

namespace detail {

/// Source index of a padded coordinate, or -1 for a zero pad.
inline long pad_index(long i, long n, Padding p) {
  if (i >= 0 && i < n) return i;
  switch (p) {
    case Padding::zero:
      return -1;
    case Padding::replicate:
      return std::clamp(i, 0L, n - 1);
    case Padding::circular:
      return ((i % n) + n) % n;
  }
  return -1;
}

}  // namespace detail

/// Stride-1 "same" convolution: x [B,Ci,H,W], weight [Co,Ci,k,k], bias [Co] -> [B,Co,H,W].
/// Each spatial axis has its own padding policy.
template <typename T>
[[nodiscard]] Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Padding pad_rows,
                            Padding pad_cols) {
  using detail::ConstMatMap;
  using detail::MatMap;
  using detail::RowMat;
  using detail::shape_mismatch;
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || sw[2] % 2 == 0) {
    shape_mismatch("conv2d", sx, sw);
  }
  if (bias.shape() != Shape{sw[0]}) shape_mismatch("conv2d", sw, bias.shape());
  const std::size_t B = sx[0], Ci = sx[1], H = sx[2], W = sx[3], Co = sw[0], k = sw[2];
  const std::size_t plane = H * W, taps = Ci * k * k, ncols = B * plane;
  const long half = static_cast<long>(k / 2);

  // source offset within one input plane for every (ky, kx, y, x); -1 reads zero
  auto source = std::make_shared<std::vector<long>>(k * k * plane);
  for (std::size_t ky = 0; ky < k; ++ky)
    for (std::size_t kx = 0; kx < k; ++kx)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const long sy = detail::pad_index(static_cast<long>(y) + static_cast<long>(ky) - half, static_cast<long>(H), pad_rows);
          const long sxx = detail::pad_index(static_cast<long>(xx) + static_cast<long>(kx) - half, static_cast<long>(W), pad_cols);
          (*source)[(ky * k + kx) * plane + y * W + xx] = (sy < 0 || sxx < 0) ? -1 : sy * static_cast<long>(W) + sxx;
        }

  // im2col: [taps, B*H*W]
  auto cols = std::make_shared<std::vector<T, detail::DefaultInitAllocator<T>>>(taps * ncols);
  const T* in = x.value().data();
  for (std::size_t ci = 0; ci < Ci; ++ci)
    for (std::size_t kk = 0; kk < k * k; ++kk) {
      T* row = cols->data() + (ci * k * k + kk) * ncols;
      const long* src = source->data() + kk * plane;
      for (std::size_t b = 0; b < B; ++b) {
        const T* plane_in = in + (b * Ci + ci) * plane;
        for (std::size_t p = 0; p < plane; ++p) row[b * plane + p] = src[p] < 0 ? T{0} : plane_in[src[p]];
      }
    }

  RowMat<T> result = ConstMatMap<T>(weight.value().data(), Co, taps) * ConstMatMap<T>(cols->data(), taps, ncols);
  Tensor<T> out({B, Co, H, W}, uninitialized);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co) {
      const T bv = bias.value()[co];
      const T* src = result.data() + co * ncols + b * plane;
      T* dst = out.data() + (b * Co + co) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bv;
    }

  if (!grad_mode()) return constant(std::move(out));
  return detail::make_op(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    // gradient of the output reshaped to [Co, B*H*W]
    RowMat<T> gout(Co, ncols);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t co = 0; co < Co; ++co)
        std::copy_n(self.grad.data() + (b * Co + co) * plane, plane, gout.data() + co * ncols + b * plane);
    Node<T>& nx = *self.inputs[0];
    Node<T>& nw = *self.inputs[1];
    Node<T>& nb = *self.inputs[2];
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t co = 0; co < Co; ++co) g[co] += gout.row(co).sum();
    }
    if (nw.requires_grad) {
      MatMap<T>(nw.grad_buffer().data(), Co, taps).noalias() +=
          gout * ConstMatMap<T>(cols->data(), taps, ncols).transpose();
    }
    if (nx.requires_grad) {
      RowMat<T> gcols = ConstMatMap<T>(nw.value.data(), Co, taps).transpose() * gout;
      auto& g = nx.grad_buffer();
      for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t kk = 0; kk < k * k; ++kk) {
          const T* row = gcols.data() + (ci * k * k + kk) * ncols;
          const long* src = source->data() + kk * plane;
          for (std::size_t b = 0; b < B; ++b) {
            T* plane_g = g.data() + (b * Ci + ci) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              if (src[p] >= 0) plane_g[src[p]] += row[b * plane + p];
            }
          }
        }
    }
  });
}

}  // namespace iln::ad
