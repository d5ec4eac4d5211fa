#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "onet/tensor.hpp"

namespace onet {

inline std::int64_t conv_out_size(std::int64_t in, std::int64_t k,
                                  std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Square-kernel convolution parameters. For a regular convolution `weights`
// is laid out [out, in, k, k]; for a transposed convolution it is
// [in, out, k, k].
template <typename T>
struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t pad = 1;
  Tensor<T> weights;
  Tensor<T> bias;

  static ConvSpec conv(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k,
                       std::int64_t stride = 1, std::int64_t pad = -1) {
    ConvSpec s;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = k;
    s.stride = stride;
    s.pad = pad < 0 ? (k - 1) / 2 : pad;
    s.weights = Tensor<T>(Shape{out_ch, in_ch, k, k});
    s.bias = Tensor<T>(Shape{1, 1, 1, out_ch});
    return s;
  }

  static ConvSpec conv_transposed(std::int64_t in_ch, std::int64_t out_ch) {
    ConvSpec s;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = 2;
    s.stride = 2;
    s.pad = 0;
    s.weights = Tensor<T>(Shape{in_ch, out_ch, 2, 2});
    s.bias = Tensor<T>(Shape{1, 1, 1, out_ch});
    return s;
  }
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
inline void check_conv_input(const Tensor<T>& x, const ConvSpec<T>& spec,
                             const char* op) {
  if (x.shape().c() != spec.in_channels) {
    fail(std::string(op) + ": input has " + std::to_string(x.shape().c()) +
         " channels, spec expects " + std::to_string(spec.in_channels));
  }
  const std::int64_t oh =
      conv_out_size(x.shape().h(), spec.kernel, spec.stride, spec.pad);
  const std::int64_t ow =
      conv_out_size(x.shape().w(), spec.kernel, spec.stride, spec.pad);
  if (oh < 1 || ow < 1) {
    fail(std::string(op) + ": output size " + std::to_string(oh) + "x" +
         std::to_string(ow) + " from input " + x.shape().str() +
         " is degenerate");
  }
}

// out[n,co,y,x] = bias[co] + sum_{ci,ky,kx} w[co,ci,ky,kx] *
// in[n,ci,y*s-p+ky,x*s-p+kx], out-of-bounds input reads as zero.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvSpec<T>& spec) {
  check_conv_input(x, spec, "conv2d_forward");
  const auto& s = x.shape();
  const std::int64_t oh = conv_out_size(s.h(), spec.kernel, spec.stride, spec.pad);
  const std::int64_t ow = conv_out_size(s.w(), spec.kernel, spec.stride, spec.pad);
  Tensor<T> out(Shape{s.n(), spec.out_channels, oh, ow});

  for (std::int64_t n = 0; n < s.n(); ++n) {
    for (std::int64_t co = 0; co < spec.out_channels; ++co) {
      for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t x2 = 0; x2 < ow; ++x2) {
          out.at(n, co, y, x2) = spec.bias[co];
        }
      }
      for (std::int64_t ci = 0; ci < spec.in_channels; ++ci) {
        for (std::int64_t ky = 0; ky < spec.kernel; ++ky) {
          for (std::int64_t kx = 0; kx < spec.kernel; ++kx) {
            const T w = spec.weights.at(co, ci, ky, kx);
            if (w == T(0)) continue;
            for (std::int64_t y = 0; y < oh; ++y) {
              const std::int64_t iy = y * spec.stride - spec.pad + ky;
              if (iy < 0 || iy >= s.h()) continue;
              for (std::int64_t x2 = 0; x2 < ow; ++x2) {
                const std::int64_t ix = x2 * spec.stride - spec.pad + kx;
                if (ix < 0 || ix >= s.w()) continue;
                out.at(n, co, y, x2) += w * x.at(n, ci, iy, ix);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvSpec<T>& spec,
                             const Tensor<T>& grad_out) {
  check_conv_input(x, spec, "conv2d_backward");
  const auto& s = x.shape();
  const std::int64_t oh = conv_out_size(s.h(), spec.kernel, spec.stride, spec.pad);
  const std::int64_t ow = conv_out_size(s.w(), spec.kernel, spec.stride, spec.pad);
  const Shape want{s.n(), spec.out_channels, oh, ow};
  if (grad_out.shape() != want) {
    fail("conv2d_backward: grad_out shape " + grad_out.shape().str() +
         " does not match forward output " + want.str());
  }

  ConvGrads<T> g;
  g.input = Tensor<T>(s);
  g.weights = Tensor<T>(spec.weights.shape());
  g.bias = Tensor<T>(spec.bias.shape());

  for (std::int64_t n = 0; n < s.n(); ++n) {
    for (std::int64_t co = 0; co < spec.out_channels; ++co) {
      for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t x2 = 0; x2 < ow; ++x2) {
          g.bias[co] += grad_out.at(n, co, y, x2);
        }
      }
      for (std::int64_t ci = 0; ci < spec.in_channels; ++ci) {
        for (std::int64_t ky = 0; ky < spec.kernel; ++ky) {
          for (std::int64_t kx = 0; kx < spec.kernel; ++kx) {
            const T w = spec.weights.at(co, ci, ky, kx);
            T gw = T(0);
            for (std::int64_t y = 0; y < oh; ++y) {
              const std::int64_t iy = y * spec.stride - spec.pad + ky;
              if (iy < 0 || iy >= s.h()) continue;
              for (std::int64_t x2 = 0; x2 < ow; ++x2) {
                const std::int64_t ix = x2 * spec.stride - spec.pad + kx;
                if (ix < 0 || ix >= s.w()) continue;
                const T go = grad_out.at(n, co, y, x2);
                gw += go * x.at(n, ci, iy, ix);
                g.input.at(n, ci, iy, ix) += w * go;
              }
            }
            g.weights.at(co, ci, ky, kx) += gw;
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
inline void check_convtrans_spec(const ConvSpec<T>& spec) {
  if (spec.kernel != 2 || spec.stride != 2 || spec.pad != 0) {
    fail("transposed conv requires k=2, s=2, p=0 (got k=" +
         std::to_string(spec.kernel) + ", s=" + std::to_string(spec.stride) +
         ", p=" + std::to_string(spec.pad) + ")");
  }
}

// out[n,co,2y+ky,2x+kx] = bias[co] + sum_ci w[ci,co,ky,kx] * in[n,ci,y,x];
// with k=s=2 every output position is written exactly once.
template <typename T>
Tensor<T> convtrans2d_forward(const Tensor<T>& x, const ConvSpec<T>& spec) {
  check_convtrans_spec(spec);
  if (x.shape().c() != spec.in_channels) {
    fail("convtrans2d_forward: input has " + std::to_string(x.shape().c()) +
         " channels, spec expects " + std::to_string(spec.in_channels));
  }
  const auto& s = x.shape();
  Tensor<T> out(Shape{s.n(), spec.out_channels, 2 * s.h(), 2 * s.w()});

  for (std::int64_t n = 0; n < s.n(); ++n) {
    for (std::int64_t co = 0; co < spec.out_channels; ++co) {
      for (std::int64_t y = 0; y < s.h(); ++y) {
        for (std::int64_t x2 = 0; x2 < s.w(); ++x2) {
          for (std::int64_t ky = 0; ky < 2; ++ky) {
            for (std::int64_t kx = 0; kx < 2; ++kx) {
              T acc = spec.bias[co];
              for (std::int64_t ci = 0; ci < spec.in_channels; ++ci) {
                acc += spec.weights.at(ci, co, ky, kx) * x.at(n, ci, y, x2);
              }
              out.at(n, co, 2 * y + ky, 2 * x2 + kx) = acc;
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> convtrans2d_backward(const Tensor<T>& x, const ConvSpec<T>& spec,
                                  const Tensor<T>& grad_out) {
  check_convtrans_spec(spec);
  const auto& s = x.shape();
  const Shape want{s.n(), spec.out_channels, 2 * s.h(), 2 * s.w()};
  if (grad_out.shape() != want) {
    fail("convtrans2d_backward: grad_out shape " + grad_out.shape().str() +
         " does not match forward output " + want.str());
  }

  ConvGrads<T> g;
  g.input = Tensor<T>(s);
  g.weights = Tensor<T>(spec.weights.shape());
  g.bias = Tensor<T>(spec.bias.shape());

  for (std::int64_t n = 0; n < s.n(); ++n) {
    for (std::int64_t co = 0; co < spec.out_channels; ++co) {
      for (std::int64_t y = 0; y < s.h(); ++y) {
        for (std::int64_t x2 = 0; x2 < s.w(); ++x2) {
          for (std::int64_t ky = 0; ky < 2; ++ky) {
            for (std::int64_t kx = 0; kx < 2; ++kx) {
              const T go = grad_out.at(n, co, 2 * y + ky, 2 * x2 + kx);
              g.bias[co] += go;
              for (std::int64_t ci = 0; ci < spec.in_channels; ++ci) {
                g.weights.at(ci, co, ky, kx) += go * x.at(n, ci, y, x2);
                g.input.at(n, ci, y, x2) += go * spec.weights.at(ci, co, ky, kx);
              }
            }
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
struct PoolResult {
  Tensor<T> output;
  // Winning flat index into the input tensor per output element; ties go to
  // the smallest flat (row-major) index.
  std::vector<std::int64_t> argmax;
};

template <typename T>
PoolResult<T> maxpool2_forward(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.h() % 2 != 0 || s.w() % 2 != 0) {
    fail("maxpool2_forward: spatial extents must be even, got " + s.str());
  }
  PoolResult<T> r;
  r.output = Tensor<T>(Shape{s.n(), s.c(), s.h() / 2, s.w() / 2});
  r.argmax.resize(static_cast<std::size_t>(r.output.numel()));

  std::int64_t oi = 0;
  for (std::int64_t n = 0; n < s.n(); ++n) {
    for (std::int64_t c = 0; c < s.c(); ++c) {
      for (std::int64_t y = 0; y < s.h(); y += 2) {
        for (std::int64_t x2 = 0; x2 < s.w(); x2 += 2) {
          std::int64_t best = ((n * s.c() + c) * s.h() + y) * s.w() + x2;
          T bv = x[best];
          for (std::int64_t dy = 0; dy < 2; ++dy) {
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const std::int64_t idx =
                  ((n * s.c() + c) * s.h() + y + dy) * s.w() + x2 + dx;
              if (x[idx] > bv) {
                bv = x[idx];
                best = idx;
              }
            }
          }
          r.output[oi] = bv;
          r.argmax[static_cast<std::size_t>(oi)] = best;
          ++oi;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& grad_out,
                            const std::vector<std::int64_t>& argmax,
                            const Shape& in_shape) {
  if (grad_out.numel() != static_cast<std::int64_t>(argmax.size())) {
    fail("maxpool2_backward: argmax map does not match grad_out");
  }
  Tensor<T> g(in_shape);
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
    g[argmax[static_cast<std::size_t>(i)]] += grad_out[i];
  }
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    out[i] = x[i] > T(0) ? x[i] : T(0);
  }
  return out;
}

// Subgradient 0 at x = 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  Tensor<T> g(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    g[i] = x[i] > T(0) ? grad_out[i] : T(0);
  }
  return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    out[i] = T(1) / (T(1) + std::exp(-x[i]));
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& out, const Tensor<T>& grad_out) {
  Tensor<T> g(out.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    g[i] = out[i] * (T(1) - out[i]) * grad_out[i];
  }
  return g;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w()) {
    fail("concat_channels: incompatible shapes " + sa.str() + " and " +
         sb.str());
  }
  Tensor<T> out(Shape{sa.n(), sa.c() + sb.c(), sa.h(), sa.w()});
  const std::int64_t plane = sa.h() * sa.w();
  for (std::int64_t n = 0; n < sa.n(); ++n) {
    std::copy(a.data() + n * sa.c() * plane, a.data() + (n + 1) * sa.c() * plane,
              out.data() + n * (sa.c() + sb.c()) * plane);
    std::copy(b.data() + n * sb.c() * plane, b.data() + (n + 1) * sb.c() * plane,
              out.data() + (n * (sa.c() + sb.c()) + sa.c()) * plane);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g,
                                               std::int64_t ca) {
  const auto& s = g.shape();
  if (ca < 1 || ca >= s.c()) fail("split_channels: bad split point");
  Tensor<T> a(Shape{s.n(), ca, s.h(), s.w()});
  Tensor<T> b(Shape{s.n(), s.c() - ca, s.h(), s.w()});
  const std::int64_t plane = s.h() * s.w();
  for (std::int64_t n = 0; n < s.n(); ++n) {
    std::copy(g.data() + n * s.c() * plane, g.data() + (n * s.c() + ca) * plane,
              a.data() + n * ca * plane);
    std::copy(g.data() + (n * s.c() + ca) * plane,
              g.data() + (n + 1) * s.c() * plane,
              b.data() + n * (s.c() - ca) * plane);
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
struct BceResult {
  T loss;
  Tensor<T> grad;  // d loss / d prob, on the clamped probabilities
};

inline constexpr double kBceClamp = 1e-7;

// loss = -mean(t*ln p + (1-t)*ln(1-p)), probabilities clamped to
// [kBceClamp, 1 - kBceClamp] before the logs.
template <typename T>
BceResult<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& target) {
  if (prob.shape() != target.shape()) {
    fail("bce_loss: prob shape " + prob.shape().str() +
         " does not match target " + target.shape().str());
  }
  const T eps = static_cast<T>(kBceClamp);
  const T count = static_cast<T>(prob.numel());
  BceResult<T> r;
  r.grad = Tensor<T>(prob.shape());
  T acc = T(0);
  for (std::int64_t i = 0; i < prob.numel(); ++i) {
    const T t = target[i];
    if (t != T(0) && t != T(1)) {
      fail("bce_loss: target element " + std::to_string(i) +
           " is not binary (" + std::to_string(static_cast<double>(t)) + ")");
    }
    const T p = std::clamp(prob[i], eps, T(1) - eps);
    acc -= t * std::log(p) + (T(1) - t) * std::log(T(1) - p);
    r.grad[i] = (p - t) / (p * (T(1) - p)) / count;
  }
  r.loss = acc / count;
  return r;
}

}  // namespace onet
