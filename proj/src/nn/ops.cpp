#include "cfexplain/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "cfexplain/error.hpp"

namespace cfexplain::nn {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

int out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Borders are reflected (without repeating the edge pixel); zero padding
// left visible frame artifacts in generated images. Needs pad < extent;
// a single row or column repeats.
int reflect(int i, int n) {
  if (n == 1) return 0;
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

// col is [C*k*k, Ho*Wo].
void im2col(const float* x, int channels, int h, int w, int k, int stride, int pad,
            int ho, int wo, float* col) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    const float* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = reflect(oy * stride - pad + ki, h);
          float* dst = row + static_cast<std::size_t>(oy) * wo;
          const float* src = xc + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            // Contiguous run [lo, hi) of interior output columns.
            const int lo = std::min(wo, std::max(0, pad - kj));
            const int hi = std::max(lo, std::min(wo, w + pad - kj));
            for (int ox = 0; ox < lo; ++ox) dst[ox] = src[reflect(ox - pad + kj, w)];
            std::copy(src + lo - pad + kj, src + hi - pad + kj, dst + lo);
            for (int ox = hi; ox < wo; ++ox) dst[ox] = src[reflect(ox - pad + kj, w)];
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) dst[ox] = src[reflect(ox * stride - pad + kj, w)];
        }
      }
    }
  }
}

void col2im(const float* col, int channels, int h, int w, int k, int stride, int pad,
            int ho, int wo, float* dx) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    float* dxc = dx + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row =
            col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = reflect(oy * stride - pad + ki, h);
          const float* src = row + static_cast<std::size_t>(oy) * wo;
          float* dst = dxc + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            const int lo = std::min(wo, std::max(0, pad - kj));
            const int hi = std::max(lo, std::min(wo, w + pad - kj));
            for (int ox = 0; ox < lo; ++ox) dst[reflect(ox - pad + kj, w)] += src[ox];
            float* d = dst - pad + kj;
            for (int ox = lo; ox < hi; ++ox) d[ox] += src[ox];
            for (int ox = hi; ox < wo; ++ox) dst[reflect(ox - pad + kj, w)] += src[ox];
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) dst[reflect(ox * stride - pad + kj, w)] += src[ox];
        }
      }
    }
  }
}

void require(bool ok, const char* msg) {
  if (!ok) throw ArgumentError(msg);
}

double clamp_prob(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();
  require(ws.c == xs.c, "conv2d: input channel mismatch");
  require(ws.h == ws.w, "conv2d: kernel must be square");
  const int k = ws.h;
  const int ho = out_extent(xs.h, k, stride, pad);
  const int wo = out_extent(xs.w, k, stride, pad);
  require(ho > 0 && wo > 0, "conv2d: input too small for kernel");
  require((pad < xs.h || xs.h == 1) && (pad < xs.w || xs.w == 1), "conv2d: padding must be smaller than the input");
  const int kdim = xs.c * k * k;
  const int plane = ho * wo;

  Tensor out(Shape{xs.n, ws.n, ho, wo});
  FloatBuffer col(static_cast<std::size_t>(kdim) * plane);
  ConstMatMap wmat(weight->value.data(), ws.n, kdim);
  for (int n = 0; n < xs.n; ++n) {
    im2col(x->value.sample(n), xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
    MatMap y(out.sample(n), ws.n, plane);
    y.noalias() = wmat * ConstMatMap(col.data(), kdim, plane);
    if (bias) {
      for (int o = 0; o < ws.n; ++o) y.row(o).array() += bias->value[o];
    }
  }

  Var result = make_result(std::move(out), {x, weight, bias});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  Node* wn = weight.get();
  Node* bn = bias.get();
  result->backward = [=]() {
    FloatBuffer col(static_cast<std::size_t>(kdim) * plane);
    FloatBuffer dcol(static_cast<std::size_t>(kdim) * plane);
    ConstMatMap wmat(wn->value.data(), ws.n, kdim);
    for (int n = 0; n < xs.n; ++n) {
      ConstMatMap dy(self->grad.sample(n), ws.n, plane);
      if (wn->requires_grad) {
        im2col(xn->value.sample(n), xs.c, xs.h, xs.w, k, stride, pad, ho, wo,
               col.data());
        MatMap dw(wn->grad_buffer().data(), ws.n, kdim);
        dw.noalias() += dy * ConstMatMap(col.data(), kdim, plane).transpose();
      }
      if (bn && bn->requires_grad) {
        float* db = bn->grad_buffer().data();
        for (int o = 0; o < ws.n; ++o) db[o] += dy.row(o).sum();
      }
      if (xn->requires_grad) {
        MatMap dc(dcol.data(), kdim, plane);
        dc.noalias() = wmat.transpose() * dy;
        col2im(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo,
               xn->grad_buffer().sample(n));
      }
    }
  };
  return result;
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();
  const int features = static_cast<int>(xs.sample_size());
  require(ws.c == features, "linear: feature count mismatch");
  Tensor out(Shape{xs.n, ws.n, 1, 1});
  ConstMatMap xm(x->value.data(), xs.n, features);
  ConstMatMap wm(weight->value.data(), ws.n, features);
  MatMap ym(out.data(), xs.n, ws.n);
  ym.noalias() = xm * wm.transpose();
  if (bias) {
    for (int o = 0; o < ws.n; ++o) ym.col(o).array() += bias->value[o];
  }
  Var result = make_result(std::move(out), {x, weight, bias});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  Node* wn = weight.get();
  Node* bn = bias.get();
  result->backward = [=]() {
    ConstMatMap dy(self->grad.data(), xs.n, ws.n);
    if (wn->requires_grad) {
      MatMap dw(wn->grad_buffer().data(), ws.n, features);
      dw.noalias() += dy.transpose() * ConstMatMap(xn->value.data(), xs.n, features);
    }
    if (bn && bn->requires_grad) {
      float* db = bn->grad_buffer().data();
      for (int o = 0; o < ws.n; ++o) db[o] += dy.col(o).sum();
    }
    if (xn->requires_grad) {
      MatMap dx(xn->grad_buffer().data(), xs.n, features);
      dx.noalias() += dy * ConstMatMap(wn->value.data(), ws.n, features);
    }
  };
  return result;
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               NormMode mode) {
  const Shape s = x->value.shape();
  const int channels = s.c;
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  require(gamma->value.size() == static_cast<std::size_t>(channels),
          "batch_norm: gamma size mismatch");

  std::vector<float> mean(channels), inv_std(channels);
  if (mode == NormMode::kInference) {
    for (int c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0f / std::sqrt(state.running_var[c] + state.eps);
    }
  } else {
    require(count > 1, "batch_norm: batch statistics need more than one value");
    for (int c = 0; c < channels; ++c) {
      double sum = 0.0, sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const float* p = x->value.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sq += static_cast<double>(p[i]) * p[i];
        }
      }
      const double m = sum / count;
      const double var = std::max(0.0, sq / count - m * m);
      mean[c] = static_cast<float>(m);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + state.eps));
      if (mode == NormMode::kTrain) {
        const double unbiased = var * count / (count - 1.0);
        state.running_mean[c] = static_cast<float>(
            (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m);
        state.running_var[c] = static_cast<float>(
            (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased);
      }
    }
  }

  Tensor xhat(s);
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < channels; ++c) {
      const float* p = x->value.sample(n) + c * plane;
      float* h = xhat.sample(n) + c * plane;
      float* y = out.sample(n) + c * plane;
      const float g = gamma->value[c];
      const float b = beta->value[c];
      for (std::size_t i = 0; i < plane; ++i) {
        h[i] = (p[i] - mean[c]) * inv_std[c];
        y[i] = g * h[i] + b;
      }
    }
  }

  Var result = make_result(std::move(out), {x, gamma, beta});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  Node* gn = gamma.get();
  Node* bn = beta.get();
  const bool batch_stats = mode != NormMode::kInference;
  result->backward = [=, xhat = std::move(xhat)]() {
    for (int c = 0; c < channels; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const float* dy = self->grad.sample(n) + c * plane;
        const float* h = xhat.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += static_cast<double>(dy[i]) * h[i];
        }
      }
      if (gn->requires_grad) gn->grad_buffer()[c] += static_cast<float>(sum_dy_xhat);
      if (bn->requires_grad) bn->grad_buffer()[c] += static_cast<float>(sum_dy);
      if (!xn->requires_grad) continue;
      const float g = gn->value[c];
      const float scale_c = g * inv_std[c];
      const float mean_dy = static_cast<float>(sum_dy / count);
      const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
      for (int n = 0; n < s.n; ++n) {
        const float* dy = self->grad.sample(n) + c * plane;
        const float* h = xhat.sample(n) + c * plane;
        float* dx = xn->grad_buffer().sample(n) + c * plane;
        if (batch_stats) {
          for (std::size_t i = 0; i < plane; ++i) {
            dx[i] += scale_c * (dy[i] - mean_dy - h[i] * mean_dy_xhat);
          }
        } else {
          for (std::size_t i = 0; i < plane; ++i) dx[i] += scale_c * dy[i];
        }
      }
    }
  };
  return result;
}

namespace {

template <typename Fwd, typename Deriv>
Var elementwise(const Var& x, Fwd fwd, Deriv deriv) {
  Tensor out(x->value.shape());
  const auto in = x->value.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = fwd(in[i]);
  Var result = make_result(std::move(out), {x});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  result->backward = [=]() {
    auto dx = xn->grad_buffer().values();
    const auto dy = self->grad.values();
    const auto xv = xn->value.values();
    const auto yv = self->value.values();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * deriv(xv[i], yv[i]);
  };
  return result;
}

}  // namespace

Var relu(const Var& x) {
  return elementwise(
      x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Var leaky_relu(const Var& x, float slope) {
  return elementwise(
      x, [slope](float v) { return v > 0.0f ? v : slope * v; },
      [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

Var sigmoid(const Var& x) {
  return elementwise(
      x,
      [](float v) {
        // Split by sign so exp never overflows.
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Var max_pool2(const Var& x) {
  const Shape s = x->value.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0, "max_pool2: odd spatial size");
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  std::vector<std::uint32_t> arg(os.numel());
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const float* p = x->value.sample(n) + c * s.plane();
      const std::size_t base = static_cast<std::size_t>(n) * s.sample_size() + c * s.plane();
      for (int i = 0; i < os.h; ++i) {
        for (int j = 0; j < os.w; ++j, ++o) {
          std::size_t best = static_cast<std::size_t>(2 * i) * s.w + 2 * j;
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              const std::size_t idx = static_cast<std::size_t>(2 * i + di) * s.w + 2 * j + dj;
              if (p[idx] > p[best]) best = idx;
            }
          }
          out[o] = p[best];
          arg[o] = static_cast<std::uint32_t>(base + best);
        }
      }
    }
  }
  Var result = make_result(std::move(out), {x});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  result->backward = [=, arg = std::move(arg)]() {
    Tensor& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += self->grad[i];
  };
  return result;
}

Var upsample_nearest2(const Var& x) {
  const Shape s = x->value.shape();
  const Shape os{s.n, s.c, s.h * 2, s.w * 2};
  Tensor out(os);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int i = 0; i < os.h; ++i) {
        for (int j = 0; j < os.w; ++j) out.at(n, c, i, j) = x->value.at(n, c, i / 2, j / 2);
      }
    }
  }
  Var result = make_result(std::move(out), {x});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  result->backward = [=]() {
    Tensor& dx = xn->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        for (int i = 0; i < os.h; ++i) {
          for (int j = 0; j < os.w; ++j) dx.at(n, c, i / 2, j / 2) += self->grad.at(n, c, i, j);
        }
      }
    }
  };
  return result;
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape sa = a->value.shape();
  const Shape sb = b->value.shape();
  require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, "concat_channels: shape mismatch");
  Tensor out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a->value.sample(n), sa.sample_size(), out.sample(n));
    std::copy_n(b->value.sample(n), sb.sample_size(), out.sample(n) + sa.sample_size());
  }
  Var result = make_result(std::move(out), {a, b});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* an = a.get();
  Node* bn = b.get();
  result->backward = [=]() {
    for (int n = 0; n < sa.n; ++n) {
      const float* g = self->grad.sample(n);
      if (an->requires_grad) {
        float* d = an->grad_buffer().sample(n);
        for (std::size_t i = 0; i < sa.sample_size(); ++i) d[i] += g[i];
      }
      if (bn->requires_grad) {
        float* d = bn->grad_buffer().sample(n);
        for (std::size_t i = 0; i < sb.sample_size(); ++i) d[i] += g[sa.sample_size() + i];
      }
    }
  };
  return result;
}

Var concat_batch(const Var& a, const Var& b) {
  const Shape sa = a->value.shape();
  const Shape sb = b->value.shape();
  require(sa.c == sb.c && sa.h == sb.h && sa.w == sb.w, "concat_batch: shape mismatch");
  Tensor out(Shape{sa.n + sb.n, sa.c, sa.h, sa.w});
  std::copy_n(a->value.data(), a->value.size(), out.data());
  std::copy_n(b->value.data(), b->value.size(), out.data() + a->value.size());
  Var result = make_result(std::move(out), {a, b});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* an = a.get();
  Node* bn = b.get();
  result->backward = [=]() {
    const float* g = self->grad.data();
    if (an->requires_grad) {
      auto d = an->grad_buffer().values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (bn->requires_grad) {
      auto d = bn->grad_buffer().values();
      const std::size_t off = sa.numel();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[off + i];
    }
  };
  return result;
}

Var slice_batch(const Var& x, int begin, int count) {
  const Shape s = x->value.shape();
  require(begin >= 0 && count > 0 && begin + count <= s.n, "slice_batch: out of range");
  Tensor out(Shape{count, s.c, s.h, s.w});
  std::copy_n(x->value.sample(begin), out.size(), out.data());
  Var result = make_result(std::move(out), {x});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  result->backward = [=]() {
    float* d = xn->grad_buffer().sample(begin);
    for (std::size_t i = 0; i < self->grad.size(); ++i) d[i] += self->grad[i];
  };
  return result;
}

Var softmax_channels(const Var& x) {
  const Shape s = x->value.shape();
  const std::size_t plane = s.plane();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    const float* in = x->value.sample(n);
    float* o = out.sample(n);
    for (std::size_t p = 0; p < plane; ++p) {
      float mx = in[p];
      for (int c = 1; c < s.c; ++c) mx = std::max(mx, in[c * plane + p]);
      double sum = 0.0;
      for (int c = 0; c < s.c; ++c) {
        o[c * plane + p] = std::exp(in[c * plane + p] - mx);
        sum += o[c * plane + p];
      }
      for (int c = 0; c < s.c; ++c) o[c * plane + p] = static_cast<float>(o[c * plane + p] / sum);
    }
  }
  Var result = make_result(std::move(out), {x});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  result->backward = [=]() {
    for (int n = 0; n < s.n; ++n) {
      const float* y = self->value.sample(n);
      const float* dy = self->grad.sample(n);
      float* dx = xn->grad_buffer().sample(n);
      for (std::size_t p = 0; p < plane; ++p) {
        double dot = 0.0;
        for (int c = 0; c < s.c; ++c) dot += static_cast<double>(dy[c * plane + p]) * y[c * plane + p];
        for (int c = 0; c < s.c; ++c) {
          dx[c * plane + p] += static_cast<float>(y[c * plane + p] * (dy[c * plane + p] - dot));
        }
      }
    }
  };
  return result;
}

Var select_channel(const Var& x, int channel) {
  const Shape s = x->value.shape();
  require(channel >= 0 && channel < s.c, "select_channel: channel out of range");
  Tensor out(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(x->value.sample(n) + channel * s.plane(), s.plane(), out.sample(n));
  }
  Var result = make_result(std::move(out), {x});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  result->backward = [=]() {
    for (int n = 0; n < s.n; ++n) {
      float* d = xn->grad_buffer().sample(n) + channel * s.plane();
      const float* g = self->grad.sample(n);
      for (std::size_t i = 0; i < s.plane(); ++i) d[i] += g[i];
    }
  };
  return result;
}

Var pair_concat(const Var& a, const Var& b, const std::vector<std::uint8_t>& swap) {
  const Shape s = a->value.shape();
  require(s == b->value.shape(), "pair_concat: shape mismatch");
  require(swap.size() == static_cast<std::size_t>(s.n) * s.plane(),
          "pair_concat: swap mask size mismatch");
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, 2 * s.c, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const float* pa = a->value.sample(n);
    const float* pb = b->value.sample(n);
    float* o = out.sample(n);
    for (std::size_t p = 0; p < plane; ++p) {
      const bool sw = swap[n * plane + p] != 0;
      const float* first = sw ? pb : pa;
      const float* second = sw ? pa : pb;
      for (int c = 0; c < s.c; ++c) {
        o[c * plane + p] = first[c * plane + p];
        o[(s.c + c) * plane + p] = second[c * plane + p];
      }
    }
  }
  Var result = make_result(std::move(out), {a, b});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* an = a.get();
  Node* bn = b.get();
  result->backward = [=]() {
    for (int n = 0; n < s.n; ++n) {
      const float* g = self->grad.sample(n);
      float* da = an->requires_grad ? an->grad_buffer().sample(n) : nullptr;
      float* db = bn->requires_grad ? bn->grad_buffer().sample(n) : nullptr;
      for (std::size_t p = 0; p < plane; ++p) {
        const bool sw = swap[n * plane + p] != 0;
        float* first = sw ? db : da;
        float* second = sw ? da : db;
        for (int c = 0; c < s.c; ++c) {
          if (first) first[c * plane + p] += g[c * plane + p];
          if (second) second[c * plane + p] += g[(s.c + c) * plane + p];
        }
      }
    }
  };
  return result;
}

Var unswap_pairs(const Var& x, const std::vector<std::uint8_t>& swap) {
  const Shape s = x->value.shape();
  require(s.c == 2, "unswap_pairs: expects two channels");
  require(swap.size() == static_cast<std::size_t>(s.n) * s.plane(),
          "unswap_pairs: swap mask size mismatch");
  const std::size_t plane = s.plane();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    const float* in = x->value.sample(n);
    float* o = out.sample(n);
    for (std::size_t p = 0; p < plane; ++p) {
      const bool sw = swap[n * plane + p] != 0;
      o[p] = sw ? in[plane + p] : in[p];
      o[plane + p] = sw ? in[p] : in[plane + p];
    }
  }
  Var result = make_result(std::move(out), {x});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  result->backward = [=]() {
    for (int n = 0; n < s.n; ++n) {
      const float* g = self->grad.sample(n);
      float* d = xn->grad_buffer().sample(n);
      for (std::size_t p = 0; p < plane; ++p) {
        const bool sw = swap[n * plane + p] != 0;
        d[p] += sw ? g[plane + p] : g[p];
        d[plane + p] += sw ? g[p] : g[plane + p];
      }
    }
  };
  return result;
}

Var add(const Var& a, const Var& b) {
  require(a->value.size() == b->value.size(), "add: size mismatch");
  Tensor out = a->value;
  out.add_(b->value);
  Var result = make_result(std::move(out), {a, b});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* an = a.get();
  Node* bn = b.get();
  result->backward = [=]() {
    if (an->requires_grad) an->grad_buffer().add_(self->grad);
    if (bn->requires_grad) bn->grad_buffer().add_(self->grad);
  };
  return result;
}

Var scale(const Var& x, float factor) {
  Tensor out = x->value;
  for (float& v : out.values()) v *= factor;
  Var result = make_result(std::move(out), {x});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* xn = x.get();
  result->backward = [=]() {
    auto d = xn->grad_buffer().values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * self->grad[i];
  };
  return result;
}

Image to_image(const Tensor& t, int n) {
  const Shape s = t.shape();
  Image img(s.h, s.w);
  const float* p = t.sample(n);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = p[i];
  return img;
}

Tensor to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ArgumentError("to_tensor: empty image list");
  const int h = images.front().height;
  const int w = images.front().width;
  Tensor t(Shape{static_cast<int>(images.size()), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].height != h || images[n].width != w) {
      throw ArgumentError("to_tensor: images differ in shape");
    }
    float* p = t.sample(static_cast<int>(n));
    for (std::size_t i = 0; i < images[n].size(); ++i) p[i] = static_cast<float>(images[n].pixels[i]);
  }
  return t;
}

Var mean_pair_loss(const Var& a, const Var& b, const PairLossFn& fn) {
  const Shape s = a->value.shape();
  require(s == b->value.shape() && s.c == 1, "mean_pair_loss: expects matching [N,1,H,W]");
  const bool need_grad = grad_enabled() && (a->requires_grad || b->requires_grad);
  double total = 0.0;
  Tensor ga, gb;
  if (need_grad) {
    ga = Tensor(s);
    gb = Tensor(s);
  }
  for (int n = 0; n < s.n; ++n) {
    const PairLossResult r = fn(to_image(a->value, n), to_image(b->value, n));
    total += r.value;
    if (need_grad) {
      float* pa = ga.sample(n);
      float* pb = gb.sample(n);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        pa[i] = static_cast<float>(r.grad_a[i] / s.n);
        pb[i] = static_cast<float>(r.grad_b[i] / s.n);
      }
    }
  }
  Var result = make_result(Tensor(Shape{1, 1, 1, 1}, static_cast<float>(total / s.n)), {a, b});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* an = a.get();
  Node* bn = b.get();
  result->backward = [=, ga = std::move(ga), gb = std::move(gb)]() {
    const float g = self->grad[0];
    if (an->requires_grad) {
      auto d = an->grad_buffer().values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * ga[i];
    }
    if (bn->requires_grad) {
      auto d = bn->grad_buffer().values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * gb[i];
    }
  };
  return result;
}

Var weighted_cross_entropy(const Var& prob, const Tensor& target,
                           const std::vector<double>& sample_weight, double eps) {
  const Shape s = prob->value.shape();
  require(target.size() == prob->value.size(), "cross_entropy: target size mismatch");
  require(sample_weight.empty() || sample_weight.size() == static_cast<std::size_t>(s.n),
          "cross_entropy: weight size mismatch");
  const std::size_t per = s.sample_size();
  const double count = static_cast<double>(prob->value.size());
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    const double wgt = sample_weight.empty() ? 1.0 : sample_weight[n];
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t k = n * per + i;
      const double p = clamp_prob(prob->value[k], eps);
      const double y = target[k];
      total += wgt * -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
  }
  Var result = make_result(Tensor(Shape{1, 1, 1, 1}, static_cast<float>(total / count)), {prob});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* pn = prob.get();
  result->backward = [=, target = target]() {
    const double g = self->grad[0];
    auto d = pn->grad_buffer().values();
    for (int n = 0; n < s.n; ++n) {
      const double wgt = sample_weight.empty() ? 1.0 : sample_weight[n];
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t k = n * per + i;
        const double raw = pn->value[k];
        if (raw < eps || raw > 1.0 - eps) continue;  // clamped: flat
        const double y = target[k];
        d[k] += static_cast<float>(g * wgt * (-(y / raw) + (1.0 - y) / (1.0 - raw)) / count);
      }
    }
  };
  return result;
}

Var mean_cross_entropy(const Var& prob, const Tensor& target, double eps) {
  return weighted_cross_entropy(prob, target, {}, eps);
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels,
                          const std::vector<double>& sample_weight) {
  const Shape s = logits->value.shape();
  const std::size_t plane = s.plane();
  require(labels.size() == static_cast<std::size_t>(s.n) * plane, "softmax_cross_entropy: label count mismatch");
  require(sample_weight.empty() || sample_weight.size() == static_cast<std::size_t>(s.n),
          "softmax_cross_entropy: weight size mismatch");
  const double count = static_cast<double>(labels.size());
  // Softmax kept for the backward pass.
  auto soft = std::make_shared<std::vector<double>>(logits->value.size());
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    const float* z = logits->value.sample(n);
    double* q = soft->data() + n * s.sample_size();
    const double wgt = sample_weight.empty() ? 1.0 : sample_weight[n];
    for (std::size_t p = 0; p < plane; ++p) {
      const int y = labels[n * plane + p];
      require(y >= 0 && y < s.c, "softmax_cross_entropy: label out of range");
      double mx = z[p];
      for (int c = 1; c < s.c; ++c) mx = std::max(mx, static_cast<double>(z[c * plane + p]));
      double sum = 0.0;
      for (int c = 0; c < s.c; ++c) sum += std::exp(z[c * plane + p] - mx);
      const double lse = mx + std::log(sum);
      for (int c = 0; c < s.c; ++c) q[c * plane + p] = std::exp(z[c * plane + p] - lse);
      total += wgt * (lse - z[y * plane + p]);
    }
  }
  Var result = make_result(Tensor(Shape{1, 1, 1, 1}, static_cast<float>(total / count)), {logits});
  if (!result->requires_grad) return result;
  Node* self = result.get();
  Node* ln = logits.get();
  result->backward = [=]() {
    const double g = self->grad[0] / count;
    for (int n = 0; n < s.n; ++n) {
      float* dz = ln->grad_buffer().sample(n);
      const double* q = soft->data() + n * s.sample_size();
      const double wgt = sample_weight.empty() ? 1.0 : sample_weight[n];
      for (std::size_t p = 0; p < plane; ++p) {
        const int y = labels[n * plane + p];
        for (int c = 0; c < s.c; ++c) {
          const double d = q[c * plane + p] - (c == y ? 1.0 : 0.0);
          dz[c * plane + p] += static_cast<float>(g * wgt * d);
        }
      }
    }
  };
  return result;
}

}  // namespace cfexplain::nn
