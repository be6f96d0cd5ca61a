#include "cfexplain/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cfexplain/error.hpp"

namespace cfexplain {
namespace {

void require_same_shape(const Image& x, const Image& y, const char* what) {
  if (!x.same_shape(y) || x.size() == 0) {
    throw ArgumentError(std::string(what) + ": shape mismatch (" + std::to_string(x.height) + "x" +
                        std::to_string(x.width) + " vs " + std::to_string(y.height) + "x" +
                        std::to_string(y.width) + ")");
  }
}

// Summed-area table with a zero first row/column: (h+1)×(w+1).
std::vector<double> integral(const std::vector<double>& v, int h, int w) {
  std::vector<double> s(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
  for (int r = 0; r < h; ++r) {
    double row = 0.0;
    for (int c = 0; c < w; ++c) {
      row += v[static_cast<std::size_t>(r) * w + c];
      s[static_cast<std::size_t>(r + 1) * (w + 1) + c + 1] = s[static_cast<std::size_t>(r) * (w + 1) + c + 1] + row;
    }
  }
  return s;
}

double box(const std::vector<double>& s, int w, int r0, int c0, int r1, int c1) {
  // Sum over rows [r0, r1) and columns [c0, c1).
  const std::size_t W = static_cast<std::size_t>(w) + 1;
  return s[r1 * W + c1] - s[r0 * W + c1] - s[r1 * W + c0] + s[r0 * W + c0];
}

LossGrad ssim_impl(const Image& x, const Image& y, const SsimParams& p, bool want_grad) {
  validate(p);
  require_same_shape(x, y, "ssim");
  const int h = x.height, w = x.width, k = p.window;
  if (h < k || w < k) {
    throw ArgumentError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                        " smaller than window " + std::to_string(k));
  }
  const int ph = h - k + 1, pw = w - k + 1;  // window positions
  const double n = static_cast<double>(k) * k;
  const double nw = static_cast<double>(ph) * pw;

  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x.pixels[i] * x.pixels[i];
    yy[i] = y.pixels[i] * y.pixels[i];
    xy[i] = x.pixels[i] * y.pixels[i];
  }
  const auto sx = integral(x.pixels, h, w), sy = integral(y.pixels, h, w);
  const auto sxx = integral(xx, h, w), syy = integral(yy, h, w), sxy = integral(xy, h, w);

  LossGrad out;
  // Per-window coefficients of the pixel gradient (see below).
  std::vector<double> ax, ay, bx, by, cxy;
  if (want_grad) {
    const std::size_t m = static_cast<std::size_t>(ph) * pw;
    ax.resize(m), ay.resize(m), bx.resize(m), by.resize(m), cxy.resize(m);
  }
  double total = 0.0;
  for (int i = 0; i < ph; ++i) {
    for (int j = 0; j < pw; ++j) {
      const double mx = box(sx, w, i, j, i + k, j + k) / n;
      const double my = box(sy, w, i, j, i + k, j + k) / n;
      const double vx = box(sxx, w, i, j, i + k, j + k) / n - mx * mx;
      const double vy = box(syy, w, i, j, i + k, j + k) / n - my * my;
      const double cov = box(sxy, w, i, j, i + k, j + k) / n - mx * my;
      const double a1 = 2.0 * mx * my + p.c1;
      const double a2 = 2.0 * cov + p.c2;
      const double b1 = mx * mx + my * my + p.c1;
      const double b2 = vx + vy + p.c2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;
      if (!want_grad) continue;
      const double d_mx = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
      const double d_my = 2.0 * mx * a2 / (b1 * b2) - s * 2.0 * my / b1;
      const double d_v = -s / b2;  // same for vx and vy
      const double d_cov = 2.0 * a1 / (b1 * b2);
      // d s / d x_q = (1/n)[d_mx + 2 d_v (x_q − mx) + d_cov (y_q − my)]
      const std::size_t idx = static_cast<std::size_t>(i) * pw + j;
      ax[idx] = d_mx - 2.0 * d_v * mx - d_cov * my;
      ay[idx] = d_my - 2.0 * d_v * my - d_cov * mx;
      bx[idx] = 2.0 * d_v;
      by[idx] = 2.0 * d_v;
      cxy[idx] = d_cov;
    }
  }
  out.value = total / nw;
  if (!want_grad) return out;

  // Sum each coefficient map over the windows covering a pixel.
  const auto iax = integral(ax, ph, pw), iay = integral(ay, ph, pw);
  const auto ibx = integral(bx, ph, pw), iby = integral(by, ph, pw);
  const auto ic = integral(cxy, ph, pw);
  out.grad_x.assign(x.size(), 0.0);
  out.grad_y.assign(x.size(), 0.0);
  const double norm = 1.0 / (n * nw);
  for (int r = 0; r < h; ++r) {
    const int r0 = std::max(0, r - k + 1), r1 = std::min(ph, r + 1);
    for (int c = 0; c < w; ++c) {
      const int c0 = std::max(0, c - k + 1), c1 = std::min(pw, c + 1);
      const std::size_t q = static_cast<std::size_t>(r) * w + c;
      const double sum_c = box(ic, pw, r0, c0, r1, c1);
      out.grad_x[q] = norm * (box(iax, pw, r0, c0, r1, c1) +
                              x.pixels[q] * box(ibx, pw, r0, c0, r1, c1) + y.pixels[q] * sum_c);
      out.grad_y[q] = norm * (box(iay, pw, r0, c0, r1, c1) +
                              y.pixels[q] * box(iby, pw, r0, c0, r1, c1) + x.pixels[q] * sum_c);
    }
  }
  return out;
}

LossGrad dssim_from_ssim(LossGrad s, const SsimParams& p) {
  // DSSIM = (1 − S)/2, or 1 − S/2 in the literal form; both have slope −1/2.
  s.value = p.literal_form ? 1.0 - s.value / 2.0 : (1.0 - s.value) / 2.0;
  for (auto& g : s.grad_x) g *= -0.5;
  for (auto& g : s.grad_y) g *= -0.5;
  return s;
}

// Gradient of avg_pool2 output back to its (h, w) input.
std::vector<double> unpool_grad(const std::vector<double>& g, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      const double v = g[static_cast<std::size_t>(r) * ow + c] / 4.0;
      for (int dr = 0; dr < 2; ++dr) {
        for (int dc = 0; dc < 2; ++dc) out[static_cast<std::size_t>(2 * r + dr) * w + 2 * c + dc] += v;
      }
    }
  }
  return out;
}

LossGrad ms_dssim_impl(const Image& x, const Image& y, const SsimParams& p, bool want_grad) {
  validate(p);
  require_same_shape(x, y, "ms_dssim");
  const int need = min_image_size(p);
  if (std::min(x.height, x.width) < need) {
    throw ArgumentError("ms_dssim: image " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                        " too small for " + std::to_string(p.n_scales) + " scales with window " +
                        std::to_string(p.window) + " (need >= " + std::to_string(need) + ")");
  }
  std::vector<Image> xs{x}, ys{y};
  for (int s = 1; s < p.n_scales; ++s) {
    xs.push_back(avg_pool2(xs.back()));
    ys.push_back(avg_pool2(ys.back()));
  }
  std::vector<LossGrad> per;
  LossGrad out;
  for (int s = 0; s < p.n_scales; ++s) {
    per.push_back(dssim_from_ssim(ssim_impl(xs[s], ys[s], p, want_grad), p));
    out.value += per.back().value / p.n_scales;
  }
  if (!want_grad) return out;
  // Accumulate from the coarsest scale upward.
  std::vector<double> gx = per.back().grad_x, gy = per.back().grad_y;
  for (int s = p.n_scales - 2; s >= 0; --s) {
    gx = unpool_grad(gx, xs[s].height, xs[s].width);
    gy = unpool_grad(gy, ys[s].height, ys[s].width);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += per[s].grad_x[i];
      gy[i] += per[s].grad_y[i];
    }
  }
  for (auto& g : gx) g /= p.n_scales;
  for (auto& g : gy) g /= p.n_scales;
  out.grad_x = std::move(gx);
  out.grad_y = std::move(gy);
  return out;
}

LossGrad cycle_impl(const Image& x, const Image& x_rec, const SsimParams& p, double l1_weight,
                    bool want_grad) {
  require_same_shape(x, x_rec, "cycle_loss");
  if (!(l1_weight >= 0.0 && l1_weight <= 1.0)) throw ArgumentError("cycle_loss: l1 weight must be in [0,1]");
  LossGrad ms = ms_dssim_impl(x, x_rec, p, want_grad);
  const double count = static_cast<double>(x.size());
  double l1 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) l1 += std::abs(x.pixels[i] - x_rec.pixels[i]);
  l1 /= count;
  LossGrad out;
  out.value = l1_weight * l1 + (1.0 - l1_weight) * ms.value;
  if (!want_grad) return out;
  out.grad_x.resize(x.size());
  out.grad_y.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.pixels[i] - x_rec.pixels[i];
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    out.grad_x[i] = l1_weight * sign / count + (1.0 - l1_weight) * ms.grad_x[i];
    out.grad_y[i] = -l1_weight * sign / count + (1.0 - l1_weight) * ms.grad_y[i];
  }
  return out;
}

}  // namespace

void validate(const SsimParams& p) {
  if (!(p.c1 > 0.0) || !(p.c2 > 0.0)) throw ArgumentError("ssim params: c1 and c2 must be > 0");
  if (p.window < 3 || p.window % 2 == 0) throw ArgumentError("ssim params: window must be odd and >= 3");
  if (p.n_scales < 1) throw ArgumentError("ssim params: n_scales must be >= 1");
}

int min_image_size(const SsimParams& p) { return p.window * (1 << (p.n_scales - 1)); }

void validate(const LossWeights& w) {
  for (double v : {w.w_cycle, w.w_sim, w.w_adv, w.w_am, w.w_l1_in_cycle}) {
    if (!std::isfinite(v) || v < 0.0) throw ArgumentError("loss weights must be finite and >= 0");
  }
  if (w.w_l1_in_cycle > 1.0) throw ArgumentError("loss weights: w_l1_in_cycle must be <= 1");
}

double ssim(const Image& x, const Image& y, const SsimParams& p) {
  return ssim_impl(x, y, p, false).value;
}
LossGrad ssim_with_grad(const Image& x, const Image& y, const SsimParams& p) {
  return ssim_impl(x, y, p, true);
}

double dssim(const Image& x, const Image& y, const SsimParams& p) {
  return dssim_from_ssim(ssim_impl(x, y, p, false), p).value;
}
LossGrad dssim_with_grad(const Image& x, const Image& y, const SsimParams& p) {
  return dssim_from_ssim(ssim_impl(x, y, p, true), p);
}

double ms_dssim(const Image& x, const Image& y, const SsimParams& p) {
  return ms_dssim_impl(x, y, p, false).value;
}
LossGrad ms_dssim_with_grad(const Image& x, const Image& y, const SsimParams& p) {
  return ms_dssim_impl(x, y, p, true);
}

double cycle_loss(const Image& x, const Image& x_rec, const SsimParams& p, double l1_weight) {
  return cycle_impl(x, x_rec, p, l1_weight, false).value;
}
LossGrad cycle_loss_with_grad(const Image& x, const Image& x_rec, const SsimParams& p,
                              double l1_weight) {
  return cycle_impl(x, x_rec, p, l1_weight, true);
}

double similarity_loss(const Image& x, const Image& gx, const SsimParams& p) {
  return ms_dssim(x, gx, p);
}
LossGrad similarity_loss_with_grad(const Image& x, const Image& gx, const SsimParams& p) {
  return ms_dssim_with_grad(x, gx, p);
}

double cross_entropy(int y, double y_hat) {
  if (y != 0 && y != 1) throw ArgumentError("cross_entropy: label must be 0 or 1");
  const double p = std::clamp(y_hat, kProbEpsilon, 1.0 - kProbEpsilon);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double am_loss(int target_label, double classifier_prob) {
  return cross_entropy(target_label, classifier_prob);
}

Image avg_pool2(const Image& img) {
  Image out(img.height / 2, img.width / 2);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      out(r, c) = (img(2 * r, 2 * c) + img(2 * r, 2 * c + 1) + img(2 * r + 1, 2 * c) +
                   img(2 * r + 1, 2 * c + 1)) / 4.0;
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const SsimParams& p) {
  j = {{"c1", p.c1}, {"c2", p.c2}, {"window", p.window}, {"n_scales", p.n_scales},
       {"literal_form", p.literal_form}};
}
void from_json(const nlohmann::json& j, SsimParams& p) {
  p.c1 = j.value("c1", p.c1);
  p.c2 = j.value("c2", p.c2);
  p.window = j.value("window", p.window);
  p.n_scales = j.value("n_scales", p.n_scales);
  p.literal_form = j.value("literal_form", p.literal_form);
}
void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"w_cycle", w.w_cycle}, {"w_sim", w.w_sim}, {"w_adv", w.w_adv}, {"w_am", w.w_am},
       {"w_l1_in_cycle", w.w_l1_in_cycle}};
}
void from_json(const nlohmann::json& j, LossWeights& w) {
  w.w_cycle = j.value("w_cycle", w.w_cycle);
  w.w_sim = j.value("w_sim", w.w_sim);
  w.w_adv = j.value("w_adv", w.w_adv);
  w.w_am = j.value("w_am", w.w_am);
  w.w_l1_in_cycle = j.value("w_l1_in_cycle", w.w_l1_in_cycle);
}

}  // namespace cfexplain
