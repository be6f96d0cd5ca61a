#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cfexplain/error.hpp"
#include "cfexplain/losses.hpp"

using namespace cfexplain;

namespace {

Image random_image(int size, std::mt19937_64& rng, double lo = 0.05, double hi = 0.95) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(size, size);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

Image constant_image(int size, double v) {
  Image img(size, size);
  for (double& p : img.pixels) p = v;
  return img;
}

// Direct per-window SSIM, written independently of the integral-image code.
double naive_ssim(const Image& x, const Image& y, double c1, double c2, int k) {
  double total = 0.0;
  int count = 0;
  for (int i = 0; i + k <= x.height; ++i) {
    for (int j = 0; j + k <= x.width; ++j) {
      double mx = 0, my = 0;
      for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) {
          mx += x(i + r, j + c);
          my += y(i + r, j + c);
        }
      mx /= k * k;
      my /= k * k;
      double vx = 0, vy = 0, cv = 0;
      for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) {
          const double dx = x(i + r, j + c) - mx, dy = y(i + r, j + c) - my;
          vx += dx * dx;
          vy += dy * dy;
          cv += dx * dy;
        }
      vx /= k * k;
      vy /= k * k;
      cv /= k * k;
      total += (2 * mx * my + c1) * (2 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

Image half(const Image& img) {
  Image out(img.height / 2, img.width / 2);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      out(r, c) = 0.25 * (img(2 * r, 2 * c) + img(2 * r + 1, 2 * c) + img(2 * r, 2 * c + 1) + img(2 * r + 1, 2 * c + 1));
  return out;
}

template <typename F>
void expect_gradient_matches(F loss, const Image& x, const Image& y, const std::vector<double>& gx,
                             const std::vector<double>& gy) {
  const double h = 1e-5;
  for (std::size_t q = 0; q < x.pixels.size(); ++q) {
    for (int which = 0; which < 2; ++which) {
      Image xp = x, xm = x, yp = y, ym = y;
      if (which == 0) {
        xp.pixels[q] += h;
        xm.pixels[q] -= h;
      } else {
        yp.pixels[q] += h;
        ym.pixels[q] -= h;
      }
      const double fd = (loss(xp, yp) - loss(xm, ym)) / (2 * h);
      const double an = which == 0 ? gx[q] : gy[q];
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-4});
      ASSERT_LE(std::abs(fd - an) / scale, 1e-3) << "pixel " << q << (which == 0 ? " x" : " y");
    }
  }
}

}  // namespace

TEST(Ssim, IdenticalImagesScoreOne) {
  std::mt19937_64 rng(1);
  const Image x = random_image(20, rng);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
  EXPECT_NEAR(dssim(x, x), 0.0, 1e-12);
  SsimParams p;
  p.n_scales = 2;
  EXPECT_NEAR(ms_dssim(x, x, p), 0.0, 1e-12);
}

TEST(Ssim, MatchesDirectWindowComputation) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 5; ++t) {
    const Image x = random_image(15, rng), y = random_image(15, rng);
    EXPECT_NEAR(ssim(x, y), naive_ssim(x, y, 0.01, 0.03, 7), 1e-10);
  }
}

TEST(Ssim, ConstantImagesClosedForm) {
  for (auto [a, b] : {std::pair{0.2, 0.7}, {0.5, 0.5}, {0.0, 1.0}, {0.9, 0.3}}) {
    const Image x = constant_image(12, a), y = constant_image(12, b);
    const double expected = (2 * a * b + 0.01) / (a * a + b * b + 0.01);
    EXPECT_NEAR(ssim(x, y), expected, 1e-12) << a << " vs " << b;
  }
}

TEST(Ssim, InvertedCheckerboardIsNegative) {
  Image x(14, 14), y(14, 14);
  for (int r = 0; r < 14; ++r)
    for (int c = 0; c < 14; ++c) {
      x(r, c) = (r + c) % 2 ? 1.0 : 0.0;
      y(r, c) = 1.0 - x(r, c);
    }
  EXPECT_LT(ssim(x, y), 0.0);
  EXPECT_GT(dssim(x, y), 0.5);
}

TEST(Ssim, Symmetric) {
  std::mt19937_64 rng(3);
  const Image x = random_image(16, rng), y = random_image(16, rng);
  EXPECT_DOUBLE_EQ(ssim(x, y), ssim(y, x));
}

TEST(Dssim, LiteralFormIsOffsetByHalf) {
  std::mt19937_64 rng(4);
  const Image x = random_image(16, rng), y = random_image(16, rng);
  SsimParams lit;
  lit.literal_form = true;
  EXPECT_NEAR(dssim(x, y, lit) - dssim(x, y), 0.5, 1e-12);
  EXPECT_NEAR(dssim(x, x, lit), 0.5, 1e-12);
}

TEST(MsDssim, IsMeanOverPooledScales) {
  std::mt19937_64 rng(5);
  const Image x = random_image(28, rng), y = random_image(28, rng);
  const Image x1 = half(x), y1 = half(y), x2 = half(x1), y2 = half(y1);
  const double expected = ((1 - naive_ssim(x, y, 0.01, 0.03, 7)) / 2 + (1 - naive_ssim(x1, y1, 0.01, 0.03, 7)) / 2 +
                           (1 - naive_ssim(x2, y2, 0.01, 0.03, 7)) / 2) / 3;
  EXPECT_NEAR(ms_dssim(x, y), expected, 1e-10);
}

TEST(MsDssim, RejectsImagesTooSmallForScales) {
  std::mt19937_64 rng(6);
  const Image x = random_image(27, rng);
  EXPECT_EQ(min_image_size(SsimParams{}), 28);
  EXPECT_THROW(ms_dssim(x, x), ArgumentError);
}

TEST(MsDssim, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  SsimParams p;
  p.n_scales = 2;  // 16 px supports two scales of a 7-px window
  for (int t = 0; t < 10; ++t) {
    const Image x = random_image(16, rng), y = random_image(16, rng);
    const LossGrad g = ms_dssim_with_grad(x, y, p);
    EXPECT_NEAR(g.value, ms_dssim(x, y, p), 1e-14);
    expect_gradient_matches([&](const Image& a, const Image& b) { return ms_dssim(a, b, p); }, x, y, g.grad_x,
                            g.grad_y);
  }
}

TEST(CycleLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  SsimParams p;
  p.n_scales = 2;
  for (int t = 0; t < 10; ++t) {
    const Image x = random_image(16, rng), y = random_image(16, rng);
    const LossGrad g = cycle_loss_with_grad(x, y, p);
    expect_gradient_matches([&](const Image& a, const Image& b) { return cycle_loss(a, b, p); }, x, y, g.grad_x,
                            g.grad_y);
  }
}

TEST(CycleLoss, ZeroOnPerfectReconstruction) {
  std::mt19937_64 rng(9);
  const Image x = random_image(32, rng);
  EXPECT_NEAR(cycle_loss(x, x), 0.0, 1e-12);
}

TEST(CycleLoss, BlendsL1AndMsDssim) {
  std::mt19937_64 rng(10);
  const Image x = random_image(32, rng), y = random_image(32, rng);
  double l1 = 0;
  for (std::size_t i = 0; i < x.pixels.size(); ++i) l1 += std::abs(x.pixels[i] - y.pixels[i]);
  l1 /= x.pixels.size();
  EXPECT_NEAR(cycle_loss(x, y), 0.5 * l1 + 0.5 * ms_dssim(x, y), 1e-12);
  EXPECT_NEAR(cycle_loss(x, y, {}, 1.0), l1, 1e-12);
  EXPECT_NEAR(cycle_loss(x, y, {}, 0.0), ms_dssim(x, y), 1e-12);
}

TEST(CrossEntropy, KnownValues) {
  EXPECT_NEAR(cross_entropy(1, 0.5), std::log(2.0), 1e-6);
  EXPECT_NEAR(cross_entropy(0, 0.5), std::log(2.0), 1e-6);
  EXPECT_NEAR(cross_entropy(1, 0.9), -std::log(0.9), 1e-12);
  EXPECT_NEAR(cross_entropy(0, 0.9), -std::log(0.1), 1e-12);
}

TEST(CrossEntropy, ClampsSaturatedPredictions) {
  EXPECT_NEAR(cross_entropy(1, 0.0), -std::log(kProbEpsilon), 1e-9);
  EXPECT_TRUE(std::isfinite(cross_entropy(0, 1.0)));
  EXPECT_THROW(cross_entropy(2, 0.5), ArgumentError);
}

TEST(AmLoss, RewardsTargetClass) {
  EXPECT_LT(am_loss(1, 0.9), am_loss(1, 0.1));
  EXPECT_LT(am_loss(0, 0.1), am_loss(0, 0.9));
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(validate(w));
  w.w_adv = -1;
  EXPECT_THROW(validate(w), ArgumentError);
  w = {};
  w.w_l1_in_cycle = 1.5;
  EXPECT_THROW(validate(w), ArgumentError);
}
