// Structural-similarity family losses, cross entropy and activation
// maximization. All image losses come in two flavours: value only, and value
// plus the analytic gradient with respect to both arguments.
#pragma once

#include "cfexplain/image.hpp"
#include "json.hpp"

namespace cfexplain {

struct SsimParams {
  double c1 = 0.01;
  double c2 = 0.03;
  int window = 7;  // uniform box window, odd
  int n_scales = 3;
  /// Use 1 − SSIM/2 (the literal printed form, nonzero at identity) instead of
  /// (1 − SSIM)/2 for DSSIM.
  bool literal_form = false;
};

/// Throws ArgumentError for c1/c2 ≤ 0, an even or < 3 window, or n_scales < 1.
void validate(const SsimParams& p);
/// Smallest square image size that supports the configured scale count.
int min_image_size(const SsimParams& p);

struct LossWeights {
  double w_cycle = 1.0;
  double w_sim = 1.0;
  double w_adv = 1.0;
  double w_am = 1.0;
  double w_l1_in_cycle = 0.5;
};

void validate(const LossWeights& w);

struct LossGrad {
  double value = 0.0;
  std::vector<double> grad_x;
  std::vector<double> grad_y;
};

/// Mean SSIM index over all valid window positions.
double ssim(const Image& x, const Image& y, const SsimParams& p = {});
LossGrad ssim_with_grad(const Image& x, const Image& y, const SsimParams& p = {});

double dssim(const Image& x, const Image& y, const SsimParams& p = {});
LossGrad dssim_with_grad(const Image& x, const Image& y, const SsimParams& p = {});

/// Mean DSSIM over n_scales dyadic scales (2×2 average pooling between scales).
double ms_dssim(const Image& x, const Image& y, const SsimParams& p = {});
LossGrad ms_dssim_with_grad(const Image& x, const Image& y, const SsimParams& p = {});

/// l1_weight·mean|x − x_rec| + (1 − l1_weight)·ms_dssim(x, x_rec).
double cycle_loss(const Image& x, const Image& x_rec, const SsimParams& p = {},
                  double l1_weight = 0.5);
LossGrad cycle_loss_with_grad(const Image& x, const Image& x_rec, const SsimParams& p = {},
                              double l1_weight = 0.5);

double similarity_loss(const Image& x, const Image& gx, const SsimParams& p = {});
LossGrad similarity_loss_with_grad(const Image& x, const Image& gx, const SsimParams& p = {});

inline constexpr double kProbEpsilon = 1e-7;

/// Binary negative log-likelihood with y_hat clamped to [eps, 1 − eps].
double cross_entropy(int y, double y_hat);
/// Activation-maximization loss: cross entropy of the classifier output
/// against the label the generator is meant to maximize.
double am_loss(int target_label, double classifier_prob);

Image avg_pool2(const Image& img);

void to_json(nlohmann::json& j, const SsimParams& p);
void from_json(const nlohmann::json& j, SsimParams& p);
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

}  // namespace cfexplain
