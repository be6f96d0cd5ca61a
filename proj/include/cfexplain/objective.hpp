// Composite generator objective over image batches, built on the autograd
// graph so its gradient reaches the generators.
#pragma once

#include <random>

#include "cfexplain/losses.hpp"
#include "cfexplain/models.hpp"

namespace cfexplain {

/// Graph nodes for the four loss terms, each a batch mean.
Var cycle_loss_batch(const Var& x, const Var& x_rec, const SsimParams& p, double l1_weight);
Var similarity_loss_batch(const Var& x, const Var& gx, const SsimParams& p);

struct GeneratorLoss {
  Var total;
  double cycle = 0.0;
  double similarity = 0.0;
  double adversarial = 0.0;
  double activation = 0.0;
  /// G_self(x_a), kept for logging.
  Var generated;

  double weighted_sum(const LossWeights& w) const {
    return w.w_cycle * cycle + w.w_sim * similarity + w.w_adv * adversarial + w.w_am * activation;
  }
};

struct ObjectiveModes {
  NormMode generators = NormMode::kTrain;
  /// The other generator when it maps the fake back; batch statistics only,
  /// so its running estimates track real inputs.
  NormMode reconstruction = NormMode::kBatchStats;
  NormMode discriminator = NormMode::kBatchStats;
};

/// w_cycle·cycle(x_a, G_other(G_self(x_a))) + w_sim·sim(x_a, G_self(x_a))
///   + w_adv·CE(fake-slot-is-real, D_self(G_self(x_a), x_b))
///   + w_am·CE(target_label, C(G_self(x_a))).
/// The adversarial term uses inverted targets: the generator is rewarded
/// when the discriminator takes its output for the real image. The
/// classifier always runs in inference mode. Terms with zero weight are
/// still reported but do not enter the graph.
GeneratorLoss generator_loss(const Var& x_a, const Var& x_b, int target_label,
                             Generator& g_self, Generator& g_other, Discriminator& d_self,
                             Classifier& c, const LossWeights& weights, const SsimParams& ssim,
                             std::mt19937_64& rng, ObjectiveModes modes = {});

}  // namespace cfexplain
