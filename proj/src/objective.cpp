#include "cfexplain/objective.hpp"

#include "cfexplain/error.hpp"

namespace cfexplain {

namespace {

nn::PairLossFn as_pair_fn(LossGrad (*fn)(const Image&, const Image&, const SsimParams&),
                          const SsimParams& p) {
  return [fn, p](const Image& a, const Image& b) {
    LossGrad r = fn(a, b, p);
    return nn::PairLossResult{r.value, std::move(r.grad_x), std::move(r.grad_y)};
  };
}

Var weighted(const Var& acc, const Var& term, double weight) {
  if (weight == 0.0) return acc;
  Var scaled = nn::scale(term, static_cast<float>(weight));
  return acc ? nn::add(acc, scaled) : scaled;
}

}  // namespace

Var cycle_loss_batch(const Var& x, const Var& x_rec, const SsimParams& p, double l1_weight) {
  return nn::mean_pair_loss(x, x_rec, [p, l1_weight](const Image& a, const Image& b) {
    LossGrad r = cycle_loss_with_grad(a, b, p, l1_weight);
    return nn::PairLossResult{r.value, std::move(r.grad_x), std::move(r.grad_y)};
  });
}

Var similarity_loss_batch(const Var& x, const Var& gx, const SsimParams& p) {
  return nn::mean_pair_loss(x, gx, as_pair_fn(&similarity_loss_with_grad, p));
}

GeneratorLoss generator_loss(const Var& x_a, const Var& x_b, int target_label,
                             Generator& g_self, Generator& g_other, Discriminator& d_self,
                             Classifier& c, const LossWeights& weights, const SsimParams& ssim,
                             std::mt19937_64& rng, ObjectiveModes modes) {
  if (target_label != 0 && target_label != 1) throw ArgumentError("generator_loss: target label must be 0 or 1");
  validate(weights);
  GeneratorLoss out;
  Var fake = g_self.forward(x_a, modes.generators);
  out.generated = fake;
  Var total;

  Var rec = g_other.forward(fake, modes.reconstruction);
  Var cyc = cycle_loss_batch(x_a, rec, ssim, weights.w_l1_in_cycle);
  out.cycle = cyc->value[0];
  total = weighted(total, cyc, weights.w_cycle);

  Var sim = similarity_loss_batch(x_a, fake, ssim);
  out.similarity = sim->value[0];
  total = weighted(total, sim, weights.w_sim);

  {
    // Slot 0 holds the fake; the generator wants it judged real.
    const DiscriminatorOutput d = d_self.forward(fake, x_b, modes.discriminator, rng);
    Var adv = discriminator_loss(d, 0);
    out.adversarial = adv->value[0];
    total = weighted(total, adv, weights.w_adv);
  }

  {
    Var logits = c.forward_logits(fake, NormMode::kInference);
    Var am = nn::softmax_cross_entropy(
        logits, std::vector<int>(static_cast<std::size_t>(logits->value.shape().n), target_label));
    out.activation = am->value[0];
    total = weighted(total, am, weights.w_am);
  }

  if (!total) total = nn::constant(Tensor(Shape{1, 1, 1, 1}, 0.0f));
  out.total = total;
  return out;
}

}  // namespace cfexplain
