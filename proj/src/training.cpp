#include "cfexplain/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cfexplain/error.hpp"
#include "cfexplain/objective.hpp"

namespace cfexplain {

void validate(const TrainConfig& c, const std::string& prefix) {
  auto fail = [&](const std::string& field, const std::string& rule) {
    throw ArgumentError(prefix + "." + field + " " + rule);
  };
  if (c.batch_size < 2) fail("batch_size", "must be >= 2");
  if (c.max_epochs < 1) fail("max_epochs", "must be >= 1");
  if (c.optimizer.kind != "adam") fail("optimizer.kind", "must be 'adam'");
  if (!(c.optimizer.learning_rate > 0.0)) fail("optimizer.learning_rate", "must be > 0");
  if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0)) fail("optimizer.beta1", "must be in [0,1)");
  if (!(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0)) fail("optimizer.beta2", "must be in [0,1)");
  if (!(c.optimizer.epsilon > 0.0)) fail("optimizer.epsilon", "must be > 0");
  if (c.convergence.window < 1) fail("convergence.window", "must be >= 1");
  if (!(c.convergence.rel_tol > 0.0)) fail("convergence.rel_tol", "must be > 0");
  if (c.probe_size < 0) fail("probe_size", "must be >= 0");
  if (!(c.input_noise >= 0.0 && c.input_noise <= 1.0)) fail("input_noise", "must be in [0,1]");
  try {
    validate(c.weights);
    validate(c.ssim);
  } catch (const ArgumentError& e) {
    throw ArgumentError(prefix + ": " + e.what());
  }
}

Adam::Adam(std::vector<Var> params, const OptimizerConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape(), 0.0f);
    v_.emplace_back(p->value.shape(), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const float lr = static_cast<float>(config_.learning_rate * std::sqrt(c2) / c1);
  const float eps = static_cast<float>(config_.epsilon * std::sqrt(c2));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nn::Node& p = *params_[i];
    if (p.grad.empty()) continue;  // untouched this step
    float* w = p.value.data();
    const float* g = p.grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const std::size_t n = p.value.size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = static_cast<float>(b1 * m[k] + (1.0 - b1) * g[k]);
      v[k] = static_cast<float>(b2 * v[k] + (1.0 - b2) * g[k] * g[k]);
      w[k] -= lr * m[k] / (std::sqrt(v[k]) + eps);
    }
  }
}

std::array<double, 2> class_weights(int n_neg, int n_pos) {
  if (n_neg <= 0 || n_pos <= 0) throw TrainingError("class weights need samples of both classes");
  const double n = n_neg + n_pos;
  return {n / (2.0 * n_neg), n / (2.0 * n_pos)};
}

namespace {

bool converged(const std::vector<double>& losses, const ConvergenceConfig& c) {
  const auto w = static_cast<std::size_t>(c.window);
  if (losses.size() < 2 * w) return false;
  const auto end = losses.end();
  const double recent = std::accumulate(end - w, end, 0.0) / w;
  const double before = std::accumulate(end - 2 * w, end - w, 0.0) / w;
  return std::abs(recent - before) <= c.rel_tol * std::max(std::abs(before), 1e-12);
}

void check_finite(double v, const char* what, long step) {
  if (!std::isfinite(v)) {
    throw TrainingError(std::string("non-finite ") + what + " loss at step " + std::to_string(step));
  }
}

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(nn::uniform01(rng) * i)]);
  }
  return idx;
}

std::vector<Image> gather(const std::vector<const LabeledSample*>& pool,
                          const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  std::vector<Image> out;
  for (std::size_t k = begin; k < end; ++k) out.push_back(pool[idx[k]]->image);
  return out;
}

void check_size(const std::vector<const LabeledSample*>& pool, int size) {
  for (const auto* s : pool) {
    if (s->image.height != size || s->image.width != size) {
      throw ArgumentError("sample " + s->id + " is " + std::to_string(s->image.height) + "x" +
                          std::to_string(s->image.width) + ", network expects " + std::to_string(size));
    }
  }
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

std::vector<Var> concat(nn::ParameterSet a, const nn::ParameterSet& b) {
  a.append(b);
  return a.params;
}

}  // namespace

ClassifierTrainResult train_classifier(Classifier& c, const std::vector<LabeledSample>& samples,
                                       const TrainConfig& config) {
  validate(config);
  auto train = select(samples, Split::kTrain);
  const auto test = select(samples, Split::kTest);
  check_size(train, c.input_size());
  check_size(test, c.input_size());
  int n_pos = 0;
  for (const auto* s : train) n_pos += s->label;
  const int n_neg = static_cast<int>(train.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw TrainingError("training split must contain both classes");
  const auto weights = class_weights(n_neg, n_pos);

  nn::ParameterSet params = c.parameters();
  params.set_trainable(true);
  Adam opt(params.params, config.optimizer);
  std::mt19937_64 rng(derive_seed(config.seed, 20));
  std::mt19937_64 noise_rng(derive_seed(config.seed, 21));
  ClassifierTrainResult out;
  long step = 0;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto idx = permutation(train.size(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + 2 <= idx.size(); start += config.batch_size) {
      const std::size_t end = std::min(idx.size(), start + config.batch_size);
      auto images = gather(train, idx, start, end);
      if (config.input_noise > 0.0) {
        for (Image& img : images) {
          const double offset = 0.5 * config.input_noise * nn::standard_normal(noise_rng);
          for (double& v : img.pixels) {
            v = std::clamp(v + offset + config.input_noise * nn::standard_normal(noise_rng), 0.0, 1.0);
          }
        }
      }
      std::vector<int> labels;
      std::vector<double> w;
      for (std::size_t k = start; k < end; ++k) {
        labels.push_back(train[idx[k]]->label);
        w.push_back(weights[labels.back()]);
      }
      opt.zero_grad();
      Var z = c.forward_logits(nn::constant(nn::to_tensor(images)), NormMode::kTrain);
      Var loss = nn::softmax_cross_entropy(z, labels, w);
      check_finite(loss->value[0], "classifier", ++step);
      nn::backward(loss);
      opt.step();
      total += loss->value[0];
      ++batches;
    }
    out.epoch_losses.push_back(total / std::max(batches, 1));
    out.epochs_run = epoch + 1;
    if (converged(out.epoch_losses, config.convergence)) break;
  }
  params.set_trainable(false);

  const auto test_images = images_of(test);
  out.test_probs = classify(c, test_images);
  int correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    out.test_labels.push_back(test[i]->label);
    correct += (out.test_probs[i] >= 0.5) == (test[i]->label == 1);
  }
  out.test_accuracy = test.empty() ? 0.0 : static_cast<double>(correct) / test.size();
  return out;
}

TrainRecord explainer_step(ExplainerBundle& b, const std::vector<Image>& batch_a,
                           const std::vector<Image>& batch_b, const TrainConfig& config,
                           Adam& opt_g, Adam& opt_d, std::mt19937_64& rng) {
  if (batch_a.size() < 2 || batch_a.size() != batch_b.size()) {
    throw ArgumentError("explainer_step: batches must have equal size >= 2");
  }
  TrainRecord rec;
  rec.step = opt_g.steps() + 1;
  const Var xa = nn::constant(nn::to_tensor(batch_a));
  const Var xb = nn::constant(nn::to_tensor(batch_b));

  // Discriminators: the real image sits in the second slot before shuffling.
  {
    Var fake_plus, fake_minus;
    {
      nn::NoGradGuard guard;
      fake_plus = nn::constant(b.g_plus.forward(xa, NormMode::kBatchStats)->value);
      fake_minus = nn::constant(b.g_minus.forward(xa, NormMode::kBatchStats)->value);
    }
    opt_d.zero_grad();
    Var lp = discriminator_loss(b.d_plus.forward(fake_plus, xb, NormMode::kTrain, rng), 1);
    Var lm = discriminator_loss(b.d_minus.forward(fake_minus, xb, NormMode::kTrain, rng), 1);
    rec.d_plus = lp->value[0];
    rec.d_minus = lm->value[0];
    check_finite(rec.d_plus, "discriminator", rec.step);
    check_finite(rec.d_minus, "discriminator", rec.step);
    nn::backward(nn::add(lp, lm));
    opt_d.step();
  }

  // Generators, discriminators frozen.
  nn::ParameterSet dp = b.d_plus.parameters();
  nn::ParameterSet dm = b.d_minus.parameters();
  dp.set_trainable(false);
  dm.set_trainable(false);
  try {
    opt_g.zero_grad();
    const GeneratorLoss lp = generator_loss(xa, xb, 1, b.g_plus, b.g_minus, b.d_plus, b.classifier,
                                            config.weights, config.ssim, rng);
    const GeneratorLoss lm = generator_loss(xa, xb, 0, b.g_minus, b.g_plus, b.d_minus, b.classifier,
                                            config.weights, config.ssim, rng);
    auto terms = [&](const GeneratorLoss& l) {
      return GeneratorTerms{l.cycle, l.similarity, l.adversarial, l.activation, l.total->value[0]};
    };
    rec.g_plus = terms(lp);
    rec.g_minus = terms(lm);
    check_finite(rec.g_plus.total, "generator", rec.step);
    check_finite(rec.g_minus.total, "generator", rec.step);
    nn::backward(nn::add(lp.total, lm.total));
    opt_g.step();
  } catch (...) {
    dp.set_trainable(true);
    dm.set_trainable(true);
    throw;
  }
  dp.set_trainable(true);
  dm.set_trainable(true);
  return rec;
}

TrainLog train_explainer(ExplainerBundle& b, const std::vector<LabeledSample>& samples,
                         const TrainConfig& config, const StepCallback& on_step) {
  validate(config);
  auto train = select(samples, Split::kTrain);
  auto held_out = select(samples, Split::kTest);
  if (train.empty()) {
    for (const auto& s : samples) train.push_back(&s);
  }
  if (held_out.empty()) held_out = train;
  if (train.size() < 2) throw TrainingError("explainer training needs at least 2 images");
  check_size(train, b.input_size());
  check_size(held_out, b.input_size());
  held_out.resize(std::min<std::size_t>(held_out.size(), config.probe_size));
  const auto probe_images = images_of(held_out);

  nn::ParameterSet classifier_params = b.classifier.parameters();
  classifier_params.set_trainable(false);
  const std::uint64_t classifier_sum = classifier_params.checksum();

  Adam opt_g(concat(b.g_plus.parameters(), b.g_minus.parameters()), config.optimizer);
  Adam opt_d(concat(b.d_plus.parameters(), b.d_minus.parameters()), config.optimizer);
  std::mt19937_64 rng(derive_seed(config.seed, 30));

  TrainLog log;
  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto idx = permutation(train.size(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + 2 <= idx.size(); start += config.batch_size) {
      const std::size_t end = std::min(idx.size(), start + config.batch_size);
      const auto batch_a = gather(train, idx, start, end);
      std::vector<Image> batch_b;
      for (std::size_t k = start; k < end; ++k) {
        batch_b.push_back(train[static_cast<std::size_t>(nn::uniform01(rng) * train.size())]->image);
      }
      TrainRecord rec = explainer_step(b, batch_a, batch_b, config, opt_g, opt_d, rng);
      rec.epoch = epoch;
      total += rec.g_plus.total + rec.g_minus.total;
      ++batches;
      const bool last = start + config.batch_size + 2 > idx.size();
      if (last && !probe_images.empty()) {
        ProbeSummary probe;
        probe.mean_prob_original = mean(classify(b.classifier, probe_images));
        probe.mean_prob_plus = mean(classify(b.classifier, generate(b.g_plus, probe_images)));
        probe.mean_prob_minus = mean(classify(b.classifier, generate(b.g_minus, probe_images)));
        rec.probe = probe;
      }
      if (on_step) on_step(rec);
      log.records.push_back(std::move(rec));
    }
    epoch_losses.push_back(total / std::max(batches, 1));
    log.epochs_run = epoch + 1;
    if (converged(epoch_losses, config.convergence)) {
      log.converged = true;
      break;
    }
  }
  if (classifier_params.checksum() != classifier_sum) {
    throw StateError("classifier parameters changed during explainer training");
  }
  b.trained = true;
  return log;
}

void to_json(nlohmann::json& j, const TrainRecord& r) {
  auto terms = [](const GeneratorTerms& t) {
    return nlohmann::json{{"cycle", t.cycle}, {"similarity", t.similarity},
                          {"adversarial", t.adversarial}, {"activation", t.activation},
                          {"total", t.total}};
  };
  j = {{"step", r.step},          {"epoch", r.epoch},     {"g_plus", terms(r.g_plus)},
       {"g_minus", terms(r.g_minus)}, {"d_plus", r.d_plus}, {"d_minus", r.d_minus}};
  if (r.probe) {
    j["probe"] = {{"mean_prob_original", r.probe->mean_prob_original},
                  {"mean_prob_plus", r.probe->mean_prob_plus},
                  {"mean_prob_minus", r.probe->mean_prob_minus}};
  }
}

std::string to_jsonl(const TrainLog& log) {
  std::ostringstream out;
  for (const auto& r : log.records) out << nlohmann::json(r).dump() << '\n';
  return out.str();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"optimizer",
        {{"kind", c.optimizer.kind},
         {"learning_rate", c.optimizer.learning_rate},
         {"beta1", c.optimizer.beta1},
         {"beta2", c.optimizer.beta2},
         {"epsilon", c.optimizer.epsilon}}},
       {"weights", c.weights},
       {"ssim", c.ssim},
       {"convergence", {{"window", c.convergence.window}, {"rel_tol", c.convergence.rel_tol}}},
       {"seed", c.seed},
       {"probe_size", c.probe_size},
       {"input_noise", c.input_noise}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.kind = o.value("kind", c.optimizer.kind);
    c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
    c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
  }
  if (j.contains("weights")) j.at("weights").get_to(c.weights);
  if (j.contains("ssim")) j.at("ssim").get_to(c.ssim);
  if (j.contains("convergence")) {
    const auto& k = j.at("convergence");
    c.convergence.window = k.value("window", c.convergence.window);
    c.convergence.rel_tol = k.value("rel_tol", c.convergence.rel_tol);
  }
  c.seed = j.value("seed", c.seed);
  c.probe_size = j.value("probe_size", c.probe_size);
  c.input_noise = j.value("input_noise", c.input_noise);
}

}  // namespace cfexplain
