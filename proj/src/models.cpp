#include "cfexplain/models.hpp"

#include <cstring>
#include <sstream>

#include "cfexplain/error.hpp"
#include "cfexplain/io.hpp"

namespace cfexplain {
namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

bool divisible(int size, int factor) { return factor > 0 && size % factor == 0; }

std::vector<nn::ConvBlock> make_stage(int in_channels, int out_channels, int convs,
                                      float leak, std::mt19937_64& rng) {
  std::vector<nn::ConvBlock> stage;
  for (int i = 0; i < convs; ++i) {
    stage.emplace_back(i == 0 ? in_channels : out_channels, out_channels, 1, leak, rng);
  }
  return stage;
}

Var run_stage(std::vector<nn::ConvBlock>& stage, Var h, NormMode mode) {
  for (auto& block : stage) h = block.forward(h, mode);
  return h;
}

}  // namespace

void validate(const ClassifierSpec& spec, int input_size) {
  if (spec.blocks.empty()) throw ArgumentError("classifier spec: block list is empty");
  int reduction = 1;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    if (b.kernels < 1) throw ArgumentError("classifier spec: blocks[" + std::to_string(i) + "].kernels < 1");
    if (b.stride < 1) throw ArgumentError("classifier spec: blocks[" + std::to_string(i) + "].stride < 1");
    reduction *= b.stride;
  }
  if (input_size < 1 || !divisible(input_size, reduction)) {
    throw ArgumentError("classifier: input size " + std::to_string(input_size) +
                        " is not divisible by the total stride " + std::to_string(reduction));
  }
}

void validate(const GeneratorSpec& spec, int input_size) {
  if (spec.depth < 0) throw ArgumentError("generator spec: depth < 0");
  if (spec.convs_per_stage < 1) throw ArgumentError("generator spec: convs_per_stage < 1");
  if (static_cast<int>(spec.stage_kernels.size()) != spec.depth + 1) {
    throw ArgumentError("generator spec: stage_kernels must have depth + 1 entries");
  }
  for (int k : spec.stage_kernels) {
    if (k < 1) throw ArgumentError("generator spec: stage kernel count < 1");
  }
  if (spec.leak < 0.0f) throw ArgumentError("generator spec: leak < 0");
  if (input_size < 1 || !divisible(input_size, 1 << spec.depth)) {
    throw ArgumentError("generator: input size " + std::to_string(input_size) +
                        " is not divisible by 2^depth = " + std::to_string(1 << spec.depth));
  }
}

void validate(const DiscriminatorSpec& spec, int input_size) {
  validate(spec.backbone, input_size);
  if (spec.tap_stages.empty()) throw ArgumentError("discriminator spec: no tap stages");
  int prev = -1;
  for (int t : spec.tap_stages) {
    if (t < 0 || t > spec.backbone.depth) {
      throw ArgumentError("discriminator spec: tap stage " + std::to_string(t) + " out of range");
    }
    if (t <= prev) throw ArgumentError("discriminator spec: tap stages must be increasing");
    prev = t;
  }
}

// ---------------------------------------------------------------------------
// Classifier

Classifier::Classifier(const ClassifierSpec& spec, int input_size, std::uint64_t seed)
    : spec_(spec), input_size_(input_size), seed_(seed) {
  validate(spec, input_size);
  std::mt19937_64 rng(derive_seed(seed, 0));
  int channels = 1;
  int size = input_size;
  for (const auto& b : spec.blocks) {
    blocks_.emplace_back(channels, b.kernels, b.stride, 0.0f, rng);
    channels = b.kernels;
    size /= b.stride;
  }
  feature_size_ = size;
  head_ = nn::Linear(channels * size * size, 2, rng);
}

Var Classifier::forward(const Var& x, NormMode mode) {
  return nn::softmax_channels(forward_logits(x, mode));
}

Var Classifier::forward_logits(const Var& x, NormMode mode) {
  const Shape s = x->value.shape();
  if (s.c != 1 || s.h != input_size_ || s.w != input_size_) {
    throw ArgumentError("classifier: expected [N,1," + std::to_string(input_size_) + "," +
                        std::to_string(input_size_) + "] input, got " + s.str());
  }
  Var h = x;
  for (auto& b : blocks_) h = b.forward(h, mode);
  return head_.forward(h);
}

nn::ParameterSet Classifier::parameters() {
  nn::ParameterSet set;
  for (auto& b : blocks_) b.collect(set);
  head_.collect(set);
  return set;
}

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(const GeneratorSpec& spec, int input_size, std::uint64_t seed)
    : spec_(spec), input_size_(input_size), seed_(seed) {
  validate(spec, input_size);
  std::mt19937_64 rng(derive_seed(seed, 1));
  const auto& k = spec.stage_kernels;
  int channels = 1;
  for (int s = 0; s <= spec.depth; ++s) {
    encoder_.push_back(make_stage(channels, k[s], spec.convs_per_stage, spec.leak, rng));
    channels = k[s];
  }
  for (int s = spec.depth - 1; s >= 0; --s) {
    decoder_.push_back(make_stage(channels + k[s], k[s], spec.convs_per_stage, spec.leak, rng));
    channels = k[s];
  }
  output_ = nn::Conv2d(channels, 1, 1, 1, true, rng);
}

Var Generator::forward(const Var& x, NormMode mode) {
  const Shape s = x->value.shape();
  if (s.c != 1 || s.h != input_size_ || s.w != input_size_) {
    throw ArgumentError("generator: expected [N,1," + std::to_string(input_size_) + "," +
                        std::to_string(input_size_) + "] input, got " + s.str());
  }
  std::vector<Var> skips;
  Var h = x;
  for (int st = 0; st <= spec_.depth; ++st) {
    h = run_stage(encoder_[st], h, mode);
    if (st < spec_.depth) {
      skips.push_back(h);
      h = nn::max_pool2(h);
    }
  }
  for (int d = 0; d < spec_.depth; ++d) {
    const int st = spec_.depth - 1 - d;
    h = nn::concat_channels(nn::upsample_nearest2(h), skips[st]);
    h = run_stage(decoder_[d], h, mode);
  }
  return nn::sigmoid(output_.forward(h));
}

nn::ParameterSet Generator::parameters() {
  nn::ParameterSet set;
  for (auto& stage : encoder_) {
    for (auto& b : stage) b.collect(set);
  }
  for (auto& stage : decoder_) {
    for (auto& b : stage) b.collect(set);
  }
  output_.collect(set);
  return set;
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(const DiscriminatorSpec& spec, int input_size, std::uint64_t seed)
    : spec_(spec), input_size_(input_size), seed_(seed) {
  validate(spec, input_size);
  std::mt19937_64 rng(derive_seed(seed, 2));
  const auto& k = spec.backbone.stage_kernels;
  const int last = spec.tap_stages.back();
  int channels = 1;
  for (int s = 0; s <= last; ++s) {
    encoder_.push_back(
        make_stage(channels, k[s], spec.backbone.convs_per_stage, spec.backbone.leak, rng));
    channels = k[s];
  }
  for (int t : spec.tap_stages) heads_.emplace_back(2 * k[t], 2, 1, 1, true, rng);
}

std::vector<int> Discriminator::tap_sizes() const {
  std::vector<int> sizes;
  for (int t : spec_.tap_stages) sizes.push_back(input_size_ >> t);
  return sizes;
}

DiscriminatorOutput Discriminator::forward(const Var& first, const Var& second,
                                           NormMode mode, std::mt19937_64& rng) {
  const int n = first->value.shape().n;
  std::vector<std::vector<std::uint8_t>> swaps;
  for (int size : tap_sizes()) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n) * size * size);
    for (auto& m : mask) m = static_cast<std::uint8_t>(rng() >> 63);
    swaps.push_back(std::move(mask));
  }
  return forward(first, second, mode, swaps);
}

DiscriminatorOutput Discriminator::forward(
    const Var& first, const Var& second, NormMode mode,
    const std::vector<std::vector<std::uint8_t>>& swaps) {
  const Shape s = first->value.shape();
  if (!(s == second->value.shape())) {
    throw ArgumentError("discriminator: pair members differ in shape " + s.str() + " vs " +
                        second->value.shape().str());
  }
  if (s.c != 1 || s.h != input_size_ || s.w != input_size_) {
    throw ArgumentError("discriminator: expected [N,1," + std::to_string(input_size_) + "," +
                        std::to_string(input_size_) + "] input, got " + s.str());
  }
  if (swaps.size() != spec_.tap_stages.size()) {
    throw ArgumentError("discriminator: need one swap mask per tap stage");
  }
  DiscriminatorOutput out;
  out.swaps = swaps;
  // Both images pass through the shared encoder as one batch.
  Var h = nn::concat_batch(first, second);
  std::size_t tap = 0;
  for (int st = 0; st < static_cast<int>(encoder_.size()); ++st) {
    if (st > 0) h = nn::max_pool2(h);
    h = run_stage(encoder_[st], h, mode);
    if (tap < spec_.tap_stages.size() && spec_.tap_stages[tap] == st) {
      Var fa = nn::slice_batch(h, 0, s.n);
      Var fb = nn::slice_batch(h, s.n, s.n);
      Var pair = nn::pair_concat(fa, fb, swaps[tap]);
      Var logit = nn::unswap_pairs(heads_[tap].forward(pair), swaps[tap]);
      out.logits.push_back(logit);
      out.probs.push_back(nn::softmax_channels(logit));
      ++tap;
    }
  }
  return out;
}

nn::ParameterSet Discriminator::parameters() {
  nn::ParameterSet set;
  for (auto& stage : encoder_) {
    for (auto& b : stage) b.collect(set);
  }
  for (auto& h : heads_) h.collect(set);
  return set;
}

Var discriminator_loss(const DiscriminatorOutput& out, int real_slot) {
  if (out.logits.empty()) throw ArgumentError("discriminator_loss: empty output");
  if (real_slot != 0 && real_slot != 1) throw ArgumentError("discriminator_loss: slot must be 0 or 1");
  Var total;
  for (const auto& z : out.logits) {
    const Shape s = z->value.shape();
    Var term = nn::softmax_cross_entropy(z, std::vector<int>(static_cast<std::size_t>(s.n) * s.plane(), real_slot));
    total = total ? nn::add(total, term) : term;
  }
  return nn::scale(total, 1.0f / static_cast<float>(out.logits.size()));
}

// ---------------------------------------------------------------------------
// Builders and inference

Classifier build_classifier(const ClassifierSpec& spec, int input_size, std::uint64_t seed) {
  return Classifier(spec, input_size, seed);
}

Generator build_generator(const GeneratorSpec& spec, int input_size, std::uint64_t seed) {
  return Generator(spec, input_size, seed);
}

Discriminator build_discriminator(const DiscriminatorSpec& spec, int input_size,
                                  std::uint64_t seed) {
  return Discriminator(spec, input_size, seed);
}

namespace {
constexpr std::size_t kInferenceBatch = 32;
}

std::vector<double> classify(Classifier& c, const std::vector<Image>& images) {
  nn::NoGradGuard guard;
  std::vector<double> probs;
  probs.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kInferenceBatch) {
    const std::size_t end = std::min(images.size(), start + kInferenceBatch);
    std::vector<Image> chunk(images.begin() + start, images.begin() + end);
    Var p = c.forward(nn::constant(nn::to_tensor(chunk)), NormMode::kInference);
    for (std::size_t i = 0; i < chunk.size(); ++i) probs.push_back(p->value.at(static_cast<int>(i), 1, 0, 0));
  }
  return probs;
}

double classify(Classifier& c, const Image& image) { return classify(c, std::vector<Image>{image})[0]; }

std::vector<Image> generate(Generator& g, const std::vector<Image>& images) {
  nn::NoGradGuard guard;
  std::vector<Image> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kInferenceBatch) {
    const std::size_t end = std::min(images.size(), start + kInferenceBatch);
    std::vector<Image> chunk(images.begin() + start, images.begin() + end);
    Var y = g.forward(nn::constant(nn::to_tensor(chunk)), NormMode::kInference);
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(nn::to_image(y->value, static_cast<int>(i)));
  }
  return out;
}

Image generate(Generator& g, const Image& image) { return generate(g, std::vector<Image>{image})[0]; }

ExplainerBundle make_bundle(Classifier classifier, const GeneratorSpec& gen_spec,
                            const DiscriminatorSpec& disc_spec, std::uint64_t seed) {
  const int size = classifier.input_size();
  classifier.parameters().set_trainable(false);
  return ExplainerBundle{std::move(classifier),
                         Generator(gen_spec, size, derive_seed(seed, 10)),
                         Generator(gen_spec, size, derive_seed(seed, 11)),
                         Discriminator(disc_spec, size, derive_seed(seed, 12)),
                         Discriminator(disc_spec, size, derive_seed(seed, 13)),
                         seed,
                         false};
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const ConvBlockSpec& s) {
  j = {{"kernels", s.kernels}, {"stride", s.stride}};
}
void from_json(const nlohmann::json& j, ConvBlockSpec& s) {
  j.at("kernels").get_to(s.kernels);
  j.at("stride").get_to(s.stride);
}
void to_json(nlohmann::json& j, const ClassifierSpec& s) { j = {{"blocks", s.blocks}}; }
void from_json(const nlohmann::json& j, ClassifierSpec& s) { j.at("blocks").get_to(s.blocks); }
void to_json(nlohmann::json& j, const GeneratorSpec& s) {
  j = {{"depth", s.depth},
       {"convs_per_stage", s.convs_per_stage},
       {"stage_kernels", s.stage_kernels},
       {"leak", s.leak}};
}
void from_json(const nlohmann::json& j, GeneratorSpec& s) {
  s.depth = j.value("depth", s.depth);
  s.convs_per_stage = j.value("convs_per_stage", s.convs_per_stage);
  s.stage_kernels = j.value("stage_kernels", s.stage_kernels);
  s.leak = j.value("leak", s.leak);
}
void to_json(nlohmann::json& j, const DiscriminatorSpec& s) {
  j = {{"backbone", s.backbone}, {"tap_stages", s.tap_stages}};
}
void from_json(const nlohmann::json& j, DiscriminatorSpec& s) {
  if (j.contains("backbone")) j.at("backbone").get_to(s.backbone);
  s.tap_stages = j.value("tap_stages", s.tap_stages);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string ExplainerBundle::fingerprint() const {
  const nlohmann::json j = {{"classifier", classifier.spec()},
                            {"classifier_seed", classifier.seed()},
                            {"generator", g_plus.spec()},
                            {"discriminator", d_plus.spec()},
                            {"input_size", input_size()},
                            {"seed", seed}};
  return hex64(fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'C', 'F', 'X', 'W'};
constexpr std::uint32_t kVersion = 1;

void append_tensors(std::string& out, const nn::ParameterSet& set) {
  auto put_u64 = [&out](std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); };
  auto put = [&](const Tensor& t) {
    put_u64(t.size());
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  };
  for (const auto& p : set.params) put(p->value);
  for (const auto* b : set.buffers) put(*b);
}

std::size_t tensor_count(const nn::ParameterSet& set) { return set.params.size() + set.buffers.size(); }

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;
  std::string where;

  void need(std::size_t n) {
    if (pos + n > bytes.size()) throw LoadError("truncated checkpoint " + where);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + pos, 8);
    pos += 8;
    return v;
  }
  void into(Tensor& t) {
    const std::uint64_t n = u64();
    if (n != t.size()) throw LoadError("checkpoint tensor size mismatch in " + where);
    need(n * sizeof(float));
    std::memcpy(t.data(), bytes.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
  }
  void into(nn::ParameterSet& set) {
    for (auto& p : set.params) into(p->value);
    for (auto* b : set.buffers) into(*b);
  }
};

std::string header(std::uint64_t tensors) {
  std::string out(kMagic, 4);
  out.append(reinterpret_cast<const char*>(&kVersion), 4);
  out.append(reinterpret_cast<const char*>(&tensors), 8);
  return out;
}

Reader open_checkpoint(const std::string& bytes, const fs::path& path, std::uint64_t expected) {
  Reader r{bytes, 0, path.string()};
  r.need(16);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw LoadError("not a checkpoint: " + path.string());
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kVersion) throw LoadError("unsupported checkpoint version in " + path.string());
  r.pos = 8;
  if (r.u64() != expected) throw LoadError("checkpoint tensor count mismatch in " + path.string());
  return r;
}

fs::path meta_path(const fs::path& path) { return path.string() + ".json"; }

nlohmann::json read_meta(const fs::path& path, const char* kind) {
  if (!fs::exists(path)) throw LoadError("checkpoint not found: " + path.string());
  const fs::path meta = meta_path(path);
  if (!fs::exists(meta)) throw LoadError("checkpoint sidecar not found: " + meta.string());
  nlohmann::json j = io::read_json(meta);
  if (j.value("kind", std::string{}) != kind) {
    throw LoadError("checkpoint " + path.string() + " is not a " + kind);
  }
  return j;
}

}  // namespace

void save_classifier(Classifier& c, const fs::path& path) {
  const nn::ParameterSet set = c.parameters();
  std::string bytes = header(tensor_count(set));
  append_tensors(bytes, set);
  const nlohmann::json meta = {{"kind", "classifier"},
                               {"spec", c.spec()},
                               {"input_size", c.input_size()},
                               {"seed", c.seed()},
                               {"checksum", hex64(set.checksum())},
                               {"fingerprint", hex64(fnv1a(nlohmann::json(c.spec()).dump() +
                                                           std::to_string(c.seed())))}};
  io::write_file_atomic(path, bytes);
  io::write_json(meta_path(path), meta);
}

Classifier load_classifier(const fs::path& path) {
  const nlohmann::json meta = read_meta(path, "classifier");
  Classifier c(meta.at("spec").get<ClassifierSpec>(), meta.at("input_size").get<int>(),
               meta.at("seed").get<std::uint64_t>());
  nn::ParameterSet set = c.parameters();
  const std::string bytes = io::read_file(path);
  Reader r = open_checkpoint(bytes, path, tensor_count(set));
  r.into(set);
  return c;
}

void save_bundle(ExplainerBundle& b, const fs::path& path) {
  nn::ParameterSet all;
  all.append(b.classifier.parameters());
  all.append(b.g_plus.parameters());
  all.append(b.g_minus.parameters());
  all.append(b.d_plus.parameters());
  all.append(b.d_minus.parameters());
  std::string bytes = header(tensor_count(all));
  append_tensors(bytes, all);
  const nlohmann::json meta = {{"kind", "explainer_bundle"},
                               {"classifier_spec", b.classifier.spec()},
                               {"classifier_seed", b.classifier.seed()},
                               {"generator_spec", b.g_plus.spec()},
                               {"discriminator_spec", b.d_plus.spec()},
                               {"input_size", b.input_size()},
                               {"seed", b.seed},
                               {"trained", b.trained},
                               {"classifier_checksum", hex64(b.classifier.parameters().checksum())},
                               {"fingerprint", b.fingerprint()}};
  io::write_file_atomic(path, bytes);
  io::write_json(meta_path(path), meta);
}

ExplainerBundle load_bundle(const fs::path& path) {
  const nlohmann::json meta = read_meta(path, "explainer_bundle");
  const int size = meta.at("input_size").get<int>();
  Classifier c(meta.at("classifier_spec").get<ClassifierSpec>(), size,
               meta.at("classifier_seed").get<std::uint64_t>());
  ExplainerBundle b = make_bundle(std::move(c), meta.at("generator_spec").get<GeneratorSpec>(),
                                  meta.at("discriminator_spec").get<DiscriminatorSpec>(),
                                  meta.at("seed").get<std::uint64_t>());
  nn::ParameterSet all;
  all.append(b.classifier.parameters());
  all.append(b.g_plus.parameters());
  all.append(b.g_minus.parameters());
  all.append(b.d_plus.parameters());
  all.append(b.d_minus.parameters());
  const std::string bytes = io::read_file(path);
  Reader r = open_checkpoint(bytes, path, tensor_count(all));
  r.into(all);
  b.trained = meta.value("trained", false);
  if (b.fingerprint() != meta.value("fingerprint", std::string{})) {
    throw LoadError("bundle fingerprint mismatch in " + path.string());
  }
  return b;
}

}  // namespace cfexplain
