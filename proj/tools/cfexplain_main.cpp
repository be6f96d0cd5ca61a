// cfexplain: train the classifier and the explainer, render relevance maps,
// and analyse user-study responses.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cfexplain/config.hpp"
#include "cfexplain/data.hpp"
#include "cfexplain/error.hpp"
#include "cfexplain/io.hpp"
#include "cfexplain/metrics.hpp"
#include "cfexplain/relevance.hpp"
#include "cfexplain/studystats.hpp"
#include "cfexplain/training.hpp"

namespace fs = std::filesystem;
using namespace cfexplain;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

// Thrown for problems the user fixes on the command line or in the config.
struct UsageError : Error {
  using Error::Error;
};

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out;
};

RunConfig resolve(const CommonOptions& o) {
  std::vector<std::string> sets = o.overrides;
  if (!o.out.empty()) sets.push_back("output_dir=" + o.out);
  try {
    return resolve_config(o.config_file.empty() ? std::nullopt : std::optional<fs::path>(o.config_file), sets);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

void prepare_output(const RunConfig& c, const std::string& command) {
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create " + c.output_dir + ": " + ec.message());
  io::write_json(fs::path(c.output_dir) / (command + "_config.json"), to_json(c));
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

int cmd_train_classifier(const CommonOptions& o) {
  const RunConfig c = resolve(o);
  prepare_output(c, "train_classifier");
  const auto samples = load_dataset(c);
  const DatasetSummary summary = summarize(samples);
  log_line("dataset: " + std::to_string(summary.n_total) + " images (" + std::to_string(summary.n_train_pos +
           summary.n_train_neg) + " train, " + std::to_string(summary.n_test_pos + summary.n_test_neg) + " test)");
  Classifier classifier = build_classifier(c.classifier, c.data.image_size, derive_seed(c.seed, 100));
  const ClassifierTrainResult r = train_classifier(classifier, samples, c.classifier_train);
  log_line("classifier: " + std::to_string(r.epochs_run) + " epochs, test accuracy " +
           std::to_string(r.test_accuracy));
  save_classifier(classifier, c.classifier_path());

  const fs::path out(c.output_dir);
  const MetricReport m = compute_metrics(r.test_labels, r.test_probs, c.threshold, c.n_boot, derive_seed(c.seed, 300));
  io::write_json(out / "classifier_metrics.json", m);
  io::write_file_atomic(out / "classifier_metrics.csv", to_csv(m));
  io::write_json(out / "classifier_training.json",
                 {{"dataset", summary}, {"epochs_run", r.epochs_run}, {"epoch_losses", r.epoch_losses},
                  {"test_accuracy", r.test_accuracy}, {"checkpoint", c.classifier_path().string()}});
  return 0;
}

int cmd_train_explainer(const CommonOptions& o) {
  const RunConfig c = resolve(o);
  if (!fs::exists(c.classifier_path())) {
    throw LoadError("classifier checkpoint not found: " + c.classifier_path().string() +
                    " (run train-classifier first or set classifier_checkpoint)");
  }
  prepare_output(c, "train_explainer");
  const auto samples = load_dataset(c);
  Classifier classifier = load_classifier(c.classifier_path());
  if (classifier.input_size() != c.data.image_size) {
    throw UsageError("classifier checkpoint expects " + std::to_string(classifier.input_size()) +
                     " px images but data.image_size is " + std::to_string(c.data.image_size));
  }
  ExplainerBundle bundle = make_bundle(std::move(classifier), c.generator, c.discriminator, derive_seed(c.seed, 101));

  const fs::path out(c.output_dir);
  std::ostringstream log;
  auto on_step = [&](const TrainRecord& rec) {
    log << nlohmann::json(rec).dump() << '\n';
    if (rec.probe) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d step %ld: C(x)=%.3f C(G+)=%.3f C(G-)=%.3f", rec.epoch + 1, rec.step,
                    rec.probe->mean_prob_original, rec.probe->mean_prob_plus, rec.probe->mean_prob_minus);
      log_line(buf);
    }
  };
  TrainLog train_log;
  try {
    train_log = train_explainer(bundle, samples, c.explainer_train, on_step);
  } catch (const TrainingError&) {
    io::write_file_atomic(out / "train_log.jsonl", log.str());
    throw;
  }
  io::write_file_atomic(out / "train_log.jsonl", log.str());
  save_bundle(bundle, c.bundle_path());

  auto test = select(samples, Split::kTest);
  if (test.empty()) test = select(samples, Split::kTrain);
  const auto images = images_of(test);
  const auto probs = transfer_probabilities(bundle, images);
  const TransferReport t = transfer_report(probs.original, probs.plus, probs.minus, c.n_boot, derive_seed(c.seed, 301));
  io::write_json(out / "transfer.json", t);
  io::write_file_atomic(out / "transfer.csv", to_csv(t));
  std::ostringstream per;
  per.precision(17);
  per << "id,label,prob_original,prob_plus,prob_minus\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    per << test[i]->id << ',' << test[i]->label << ',' << probs.original[i] << ',' << probs.plus[i] << ','
        << probs.minus[i] << '\n';
  }
  io::write_file_atomic(out / "transfer_samples.csv", per.str());
  io::write_json(out / "explainer_training.json",
                 {{"epochs_run", train_log.epochs_run}, {"converged", train_log.converged},
                  {"steps", train_log.records.size()}, {"checkpoint", c.bundle_path().string()}});
  char buf[160];
  std::snprintf(buf, sizeof buf, "transfer on %d images: C(x)=%.3f C(G+)=%.3f C(G-)=%.3f", t.n,
                t.mean_prob_original.estimate, t.mean_prob_plus.estimate, t.mean_prob_minus.estimate);
  log_line(buf);
  return 0;
}

int cmd_explain(const CommonOptions& o, const std::vector<std::string>& inputs, int from_test) {
  const RunConfig c = resolve(o);
  if (inputs.empty() && from_test <= 0) throw UsageError("explain: give image files or --from-test N");
  if (!fs::exists(c.bundle_path())) throw LoadError("explainer checkpoint not found: " + c.bundle_path().string());
  prepare_output(c, "explain");
  ExplainerBundle bundle = load_bundle(c.bundle_path());
  const fs::path dir = fs::path(c.output_dir) / "explanations";

  std::vector<Image> images;
  std::vector<std::string> ids;
  int failures = 0;
  std::set<std::string> used;
  auto unique_id = [&](std::string stem) {
    stem = file_stem_for(stem);
    std::string id = stem;
    for (int k = 2; used.count(id); ++k) id = stem + "_" + std::to_string(k);
    used.insert(id);
    return id;
  };
  for (const auto& in : inputs) {
    try {
      Image img = io::read_image(in);
      validate_unit_image(img, in.c_str());
      if (img.height != bundle.input_size()) {
        throw ArgumentError(in + ": size " + std::to_string(img.height) + " != " + std::to_string(bundle.input_size()));
      }
      images.push_back(std::move(img));
      ids.push_back(unique_id(fs::path(in).stem().string()));
    } catch (const Error& e) {
      ++failures;
      log_line(std::string("error: ") + e.what());
    }
  }
  if (from_test > 0) {
    const auto samples = load_dataset(c);
    auto test = select(samples, Split::kTest);
    test.resize(std::min<std::size_t>(test.size(), from_test));
    for (const auto* s : test) {
      images.push_back(s->image);
      ids.push_back(unique_id(s->id));
    }
  }
  nlohmann::json index = nlohmann::json::array();
  if (!images.empty()) {
    for (const auto& m : explain(bundle, images, ids)) {
      const ExportedFiles f = export_map(m, dir, c.gain);
      nlohmann::json entry = probabilities_json(m);
      entry["overlay"] = f.overlay.filename().string();
      entry["relevance"] = f.raw.filename().string();
      index.push_back(entry);
    }
  }
  io::write_json(dir / "index.json", index);
  log_line("explained " + std::to_string(images.size()) + " images, " + std::to_string(failures) + " failed");
  return failures > 0 ? kExitFailure : 0;
}

int cmd_study_report(const std::string& csv, const std::string& out) {
  const ResponseTable table = read_responses_csv(csv);
  const nlohmann::json report = study_report(table);
  const fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  io::write_json(dir / "study_report.json", report);
  const std::string text = study_summary_text(report);
  io::write_file_atomic(dir / "study_summary.txt", text);
  std::cout << text;
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_synth_responses(int raters, int items, const std::string& methods, std::uint64_t seed,
                        const std::string& out) {
  const ResponseTable t = generate_synthetic_responses(raters, items, split_list(methods), seed);
  io::write_file_atomic(out, to_csv(t));
  return 0;
}

int cmd_make_plan(int items, const std::string& methods, int variants, std::uint64_t seed, const std::string& out) {
  std::vector<std::string> ids;
  for (int i = 1; i <= items; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "item%02d", i);
    ids.push_back(buf);
  }
  io::write_json(out, make_questionnaire_plan(ids, split_list(methods), variants, seed));
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_file, "JSON run configuration");
  cmd->add_option("-s,--set", o.overrides, "Override a config field, e.g. explainer_train.max_epochs=20")
      ->take_all();
  cmd->add_option("-o,--out", o.out, "Output directory (sets output_dir)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual relevance maps for image classifiers"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* tc = app.add_subcommand("train-classifier", "Train the classifier and report test metrics");
  add_common(tc, common);
  auto* te = app.add_subcommand("train-explainer", "Train both generators and discriminators");
  add_common(te, common);
  auto* ex = app.add_subcommand("explain", "Write relevance overlays and raw maps");
  add_common(ex, common);
  std::vector<std::string> inputs;
  int from_test = 0;
  ex->add_option("images", inputs, "Input images (.png or raw float32 with sidecar)");
  ex->add_option("--from-test", from_test, "Also explain the first N test images of the configured dataset");
  auto* pc = app.add_subcommand("print-config", "Print the resolved configuration");
  add_common(pc, common);

  auto* sr = app.add_subcommand("study-report", "Analyse user-study responses");
  std::string csv, report_out = "study_report";
  sr->add_option("responses", csv, "Responses CSV")->required();
  sr->add_option("-o,--out", report_out, "Output directory");

  auto* sy = app.add_subcommand("synth-responses", "Write a synthetic user-study response table");
  int raters = 8, items = 24, variants = 2;
  std::uint64_t seed = 0;
  std::string methods = "proposed,lrp,gradcam,occlusion", out_file;
  sy->add_option("--raters", raters, "Number of raters");
  sy->add_option("--items", items, "Number of items");
  sy->add_option("--methods", methods, "Comma-separated method names");
  sy->add_option("--seed", seed);
  sy->add_option("-o,--out", out_file, "Output CSV")->required();

  auto* mp = app.add_subcommand("make-plan", "Write a randomized questionnaire plan");
  mp->add_option("--items", items, "Number of items");
  mp->add_option("--methods", methods, "Comma-separated method names");
  mp->add_option("--variants", variants);
  mp->add_option("--seed", seed);
  std::string plan_out;
  mp->add_option("-o,--out", plan_out, "Output JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*tc) return cmd_train_classifier(common);
    if (*te) return cmd_train_explainer(common);
    if (*ex) return cmd_explain(common, inputs, from_test);
    if (*pc) {
      std::cout << to_json(resolve(common)).dump(2) << '\n';
      return 0;
    }
    if (*sr) return cmd_study_report(csv, report_out);
    if (*sy) return cmd_synth_responses(raters, items, methods, seed, out_file);
    if (*mp) return cmd_make_plan(items, methods, variants, seed, plan_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
