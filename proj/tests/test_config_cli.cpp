#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "cfexplain/config.hpp"
#include "cfexplain/error.hpp"
#include "cfexplain/io.hpp"

using namespace cfexplain;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("cfexplain_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(CFEXPLAIN_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

RunConfig tiny_run(const fs::path& out) {
  RunConfig c;
  c.seed = 5;
  c.output_dir = out.string();
  c.data.n_synthetic = 40;
  c.data.image_size = 32;
  c.classifier.blocks = {{4, 1}, {8, 2}, {8, 2}};
  c.generator.depth = 2;
  c.generator.convs_per_stage = 1;
  c.generator.stage_kernels = {4, 8, 8};
  c.discriminator.backbone = c.generator;
  c.discriminator.tap_stages = {1, 2};
  c.classifier_train.batch_size = 8;
  c.classifier_train.max_epochs = 2;
  c.explainer_train.batch_size = 7;
  c.explainer_train.max_epochs = 1;
  c.explainer_train.probe_size = 4;
  c.n_boot = 50;
  return c;
}

fs::path write_config(const RunConfig& c, const fs::path& path) {
  io::write_json(path, to_json(c));
  return path;
}

}  // namespace

TEST(Config, RoundTripAndDefaults) {
  const RunConfig d;
  EXPECT_EQ(to_json(run_config_from_json(to_json(d))), to_json(d));
  EXPECT_EQ(d.classifier_path(), fs::path("runs/default") / "classifier.cfxw");
  RunConfig e = d;
  e.bundle_checkpoint = "/x/b.cfxw";
  EXPECT_EQ(e.bundle_path(), fs::path("/x/b.cfxw"));
  EXPECT_NO_THROW(validate(d));
}

TEST(Config, StrictKeysAndTypes) {
  nlohmann::json j = to_json(RunConfig{});
  j["explainer_train"]["bogus"] = 1;
  try {
    run_config_from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("explainer_train.bogus"), std::string::npos) << e.what();
  }
  j = to_json(RunConfig{});
  j["n_boot"] = "many";
  EXPECT_THROW(run_config_from_json(j), ConfigError);
}

TEST(Config, OverridesTakePrecedence) {
  const fs::path d = temp_dir("override");
  RunConfig base;
  base.explainer_train.max_epochs = 7;
  base.seed = 1;
  write_config(base, d / "c.json");
  const RunConfig r = resolve_config(d / "c.json", {"explainer_train.max_epochs=3", "output_dir=elsewhere",
                                                     "explainer_train.optimizer.learning_rate=1e-3"});
  EXPECT_EQ(r.explainer_train.max_epochs, 3);
  EXPECT_EQ(r.seed, 1u);
  EXPECT_EQ(r.output_dir, "elsewhere");
  EXPECT_DOUBLE_EQ(r.explainer_train.optimizer.learning_rate, 1e-3);
  nlohmann::json j = to_json(RunConfig{});
  EXPECT_THROW(apply_override(j, "explainer_train.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
  try {
    resolve_config(std::nullopt, {"classifier_train.batch_size=1"});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("classifier_train.batch_size"), std::string::npos);
  }
}

TEST(Cli, UsageErrors) {
  const fs::path d = temp_dir("usage");
  EXPECT_EQ(run("--help", d / "log"), 0);
  EXPECT_NE(run("no-such-command", d / "log"), 0);
  EXPECT_EQ(run("print-config -s classifier_train.batch_size=1", d / "log"), 1);
  EXPECT_NE(slurp(d / "log").find("batch_size"), std::string::npos);
  EXPECT_EQ(run("print-config -s nonsense.field=2", d / "log"), 1);
  EXPECT_EQ(run("print-config -s seed=3", d / "log"), 0);
  EXPECT_NE(slurp(d / "log").find("\"seed\": 3"), std::string::npos);
}

TEST(Cli, StudyCommands) {
  const fs::path d = temp_dir("study");
  EXPECT_EQ(run("synth-responses --raters 8 --items 10 --methods ours,lrp,dtd --seed 1 -o " +
                    (d / "r.csv").string(), d / "log"), 0);
  EXPECT_EQ(run("study-report " + (d / "r.csv").string() + " -o " + (d / "rep").string(), d / "log"), 0);
  const auto report = io::read_json(d / "rep" / "study_report.json");
  for (const char* key : {"raw_means", "mean_ranks", "method_tests", "interobserver_rho", "kmo",
                          "general_factor", "order_effects"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_TRUE(fs::exists(d / "rep" / "study_summary.txt"));

  std::ofstream(d / "empty.csv").close();
  EXPECT_EQ(run("study-report " + (d / "empty.csv").string() + " -o " + (d / "rep2").string(), d / "log"), 2);
  EXPECT_EQ(run("make-plan --items 3 --methods x,y,z --seed 2 -o " + (d / "plan.json").string(), d / "log"), 0);
  EXPECT_EQ(io::read_json(d / "plan.json")["variants"].size(), 2u);
}

TEST(Cli, TrainExplainPipeline) {
  const fs::path d = temp_dir("pipeline");
  const fs::path cfg = write_config(tiny_run(d / "run"), d / "config.json");

  EXPECT_EQ(run("train-explainer -c " + cfg.string(), d / "log"), 2);  // no classifier yet
  EXPECT_NE(slurp(d / "log").find("classifier"), std::string::npos);

  ASSERT_EQ(run("train-classifier -c " + cfg.string(), d / "log"), 0) << slurp(d / "log");
  EXPECT_TRUE(fs::exists(d / "run" / "classifier.cfxw"));
  EXPECT_TRUE(fs::exists(d / "run" / "classifier_metrics.json"));
  EXPECT_TRUE(fs::exists(d / "run" / "train_classifier_config.json"));

  // Same seed, different directory: identical metrics.
  ASSERT_EQ(run("train-classifier -c " + cfg.string() + " -o " + (d / "again").string(), d / "log"), 0);
  EXPECT_EQ(slurp(d / "run" / "classifier_metrics.json"), slurp(d / "again" / "classifier_metrics.json"));

  ASSERT_EQ(run("train-explainer -c " + cfg.string(), d / "log"), 0) << slurp(d / "log");
  EXPECT_TRUE(fs::exists(d / "run" / "explainer.cfxw"));
  EXPECT_FALSE(fs::exists(d / "run" / "explainer.cfxw.tmp"));
  // 28 training images in batches of 7: four steps, one log line each.
  const std::string log = slurp(d / "run" / "train_log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);
  const auto transfer = io::read_json(d / "run" / "transfer.json");
  EXPECT_TRUE(transfer.contains("mean_prob_plus"));

  // Two inputs share a stem, one file is unreadable.
  fs::create_directories(d / "in" / "a");
  fs::create_directories(d / "in" / "b");
  io::write_png_gray(d / "in" / "a" / "x.png", Image(32, 32, 0.3));
  io::write_png_gray(d / "in" / "b" / "x.png", Image(32, 32, 0.6));
  io::write_png_gray(d / "in" / "y.png", Image(32, 32, 0.5));
  std::ofstream(d / "in" / "bad.png") << "not a png";
  const std::string ins = (d / "in" / "a" / "x.png").string() + " " + (d / "in" / "b" / "x.png").string() + " " +
                          (d / "in" / "y.png").string() + " " + (d / "in" / "bad.png").string();
  EXPECT_EQ(run("explain -c " + cfg.string() + " " + ins, d / "log"), 2);
  const fs::path ex = d / "run" / "explanations";
  for (const char* stem : {"x", "x_2", "y"}) {
    EXPECT_TRUE(fs::exists(ex / (std::string(stem) + "_overlay.png"))) << stem;
    EXPECT_TRUE(fs::exists(ex / (std::string(stem) + "_relevance.json"))) << stem;
  }
  EXPECT_EQ(io::read_json(ex / "index.json").size(), 3u);

  // Recorded probability agrees with a direct classifier call.
  Classifier c = load_classifier(d / "run" / "classifier.cfxw");
  const double direct = classify(c, io::read_png_gray(d / "in" / "y.png"));
  EXPECT_NEAR(io::read_json(ex / "y_probabilities.json")["prob_before"].get<double>(), direct, 1e-12);

  EXPECT_EQ(run("explain -c " + cfg.string() + " --from-test 2", d / "log"), 0) << slurp(d / "log");
}
