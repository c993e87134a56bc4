#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "readmit/pipeline.hpp"

using namespace readmit;
namespace fs = std::filesystem;

namespace {

json small_config(const fs::path& dir) {
  json c = default_config();
  c["paths"]["output_dir"] = dir.string();
  c["seed"] = 5;
  c["synth"] = {{"n_patients", 150}, {"min_admissions", 2}, {"max_admissions", 2}, {"min_note_tokens", 20},
                {"max_note_tokens", 40}, {"signal_probability", 0.9}};
  c["cohort"] = {{"holdout_ratio", 0.2}, {"folds", 3}};
  c["textprep"] = {{"k", 8}, {"n_max", 50}, {"max_vocab", nullptr}};
  c["cnn"]["filters_per_width"] = 4;
  c["cnn"]["epochs"] = 2;
  c["cnn"]["batch_size"] = 20;
  c["cnn"]["cv_rounds"] = 2;
  c["cnn"]["threads"] = 2;
  c["rf"]["n_trees"] = 10;
  c["rf"]["n_feat"] = {30, 60};
  c["rf"]["cv_rounds"] = 2;
  c["rf"]["threads"] = 2;
  c["explain"]["k"] = 5;
  return c;
}

// ctest runs each case in its own process, possibly in parallel
fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / (name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void run_all(const ExperimentConfig& cfg) {
  std::ostringstream sink;
  cmd_synth(cfg);
  cmd_cohort(cfg);
  cmd_train(cfg, sink);
  cmd_evaluate(cfg, {}, EvalSplit::kTest, false, sink);
  cmd_explain(cfg, {}, sink);
}

std::vector<std::string> artifact_names(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(READMIT_CLI) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fresh_dir("readmit_pipeline_a"));
    run_all(ExperimentConfig(small_config(*dir_)));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static fs::path* dir_;
};
fs::path* Pipeline::dir_ = nullptr;

}  // namespace

TEST_F(Pipeline, WritesEveryArtifact) {
  for (const char* name :
       {"admissions.jsonl", "notes.jsonl", "truth.jsonl", "cohort.jsonl", "split_general.json", "stats.json",
        "encoded_train_general.ncnn", "cnn_general.ncnm", "cnn_general_log.jsonl", "rf_general.ncrf",
        "rf_general_tfidf.json", "rf_general_sweep.jsonl", "metrics_cnn_general.json", "metrics_rf_general.json",
        "predictions_cnn_general.jsonl", "predictions_rf_general.jsonl", "features_cnn_general.csv",
        "features_rf_general.csv", "frequency_cnn_general.csv", "frequency_rf_general.csv"}) {
    EXPECT_TRUE(fs::exists(*dir_ / name)) << name;
  }
}

TEST_F(Pipeline, StatsMatchGeneratorTruth) {
  CohortStats expected;
  for_each_jsonl(*dir_ / "truth.jsonl", [&](const json& j, std::size_t) {
    auto t = truth_from_json(j);
    if (!t.heart_failure) return;
    expected.all_admissions++;
    expected.general_readmissions += t.label_general;
    expected.readmissions_30day += t.label_30day;
    if (!t.has_summary) return;
    expected.all_with_summary++;
    expected.general_with_summary += t.label_general;
    expected.readmissions_30day_with_summary += t.label_30day;
  });
  auto stats = json::parse(read_file(*dir_ / "stats.json"));
  EXPECT_EQ(stats_from_json(stats), expected);
  EXPECT_TRUE(stats.contains("provenance"));
}

TEST_F(Pipeline, SplitIsBalancedAndDisjoint) {
  auto split = json::parse(read_file(*dir_ / "split_general.json"));
  auto train = split.at("train").get<std::vector<std::string>>();
  auto test = split.at("test").get<std::vector<std::string>>();
  std::set<std::string> seen(train.begin(), train.end());
  for (const auto& id : test) EXPECT_FALSE(seen.count(id)) << id;
  EXPECT_EQ(split.at("cv_folds").size(), 3u);
  // 150 patients x 2 admissions, one positive per patient, balanced to 300
  EXPECT_EQ(train.size() + test.size(), 300u);
}

TEST_F(Pipeline, CheckpointsRecordSplitProvenance) {
  auto split_hash = hex64(fnv1a64(read_file(*dir_ / "split_general.json")));
  auto cnn = deserialize_cnn(read_file(*dir_ / "cnn_general.ncnm"), "cnn");
  auto rf = deserialize_forest(read_file(*dir_ / "rf_general.ncrf"), "rf");
  EXPECT_EQ(cnn.header.at("split_hash"), split_hash);
  EXPECT_EQ(rf.header.at("split_hash"), split_hash);
  EXPECT_EQ(cnn.header.at("task"), "general");
}

TEST_F(Pipeline, MetricsAndPredictionsAgree) {
  for (const char* model : {"cnn", "rf"}) {
    auto m = json::parse(read_file(*dir_ / ("metrics_" + std::string(model) + "_general.json")));
    auto rep = report_from_json(m);
    ConfusionMatrix cm;
    for_each_jsonl(*dir_ / ("predictions_" + std::string(model) + "_general.jsonl"), [&](const json& j, std::size_t) {
      bool p = j.at("predicted"), y = j.at("label");
      (p ? (y ? cm.tp : cm.fp) : (y ? cm.fn : cm.tn))++;
    });
    EXPECT_EQ(rep.counts, cm) << model;
    EXPECT_EQ(m.at("split"), "test");
  }
}

TEST_F(Pipeline, RerunElsewhereIsByteIdentical) {
  auto other = fresh_dir("readmit_pipeline_b");
  auto c = small_config(other);
  c["cnn"]["threads"] = 1;
  c["rf"]["threads"] = 3;
  run_all(ExperimentConfig(c));
  auto names = artifact_names(*dir_);
  ASSERT_EQ(names, artifact_names(other));
  for (const auto& n : names) EXPECT_EQ(read_file(*dir_ / n), read_file(other / n)) << n;
  fs::remove_all(other);
}

TEST_F(Pipeline, TrainSplitEvaluationNeedsExplicitFlag) {
  ExperimentConfig cfg(small_config(*dir_));
  std::ostringstream sink;
  EXPECT_THROW(cmd_evaluate(cfg, {}, EvalSplit::kTrain, false, sink), ArgumentError);
  auto reps = cmd_evaluate(cfg, {}, EvalSplit::kTrain, true, sink);
  EXPECT_EQ(reps.size(), 2u);
  EXPECT_TRUE(fs::exists(*dir_ / "metrics_cnn_general_train.json"));
  fs::remove(*dir_ / "metrics_cnn_general_train.json");
  fs::remove(*dir_ / "metrics_rf_general_train.json");
  fs::remove(*dir_ / "predictions_cnn_general_train.jsonl");
  fs::remove(*dir_ / "predictions_rf_general_train.jsonl");
}

TEST_F(Pipeline, CheckpointFromAnotherSplitIsRejected) {
  auto other = fresh_dir("readmit_pipeline_c");
  for (const char* f : {"admissions.jsonl", "notes.jsonl", "cnn_general.ncnm", "rf_general.ncrf", "rf_general_tfidf.json"}) {
    fs::copy_file(*dir_ / f, other / f);
  }
  auto c = small_config(other);
  c["seed"] = 6;  // different split
  ExperimentConfig cfg(c);
  cmd_cohort(cfg);
  std::ostringstream sink;
  EXPECT_THROW(cmd_evaluate(cfg, {}, EvalSplit::kTest, false, sink), FormatError);

  c["seed"] = 5;
  c["task"] = "30day";
  ExperimentConfig thirty(c);
  cmd_cohort(thirty);
  EXPECT_THROW(cmd_evaluate(thirty, {other / "cnn_general.ncnm"}, EvalSplit::kTest, false, sink), FormatError);
  fs::remove_all(other);
}

TEST(Config, OverridesAndValidation) {
  json c = default_config();
  apply_override(c, "cnn.epochs=3");
  apply_override(c, "task=30day");
  apply_override(c, "paths.output_dir=somewhere");
  ExperimentConfig cfg(c);
  EXPECT_EQ(cfg.raw()["cnn"]["epochs"], 3);
  EXPECT_EQ(cfg.task(), Task::kThirtyDay);
  EXPECT_EQ(cfg.output_dir(), fs::path("somewhere"));

  json bad = default_config();
  bad["task"] = "weekly";
  EXPECT_THROW(ExperimentConfig{bad}, ArgumentError);
  bad = default_config();
  bad["model"] = "svm";
  EXPECT_THROW(ExperimentConfig{bad}, ArgumentError);
  bad = default_config();
  bad["cnn"]["epochs"] = "ten";
  EXPECT_THROW(ExperimentConfig{bad}, ArgumentError);
  EXPECT_THROW(apply_override(c, "novalue"), ArgumentError);
}

TEST(Config, HashIgnoresPathsAndThreads) {
  json a = default_config(), b = default_config();
  b["paths"]["output_dir"] = "elsewhere";
  b["cnn"]["threads"] = 7;
  b["rf"]["threads"] = 3;
  EXPECT_EQ(ExperimentConfig(a).hash(), ExperimentConfig(b).hash());
  b["cnn"]["epochs"] = 11;
  EXPECT_NE(ExperimentConfig(a).hash(), ExperimentConfig(b).hash());
}

TEST(Commands, MissingInputsAreReported) {
  auto dir = fresh_dir("readmit_pipeline_missing");
  json c = small_config(dir);
  EXPECT_THROW(cmd_cohort(ExperimentConfig(c)), PathError);
  cmd_synth(ExperimentConfig(c));
  c["paths"]["notes"] = (dir / "no_such_notes.jsonl").string();
  EXPECT_THROW(cmd_cohort(ExperimentConfig(c)), PathError);
  c["paths"].erase("notes");
  EXPECT_THROW(cmd_train(ExperimentConfig(c)), PathError);  // no split yet

  // admissions without notes: nobody has a summary
  fs::remove(dir / "notes.jsonl");
  EXPECT_THROW(cmd_cohort(ExperimentConfig(c)), ValidationError);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  auto dir = fresh_dir("readmit_cli_codes");
  std::string out = " -o " + dir.string();
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("cohort" + out), 2);  // no admissions file
  EXPECT_EQ(run_cli("synth --patients 40 --set synth.min_admissions=2" + out), 0);
  EXPECT_EQ(run_cli("cohort --task weekly" + out), 1);
  EXPECT_EQ(run_cli("cohort" + out), 0);
  EXPECT_EQ(run_cli("evaluate --split train" + out), 1);
  write_file(dir / "broken.json", "{ not json");
  EXPECT_EQ(run_cli("cohort -c " + (dir / "broken.json").string()), 2);
  fs::remove_all(dir);
}

TEST(Commands, SingleClassCohortStillWritesStats) {
  auto dir = fresh_dir("readmit_pipeline_single");
  json c = small_config(dir);
  c["task"] = "30day";
  c["synth"]["readmit_30day_rate"] = 0.0;
  ExperimentConfig cfg(c);
  cmd_synth(cfg);
  EXPECT_THROW(cmd_cohort(cfg), ValidationError);
  auto stats = stats_from_json(json::parse(read_file(dir / "stats.json")));
  EXPECT_EQ(stats.readmissions_30day, 0u);
  EXPECT_EQ(stats.general_readmissions, 150u);
  EXPECT_FALSE(fs::exists(dir / "split_30day.json"));
  fs::remove_all(dir);
}

TEST(Config, ShippedConfigsLoad) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(READMIT_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(ExperimentConfig::load(e.path(), {})) << e.path();
    ++n;
  }
  EXPECT_GE(n, 2u);
  auto full = ExperimentConfig::load(fs::path(READMIT_CONFIG_DIR) / "full_scale.json", {});
  EXPECT_EQ(full.hash(), ExperimentConfig(default_config()).hash());
}

TEST(Config, NullInFileDisablesOptionalLimits) {
  auto dir = fresh_dir("readmit_cfg_null");
  write_file(dir / "c.json", R"({"textprep": {"max_vocab": 500}, "explain": {"mask": null}})");
  auto cfg = ExperimentConfig::load(dir / "c.json", {});
  EXPECT_EQ(cfg.max_vocab(), 500u);
  EXPECT_EQ(cfg.explain_mask(), std::nullopt);
  EXPECT_EQ(ExperimentConfig::load(dir / "c.json", {"textprep.max_vocab=null"}).max_vocab(), std::nullopt);
  fs::remove_all(dir);
}
