// readmit: command-line driver for the readmission workflow.
//
//   readmit synth    --config c.json [--patients N] [--seed S]
//   readmit cohort   --config c.json [--task general|30day]
//   readmit train    --config c.json [--model cnn|rf|both]
//   readmit evaluate --config c.json [--checkpoint f] [--split test|train --allow-train-eval]
//   readmit explain  --config c.json [--checkpoint f]
//
// Exit codes: 0 ok, 1 usage, 2 data/format, 3 numeric failure.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "readmit/readmit.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> output_dir;
  std::optional<std::string> task;
  std::optional<std::string> model;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON configuration file");
  app->add_option("--set", c.sets, "override a config value, e.g. --set cnn.epochs=3");
  app->add_option("-o,--output-dir", c.output_dir, "output directory");
  app->add_option("--task", c.task, "general or 30day");
  app->add_option("--model", c.model, "cnn, rf or both");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

readmit::ExperimentConfig resolve(const Common& c, std::vector<std::string> extra) {
  std::vector<std::string> sets;
  auto quoted = [](const std::string& s) { return readmit::json(s).dump(); };
  if (c.output_dir) sets.push_back("paths.output_dir=" + quoted(*c.output_dir));
  if (c.task) sets.push_back("task=" + quoted(*c.task));
  if (c.model) sets.push_back("model=" + quoted(*c.model));
  if (c.seed) sets.push_back("seed=" + std::to_string(*c.seed));
  if (c.threads) {
    sets.push_back("cnn.threads=" + std::to_string(*c.threads));
    sets.push_back("rf.threads=" + std::to_string(*c.threads));
  }
  sets.insert(sets.end(), extra.begin(), extra.end());
  sets.insert(sets.end(), c.sets.begin(), c.sets.end());
  std::optional<std::filesystem::path> file;
  if (!c.config.empty()) file = c.config;
  return readmit::ExperimentConfig::load(file, sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Readmission prediction from discharge summaries"};
  app.require_subcommand(1);

  Common synth_c, cohort_c, train_c, eval_c, explain_c;
  std::optional<std::size_t> patients;
  std::vector<std::string> eval_ckpt, explain_ckpt;
  std::string eval_split = "test";
  bool allow_train_eval = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic admissions/notes corpus");
  add_common(synth, synth_c);
  synth->add_option("--patients", patients, "number of synthetic patients");

  auto* cohort = app.add_subcommand("cohort", "label admissions, balance and split");
  add_common(cohort, cohort_c);

  auto* train = app.add_subcommand("train", "train the CNN and/or random forest");
  add_common(train, train_c);

  auto* evaluate = app.add_subcommand("evaluate", "score checkpoints on the held-out split");
  add_common(evaluate, eval_c);
  evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint file(s); default from config");
  evaluate->add_option("--split", eval_split, "test or train")->check(CLI::IsMember({"test", "train"}));
  evaluate->add_flag("--allow-train-eval", allow_train_eval, "permit scoring the training split");

  auto* explain = app.add_subcommand("explain", "chi-square features of correct predictions");
  add_common(explain, explain_c);
  explain->add_option("--checkpoint", explain_ckpt, "checkpoint file(s); default from config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  auto paths = [](const std::vector<std::string>& v) {
    return std::vector<std::filesystem::path>(v.begin(), v.end());
  };

  try {
    if (synth->parsed()) {
      std::vector<std::string> extra;
      if (patients) extra.push_back("synth.n_patients=" + std::to_string(*patients));
      auto cfg = resolve(synth_c, extra);
      auto s = readmit::cmd_synth(cfg);
      std::printf("wrote %zu admissions, %zu notes to %s\n", s.admissions, s.notes, cfg.output_dir().c_str());
    } else if (cohort->parsed()) {
      auto cfg = resolve(cohort_c, {});
      auto s = readmit::cmd_cohort(cfg);
      for (const auto& w : s.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::fputs(readmit::format_stats_table(s.stats).c_str(), stdout);
      std::printf("balanced %s cohort: %zu samples (train %zu, test %zu, %zu folds)\n", cfg.tag().c_str(), s.balanced,
                  s.split.train.size(), s.split.test.size(), s.split.cv_folds.size());
    } else if (train->parsed()) {
      auto cfg = resolve(train_c, {});
      auto s = readmit::cmd_train(cfg, std::cerr);
      if (s.cnn_val_f1) std::printf("cnn best validation F1 %.4f\n", *s.cnn_val_f1);
      if (s.rf_val_f1) std::printf("rf best validation F1 %.4f\n", *s.rf_val_f1);
      for (const auto& p : s.checkpoints) std::printf("checkpoint %s\n", p.c_str());
    } else if (evaluate->parsed()) {
      auto cfg = resolve(eval_c, {});
      auto which = eval_split == "train" ? readmit::EvalSplit::kTrain : readmit::EvalSplit::kTest;
      readmit::cmd_evaluate(cfg, paths(eval_ckpt), which, allow_train_eval, std::cout);
    } else if (explain->parsed()) {
      auto cfg = resolve(explain_c, {});
      readmit::cmd_explain(cfg, paths(explain_ckpt), std::cout);
    }
  } catch (const readmit::ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const readmit::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const readmit::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::bad_alloc&) {
    std::fprintf(stderr, "error: out of memory\n");
    return 3;
  }
  return 0;
}
