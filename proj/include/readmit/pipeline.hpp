#ifndef READMIT_PIPELINE_HPP
#define READMIT_PIPELINE_HPP

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "readmit/baseline.hpp"
#include "readmit/cnn.hpp"
#include "readmit/cohort.hpp"
#include "readmit/error.hpp"
#include "readmit/explain.hpp"
#include "readmit/io.hpp"
#include "readmit/metrics.hpp"
#include "readmit/synth.hpp"
#include "readmit/textprep.hpp"

// End-to-end workflow: synth -> cohort -> train -> evaluate -> explain. Every
// step reads its inputs from files and writes its outputs to files under the
// configured output directory.

namespace readmit {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// configuration

inline json default_config() {
  return json::parse(R"({
    "paths": {"admissions": null, "notes": null, "embeddings": null, "stopwords": null, "output_dir": "out"},
    "task": "general",
    "model": "both",
    "seed": 42,
    "synth": {},
    "cohort": {"holdout_ratio": 0.1, "folds": 10},
    "textprep": {"k": 200, "n_max": 2000, "max_vocab": null},
    "cnn": {"widths": [1, 2, 3], "filters_per_width": 100, "epochs": 10, "batch_size": 50,
            "learning_rate": 0.001, "early_stop_patience": 3, "dropout_rate": 0.5,
            "fine_tune_embeddings": true, "cv_rounds": 10, "threads": 0},
    "rf": {"n_trees": 100, "max_depth": 0, "min_leaf": 1, "features_per_split": 0,
           "n_feat": [10000, 15000, 20000, 25000], "cv_rounds": 10, "threads": 0},
    "explain": {"k": 20, "mask": 2000, "split": "test"}
  })");
}

/// Parses "a.b.c=value"; the value is read as JSON when possible, otherwise
/// as a plain string.
inline void apply_override(json& config, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ArgumentError("override must look like key.path=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  std::string p = "/" + path;
  std::replace(p.begin(), p.end(), '.', '/');
  try {
    config[json::json_pointer(p)] = value;
  } catch (const json::exception& e) {
    throw ArgumentError("cannot apply override " + assignment + ": " + e.what());
  }
}

/// The resolved experiment configuration plus typed views of each section.
class ExperimentConfig {
 public:
  explicit ExperimentConfig(json raw = default_config()) : raw_(std::move(raw)) {
    // merge-patch drops keys set to null; restore them so equal settings hash equally
    const std::pair<const char*, const char*> nullable[] = {{"paths", "admissions"}, {"paths", "notes"},
                                                            {"paths", "embeddings"}, {"paths", "stopwords"},
                                                            {"textprep", "max_vocab"}, {"explain", "mask"}};
    for (const auto& [section, key] : nullable) {
      if (raw_.contains(section) && raw_[section].is_object() && !raw_[section].contains(key)) raw_[section][key] = nullptr;
    }
    validate();
  }

  static ExperimentConfig load(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
    json cfg = default_config();
    if (file) {
      json user;
      try {
        user = json::parse(read_file(*file));
      } catch (const json::exception& e) {
        throw FormatError(file->string() + ": " + e.what());
      }
      cfg.merge_patch(user);
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    return ExperimentConfig(std::move(cfg));
  }

  const json& raw() const { return raw_; }

  Task task() const { return parse_task(raw_.at("task").get<std::string>()); }
  std::string model() const { return raw_.at("model").get<std::string>(); }
  bool wants(const std::string& m) const { return model() == "both" || model() == m; }
  std::uint64_t seed() const { return raw_.at("seed").get<std::uint64_t>(); }

  fs::path output_dir() const { return raw_.at("/paths/output_dir"_json_pointer).get<std::string>(); }
  fs::path admissions_path() const { return path_or("admissions", output_dir() / "admissions.jsonl"); }
  fs::path notes_path() const { return path_or("notes", output_dir() / "notes.jsonl"); }
  std::optional<fs::path> embeddings_path() const { return optional_path("embeddings"); }
  std::optional<fs::path> stopwords_path() const { return optional_path("stopwords"); }

  fs::path out(const std::string& name) const { return output_dir() / name; }
  std::string tag() const { return std::string(to_string(task())); }

  SynthConfig synth() const {
    SynthConfig c;
    c.seed = seed();
    merge_from_json(c, raw_.at("synth"));
    c.validate();
    return c;
  }

  double holdout_ratio() const { return raw_.at("/cohort/holdout_ratio"_json_pointer).get<double>(); }
  std::size_t folds() const { return raw_.at("/cohort/folds"_json_pointer).get<std::size_t>(); }
  std::size_t embedding_dim() const { return raw_.at("/textprep/k"_json_pointer).get<std::size_t>(); }
  std::size_t n_max() const { return raw_.at("/textprep/n_max"_json_pointer).get<std::size_t>(); }
  std::optional<std::size_t> max_vocab() const {
    json v = raw_.at("textprep").value("max_vocab", json());
    return v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
  }

  CnnArchitecture cnn_arch() const {
    const auto& c = raw_.at("cnn");
    return {c.at("widths").get<std::vector<std::size_t>>(), c.at("filters_per_width").get<std::size_t>()};
  }

  TrainConfig cnn_train(std::uint64_t seed_value) const {
    const auto& c = raw_.at("cnn");
    TrainConfig t;
    t.epochs = c.at("epochs").get<std::size_t>();
    t.batch_size = c.at("batch_size").get<std::size_t>();
    t.learning_rate = c.at("learning_rate").get<double>();
    t.early_stop_patience = c.at("early_stop_patience").get<std::size_t>();
    t.dropout_rate = c.at("dropout_rate").get<double>();
    t.fine_tune_embeddings = c.at("fine_tune_embeddings").get<bool>();
    t.threads = resolve_threads(c.at("threads").get<std::size_t>());
    t.seed = seed_value;
    return t;
  }
  std::size_t cnn_cv_rounds() const { return raw_.at("/cnn/cv_rounds"_json_pointer).get<std::size_t>(); }

  ForestConfig forest(std::uint64_t seed_value) const {
    const auto& c = raw_.at("rf");
    ForestConfig f;
    f.n_trees = c.at("n_trees").get<std::size_t>();
    f.max_depth = c.at("max_depth").get<std::size_t>();
    f.min_leaf = c.at("min_leaf").get<std::size_t>();
    f.features_per_split = c.at("features_per_split").get<std::size_t>();
    f.threads = resolve_threads(c.at("threads").get<std::size_t>());
    f.seed = seed_value;
    return f;
  }
  std::vector<std::size_t> rf_feature_counts() const { return raw_.at("/rf/n_feat"_json_pointer).get<std::vector<std::size_t>>(); }
  std::size_t rf_cv_rounds() const { return raw_.at("/rf/cv_rounds"_json_pointer).get<std::size_t>(); }

  std::size_t explain_k() const { return raw_.at("/explain/k"_json_pointer).get<std::size_t>(); }
  std::optional<std::size_t> explain_mask() const {
    json v = raw_.at("explain").value("mask", json());
    return v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
  }
  std::string explain_split() const { return raw_.at("/explain/split"_json_pointer).get<std::string>(); }

  /// Hash of the configuration with filesystem paths and thread counts
  /// removed, so identical experiments in different directories agree.
  std::string hash() const {
    json h = raw_;
    h.erase("paths");
    h["cnn"].erase("threads");
    h["rf"].erase("threads");
    return hex64(fnv1a64(h.dump()));
  }

  json provenance(const std::string& command) const {
    return {{"command", command}, {"config_hash", hash()}, {"seed", seed()}};
  }

 private:
  static std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
  }

  fs::path path_or(const char* key, fs::path fallback) const {
    const auto& v = raw_.at("paths").value(key, json());
    return v.is_null() ? fallback : fs::path(v.get<std::string>());
  }

  std::optional<fs::path> optional_path(const char* key) const {
    const auto& v = raw_.at("paths").value(key, json());
    return v.is_null() ? std::nullopt : std::optional<fs::path>(v.get<std::string>());
  }

  void validate() const {
    try {
      task();
      auto m = model();
      if (m != "cnn" && m != "rf" && m != "both") throw ArgumentError("model must be cnn, rf or both");
      seed();
      output_dir();
      synth();
      if (!(holdout_ratio() > 0.0 && holdout_ratio() < 1.0)) throw ArgumentError("cohort.holdout_ratio must lie in (0, 1)");
      if (folds() < 2) throw ArgumentError("cohort.folds must be >= 2");
      if (embedding_dim() == 0) throw ArgumentError("textprep.k must be >= 1");
      max_vocab();
      auto arch = cnn_arch();
      if (arch.widths.empty() || arch.filters_per_width == 0) throw ArgumentError("cnn needs widths and filters");
      if (n_max() < *std::max_element(arch.widths.begin(), arch.widths.end())) {
        throw ArgumentError("textprep.n_max must be >= the widest filter");
      }
      cnn_train(0).validate();
      if (cnn_cv_rounds() == 0 || rf_cv_rounds() == 0) throw ArgumentError("cv_rounds must be >= 1");
      forest(0);
      if (rf_feature_counts().empty()) throw ArgumentError("rf.n_feat must list at least one feature count");
      explain_k();
      explain_mask();
      if (explain_split() != "test" && explain_split() != "train") throw ArgumentError("explain.split must be test or train");
    } catch (const json::exception& e) {
      throw ArgumentError(std::string("invalid configuration: ") + e.what());
    }
  }

  json raw_;
};

// ---------------------------------------------------------------------------
// shared helpers

inline std::string jsonl_provenance_line(const json& provenance) { return json{{"provenance", provenance}}.dump() + "\n"; }

inline std::string csv_provenance(const json& p) {
  return "provenance command=" + p.at("command").get<std::string>() + " config_hash=" + p.at("config_hash").get<std::string>() +
         " seed=" + std::to_string(p.at("seed").get<std::uint64_t>());
}

inline StopWordSet stopwords_for(const ExperimentConfig& cfg) {
  if (auto p = cfg.stopwords_path()) return StopWordSet::load(*p);
  return default_stopwords();
}

inline void ensure_output_dir(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir(), ec);
  if (ec) throw PathError("cannot create output directory '" + cfg.output_dir().string() + "': " + ec.message());
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw PathError(what + " not found: '" + p.string() + "'");
}

struct LoadedSplit {
  std::vector<CohortSample> samples;                      // whole cohort
  std::unordered_map<std::string, std::size_t> by_id;     // admission_id -> index
  DatasetSplit split;
  std::string split_hash;
};

inline fs::path split_path(const ExperimentConfig& cfg) { return cfg.out("split_" + cfg.tag() + ".json"); }

inline LoadedSplit load_split(const ExperimentConfig& cfg) {
  LoadedSplit ls;
  fs::path cohort = cfg.out("cohort.jsonl"), split = split_path(cfg);
  require_file(cohort, "cohort file");
  require_file(split, "split file");
  ls.samples = load_cohort(cohort);
  for (std::size_t i = 0; i < ls.samples.size(); ++i) ls.by_id[ls.samples[i].admission_id] = i;
  std::string text = read_file(split);
  try {
    ls.split = split_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw FormatError(split.string() + ": " + e.what());
  }
  ls.split_hash = hex64(fnv1a64(text));
  auto check = [&](const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
      if (!ls.by_id.count(id)) throw FormatError(split.string() + ": unknown admission_id " + id);
    }
  };
  check(ls.split.train);
  check(ls.split.test);
  return ls;
}

// ---------------------------------------------------------------------------
// synth

struct SynthSummary {
  std::size_t admissions = 0;
  std::size_t notes = 0;
};

inline SynthSummary cmd_synth(const ExperimentConfig& cfg) {
  ensure_output_dir(cfg);
  SynthOutput out = generate(cfg.synth());
  SynthFiles files = render(out, cfg.provenance("synth"));
  write_file(cfg.admissions_path(), files.admissions);
  write_file(cfg.notes_path(), files.notes);
  write_file(cfg.out("truth.jsonl"), files.truth);
  SynthSummary s{out.admissions.size(), 0};
  for (const auto& a : out.admissions) s.notes += a.notes.size();
  return s;
}

// ---------------------------------------------------------------------------
// cohort

struct CohortSummary {
  CohortStats stats;
  std::size_t balanced = 0;
  DatasetSplit split;
  std::vector<std::string> warnings;
};

inline std::string format_stats_table(const CohortStats& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-44s %14s %38s\n%-44s %14zu %38zu\n%-44s %14zu %38zu\n%-44s %14zu %38zu\n", "", "# Admissions",
                "# Admissions with discharge summaries", "All admissions", s.all_admissions, s.all_with_summary,
                "Admissions followed by readmissions", s.general_readmissions, s.general_with_summary,
                "Admissions followed by 30-day readmissions", s.readmissions_30day, s.readmissions_30day_with_summary);
  return buf;
}

inline CohortSummary cmd_cohort(const ExperimentConfig& cfg) {
  require_file(cfg.admissions_path(), "admissions file");
  std::optional<fs::path> notes;
  if (cfg.raw().at("paths").value("notes", json()).is_null()) {
    if (fs::exists(cfg.notes_path())) notes = cfg.notes_path();
  } else {
    require_file(cfg.notes_path(), "notes file");
    notes = cfg.notes_path();
  }
  auto admissions = load_admissions(cfg.admissions_path(), notes);
  CohortBuild build = build_cohort(admissions);
  if (build.samples.empty()) throw ValidationError("cohort is empty: no heart-failure admission has a discharge summary");

  CohortSummary summary;
  summary.stats = build.stats;
  ensure_output_dir(cfg);
  json prov = cfg.provenance("cohort");
  std::string lines = jsonl_provenance_line(prov);
  for (const auto& s : build.samples) lines += to_json(s).dump() + "\n";
  write_file(cfg.out("cohort.jsonl"), lines);
  json stats = to_json(build.stats);
  stats["provenance"] = prov;
  write_file(cfg.out("stats.json"), stats.dump(2) + "\n");

  // the statistics stand on their own; only the split needs both classes
  std::size_t positives = 0;
  for (const auto& s : build.samples) positives += label_of(s, cfg.task());
  if (positives == 0 || positives == build.samples.size()) {
    fs::remove(split_path(cfg));
    throw ValidationError("cohort has no " + std::string(positives == 0 ? "positive" : "negative") + " " + cfg.tag() +
                          " samples; wrote stats.json but cannot balance or split");
  }
  auto balanced = balance_undersample(build.samples, cfg.task(), derive_seed(cfg.seed(), {1}), &summary.warnings);
  summary.balanced = balanced.size();
  summary.split = make_split(balanced, cfg.task(), cfg.holdout_ratio(), cfg.folds(), cfg.seed());

  json split = to_json(summary.split);
  split["task"] = cfg.tag();
  split["provenance"] = prov;
  write_file(split_path(cfg), split.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
  std::optional<double> cnn_val_f1;
  std::optional<double> rf_val_f1;
  std::vector<fs::path> checkpoints;
};

inline fs::path cnn_checkpoint_path(const ExperimentConfig& cfg) { return cfg.out("cnn_" + cfg.tag() + ".ncnm"); }
inline fs::path rf_checkpoint_path(const ExperimentConfig& cfg) { return cfg.out("rf_" + cfg.tag() + ".ncrf"); }
inline fs::path tfidf_path(const ExperimentConfig& cfg) { return cfg.out("rf_" + cfg.tag() + "_tfidf.json"); }

namespace detail {

struct FoldView {
  std::vector<std::size_t> train;  // indices into the cohort
  std::vector<std::size_t> val;
};

inline FoldView fold_view(const LoadedSplit& ls, std::size_t round) {
  FoldView v;
  const auto& folds = ls.split.cv_folds;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    for (const auto& id : folds[f]) (f == round ? v.val : v.train).push_back(ls.by_id.at(id));
  }
  return v;
}

inline std::vector<bool> labels_for(const LoadedSplit& ls, std::span<const std::size_t> idx, Task task) {
  std::vector<bool> out;
  for (auto i : idx) out.push_back(label_of(ls.samples[i], task));
  return out;
}

/// std::vector<bool> has no contiguous storage; this is a span-able copy.
struct BoolArray {
  explicit BoolArray(const std::vector<bool>& v) : data(new bool[v.size()]), size(v.size()) {
    for (std::size_t i = 0; i < v.size(); ++i) data[i] = v[i];
  }
  std::span<const bool> span() const { return {data.get(), size}; }
  std::unique_ptr<bool[]> data;
  std::size_t size;
};

}  // namespace detail

inline double train_cnn_stage(const ExperimentConfig& cfg, const LoadedSplit& ls, std::ostream& log) {
  const Task task = cfg.task();
  StopWordSet stop = stopwords_for(cfg);
  std::vector<std::vector<std::string>> train_tokens;
  std::unordered_map<std::size_t, std::size_t> token_row;
  for (const auto& id : ls.split.train) {
    std::size_t i = ls.by_id.at(id);
    token_row[i] = train_tokens.size();
    train_tokens.push_back(tokenize(ls.samples[i].note_text, stop));
  }
  Vocabulary vocab = build_vocab(train_tokens, cfg.max_vocab());
  std::uint64_t emb_seed = derive_seed(cfg.seed(), {10});
  EmbeddingTable emb = cfg.embeddings_path() ? load_embeddings(*cfg.embeddings_path(), vocab, cfg.embedding_dim(), emb_seed)
                                             : random_embeddings(vocab, cfg.embedding_dim(), emb_seed);

  EncodedDataset cache;
  cache.n_max = cfg.n_max();
  std::unordered_map<std::size_t, LabeledNote> encoded;
  for (const auto& id : ls.split.train) {
    std::size_t i = ls.by_id.at(id);
    LabeledNote ln{encode(train_tokens[token_row[i]], vocab, cfg.n_max()), label_of(ls.samples[i], task)};
    cache.notes.push_back(ln.note);
    cache.labels.push_back(ln.label);
    encoded.emplace(i, std::move(ln));
  }
  write_file(cfg.out("encoded_train_" + cfg.tag() + ".ncnn"), serialize_encoded(cache));

  json prov = cfg.provenance("train");
  std::string log_lines = jsonl_provenance_line(prov);
  std::optional<TrainResult> best;
  std::size_t best_round = 0;
  std::size_t rounds = std::min(cfg.cnn_cv_rounds(), ls.split.cv_folds.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    auto view = detail::fold_view(ls, r);
    std::vector<LabeledNote> tr, va;
    for (auto i : view.train) tr.push_back(encoded.at(i));
    for (auto i : view.val) va.push_back(encoded.at(i));
    TrainConfig tc = cfg.cnn_train(derive_seed(cfg.seed(), {20, r}));
    TrainResult res = train(tr, va, emb, cfg.cnn_arch(), tc, [&](const EpochLog& e) {
      json j = to_json(e);
      j["round"] = r;
      log_lines += j.dump() + "\n";
      log << "[cnn] round " << r << " epoch " << e.epoch << " loss " << e.train_loss << " val_f1 " << e.validation.f1 << "\n";
    });
    if (!best || res.best_f1 > best->best_f1) {
      best = std::move(res);
      best_round = r;
    }
  }
  write_file(cfg.out("cnn_" + cfg.tag() + "_log.jsonl"), log_lines);

  json header = {{"task", cfg.tag()},         {"provenance", prov},
                 {"split_hash", ls.split_hash}, {"cv_round", best_round},
                 {"best_epoch", best->best_epoch}, {"val_f1", best->best_f1},
                 {"config", cfg.raw().at("cnn")}};
  header["config"].erase("threads");
  write_file(cnn_checkpoint_path(cfg), serialize_cnn(best->model, vocab, cfg.n_max(), header));
  return best->best_f1;
}

inline double train_rf_stage(const ExperimentConfig& cfg, const LoadedSplit& ls, std::ostream& log) {
  const Task task = cfg.task();
  StopWordSet stop = stopwords_for(cfg);
  std::unordered_map<std::size_t, std::vector<std::string>> tokens;
  for (const auto& id : ls.split.train) {
    std::size_t i = ls.by_id.at(id);
    tokens.emplace(i, tokenize(ls.samples[i].note_text, stop));
  }
  json prov = cfg.provenance("train");
  std::string sweep_lines = jsonl_provenance_line(prov);
  std::optional<SweepResult> best;
  std::size_t best_round = 0;
  std::size_t rounds = std::min(cfg.rf_cv_rounds(), ls.split.cv_folds.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    auto view = detail::fold_view(ls, r);
    std::vector<std::vector<std::string>> td, vd;
    for (auto i : view.train) td.push_back(tokens.at(i));
    for (auto i : view.val) vd.push_back(tokens.at(i));
    detail::BoolArray ty(detail::labels_for(ls, view.train, task)), vy(detail::labels_for(ls, view.val, task));
    SweepResult res = sweep_features(td, ty.span(), vd, vy.span(), cfg.rf_feature_counts(),
                                     cfg.forest(derive_seed(cfg.seed(), {30, r})));
    for (const auto& e : res.log) {
      json j = {{"round", r},
                {"n_feat", e.n_feat},
                {"n_features_kept", e.n_features_kept},
                {"val_precision", e.validation.precision},
                {"val_recall", e.validation.recall},
                {"val_f1", e.validation.f1}};
      sweep_lines += j.dump() + "\n";
      log << "[rf] round " << r << " n_feat " << e.n_feat << " val_f1 " << e.validation.f1 << "\n";
    }
    if (!best || res.best_f1 > best->best_f1) {
      best = std::move(res);
      best_round = r;
    }
  }
  write_file(cfg.out("rf_" + cfg.tag() + "_sweep.jsonl"), sweep_lines);

  json tf = to_json(best->tfidf);
  tf["provenance"] = prov;
  write_file(tfidf_path(cfg), tf.dump() + "\n");
  json header = {{"task", cfg.tag()},
                 {"provenance", prov},
                 {"split_hash", ls.split_hash},
                 {"cv_round", best_round},
                 {"n_feat", best->best_n_feat},
                 {"val_f1", best->best_f1}};
  write_file(rf_checkpoint_path(cfg), serialize_forest(best->forest, feature_list_hash(best->tfidf), header));
  return best->best_f1;
}

/// Trains the configured model(s) on the training partition only; the test
/// ids of the split are never read.
inline TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  LoadedSplit ls = load_split(cfg);
  if (ls.split.train.empty()) throw ValidationError("split has no training samples");
  TrainSummary s;
  if (cfg.wants("cnn")) {
    s.cnn_val_f1 = train_cnn_stage(cfg, ls, log);
    s.checkpoints.push_back(cnn_checkpoint_path(cfg));
  }
  if (cfg.wants("rf")) {
    s.rf_val_f1 = train_rf_stage(cfg, ls, log);
    s.checkpoints.push_back(rf_checkpoint_path(cfg));
  }
  return s;
}

// ---------------------------------------------------------------------------
// evaluate / explain

enum class EvalSplit { kTest, kTrain };

struct ModelPredictions {
  std::string model;  // cnn | rf
  std::vector<std::size_t> sample_index;
  std::vector<Prediction> predictions;
};

/// Reads a checkpoint of either kind (by magic) and predicts the given samples.
inline ModelPredictions predict_with_checkpoint(const ExperimentConfig& cfg, const LoadedSplit& ls,
                                                const fs::path& checkpoint, std::span<const std::size_t> idx) {
  require_file(checkpoint, "checkpoint");
  std::string bytes = read_file(checkpoint);
  StopWordSet stop = stopwords_for(cfg);
  ModelPredictions mp;
  mp.sample_index.assign(idx.begin(), idx.end());
  auto check_header = [&](const json& header) {
    if (header.value("split_hash", std::string()) != ls.split_hash) {
      throw FormatError(checkpoint.string() + ": checkpoint was trained against a different split file");
    }
    if (header.value("task", std::string()) != cfg.tag()) {
      throw FormatError(checkpoint.string() + ": checkpoint task does not match configured task " + cfg.tag());
    }
  };
  if (bytes.rfind("NCNM", 0) == 0) {
    CnnCheckpoint ck = deserialize_cnn(std::move(bytes), checkpoint.string());
    check_header(ck.header);
    std::vector<EncodedNote> notes;
    for (auto i : idx) notes.push_back(encode(tokenize(ls.samples[i].note_text, stop), ck.vocab, ck.n_max));
    mp.model = "cnn";
    mp.predictions = predict(notes, ck.model);
  } else if (bytes.rfind("NCRF", 0) == 0) {
    ForestCheckpoint ck = deserialize_forest(std::move(bytes), checkpoint.string());
    check_header(ck.header);
    fs::path tf_path = checkpoint;
    tf_path.replace_extension();
    tf_path += "_tfidf.json";
    require_file(tf_path, "TF-IDF model");
    TfidfModel tfidf;
    try {
      tfidf = tfidf_from_json(json::parse(read_file(tf_path)));
    } catch (const json::exception& e) {
      throw FormatError(tf_path.string() + ": " + e.what());
    }
    if (hex64(feature_list_hash(tfidf)) != ck.feature_list_hash) {
      throw FormatError(tf_path.string() + ": feature list does not match the forest checkpoint");
    }
    std::vector<SparseVector> xs;
    for (auto i : idx) xs.push_back(tfidf_transform(tokenize(ls.samples[i].note_text, stop), tfidf));
    mp.model = "rf";
    mp.predictions = rf_predict(xs, ck.forest);
  } else {
    throw FormatError(checkpoint.string() + ": not a model checkpoint (unknown magic)");
  }
  return mp;
}

inline std::vector<std::size_t> split_indices(const LoadedSplit& ls, EvalSplit which) {
  std::vector<std::size_t> idx;
  for (const auto& id : which == EvalSplit::kTest ? ls.split.test : ls.split.train) idx.push_back(ls.by_id.at(id));
  return idx;
}

inline std::vector<fs::path> checkpoints_for(const ExperimentConfig& cfg) {
  std::vector<fs::path> out;
  if (cfg.wants("cnn")) out.push_back(cnn_checkpoint_path(cfg));
  if (cfg.wants("rf")) out.push_back(rf_checkpoint_path(cfg));
  return out;
}

/// Scores checkpoints on the held-out test partition. Scoring the training
/// partition requires allow_train_eval.
inline std::vector<MetricReport> cmd_evaluate(const ExperimentConfig& cfg, std::vector<fs::path> checkpoints,
                                              EvalSplit which, bool allow_train_eval, std::ostream& out) {
  if (which == EvalSplit::kTrain && !allow_train_eval) {
    throw ArgumentError("refusing to evaluate on the training split without --allow-train-eval");
  }
  LoadedSplit ls = load_split(cfg);
  if (checkpoints.empty()) checkpoints = checkpoints_for(cfg);
  auto idx = split_indices(ls, which);
  if (idx.empty()) throw ValidationError("evaluation split is empty");
  json prov = cfg.provenance("evaluate");
  std::vector<MetricReport> reports;
  out << format_table_header();
  for (const auto& ck : checkpoints) {
    ModelPredictions mp = predict_with_checkpoint(cfg, ls, ck, idx);
    std::vector<bool> truth = detail::labels_for(ls, idx, cfg.task());
    MetricReport rep = evaluate_predictions(mp.predictions, detail::BoolArray(truth).span(), mp.model);
    rep.task = cfg.tag();
    std::string suffix = mp.model + "_" + cfg.tag() + (which == EvalSplit::kTrain ? "_train" : "");
    json j = to_json(rep);
    j["split"] = which == EvalSplit::kTest ? "test" : "train";
    j["checkpoint"] = ck.filename().string();
    j["provenance"] = prov;
    write_file(cfg.out("metrics_" + suffix + ".json"), j.dump(2) + "\n");
    std::string lines = jsonl_provenance_line(prov);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      lines += json{{"admission_id", ls.samples[idx[i]].admission_id},
                    {"probability", mp.predictions[i].probability},
                    {"predicted", mp.predictions[i].label},
                    {"label", static_cast<bool>(truth[i])}}
                   .dump() +
               "\n";
    }
    write_file(cfg.out("predictions_" + suffix + ".jsonl"), lines);
    out << format_table_row(rep);
    reports.push_back(std::move(rep));
  }
  return reports;
}

struct ExplainResult {
  std::string model;
  std::size_t correct = 0;
  std::vector<FeatureScore> features;
  std::vector<FrequencyRow> frequencies;
};

/// Chi-square ranking and frequency contrast over the correctly predicted
/// samples of the configured split (test by default).
inline std::vector<ExplainResult> cmd_explain(const ExperimentConfig& cfg, std::vector<fs::path> checkpoints,
                                              std::ostream& out) {
  LoadedSplit ls = load_split(cfg);
  if (checkpoints.empty()) checkpoints = checkpoints_for(cfg);
  auto which = cfg.explain_split() == "train" ? EvalSplit::kTrain : EvalSplit::kTest;
  auto idx = split_indices(ls, which);
  StopWordSet stop = stopwords_for(cfg);
  json prov = cfg.provenance("explain");
  std::vector<ExplainResult> results;
  for (const auto& ck : checkpoints) {
    ModelPredictions mp = predict_with_checkpoint(cfg, ls, ck, idx);
    std::vector<ExplainSample> samples;
    std::vector<bool> predicted;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& s = ls.samples[idx[i]];
      samples.push_back({tokenize(s.note_text, stop), label_of(s, cfg.task())});
      predicted.push_back(mp.predictions[i].label);
    }
    auto correct = filter_correct(samples, detail::BoolArray(predicted).span());
    ExplainResult res;
    res.model = mp.model;
    res.correct = correct.size();
    bool has_pos = std::any_of(correct.begin(), correct.end(), [](const auto& s) { return s.label; });
    bool has_neg = std::any_of(correct.begin(), correct.end(), [](const auto& s) { return !s.label; });
    if (correct.empty()) {
      out << "[" << mp.model << "] no correctly predicted samples; nothing to explain\n";
    } else if (!has_pos || !has_neg) {
      out << "[" << mp.model << "] correctly predicted samples cover only one class; chi-square is undefined\n";
    } else {
      res.features = top_k_features(correct, cfg.explain_k());
      std::vector<std::string> terms;
      for (const auto& f : res.features) terms.push_back(f.term);
      res.frequencies = frequency_report(terms, correct, cfg.explain_mask());
      out << "[" << mp.model << "] top features over " << correct.size() << " correct samples:";
      for (const auto& f : res.features) out << " " << f.term;
      out << "\n";
    }
    std::string suffix = mp.model + "_" + cfg.tag();
    write_file(cfg.out("features_" + suffix + ".csv"), feature_csv(res.features, csv_provenance(prov)));
    write_file(cfg.out("frequency_" + suffix + ".csv"),
               frequency_csv(res.frequencies, cfg.explain_mask(), csv_provenance(prov)));
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace readmit

#endif  // READMIT_PIPELINE_HPP
