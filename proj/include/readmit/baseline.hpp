#ifndef READMIT_BASELINE_HPP
#define READMIT_BASELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "readmit/error.hpp"
#include "readmit/io.hpp"
#include "readmit/metrics.hpp"
#include "readmit/rng.hpp"

namespace readmit {

// ---------------------------------------------------------------------------
// TF-IDF

struct TfidfModel {
  std::vector<std::string> features;  // column order = selection rank
  std::vector<std::size_t> df;        // aligned with features
  std::size_t n_docs = 0;
  std::unordered_map<std::string, std::uint32_t> index;

  std::size_t size() const { return features.size(); }

  /// ln((1 + N) / (1 + df)) + 1
  double idf(std::size_t column) const {
    return std::log(static_cast<double>(1 + n_docs) / static_cast<double>(1 + df[column])) + 1.0;
  }

  void rebuild_index() {
    index.clear();
    for (std::size_t i = 0; i < features.size(); ++i) index.emplace(features[i], static_cast<std::uint32_t>(i));
  }
};

/// Sparse row with strictly increasing column indices.
struct SparseVector {
  std::vector<std::uint32_t> idx;
  std::vector<double> val;

  double at(std::uint32_t column) const {
    auto it = std::lower_bound(idx.begin(), idx.end(), column);
    if (it == idx.end() || *it != column) return 0.0;
    return val[static_cast<std::size_t>(it - idx.begin())];
  }

  bool operator==(const SparseVector&) const = default;
};

/// Keeps the n_feat terms with the highest document frequency (ties
/// lexicographic). Fewer distinct terms than n_feat keeps them all.
inline TfidfModel tfidf_fit(std::span<const std::vector<std::string>> docs, std::size_t n_feat) {
  if (docs.empty()) throw ArgumentError("tfidf_fit: empty corpus");
  if (n_feat == 0) throw ArgumentError("tfidf_fit: n_feat must be >= 1");
  std::unordered_map<std::string, std::size_t> df;
  for (const auto& doc : docs) {
    std::vector<std::string> uniq(doc);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (auto& t : uniq) ++df[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > n_feat) ranked.resize(n_feat);
  TfidfModel m;
  m.n_docs = docs.size();
  for (auto& [term, count] : ranked) {
    m.features.push_back(term);
    m.df.push_back(count);
  }
  m.rebuild_index();
  return m;
}

/// Raw count times smoothed idf, L2-normalized. Terms outside the feature
/// list are ignored; a document with no known terms maps to the zero vector.
inline SparseVector tfidf_transform(std::span<const std::string> doc, const TfidfModel& model) {
  std::unordered_map<std::uint32_t, std::size_t> tf;
  for (const auto& t : doc) {
    auto it = model.index.find(t);
    if (it != model.index.end()) ++tf[it->second];
  }
  SparseVector v;
  for (const auto& [col, n] : tf) v.idx.push_back(col);
  std::sort(v.idx.begin(), v.idx.end());
  double norm2 = 0.0;
  for (auto col : v.idx) {
    double w = static_cast<double>(tf[col]) * model.idf(col);
    v.val.push_back(w);
    norm2 += w * w;
  }
  if (norm2 > 0.0) {
    double inv = 1.0 / std::sqrt(norm2);
    for (double& w : v.val) w *= inv;
  }
  return v;
}

inline json to_json(const TfidfModel& m) {
  return {{"features", m.features}, {"df", m.df}, {"n_docs", m.n_docs}};
}

inline TfidfModel tfidf_from_json(const json& j) {
  TfidfModel m;
  m.features = j.at("features").get<std::vector<std::string>>();
  m.df = j.at("df").get<std::vector<std::size_t>>();
  m.n_docs = j.at("n_docs").get<std::size_t>();
  if (m.df.size() != m.features.size()) throw FormatError("tfidf model: features and df differ in length");
  for (auto d : m.df) {
    if (d < 1 || d > m.n_docs) throw FormatError("tfidf model: df outside [1, n_docs]");
  }
  m.rebuild_index();
  return m;
}

inline std::uint64_t feature_list_hash(const TfidfModel& m) {
  std::string joined;
  for (const auto& f : m.features) {
    joined += f;
    joined.push_back('\n');
  }
  return fnv1a64(joined);
}

// ---------------------------------------------------------------------------
// decision trees and forests

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x[feature] <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::uint32_t count_neg = 0;
  std::uint32_t count_pos = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const TreeNode& leaf_for(const SparseVector& x) const {
    const TreeNode* n = &nodes.at(0);
    while (!n->is_leaf()) {
      n = &nodes[static_cast<std::size_t>(
          x.at(static_cast<std::uint32_t>(n->feature)) <= n->threshold ? n->left : n->right)];
    }
    return *n;
  }

  /// Positive-class fraction at the leaf reached by x.
  double predict_proba(const SparseVector& x) const {
    const TreeNode& leaf = leaf_for(x);
    return static_cast<double>(leaf.count_pos) / static_cast<double>(leaf.count_pos + leaf.count_neg);
  }

  bool operator==(const DecisionTree&) const = default;
};

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 0;           // 0 = unlimited
  std::size_t min_leaf = 1;
  std::size_t features_per_split = 0;  // 0 = ceil(sqrt(n_features))
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct RandomForest {
  std::vector<DecisionTree> trees;
  ForestConfig config;
  std::size_t n_features = 0;

  bool operator==(const RandomForest& o) const { return trees == o.trees && n_features == o.n_features; }
};

inline double gini(double pos, double total) {
  if (total <= 0.0) return 0.0;
  double p = pos / total;
  return 2.0 * p * (1.0 - p);
}

namespace detail {

struct SplitCandidate {
  bool found = false;
  std::uint32_t feature = 0;
  double threshold = 0.0;
  double decrease = -1.0;
  // weighted child impurity as num / den, compared exactly so that
  // mathematically tied splits always reach the tie rule
  unsigned __int128 num = 0, den = 1;
};

/// n/2 times the weighted child Gini impurity, as an exact fraction:
/// (pl(nl - pl) nr + pr(nr - pr) nl) / (nl nr).
inline std::pair<unsigned __int128, unsigned __int128> child_impurity(std::uint64_t nl, std::uint64_t pl,
                                                                      std::uint64_t nr, std::uint64_t pr) {
  using U = unsigned __int128;
  return {U(pl) * (nl - pl) * nr + U(pr) * (nr - pr) * nl, U(nl) * nr};
}

class TreeBuilder {
 public:
  TreeBuilder(std::span<const SparseVector> x, std::span<const bool> y, std::size_t n_features,
              const ForestConfig& cfg, std::size_t mtry, std::uint64_t seed)
      : x_(x), y_(y), n_features_(n_features), cfg_(cfg), mtry_(mtry), rng_(seed), feature_pool_(n_features) {
    std::iota(feature_pool_.begin(), feature_pool_.end(), 0u);
  }

  DecisionTree build(std::vector<std::uint32_t> samples) {
    tree_.nodes.clear();
    grow(std::move(samples), 0);
    return std::move(tree_);
  }

 private:
  std::int32_t grow(std::vector<std::uint32_t> samples, std::size_t depth) {
    auto id = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    std::uint32_t pos = 0;
    for (auto s : samples) pos += y_[s];
    auto n = static_cast<std::uint32_t>(samples.size());
    tree_.nodes[id].count_pos = pos;
    tree_.nodes[id].count_neg = n - pos;

    bool stop = pos == 0 || pos == n || (cfg_.max_depth > 0 && depth >= cfg_.max_depth) ||
                samples.size() < 2 * cfg_.min_leaf;
    if (stop) return id;
    SplitCandidate best = find_split(samples);
    if (!best.found) return id;

    std::vector<std::uint32_t> left, right;
    for (auto s : samples) (x_[s].at(best.feature) <= best.threshold ? left : right).push_back(s);
    samples.clear();
    samples.shrink_to_fit();
    tree_.nodes[id].feature = static_cast<std::int32_t>(best.feature);
    tree_.nodes[id].threshold = best.threshold;
    std::int32_t l = grow(std::move(left), depth + 1);
    std::int32_t r = grow(std::move(right), depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  /// Draws candidate features without replacement until at least mtry have
  /// been drawn and one of them varies over the node (or none remain). The
  /// winner is the largest Gini decrease; ties go to the smaller feature
  /// index, then the smaller threshold.
  SplitCandidate find_split(const std::vector<std::uint32_t>& samples) {
    SplitCandidate best;
    const double n = static_cast<double>(samples.size());
    std::uint64_t total_pos = 0;
    for (auto s : samples) total_pos += y_[s];
    const double parent = gini(static_cast<double>(total_pos), n);

    std::vector<std::pair<double, bool>> column(samples.size());
    std::size_t drawn = 0;
    bool varying = false;
    while (drawn < n_features_ && (drawn < mtry_ || !varying)) {
      std::size_t j = drawn + rng_.below(static_cast<std::uint32_t>(n_features_ - drawn));
      std::swap(feature_pool_[drawn], feature_pool_[j]);
      std::uint32_t f = feature_pool_[drawn++];

      for (std::size_t i = 0; i < samples.size(); ++i) column[i] = {x_[samples[i]].at(f), y_[samples[i]]};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      varying = true;

      std::uint64_t left_pos = 0;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        left_pos += column[i].second;
        if (column[i].first == column[i + 1].first) continue;
        std::size_t nl = i + 1, nr = column.size() - nl;
        if (nl < cfg_.min_leaf || nr < cfg_.min_leaf) continue;
        auto [num, den] = child_impurity(nl, left_pos, nr, total_pos - left_pos);
        double threshold = 0.5 * (column[i].first + column[i + 1].first);
        if (threshold >= column[i + 1].first) threshold = column[i].first;
        bool better = !best.found;
        if (!better) {
          unsigned __int128 lhs = num * best.den, rhs = best.num * den;
          better = lhs < rhs ||
                   (lhs == rhs && (f < best.feature || (f == best.feature && threshold < best.threshold)));
        }
        if (better) {
          double child = 2.0 * static_cast<double>(num) / static_cast<double>(den) / n;
          best = {true, f, threshold, parent - child, num, den};
        }
      }
    }
    return best;
  }

  std::span<const SparseVector> x_;
  std::span<const bool> y_;
  std::size_t n_features_;
  const ForestConfig& cfg_;
  std::size_t mtry_;
  Pcg32 rng_;
  std::vector<std::uint32_t> feature_pool_;
  DecisionTree tree_;
};

}  // namespace detail

/// Bagged Gini trees. Tree t draws its bootstrap sample and its candidate
/// features from derive_seed(seed, {t}), so the thread count does not
/// change the result.
inline RandomForest rf_train(std::span<const SparseVector> x, std::span<const bool> y, std::size_t n_features,
                             const ForestConfig& config) {
  if (x.size() != y.size()) throw ArgumentError("rf_train: vectors and labels differ in length");
  if (x.size() < 2) throw ArgumentError("rf_train: need at least 2 samples");
  if (std::all_of(y.begin(), y.end(), [&](bool v) { return v == y[0]; })) {
    throw ArgumentError("rf_train: training labels contain a single class");
  }
  if (config.n_trees == 0) throw ArgumentError("rf_train: n_trees must be >= 1");
  if (config.min_leaf == 0) throw ArgumentError("rf_train: min_leaf must be >= 1");
  if (n_features == 0) throw ArgumentError("rf_train: no features");

  std::size_t mtry = config.features_per_split > 0
                         ? std::min(config.features_per_split, n_features)
                         : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_features))));
  RandomForest forest;
  forest.config = config;
  forest.n_features = n_features;
  forest.trees.resize(config.n_trees);

  auto build_tree = [&](std::size_t t) {
    std::uint64_t seed = derive_seed(config.seed, {t});
    Pcg32 boot(derive_seed(seed, {0}));
    std::vector<std::uint32_t> samples(x.size());
    if (config.bootstrap) {
      for (auto& s : samples) s = boot.below(static_cast<std::uint32_t>(x.size()));
    } else {
      std::iota(samples.begin(), samples.end(), 0u);
    }
    detail::TreeBuilder builder(x, y, n_features, config, mtry, derive_seed(seed, {1}));
    forest.trees[t] = builder.build(std::move(samples));
  };

  std::size_t workers = std::min(std::max<std::size_t>(config.threads, 1), config.n_trees);
  if (workers == 1) {
    for (std::size_t t = 0; t < config.n_trees; ++t) build_tree(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < config.n_trees; t += workers) build_tree(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  return forest;
}

/// Mean leaf positive fraction over trees; label is probability > 0.5.
inline std::vector<Prediction> rf_predict(std::span<const SparseVector> x, const RandomForest& forest) {
  std::vector<Prediction> out;
  out.reserve(x.size());
  for (const auto& v : x) {
    double sum = 0.0;
    for (const auto& t : forest.trees) sum += t.predict_proba(v);
    double p = sum / static_cast<double>(forest.trees.size());
    out.push_back({p, p > 0.5});
  }
  return out;
}

// ---------------------------------------------------------------------------
// feature-count sweep

struct SweepEntry {
  std::size_t n_feat = 0;
  std::size_t n_features_kept = 0;
  MetricReport validation;
};

struct SweepResult {
  TfidfModel tfidf;
  RandomForest forest;
  std::size_t best_n_feat = 0;
  double best_f1 = -1.0;
  std::vector<SweepEntry> log;
};

inline MetricReport evaluate_predictions(std::span<const Prediction> preds, std::span<const bool> truth,
                                         std::string model_tag) {
  std::unique_ptr<bool[]> p(new bool[preds.size()]);
  for (std::size_t i = 0; i < preds.size(); ++i) p[i] = preds[i].label;
  return report(confusion(std::span<const bool>(p.get(), preds.size()), truth), {}, std::move(model_tag));
}

/// Fits TF-IDF + forest for each feature count and keeps the configuration
/// with the highest validation F1 (ties: smaller feature count).
inline SweepResult sweep_features(std::span<const std::vector<std::string>> train_docs, std::span<const bool> train_y,
                                  std::span<const std::vector<std::string>> val_docs, std::span<const bool> val_y,
                                  std::vector<std::size_t> n_feat_list, const ForestConfig& config) {
  if (n_feat_list.empty()) throw ArgumentError("sweep_features: empty feature-count list");
  std::sort(n_feat_list.begin(), n_feat_list.end());
  SweepResult best;
  for (std::size_t n_feat : n_feat_list) {
    TfidfModel tfidf = tfidf_fit(train_docs, n_feat);
    std::vector<SparseVector> xt, xv;
    for (const auto& d : train_docs) xt.push_back(tfidf_transform(d, tfidf));
    for (const auto& d : val_docs) xv.push_back(tfidf_transform(d, tfidf));
    RandomForest forest = rf_train(xt, train_y, tfidf.size(), config);
    auto preds = rf_predict(xv, forest);
    MetricReport rep = evaluate_predictions(preds, val_y, "rf");
    best.log.push_back({n_feat, tfidf.size(), rep});
    if (rep.f1 > best.best_f1) {
      best.best_f1 = rep.f1;
      best.best_n_feat = n_feat;
      best.tfidf = std::move(tfidf);
      best.forest = std::move(forest);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// checkpoint

inline constexpr std::uint16_t kForestCheckpointVersion = 1;

/// "NCRF", u16 version, u32 header length, JSON header, then per tree its
/// nodes as {i32 feature, f64 threshold, i32 left, i32 right, u32 neg, u32 pos}.
inline std::string serialize_forest(const RandomForest& forest, std::uint64_t features_hash, json extra = {}) {
  json header = extra.is_object() ? extra : json::object();
  header["n_trees"] = forest.trees.size();
  header["max_depth"] = forest.config.max_depth;
  header["min_leaf"] = forest.config.min_leaf;
  header["features_per_split"] = forest.config.features_per_split;
  header["bootstrap"] = forest.config.bootstrap;
  header["seed"] = forest.config.seed;
  header["n_features"] = forest.n_features;
  header["feature_list_hash"] = hex64(features_hash);
  std::vector<std::size_t> sizes;
  for (const auto& t : forest.trees) sizes.push_back(t.nodes.size());
  header["node_counts"] = sizes;
  BinaryWriter w;
  write_container_header(w, "NCRF", kForestCheckpointVersion, header);
  for (const auto& t : forest.trees) {
    for (const auto& n : t.nodes) {
      w.put<std::int32_t>(n.feature);
      w.put<double>(n.threshold);
      w.put<std::int32_t>(n.left);
      w.put<std::int32_t>(n.right);
      w.put<std::uint32_t>(n.count_neg);
      w.put<std::uint32_t>(n.count_pos);
    }
  }
  return w.data();
}

struct ForestCheckpoint {
  RandomForest forest;
  std::string feature_list_hash;
  json header;
};

inline ForestCheckpoint deserialize_forest(std::string bytes, const std::string& source) {
  BinaryReader r(std::move(bytes), source);
  ForestCheckpoint ck;
  ck.header = read_container_header(r, "NCRF", kForestCheckpointVersion);
  std::vector<std::size_t> sizes;
  try {
    auto& c = ck.forest.config;
    c.n_trees = ck.header.at("n_trees").get<std::size_t>();
    c.max_depth = ck.header.at("max_depth").get<std::size_t>();
    c.min_leaf = ck.header.at("min_leaf").get<std::size_t>();
    c.features_per_split = ck.header.at("features_per_split").get<std::size_t>();
    c.bootstrap = ck.header.at("bootstrap").get<bool>();
    c.seed = ck.header.at("seed").get<std::uint64_t>();
    ck.forest.n_features = ck.header.at("n_features").get<std::size_t>();
    ck.feature_list_hash = ck.header.at("feature_list_hash").get<std::string>();
    sizes = ck.header.at("node_counts").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw FormatError(source + ": bad forest header: " + e.what());
  }
  if (sizes.size() != ck.forest.config.n_trees) throw FormatError(source + ": node_counts length != n_trees");
  constexpr std::size_t kNodeBytes = 28;
  std::size_t total = 0;
  for (std::size_t count : sizes) {
    if (count == 0) throw FormatError(source + ": empty tree");
    if (count > r.remaining() / kNodeBytes) throw FormatError(source + ": node_counts exceed file size");
    total += count;
  }
  if (total > r.remaining() / kNodeBytes || total * kNodeBytes != r.remaining()) {
    throw FormatError(source + ": node_counts do not match file size");
  }
  for (std::size_t count : sizes) {
    DecisionTree t;
    t.nodes.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      auto& n = t.nodes[i];
      n.feature = r.get<std::int32_t>();
      n.threshold = r.get<double>();
      n.left = r.get<std::int32_t>();
      n.right = r.get<std::int32_t>();
      n.count_neg = r.get<std::uint32_t>();
      n.count_pos = r.get<std::uint32_t>();
      // children always come after their parent, which also rules out cycles
      bool bad_child = !n.is_leaf() && (n.left <= static_cast<std::int64_t>(i) || n.right <= static_cast<std::int64_t>(i) ||
                                        static_cast<std::size_t>(n.left) >= count ||
                                        static_cast<std::size_t>(n.right) >= count);
      if (bad_child || static_cast<std::size_t>(std::max(n.feature, 0)) >= std::max<std::size_t>(ck.forest.n_features, 1) ||
          !std::isfinite(n.threshold) || (n.is_leaf() && std::uint64_t{n.count_neg} + n.count_pos == 0)) {
        throw FormatError(source + ": corrupt tree node");
      }
    }
    ck.forest.trees.push_back(std::move(t));
  }
  if (!r.at_end()) throw FormatError(source + ": trailing bytes after trees");
  return ck;
}

}  // namespace readmit

#endif  // READMIT_BASELINE_HPP
