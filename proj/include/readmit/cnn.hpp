#ifndef READMIT_CNN_HPP
#define READMIT_CNN_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "readmit/error.hpp"
#include "readmit/io.hpp"
#include "readmit/metrics.hpp"
#include "readmit/rng.hpp"
#include "readmit/textprep.hpp"

namespace readmit {

// Convolutional text classifier: embedding lookup, one bank of filters per
// window width, ReLU, max-over-time pooling, dropout on the pooled vector,
// and a two-logit softmax layer.

enum class Mode { kTrain, kEval };

struct CnnArchitecture {
  std::vector<std::size_t> widths = {1, 2, 3};
  std::size_t filters_per_width = 100;
};

/// Every trainable array. Also used as the gradient type (same shapes).
struct CnnParameters {
  EmbeddingTable embedding;
  std::vector<std::vector<double>> filters;  // per width: f x h x k, row-major
  std::vector<std::vector<double>> biases;   // per width: f
  std::vector<double> dense_w;               // 2 x m, row-major
  std::vector<double> dense_b;               // 2

  /// Visits each parameter group in checkpoint order.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("embedding", std::span(self.embedding.values));
    for (std::size_t b = 0; b < self.filters.size(); ++b) {
      fn("filters[" + std::to_string(b) + "]", std::span(self.filters[b]));
      fn("biases[" + std::to_string(b) + "]", std::span(self.biases[b]));
    }
    fn("dense_w", std::span(self.dense_w));
    fn("dense_b", std::span(self.dense_b));
  }

  template <typename Fn>
  void for_each_group(Fn&& fn) { visit(*this, std::forward<Fn>(fn)); }
  template <typename Fn>
  void for_each_group(Fn&& fn) const { visit(*this, std::forward<Fn>(fn)); }

  bool operator==(const CnnParameters& o) const {
    return embedding.values == o.embedding.values && filters == o.filters && biases == o.biases &&
           dense_w == o.dense_w && dense_b == o.dense_b;
  }
};

struct CnnModel {
  CnnArchitecture arch;
  double dropout_rate = 0.5;
  CnnParameters params;

  std::size_t k() const { return params.embedding.dim; }
  std::size_t vocab_size() const { return params.embedding.rows; }
  std::size_t total_filters() const { return arch.filters_per_width * arch.widths.size(); }
  std::size_t max_width() const { return *std::max_element(arch.widths.begin(), arch.widths.end()); }
};

/// Zero-valued parameters with the model's shapes.
inline CnnParameters zeros_like(const CnnModel& model) {
  CnnParameters g;
  g.embedding = EmbeddingTable(model.vocab_size(), model.k());
  for (std::size_t h : model.arch.widths) {
    g.filters.emplace_back(model.arch.filters_per_width * h * model.k(), 0.0);
    g.biases.emplace_back(model.arch.filters_per_width, 0.0);
  }
  g.dense_w.assign(2 * model.total_filters(), 0.0);
  g.dense_b.assign(2, 0.0);
  return g;
}

/// Glorot-uniform filters and dense weights, zero biases; the embedding
/// table is copied in as the trainable starting point.
inline CnnModel init_model(const EmbeddingTable& embedding, const CnnArchitecture& arch,
                           double dropout_rate, std::uint64_t seed) {
  if (arch.widths.empty() || arch.filters_per_width == 0) {
    throw ArgumentError("architecture needs at least one width and one filter");
  }
  if (std::find(arch.widths.begin(), arch.widths.end(), 0u) != arch.widths.end()) {
    throw ArgumentError("filter widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ArgumentError("dropout rate must lie in [0, 1)");
  CnnModel model;
  model.arch = arch;
  model.dropout_rate = dropout_rate;
  model.params = zeros_like(CnnModel{arch, dropout_rate, {embedding, {}, {}, {}, {}}});
  model.params.embedding = embedding;

  Pcg32 rng(seed);
  const std::size_t k = embedding.dim, f = arch.filters_per_width;
  for (std::size_t b = 0; b < arch.widths.size(); ++b) {
    double fan_in = static_cast<double>(arch.widths[b] * k);
    double fan_out = static_cast<double>(arch.widths[b] * f);
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : model.params.filters[b]) w = rng.uniform(-limit, limit);
  }
  double limit = std::sqrt(6.0 / static_cast<double>(model.total_filters() + 2));
  for (double& w : model.params.dense_w) w = rng.uniform(-limit, limit);
  return model;
}

// ---------------------------------------------------------------------------
// primitive ops

/// Feature map of one filter over X (n x k): C_j = ReLU(<filter, X[j..j+h)> + bias).
inline std::vector<double> conv_forward(std::span<const double> x, std::size_t n, std::size_t k,
                                        std::span<const double> filter, std::size_t h, double bias) {
  if (x.size() != n * k || filter.size() != h * k) throw DimensionError("conv_forward: inconsistent shapes");
  if (h == 0 || n < h) {
    throw DimensionError("conv_forward: sequence length " + std::to_string(n) + " shorter than width " +
                         std::to_string(h));
  }
  std::vector<double> c(n - h + 1);
  for (std::size_t j = 0; j < c.size(); ++j) {
    double s = bias;
    const double* window = x.data() + j * k;
    for (std::size_t t = 0; t < h * k; ++t) s += filter[t] * window[t];
    c[j] = s > 0.0 ? s : 0.0;
  }
  return c;
}

struct PoolResult {
  double value = 0.0;
  std::size_t index = 0;
};

/// Maximum of the map; ties resolve to the lowest index.
inline PoolResult max_pool(std::span<const double> c) {
  if (c.empty()) throw DimensionError("max_pool: empty feature map");
  PoolResult r{c[0], 0};
  for (std::size_t j = 1; j < c.size(); ++j) {
    if (c[j] > r.value) r = {c[j], j};
  }
  return r;
}

// ---------------------------------------------------------------------------
// forward pass

/// Windows starting at or beyond the note's true length cover only PAD rows,
/// whose embedding is zero, so they all evaluate to ReLU(bias). The trace
/// stores the computed prefix plus that constant tail.
struct FeatureMap {
  std::vector<double> head;   // windows starting inside the note
  double tail_value = 0.0;    // value of every all-PAD window
  std::size_t length = 0;     // n - h + 1

  std::vector<double> expanded() const {
    std::vector<double> full(head);
    full.resize(length, tail_value);
    return full;
  }
};

struct ForwardTrace {
  std::vector<FeatureMap> maps;        // m maps, width-major
  std::vector<double> pooled;          // C-hat, before dropout
  std::vector<std::size_t> argmax;     // pooled position per filter
  std::vector<double> mask;            // dropout scale per filter (1 in eval)
  std::vector<double> z;               // pooled * mask
  std::array<double, 2> logits{};
  std::array<double, 2> probs{};

  std::vector<double> feature_map(std::size_t i) const { return maps.at(i).expanded(); }
};

namespace detail {

/// Real-token rows of the note followed by (max_width - 1) zero rows, so each
/// window is a contiguous slice.
inline std::vector<double> gather_rows(const EncodedNote& note, const EmbeddingTable& emb, std::size_t max_width) {
  const std::size_t k = emb.dim;
  std::vector<double> x((note.true_length + max_width - 1) * k, 0.0);
  for (std::size_t i = 0; i < note.true_length; ++i) {
    auto id = note.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= emb.rows) {
      throw DimensionError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(emb.rows));
    }
    if (id == Vocabulary::kPad) continue;
    auto row = emb.row(static_cast<std::size_t>(id));
    std::copy(row.begin(), row.end(), x.begin() + static_cast<std::ptrdiff_t>(i * k));
  }
  return x;
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

[[noreturn]] inline void report_non_finite(const CnnModel& model, const std::string& stage) {
  std::string where = "unknown location";
  bool found = false;
  model.params.for_each_group([&](const std::string& name, std::span<const double> values) {
    if (found) return;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        where = name + "[" + std::to_string(i) + "]";
        found = true;
        return;
      }
    }
  });
  throw NumericError("non-finite " + stage + "; first non-finite parameter: " + where);
}

}  // namespace detail

/// Forward pass for one note. In train mode an inverted-dropout mask seeded
/// by `seed` scales the pooled vector.
inline ForwardTrace forward(const EncodedNote& note, const CnnModel& model, Mode mode, std::uint64_t seed) {
  const std::size_t n = note.ids.size();
  const std::size_t k = model.k();
  const std::size_t f = model.arch.filters_per_width;
  const std::size_t max_h = model.max_width();
  if (n < max_h) {
    throw DimensionError("note length " + std::to_string(n) + " shorter than widest filter " + std::to_string(max_h));
  }
  const std::size_t len = note.true_length;
  std::vector<double> x = detail::gather_rows(note, model.params.embedding, max_h);

  ForwardTrace tr;
  const std::size_t m = model.total_filters();
  tr.maps.reserve(m);
  tr.pooled.reserve(m);
  tr.argmax.reserve(m);
  for (std::size_t b = 0; b < model.arch.widths.size(); ++b) {
    const std::size_t h = model.arch.widths[b];
    const std::size_t map_len = n - h + 1;
    const std::size_t computed = std::min(len, map_len);
    for (std::size_t j = 0; j < f; ++j) {
      const double* w = model.params.filters[b].data() + j * h * k;
      const double bias = model.params.biases[b][j];
      FeatureMap fm;
      fm.length = map_len;
      fm.head.resize(computed);
      PoolResult best{-1.0, 0};
      for (std::size_t p = 0; p < computed; ++p) {
        double s = bias + detail::dot(w, x.data() + p * k, h * k);
        double c = s > 0.0 ? s : 0.0;
        fm.head[p] = c;
        if (c > best.value) best = {c, p};
      }
      fm.tail_value = bias > 0.0 ? bias : 0.0;
      if (computed < map_len && fm.tail_value > best.value) best = {fm.tail_value, computed};
      tr.pooled.push_back(best.value);
      tr.argmax.push_back(best.index);
      tr.maps.push_back(std::move(fm));
    }
  }

  tr.mask.assign(m, 1.0);
  if (mode == Mode::kTrain && model.dropout_rate > 0.0) {
    Pcg32 rng(seed);
    const double keep = 1.0 - model.dropout_rate;
    for (double& s : tr.mask) s = rng.uniform01() < keep ? 1.0 / keep : 0.0;
  }
  tr.z.resize(m);
  for (std::size_t i = 0; i < m; ++i) tr.z[i] = tr.pooled[i] * tr.mask[i];

  for (std::size_t c = 0; c < 2; ++c) {
    tr.logits[c] = model.params.dense_b[c] + detail::dot(model.params.dense_w.data() + c * m, tr.z.data(), m);
  }
  if (!std::isfinite(tr.logits[0]) || !std::isfinite(tr.logits[1])) detail::report_non_finite(model, "logits");
  double mx = std::max(tr.logits[0], tr.logits[1]);
  double e0 = std::exp(tr.logits[0] - mx), e1 = std::exp(tr.logits[1] - mx);
  tr.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
  return tr;
}

// ---------------------------------------------------------------------------
// loss and gradients

struct LabeledNote {
  EncodedNote note;
  bool label = false;
};

namespace detail {

/// Gradient accumulator that tracks which embedding rows were written so it
/// can be cleared and merged without touching the whole table.
class GradientBuffer {
 public:
  explicit GradientBuffer(const CnnModel& model) : grad(zeros_like(model)), touched_flag_(model.vocab_size(), false) {}

  void clear() {
    for (auto& v : grad.filters) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : grad.biases) std::fill(v.begin(), v.end(), 0.0);
    std::fill(grad.dense_w.begin(), grad.dense_w.end(), 0.0);
    std::fill(grad.dense_b.begin(), grad.dense_b.end(), 0.0);
    for (auto id : touched_) {
      auto row = grad.embedding.row(id);
      std::fill(row.begin(), row.end(), 0.0);
      touched_flag_[id] = false;
    }
    touched_.clear();
    loss = 0.0;
  }

  std::span<double> embedding_row(std::size_t id) {
    if (!touched_flag_[id]) {
      touched_flag_[id] = true;
      touched_.push_back(id);
    }
    return grad.embedding.row(id);
  }

  /// this += other, in a fixed element order.
  void merge(const GradientBuffer& other) {
    auto add = [](std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    for (std::size_t b = 0; b < grad.filters.size(); ++b) {
      add(grad.filters[b], other.grad.filters[b]);
      add(grad.biases[b], other.grad.biases[b]);
    }
    add(grad.dense_w, other.grad.dense_w);
    add(grad.dense_b, other.grad.dense_b);
    std::vector<std::size_t> rows = other.touched_;
    std::sort(rows.begin(), rows.end());
    for (auto id : rows) {
      auto dst = embedding_row(id);
      auto src = other.grad.embedding.row(id);
      for (std::size_t d = 0; d < dst.size(); ++d) dst[d] += src[d];
    }
    loss += other.loss;
  }

  CnnParameters grad;
  double loss = 0.0;

 private:
  std::vector<std::size_t> touched_;
  std::vector<bool> touched_flag_;
};

/// Adds scale * d(-log p(label))/d(theta) for one example; returns the loss.
inline double accumulate_example(const LabeledNote& ex, const CnnModel& model, std::uint64_t seed, double scale,
                                 bool embedding_grad, GradientBuffer& out) {
  ForwardTrace tr = forward(ex.note, model, Mode::kTrain, seed);
  const std::size_t y = ex.label ? 1 : 0;
  double mx = std::max(tr.logits[0], tr.logits[1]);
  double lse = mx + std::log(std::exp(tr.logits[0] - mx) + std::exp(tr.logits[1] - mx));
  double loss = lse - tr.logits[y];

  const std::size_t m = model.total_filters();
  const std::size_t k = model.k();
  const std::size_t f = model.arch.filters_per_width;
  const std::size_t len = ex.note.true_length;
  std::array<double, 2> dlogit = {tr.probs[0] * scale, tr.probs[1] * scale};
  dlogit[y] -= scale;

  auto& g = out.grad;
  for (std::size_t c = 0; c < 2; ++c) {
    g.dense_b[c] += dlogit[c];
    double* gw = g.dense_w.data() + c * m;
    for (std::size_t i = 0; i < m; ++i) gw[i] += dlogit[c] * tr.z[i];
  }

  const std::vector<double>* x = nullptr;
  std::vector<double> rows;
  for (std::size_t b = 0, i = 0; b < model.arch.widths.size(); ++b) {
    const std::size_t h = model.arch.widths[b];
    for (std::size_t j = 0; j < f; ++j, ++i) {
      // d loss / d pooled_i through dropout; zero when ReLU was inactive.
      if (tr.pooled[i] <= 0.0 || tr.mask[i] == 0.0) continue;
      double dz = dlogit[0] * model.params.dense_w[i] + dlogit[1] * model.params.dense_w[m + i];
      double dpre = dz * tr.mask[i];
      g.biases[b][j] += dpre;
      const std::size_t pos = tr.argmax[i];
      if (pos >= len) continue;  // all-PAD window: only the bias sees it
      if (x == nullptr) {
        rows = gather_rows(ex.note, model.params.embedding, model.max_width());
        x = &rows;
      }
      double* gf = g.filters[b].data() + j * h * k;
      const double* window = x->data() + pos * k;
      for (std::size_t t = 0; t < h * k; ++t) gf[t] += dpre * window[t];
      if (!embedding_grad) continue;
      const double* w = model.params.filters[b].data() + j * h * k;
      for (std::size_t r = 0; r < h && pos + r < len; ++r) {
        auto id = ex.note.ids[pos + r];
        if (id == Vocabulary::kPad) continue;
        auto ge = out.embedding_row(static_cast<std::size_t>(id));
        for (std::size_t d = 0; d < k; ++d) ge[d] += dpre * w[r * k + d];
      }
    }
  }
  return loss;
}

/// Splits the batch into a fixed number of contiguous chunks independent of
/// the thread count, so the summation order is the same however it runs.
inline constexpr std::size_t kGradientChunks = 8;

inline void batch_gradients(std::span<const LabeledNote* const> batch, const CnnModel& model, std::uint64_t seed,
                            bool embedding_grad, std::span<GradientBuffer> chunks, std::size_t threads) {
  const std::size_t n = batch.size();
  const std::size_t n_chunks = std::min(chunks.size(), n);
  const double scale = 1.0 / static_cast<double>(n);
  auto run_chunk = [&](std::size_t c) {
    GradientBuffer& buf = chunks[c];
    buf.clear();
    std::size_t lo = c * n / n_chunks, hi = (c + 1) * n / n_chunks;
    for (std::size_t i = lo; i < hi; ++i) {
      buf.loss += scale * accumulate_example(*batch[i], model, derive_seed(seed, {i}), scale, embedding_grad, buf);
    }
  };
  if (threads <= 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::size_t workers = std::min(threads, n_chunks);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < n_chunks; c += workers) run_chunk(c);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t c = 1; c < n_chunks; ++c) chunks[0].merge(chunks[c]);
}

}  // namespace detail

struct LossAndGradients {
  double loss = 0.0;  // mean negative log-likelihood over the batch
  CnnParameters gradients;
};

/// Mean negative log-likelihood of the batch and its exact gradient with
/// respect to every parameter. Example i uses dropout seed derive_seed(seed, {i}).
/// The embedding gradient is left zero when embedding_grad is false.
inline LossAndGradients loss_and_gradients(std::span<const LabeledNote> batch, const CnnModel& model,
                                           std::uint64_t seed, bool embedding_grad = true) {
  if (batch.empty()) throw ArgumentError("loss_and_gradients: empty batch");
  std::vector<const LabeledNote*> ptrs;
  for (const auto& ex : batch) ptrs.push_back(&ex);
  std::vector<detail::GradientBuffer> chunks(std::min(detail::kGradientChunks, batch.size()),
                                             detail::GradientBuffer(model));
  detail::batch_gradients(ptrs, model, seed, embedding_grad, chunks, 1);
  return {chunks[0].loss, std::move(chunks[0].grad)};
}

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const CnnModel& model, AdamConfig cfg) : cfg_(cfg), m_(zeros_like(model)), v_(zeros_like(model)) {}

  void step(CnnModel& model, const CnnParameters& grad, bool update_embedding) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<std::span<double>> params, ms, vs;
    std::vector<std::span<const double>> gs;
    model.params.for_each_group([&](const std::string&, std::span<double> s) { params.push_back(s); });
    m_.for_each_group([&](const std::string&, std::span<double> s) { ms.push_back(s); });
    v_.for_each_group([&](const std::string&, std::span<double> s) { vs.push_back(s); });
    grad.for_each_group([&](const std::string&, std::span<const double> s) { gs.push_back(s); });
    for (std::size_t gi = update_embedding ? 0 : 1; gi < params.size(); ++gi) {
      auto p = params[gi];
      auto m = ms[gi];
      auto v = vs[gi];
      auto g = gs[gi];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  CnnParameters m_, v_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// prediction and training

/// Eval-mode predictions; p = 0.5 exactly is negative.
inline std::vector<Prediction> predict(std::span<const EncodedNote> notes, const CnnModel& model) {
  std::vector<Prediction> out;
  out.reserve(notes.size());
  for (const auto& note : notes) {
    ForwardTrace tr = forward(note, model, Mode::kEval, 0);
    out.push_back({tr.probs[1], tr.probs[1] > tr.probs[0]});
  }
  return out;
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 50;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 3;  // 0 disables early stopping
  double dropout_rate = 0.5;
  bool fine_tune_embeddings = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t threads = 1;

  void validate() const {
    if (epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ArgumentError("dropout_rate must lie in [0, 1)");
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  MetricReport validation;
};

struct TrainResult {
  CnnModel model;  // parameters from the epoch with best validation F1
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_f1 = -1.0;
};

inline MetricReport evaluate_cnn(std::span<const LabeledNote> data, const CnnModel& model) {
  std::vector<EncodedNote> notes;
  std::vector<bool> truth;
  for (const auto& ex : data) {
    notes.push_back(ex.note);
    truth.push_back(ex.label);
  }
  auto preds = predict(notes, model);
  std::unique_ptr<bool[]> p(new bool[preds.size()]), t(new bool[truth.size()]);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p[i] = preds[i].label;
    t[i] = truth[i];
  }
  return report(confusion(std::span<const bool>(p.get(), preds.size()), std::span<const bool>(t.get(), truth.size())),
                {}, "cnn");
}

/// Mini-batch Adam on the mean negative log-likelihood. After every epoch
/// the validation F1 is measured and the best model (earliest on ties) is
/// kept; training stops after `early_stop_patience` epochs without
/// improvement. Initialization, shuffling and dropout all derive from
/// config.seed.
inline TrainResult train(std::span<const LabeledNote> train_set, std::span<const LabeledNote> validation,
                         const EmbeddingTable& embedding, const CnnArchitecture& arch, const TrainConfig& config,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  config.validate();
  if (train_set.empty() || validation.empty()) throw ArgumentError("train: empty training or validation set");

  CnnModel model = init_model(embedding, arch, config.dropout_rate, derive_seed(config.seed, {0}));
  Adam adam(model, {config.learning_rate, config.beta1, config.beta2, config.epsilon});
  std::vector<detail::GradientBuffer> chunks(std::min(detail::kGradientChunks, config.batch_size),
                                             detail::GradientBuffer(model));

  TrainResult result;
  result.model = model;
  std::vector<std::size_t> order(train_set.size());
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Pcg32 shuffler(derive_seed(config.seed, {1, epoch}));
    shuffler.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size, ++batch_index) {
      std::size_t hi = std::min(order.size(), lo + config.batch_size);
      std::vector<const LabeledNote*> batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(&train_set[order[i]]);
      detail::batch_gradients(batch, model, derive_seed(config.seed, {2, epoch, batch_index}),
                              config.fine_tune_embeddings, chunks, config.threads);
      if (!std::isfinite(chunks[0].loss)) {
        throw NumericError("training diverged (non-finite loss) in epoch " + std::to_string(epoch));
      }
      loss_sum += chunks[0].loss * static_cast<double>(hi - lo);
      adam.step(model, chunks[0].grad, config.fine_tune_embeddings);
    }

    EpochLog entry{epoch, loss_sum / static_cast<double>(order.size()), evaluate_cnn(validation, model)};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (entry.validation.f1 > result.best_f1) {
      result.best_f1 = entry.validation.f1;
      result.best_epoch = epoch;
      result.model = model;
      stale = 0;
    } else if (config.early_stop_patience > 0 && ++stale >= config.early_stop_patience) {
      break;
    }
  }
  return result;
}

inline json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"train_loss", e.train_loss},
          {"val_precision", e.validation.precision},
          {"val_recall", e.validation.recall},
          {"val_f1", e.validation.f1}};
}

// ---------------------------------------------------------------------------
// checkpoint

inline constexpr std::uint16_t kCnnCheckpointVersion = 1;

/// "NCNM", u16 version, u32 header length, JSON header, then every parameter
/// group as little-endian f64 in CnnParameters::visit order. The vocabulary
/// token list travels in the header.
inline std::string serialize_cnn(const CnnModel& model, const Vocabulary& vocab, std::size_t n_max, json extra = {}) {
  if (vocab.size() != model.vocab_size()) throw ArgumentError("vocabulary size does not match embedding rows");
  json header = extra.is_object() ? extra : json::object();
  header["widths"] = model.arch.widths;
  header["filters_per_width"] = model.arch.filters_per_width;
  header["k"] = model.k();
  header["vocab_size"] = model.vocab_size();
  header["n_max"] = n_max;
  header["dropout_rate"] = model.dropout_rate;
  header["vocab"] = vocab.tokens();
  BinaryWriter w;
  write_container_header(w, "NCNM", kCnnCheckpointVersion, header);
  model.params.for_each_group([&](const std::string&, std::span<const double> values) { w.put_array(values); });
  return w.data();
}

struct CnnCheckpoint {
  CnnModel model;
  Vocabulary vocab;
  std::size_t n_max = 0;
  json header;
};

inline CnnCheckpoint deserialize_cnn(std::string bytes, const std::string& source) {
  BinaryReader r(std::move(bytes), source);
  CnnCheckpoint ck;
  ck.header = read_container_header(r, "NCNM", kCnnCheckpointVersion);
  try {
    ck.model.arch.widths = ck.header.at("widths").get<std::vector<std::size_t>>();
    ck.model.arch.filters_per_width = ck.header.at("filters_per_width").get<std::size_t>();
    ck.model.dropout_rate = ck.header.at("dropout_rate").get<double>();
    ck.n_max = ck.header.at("n_max").get<std::size_t>();
    auto k = ck.header.at("k").get<std::size_t>();
    auto v = ck.header.at("vocab_size").get<std::size_t>();
    ck.vocab = Vocabulary::from_tokens(ck.header.at("vocab").get<std::vector<std::string>>());
    if (ck.vocab.size() != v) throw FormatError("vocabulary length differs from vocab_size");
    const auto& arch = ck.model.arch;
    if (arch.widths.empty() || arch.filters_per_width == 0 || k == 0 ||
        std::find(arch.widths.begin(), arch.widths.end(), 0u) != arch.widths.end()) {
      throw FormatError("degenerate architecture");
    }
    std::uint64_t expected = v * k + 2 * arch.widths.size() * arch.filters_per_width + 2;
    for (auto h : arch.widths) expected += arch.filters_per_width * (h * k + 1);
    if (expected * sizeof(double) != r.remaining()) {
      throw FormatError("payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
                        std::to_string(expected * sizeof(double)));
    }
    ck.model.params = zeros_like(CnnModel{ck.model.arch, ck.model.dropout_rate, {EmbeddingTable(v, k), {}, {}, {}, {}}});
  } catch (const json::exception& e) {
    throw FormatError(source + ": bad checkpoint header: " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(source + ": " + e.what());
  }
  ck.model.params.for_each_group([&](const std::string&, std::span<double> values) { r.get_array(values); });
  if (!r.at_end()) throw FormatError(source + ": trailing bytes after parameters");
  return ck;
}

}  // namespace readmit

#endif  // READMIT_CNN_HPP
