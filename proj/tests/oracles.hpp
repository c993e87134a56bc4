#ifndef READMIT_TESTS_ORACLES_HPP
#define READMIT_TESTS_ORACLES_HPP

// Independent reference implementations used by the unit and acceptance
// tests. None of these call into the code they check.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "readmit/cnn.hpp"
#include "readmit/records.hpp"
#include "readmit/rng.hpp"

namespace oracle {

using readmit::AdmissionRecord;

inline constexpr std::int64_t kDay = 86400;

/// Random valid timeline for one patient, sorted by admit time. Gaps mix the
/// 30-day boundary (exactly, one second over), back-to-back stays and
/// ordinary short and long gaps.
inline std::vector<AdmissionRecord> random_timeline(readmit::Pcg32& rng, const std::string& patient,
                                                    std::size_t max_admissions = 6) {
  std::size_t n = 1 + rng.below(static_cast<std::uint32_t>(max_admissions));
  std::vector<AdmissionRecord> t;
  std::int64_t clock = rng.between(0, 1000) * kDay;
  for (std::size_t i = 0; i < n; ++i) {
    AdmissionRecord a;
    a.patient_id = patient;
    a.admission_id = patient + "_" + std::to_string(i);
    a.admit_time = clock;
    a.discharge_time = clock + rng.between(0, 20 * kDay);
    t.push_back(a);
    std::int64_t gap;
    switch (rng.below(6)) {
      case 0: gap = 30 * kDay; break;
      case 1: gap = 30 * kDay + 1; break;
      case 2: gap = 30 * kDay - 1; break;
      case 3: gap = rng.between(0, 2); break;
      case 4: gap = rng.between(0, 29 * kDay); break;
      default: gap = rng.between(31 * kDay, 400 * kDay); break;
    }
    clock = a.discharge_time + gap;
    // a zero-length stay followed by a zero gap would repeat the admit time
    if (clock == a.admit_time) clock += 1;
  }
  return t;
}

/// Pairwise check over every (i, j): i is followed when some other admission
/// starts no earlier than i's discharge (and strictly after i's admit).
inline std::map<std::string, std::pair<bool, bool>> brute_force_labels(const std::vector<AdmissionRecord>& t) {
  std::map<std::string, std::pair<bool, bool>> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    bool general = false, thirty = false;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (i == j) continue;
      if (t[j].admit_time >= t[i].discharge_time && t[j].admit_time > t[i].admit_time) {
        general = true;
        if (t[j].admit_time - t[i].discharge_time <= 30 * kDay) thirty = true;
      }
    }
    out[t[i].admission_id] = {general, thirty};
  }
  return out;
}

/// Chi-square by scanning every document for each of the four cells and
/// applying the textbook formula directly.
inline double brute_force_chi2(const std::string& term, const std::vector<std::vector<std::string>>& docs,
                               const std::vector<bool>& labels) {
  double a = 0, b = 0, c = 0, d = 0;  // present&pos, present&neg, absent&pos, absent&neg
  for (std::size_t i = 0; i < docs.size(); ++i) {
    bool present = false;
    for (const auto& t : docs[i]) present |= t == term;
    if (present && labels[i]) ++a;
    if (present && !labels[i]) ++b;
    if (!present && labels[i]) ++c;
    if (!present && !labels[i]) ++d;
  }
  double n = a + b + c + d;
  double obs[4] = {a, b, c, d};
  double exp[4] = {(a + b) * (a + c) / n, (a + b) * (b + d) / n, (c + d) * (a + c) / n, (c + d) * (b + d) / n};
  double s = 0;
  for (int i = 0; i < 4; ++i) {
    if (exp[i] > 0) s += (obs[i] - exp[i]) * (obs[i] - exp[i]) / exp[i];
  }
  return s;
}

/// Naive "valid" 1-D convolution over an n x k matrix for one filter of
/// width h, followed by ReLU.
inline std::vector<double> naive_conv_relu(const std::vector<double>& x, std::size_t n, std::size_t k,
                                           const double* w, std::size_t h, double bias) {
  std::vector<double> c;
  for (std::size_t i = 0; i + h <= n; ++i) {
    double s = bias;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t d = 0; d < k; ++d) s += w[r * k + d] * x[(i + r) * k + d];
    }
    c.push_back(std::max(0.0, s));
  }
  return c;
}

/// Mean negative log-likelihood of a batch under fixed per-example dropout
/// seeds, recomputed with a naive forward pass over fully materialized
/// feature maps.
inline double naive_batch_loss(const std::vector<readmit::LabeledNote>& batch, const readmit::CnnModel& model,
                               std::uint64_t seed, std::vector<long>* pattern = nullptr) {
  const auto& p = model.params;
  const std::size_t k = model.k(), f = model.arch.filters_per_width, m = model.total_filters();
  double total = 0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const auto& note = batch[e].note;
    const std::size_t n = note.ids.size();
    std::vector<double> x(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      auto id = static_cast<std::size_t>(note.ids[i]);
      if (id == 0) continue;  // PAD is the zero vector
      for (std::size_t d = 0; d < k; ++d) x[i * k + d] = p.embedding.values[id * k + d];
    }
    std::vector<double> z;
    for (std::size_t b = 0; b < model.arch.widths.size(); ++b) {
      std::size_t h = model.arch.widths[b];
      for (std::size_t j = 0; j < f; ++j) {
        auto c = naive_conv_relu(x, n, k, p.filters[b].data() + j * h * k, h, p.biases[b][j]);
        auto best = std::max_element(c.begin(), c.end());
        z.push_back(*best);
        // which window wins and whether it is active; FD is only valid when
        // this stays fixed under the perturbation
        if (pattern) pattern->push_back(*best > 0 ? best - c.begin() : -1);
      }
    }
    // same mask as the library: one Bernoulli(1 - rate) draw per pooled unit
    readmit::Pcg32 rng(readmit::derive_seed(seed, {e}));
    double keep = 1.0 - model.dropout_rate;
    for (std::size_t i = 0; i < m; ++i) z[i] = rng.uniform01() < keep ? z[i] / keep : 0.0;
    double l0 = p.dense_b[0], l1 = p.dense_b[1];
    for (std::size_t i = 0; i < m; ++i) {
      l0 += p.dense_w[i] * z[i];
      l1 += p.dense_w[m + i] * z[i];
    }
    double mx = std::max(l0, l1);
    double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
    total += lse - (batch[e].label ? l1 : l0);
  }
  return total / static_cast<double>(batch.size());
}

struct GradCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that crossed a ReLU or max-pool kink
};

/// Random tiny model and batch: vocab 10, k = 3, n_max = 7, widths {1,2,3},
/// f = 2, dropout 0.5, notes of random true length (some shorter than the
/// widest filter, so all-PAD windows occur).
struct TinyProblem {
  readmit::CnnModel model;
  std::vector<readmit::LabeledNote> batch;
  std::uint64_t dropout_seed = 0;
};

inline TinyProblem tiny_problem(std::uint64_t seed) {
  readmit::Pcg32 rng(seed);
  readmit::EmbeddingTable emb(10, 3);
  for (std::size_t i = 1; i < 10; ++i) {
    for (double& v : emb.row(i)) v = rng.uniform(-1, 1);
  }
  TinyProblem tp;
  tp.model = readmit::init_model(emb, {{1, 2, 3}, 2}, 0.5, seed);
  tp.model.params.for_each_group([&](const std::string& name, std::span<double> vals) {
    if (name == "embedding") return;
    for (double& v : vals) v = rng.uniform(-0.8, 0.8);
  });
  for (int e = 0; e < 4; ++e) {
    readmit::LabeledNote ln;
    ln.note.true_length = 1 + rng.below(7);
    ln.note.ids.assign(7, 0);
    for (std::size_t i = 0; i < ln.note.true_length; ++i) ln.note.ids[i] = static_cast<std::int32_t>(1 + rng.below(9));
    ln.label = rng.below(2) == 1;
    tp.batch.push_back(ln);
  }
  tp.dropout_seed = rng.next_u64();
  return tp;
}

/// Central differences of the naive loss against the library's analytic
/// gradient, over every parameter entry.
inline GradCheck gradient_check(std::uint64_t seed, double eps = 1e-4) {
  TinyProblem tp = tiny_problem(seed);
  auto analytic = readmit::loss_and_gradients(tp.batch, tp.model, tp.dropout_seed).gradients;
  std::vector<std::span<const double>> grads;
  analytic.for_each_group([&](const std::string&, std::span<const double> g) { grads.push_back(g); });

  std::vector<long> base_pattern;
  oracle::naive_batch_loss(tp.batch, tp.model, tp.dropout_seed, &base_pattern);
  GradCheck out;
  std::size_t group = 0;
  readmit::CnnModel probe = tp.model;
  probe.params.for_each_group([&](const std::string& name, std::span<double> vals) {
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (name == "embedding" && i < probe.k()) continue;  // PAD row is fixed at zero
      double saved = vals[i];
      std::vector<long> plus_pattern, minus_pattern;
      vals[i] = saved + eps;
      double lp = naive_batch_loss(tp.batch, probe, tp.dropout_seed, &plus_pattern);
      vals[i] = saved - eps;
      double lm = naive_batch_loss(tp.batch, probe, tp.dropout_seed, &minus_pattern);
      vals[i] = saved;
      if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
        ++out.skipped;
        continue;
      }
      double numeric = (lp - lm) / (2 * eps);
      double a = grads[group][i];
      double scale = std::max(std::abs(a), std::abs(numeric));
      double rel = scale < 1e-8 ? std::abs(a - numeric) / 1e-8 : std::abs(a - numeric) / scale;
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.checked;
    }
    ++group;
  });
  return out;
}

/// Exhaustive CART on dense rows: every feature, every midpoint between
/// distinct values, largest Gini decrease (1 - p^2 - q^2 form, long double),
/// ties within 1e-12 to the smaller feature then smaller threshold. Returns
/// the predicted positive fraction per query row.
struct DenseTree {
  struct Node {
    int feature = -1;
    double threshold = 0;
    int left = -1, right = -1;
    double pos_fraction = 0;
  };
  std::vector<Node> nodes;

  double predict(const std::vector<double>& row) const {
    int i = 0;
    while (nodes[i].feature >= 0) i = row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].pos_fraction;
  }
};

inline long double impurity(long double pos, long double n) {
  if (n == 0) return 0;
  long double p = pos / n, q = 1 - p;
  return 1 - p * p - q * q;
}

inline int grow_dense(DenseTree& t, const std::vector<std::vector<double>>& x, const std::vector<bool>& y,
                      const std::vector<std::size_t>& rows) {
  int id = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  std::size_t pos = 0;
  for (auto r : rows) pos += y[r];
  t.nodes[id].pos_fraction = static_cast<double>(pos) / static_cast<double>(rows.size());
  if (pos == 0 || pos == rows.size()) return id;

  const long double n = static_cast<long double>(rows.size());
  long double best = -1;
  int best_f = -1;
  double best_thr = 0;
  for (std::size_t f = 0; f < x[0].size(); ++f) {
    std::set<double> values;
    for (auto r : rows) values.insert(x[r][f]);
    for (auto it = values.begin(); std::next(it) != values.end(); ++it) {
      double thr = (*it + *std::next(it)) / 2;
      long double nl = 0, pl = 0, nr = 0, pr = 0;
      for (auto r : rows) {
        if (x[r][f] <= thr) {
          ++nl;
          pl += y[r];
        } else {
          ++nr;
          pr += y[r];
        }
      }
      long double dec = impurity(pos, n) - (nl * impurity(pl, nl) + nr * impurity(pr, nr)) / n;
      if (best_f < 0 || dec > best + 1e-12L) {
        best = dec;
        best_f = static_cast<int>(f);
        best_thr = thr;
      }
    }
  }
  if (best_f < 0) return id;
  std::vector<std::size_t> l, r;
  for (auto row : rows) (x[row][best_f] <= best_thr ? l : r).push_back(row);
  t.nodes[id].feature = best_f;
  t.nodes[id].threshold = best_thr;
  int li = grow_dense(t, x, y, l);
  int ri = grow_dense(t, x, y, r);
  t.nodes[id].left = li;
  t.nodes[id].right = ri;
  return id;
}

inline DenseTree exhaustive_tree(const std::vector<std::vector<double>>& x, const std::vector<bool>& y) {
  DenseTree t;
  std::vector<std::size_t> rows(x.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  grow_dense(t, x, y, rows);
  return t;
}

}  // namespace oracle

#endif  // READMIT_TESTS_ORACLES_HPP
