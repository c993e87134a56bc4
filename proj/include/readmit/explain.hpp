#ifndef READMIT_EXPLAIN_HPP
#define READMIT_EXPLAIN_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "readmit/error.hpp"
#include "readmit/io.hpp"

namespace readmit {

/// A tokenized note with its true class.
struct ExplainSample {
  std::vector<std::string> tokens;
  bool label = false;
};

/// Document-level term presence against true class.
struct ContingencyTable {
  std::uint64_t o_yes_pos = 0, o_yes_neg = 0, o_no_pos = 0, o_no_neg = 0;

  std::uint64_t total() const { return o_yes_pos + o_yes_neg + o_no_pos + o_no_neg; }

  std::array<double, 4> observed() const {
    return {static_cast<double>(o_yes_pos), static_cast<double>(o_yes_neg), static_cast<double>(o_no_pos),
            static_cast<double>(o_no_neg)};
  }

  /// Row total x column total / grand total, cells ordered as observed().
  std::array<double, 4> expected() const {
    double n = static_cast<double>(total());
    if (n == 0) return {0, 0, 0, 0};
    double yes = static_cast<double>(o_yes_pos + o_yes_neg), no = static_cast<double>(o_no_pos + o_no_neg);
    double pos = static_cast<double>(o_yes_pos + o_no_pos), neg = static_cast<double>(o_yes_neg + o_no_neg);
    return {yes * pos / n, yes * neg / n, no * pos / n, no * neg / n};
  }

  /// Sum of (O - E)^2 / E over the four cells; cells with E = 0 add nothing.
  double chi2() const {
    auto o = observed();
    auto e = expected();
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      if (e[i] > 0.0) s += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
    }
    return s;
  }

  bool operator==(const ContingencyTable&) const = default;
};

struct FeatureScore {
  std::string term;
  double chi2 = 0.0;
  ContingencyTable table;
};

/// Samples whose prediction matches the true label.
inline std::vector<ExplainSample> filter_correct(std::span<const ExplainSample> samples,
                                                 std::span<const bool> predicted) {
  if (samples.size() != predicted.size()) {
    throw ArgumentError("filter_correct: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(samples.size()) + " samples");
  }
  std::vector<ExplainSample> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (predicted[i] == samples[i].label) out.push_back(samples[i]);
  }
  return out;
}

namespace detail {
inline void require_both_classes(std::span<const ExplainSample> samples) {
  if (samples.empty()) throw ArgumentError("chi-square scoring needs a nonempty sample set");
  bool pos = false, neg = false;
  for (const auto& s : samples) (s.label ? pos : neg) = true;
  if (!pos || !neg) throw ArgumentError("chi-square scoring needs at least one sample of each class");
}
}  // namespace detail

inline FeatureScore chi2_score(const std::string& term, std::span<const ExplainSample> samples) {
  detail::require_both_classes(samples);
  ContingencyTable t;
  for (const auto& s : samples) {
    bool present = std::find(s.tokens.begin(), s.tokens.end(), term) != s.tokens.end();
    if (present) {
      s.label ? ++t.o_yes_pos : ++t.o_yes_neg;
    } else {
      s.label ? ++t.o_no_pos : ++t.o_no_neg;
    }
  }
  return {term, t.chi2(), t};
}

/// Scores every term occurring in the samples and returns the k best by
/// descending chi-square (ties: lexicographic).
inline std::vector<FeatureScore> top_k_features(std::span<const ExplainSample> samples, std::size_t k = 20) {
  detail::require_both_classes(samples);
  std::uint64_t n_pos = 0, n_neg = 0;
  std::unordered_map<std::string, std::array<std::uint64_t, 2>> presence;  // {pos, neg}
  for (const auto& s : samples) {
    s.label ? ++n_pos : ++n_neg;
    std::unordered_set<std::string_view> seen;
    for (const auto& t : s.tokens) {
      if (seen.insert(t).second) ++presence[t][s.label ? 0 : 1];
    }
  }
  std::vector<FeatureScore> scores;
  scores.reserve(presence.size());
  for (const auto& [term, c] : presence) {
    ContingencyTable t{c[0], c[1], n_pos - c[0], n_neg - c[1]};
    scores.push_back({term, t.chi2(), t});
  }
  std::sort(scores.begin(), scores.end(), [](const FeatureScore& a, const FeatureScore& b) {
    return a.chi2 != b.chi2 ? a.chi2 > b.chi2 : a.term < b.term;
  });
  if (scores.size() > k) scores.resize(k);
  return scores;
}

/// Token-frequency contrast for a list of terms. A class count is masked
/// (nullopt) when the term is not among that class's top_k_mask most frequent
/// terms (ties lexicographic); nullopt mask disables masking.
struct FrequencyRow {
  std::string term;
  std::optional<std::uint64_t> count_pos;
  std::optional<std::uint64_t> count_neg;
  std::uint64_t n_pos = 0;
  std::uint64_t n_neg = 0;
};

inline std::vector<FrequencyRow> frequency_report(std::span<const std::string> terms,
                                                  std::span<const ExplainSample> samples,
                                                  std::optional<std::size_t> top_k_mask = 2000) {
  std::unordered_map<std::string, std::uint64_t> freq[2];  // [0] = positive, [1] = negative
  std::uint64_t n_class[2] = {0, 0};
  for (const auto& s : samples) {
    int c = s.label ? 0 : 1;
    ++n_class[c];
    for (const auto& t : s.tokens) ++freq[c][t];
  }
  std::unordered_set<std::string> top[2];
  if (top_k_mask) {
    for (int c = 0; c < 2; ++c) {
      std::vector<std::pair<std::string, std::uint64_t>> ranked(freq[c].begin(), freq[c].end());
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
      });
      if (ranked.size() > *top_k_mask) ranked.resize(*top_k_mask);
      for (auto& [t, n] : ranked) top[c].insert(t);
    }
  }
  std::vector<FrequencyRow> rows;
  for (const auto& term : terms) {
    FrequencyRow row{term, std::nullopt, std::nullopt, n_class[0], n_class[1]};
    for (int c = 0; c < 2; ++c) {
      auto it = freq[c].find(term);
      std::uint64_t n = it == freq[c].end() ? 0 : it->second;
      std::optional<std::uint64_t> value;
      if (!top_k_mask || top[c].count(term)) value = n;
      (c == 0 ? row.count_pos : row.count_neg) = value;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}
}  // namespace detail

/// Columns: term, chi2, o_yes_pos, o_yes_neg, o_no_pos, o_no_neg. A leading
/// "# ..." line carries `comment` when nonempty.
inline std::string feature_csv(std::span<const FeatureScore> scores, const std::string& comment = {}) {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  out += "term,chi2,o_yes_pos,o_yes_neg,o_no_pos,o_no_neg\n";
  for (const auto& s : scores) {
    out += detail::csv_field(s.term) + "," + format_double(s.chi2) + "," + std::to_string(s.table.o_yes_pos) + "," +
           std::to_string(s.table.o_yes_neg) + "," + std::to_string(s.table.o_no_pos) + "," +
           std::to_string(s.table.o_no_neg) + "\n";
  }
  return out;
}

/// Columns: term, count_pos, count_neg, n_pos, n_neg; masked cells are
/// written as "non-top<K>".
inline std::string frequency_csv(std::span<const FrequencyRow> rows, std::optional<std::size_t> top_k_mask,
                                 const std::string& comment = {}) {
  std::string masked = top_k_mask ? "non-top" + std::to_string(*top_k_mask) : "";
  auto cell = [&](const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : masked; };
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  out += "term,count_pos,count_neg,n_pos,n_neg\n";
  for (const auto& r : rows) {
    out += detail::csv_field(r.term) + "," + cell(r.count_pos) + "," + cell(r.count_neg) + "," +
           std::to_string(r.n_pos) + "," + std::to_string(r.n_neg) + "\n";
  }
  return out;
}

}  // namespace readmit

#endif  // READMIT_EXPLAIN_HPP
