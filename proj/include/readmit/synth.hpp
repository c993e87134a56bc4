#ifndef READMIT_SYNTH_HPP
#define READMIT_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "readmit/error.hpp"
#include "readmit/io.hpp"
#include "readmit/records.hpp"
#include "readmit/rng.hpp"

// Seeded synthetic cohort generator. It deliberately does not include the
// cohort labeler: its ground truth comes from how it draws each gap, which
// makes it an independent oracle for the labeling code.

namespace readmit {

struct SynthConfig {
  std::size_t n_patients = 1000;
  std::size_t min_admissions = 1;
  std::size_t max_admissions = 3;
  double readmit_30day_rate = 0.3;  // fraction of between-admission gaps <= 30 days
  std::size_t min_note_tokens = 80;
  std::size_t max_note_tokens = 160;
  std::vector<std::string> signal_tokens_pos = {"torsemide", "bipap", "esrd"};
  std::vector<std::string> signal_tokens_neg = {"postoperative", "catheterization", "coronary"};
  double signal_probability = 0.9;  // per signal token, per note of the matching class
  Task signal_task = Task::kGeneral;
  std::size_t background_vocab = 2000;
  double zipf_exponent = 1.0;
  double missing_summary_rate = 0.0;
  double extra_summary_rate = 0.0;  // adds a shorter second summary
  double other_note_rate = 0.2;     // adds a longer note of category "other"
  double non_hf_rate = 0.0;         // admissions without a qualifying code
  std::uint64_t seed = 7;

  void validate() const {
    auto rate = [](double r, const char* name) {
      if (!(r >= 0.0 && r <= 1.0)) throw ArgumentError(std::string(name) + " must lie in [0, 1]");
    };
    if (n_patients == 0) throw ArgumentError("n_patients must be >= 1");
    if (min_admissions == 0 || min_admissions > max_admissions) {
      throw ArgumentError("admissions per patient needs 1 <= min <= max");
    }
    if (min_note_tokens > max_note_tokens) throw ArgumentError("note length needs min <= max");
    rate(readmit_30day_rate, "readmit_30day_rate");
    rate(signal_probability, "signal_probability");
    rate(missing_summary_rate, "missing_summary_rate");
    rate(extra_summary_rate, "extra_summary_rate");
    rate(other_note_rate, "other_note_rate");
    rate(non_hf_rate, "non_hf_rate");
    if (readmit_30day_rate > 0.0 && max_admissions < 2) {
      throw ArgumentError("readmit_30day_rate > 0 is infeasible with at most one admission per patient");
    }
    if (background_vocab == 0) throw ArgumentError("background_vocab must be >= 1");
    std::set<std::string> pos(signal_tokens_pos.begin(), signal_tokens_pos.end());
    for (const auto& t : signal_tokens_neg) {
      if (pos.count(t)) throw ArgumentError("signal token '" + t + "' appears in both classes");
    }
  }
};

inline json to_json(const SynthConfig& c) {
  return {{"n_patients", c.n_patients},
          {"min_admissions", c.min_admissions},
          {"max_admissions", c.max_admissions},
          {"readmit_30day_rate", c.readmit_30day_rate},
          {"min_note_tokens", c.min_note_tokens},
          {"max_note_tokens", c.max_note_tokens},
          {"signal_tokens_pos", c.signal_tokens_pos},
          {"signal_tokens_neg", c.signal_tokens_neg},
          {"signal_probability", c.signal_probability},
          {"signal_task", to_string(c.signal_task)},
          {"background_vocab", c.background_vocab},
          {"zipf_exponent", c.zipf_exponent},
          {"missing_summary_rate", c.missing_summary_rate},
          {"extra_summary_rate", c.extra_summary_rate},
          {"other_note_rate", c.other_note_rate},
          {"non_hf_rate", c.non_hf_rate},
          {"seed", c.seed}};
}

/// Overlays the keys present in `j` onto `c`.
inline void merge_from_json(SynthConfig& c, const json& j) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("n_patients", c.n_patients);
  take("min_admissions", c.min_admissions);
  take("max_admissions", c.max_admissions);
  take("readmit_30day_rate", c.readmit_30day_rate);
  take("min_note_tokens", c.min_note_tokens);
  take("max_note_tokens", c.max_note_tokens);
  take("signal_tokens_pos", c.signal_tokens_pos);
  take("signal_tokens_neg", c.signal_tokens_neg);
  take("signal_probability", c.signal_probability);
  if (j.contains("signal_task")) c.signal_task = parse_task(j.at("signal_task").get<std::string>());
  take("background_vocab", c.background_vocab);
  take("zipf_exponent", c.zipf_exponent);
  take("missing_summary_rate", c.missing_summary_rate);
  take("extra_summary_rate", c.extra_summary_rate);
  take("other_note_rate", c.other_note_rate);
  take("non_hf_rate", c.non_hf_rate);
  take("seed", c.seed);
}

struct TruthRecord {
  std::string admission_id;
  bool label_general = false;
  bool label_30day = false;
  bool heart_failure = false;
  bool has_summary = false;
};

inline json to_json(const TruthRecord& t) {
  return {{"admission_id", t.admission_id},
          {"label_general", t.label_general},
          {"label_30day", t.label_30day},
          {"heart_failure", t.heart_failure},
          {"has_summary", t.has_summary}};
}

inline TruthRecord truth_from_json(const json& j) {
  return {j.at("admission_id").get<std::string>(), j.at("label_general").get<bool>(),
          j.at("label_30day").get<bool>(), j.value("heart_failure", true), j.value("has_summary", true)};
}

struct SynthOutput {
  std::vector<AdmissionRecord> admissions;  // notes attached
  std::vector<TruthRecord> truth;
};

namespace synth_detail {

inline constexpr std::int64_t kSecondsPerDayForSynth = 86400;
inline constexpr std::int64_t kThirtyDaysForSynth = 30 * kSecondsPerDayForSynth;

inline constexpr std::string_view kQualifying[] = {
    "398.91", "402.01", "402.11", "402.91", "404.01", "404.03", "404.11", "404.13", "404.91",
    "404.93", "428.0",  "428.1",  "428.20", "428.21", "428.22", "428.23", "428.30", "428.31",
    "428.32", "428.33", "428.40", "428.41", "428.42", "428.43", "428.9"};
inline constexpr std::string_view kOtherCodes[] = {"401.9",  "250.00", "584.9",  "427.31", "414.01",
                                                   "518.81", "599.0",  "285.9",  "272.4",  "530.81"};
inline constexpr std::string_view kSyllables[] = {"ka", "lo", "mi", "ne", "su", "ta", "ri", "po", "ve", "du",
                                                  "ga", "ho", "ze", "bi", "fu", "ra", "le", "no", "si", "tu"};
inline constexpr std::string_view kFillers[] = {"the", "was", "and", "with", "of", "on", "for", "to", "in", "is"};
inline constexpr std::string_view kNumbers[] = {"40", "1.5", "12/5", "100", "2", "0.25", "3", "81"};

/// Distinct pseudo-words: rank r spelled in base 20 over fixed syllables.
inline std::string background_word(std::size_t rank, std::size_t syllables) {
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) {
    w += kSyllables[rank % 20];
    rank /= 20;
  }
  return w;
}

class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double s) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
      cdf_[r] = acc;
    }
    for (double& c : cdf_) c /= acc;
  }

  std::size_t operator()(Pcg32& rng) const {
    double u = rng.uniform01();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

inline std::string id_string(char prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%07zu", prefix, n);
  return buf;
}

}  // namespace synth_detail

/// Builds patient timelines, codes and notes. Gaps are drawn as "short"
/// (1 s .. 30 days, sometimes exactly 30 days) with probability
/// readmit_30day_rate, otherwise "long" (30 days + 1 s .. 400 days); the
/// draw itself is the 30-day ground truth.
inline SynthOutput generate(const SynthConfig& config) {
  using namespace synth_detail;
  config.validate();
  Pcg32 rng(config.seed);

  std::size_t syllables = 3;
  while (std::pow(20.0, static_cast<double>(syllables)) < static_cast<double>(config.background_vocab)) ++syllables;
  std::set<std::string> reserved(config.signal_tokens_pos.begin(), config.signal_tokens_pos.end());
  reserved.insert(config.signal_tokens_neg.begin(), config.signal_tokens_neg.end());
  std::vector<std::string> vocab;
  for (std::size_t r = 0; r < config.background_vocab; ++r) {
    std::string w = background_word(r, syllables);
    while (reserved.count(w)) w += "x";
    vocab.push_back(std::move(w));
  }
  ZipfSampler zipf(vocab.size(), config.zipf_exponent);

  auto make_text = [&](bool label, bool plant) {
    std::size_t len = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(config.min_note_tokens), static_cast<std::int64_t>(config.max_note_tokens)));
    std::vector<std::string> words;
    words.reserve(len + 8);
    for (std::size_t i = 0; i < len; ++i) {
      double u = rng.uniform01();
      if (u < 0.15) {
        words.emplace_back(kFillers[rng.below(std::size(kFillers))]);
      } else if (u < 0.20) {
        words.emplace_back(kNumbers[rng.below(std::size(kNumbers))]);
      } else {
        words.push_back(vocab[zipf(rng)]);
      }
    }
    if (plant) {
      const auto& signals = label ? config.signal_tokens_pos : config.signal_tokens_neg;
      for (const auto& s : signals) {
        if (!rng.bernoulli(config.signal_probability)) continue;
        auto at = rng.below(static_cast<std::uint32_t>(words.size() + 1));
        words.insert(words.begin() + at, s);
      }
    }
    std::string text;
    bool sentence_start = true;
    for (std::size_t i = 0; i < words.size(); ++i) {
      std::string w = words[i];
      if (sentence_start && !w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
      sentence_start = false;
      if (!text.empty()) text += ' ';
      text += w;
      if (i + 1 < words.size() && rng.below(12) == 0) {
        text += '.';
        sentence_start = true;
      }
    }
    text += '.';
    return text;
  };

  SynthOutput out;
  std::size_t admission_counter = 0, note_counter = 0;
  const std::int64_t base = parse_iso8601("2100-01-01T00:00:00Z");
  for (std::size_t p = 0; p < config.n_patients; ++p) {
    std::string patient = id_string('P', p + 1);
    auto count = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(config.min_admissions),
                                                      static_cast<std::int64_t>(config.max_admissions)));
    std::int64_t t = base + rng.between(0, 3650) * kSecondsPerDayForSynth + rng.between(0, 86399);
    for (std::size_t i = 0; i < count; ++i) {
      AdmissionRecord a;
      a.patient_id = patient;
      a.admission_id = id_string('A', ++admission_counter);
      a.admit_time = t;
      a.discharge_time = t + rng.between(1, 14) * kSecondsPerDayForSynth + rng.between(0, 86399);

      bool hf = !rng.bernoulli(config.non_hf_rate);
      if (hf) a.icd9_codes.emplace_back(kQualifying[rng.below(std::size(kQualifying))]);
      std::size_t extra = rng.below(4);
      for (std::size_t c = 0; c < extra; ++c) a.icd9_codes.emplace_back(kOtherCodes[rng.below(std::size(kOtherCodes))]);
      if (a.icd9_codes.empty()) a.icd9_codes.emplace_back(kOtherCodes[rng.below(std::size(kOtherCodes))]);
      rng.shuffle(std::span<std::string>(a.icd9_codes));

      TruthRecord truth;
      truth.admission_id = a.admission_id;
      truth.heart_failure = hf;
      truth.label_general = i + 1 < count;
      std::int64_t gap = 0;
      if (truth.label_general) {
        if (rng.bernoulli(config.readmit_30day_rate)) {
          truth.label_30day = true;
          gap = rng.bernoulli(0.05) ? kThirtyDaysForSynth : rng.between(1, kThirtyDaysForSynth);
        } else {
          gap = rng.bernoulli(0.05) ? kThirtyDaysForSynth + 1
                                    : rng.between(kThirtyDaysForSynth + 1, 400 * kSecondsPerDayForSynth);
        }
      }

      bool label = config.signal_task == Task::kGeneral ? truth.label_general : truth.label_30day;
      truth.has_summary = !rng.bernoulli(config.missing_summary_rate);
      if (truth.has_summary) {
        std::string text = make_text(label, true);
        if (rng.bernoulli(config.extra_summary_rate)) {
          a.notes.push_back({id_string('N', ++note_counter), NoteCategory::kDischargeSummary,
                             text.substr(0, text.size() / 2)});
        }
        a.notes.push_back({id_string('N', ++note_counter), NoteCategory::kDischargeSummary, std::move(text)});
      }
      if (rng.bernoulli(config.other_note_rate)) {
        std::string other = make_text(label, false) + " " + make_text(label, false);
        a.notes.push_back({id_string('N', ++note_counter), NoteCategory::kOther, std::move(other)});
      }

      out.admissions.push_back(std::move(a));
      out.truth.push_back(truth);
      t = out.admissions.back().discharge_time + gap;
    }
  }
  return out;
}

/// JSON-lines renderings: admissions without notes, notes keyed by
/// admission_id, and the ground-truth labels. `provenance`, when an object,
/// is written as the first line of each.
struct SynthFiles {
  std::string admissions;
  std::string notes;
  std::string truth;
};

inline SynthFiles render(const SynthOutput& out, const json& provenance = {}) {
  SynthFiles f;
  if (provenance.is_object()) {
    std::string line = json{{"provenance", provenance}}.dump() + "\n";
    f.admissions = f.notes = f.truth = line;
  }
  for (const auto& a : out.admissions) {
    f.admissions += to_json(a, false).dump() + "\n";
    for (const auto& n : a.notes) {
      json j = to_json(n);
      j["admission_id"] = a.admission_id;
      f.notes += j.dump() + "\n";
    }
  }
  for (const auto& t : out.truth) f.truth += to_json(t).dump() + "\n";
  return f;
}

}  // namespace readmit

#endif  // READMIT_SYNTH_HPP
