#ifndef READMIT_COHORT_HPP
#define READMIT_COHORT_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "readmit/error.hpp"
#include "readmit/io.hpp"
#include "readmit/records.hpp"
#include "readmit/rng.hpp"

namespace readmit {

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::vector<std::vector<std::string>> cv_folds;
  std::uint64_t seed = 0;
};

/// Cohort counts: heart-failure admissions, and those followed by a general or
/// 30-day readmission, each with and without requiring a discharge summary.
struct CohortStats {
  std::size_t all_admissions = 0;
  std::size_t all_with_summary = 0;
  std::size_t general_readmissions = 0;
  std::size_t general_with_summary = 0;
  std::size_t readmissions_30day = 0;
  std::size_t readmissions_30day_with_summary = 0;

  bool operator==(const CohortStats&) const = default;
};

inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr std::int64_t kThirtyDaySeconds = 30 * kSecondsPerDay;

// ---------------------------------------------------------------------------
// cohort identification

inline constexpr std::array<std::string_view, 25> kHeartFailureCodes = {
    "398.91", "402.01", "402.11", "402.91", "404.01", "404.03", "404.11",
    "404.13", "404.91", "404.93", "428.0",  "428.1",  "428.20", "428.21",
    "428.22", "428.23", "428.30", "428.31", "428.32", "428.33", "428.40",
    "428.41", "428.42", "428.43", "428.9"};

/// Accepts the dotted form ("428.0") and the undotted form many EHR exports use
/// ("4280"); the dot goes after the third digit.
inline bool is_heart_failure_code(std::string_view code) {
  std::string dotted(code);
  if (dotted.find('.') == std::string::npos && dotted.size() > 3) dotted.insert(3, ".");
  return std::find(kHeartFailureCodes.begin(), kHeartFailureCodes.end(), dotted) !=
         kHeartFailureCodes.end();
}

inline bool is_heart_failure(const AdmissionRecord& admission) {
  return std::any_of(admission.icd9_codes.begin(), admission.icd9_codes.end(),
                     [](const std::string& c) { return is_heart_failure_code(c); });
}

/// Longest discharge summary of the admission (ties: smallest note_id), or
/// nullopt when the admission has none.
inline std::optional<NoteRecord> select_note(const AdmissionRecord& admission) {
  const NoteRecord* best = nullptr;
  for (const NoteRecord& n : admission.notes) {
    if (n.category != NoteCategory::kDischargeSummary) continue;
    if (best == nullptr || n.text.size() > best->text.size() ||
        (n.text.size() == best->text.size() && n.note_id < best->note_id)) {
      best = &n;
    }
  }
  if (best == nullptr) return std::nullopt;
  return *best;
}

// ---------------------------------------------------------------------------
// labeling

/// Throws unless `timeline` is one patient's admissions sorted by strictly
/// increasing admit_time, each with discharge >= admit and no stay starting
/// before the previous discharge.
inline void validate_timeline(std::span<const AdmissionRecord> timeline) {
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    const auto& a = timeline[i];
    if (a.discharge_time < a.admit_time) {
      throw ValidationError("admission " + a.admission_id + ": discharge_time precedes admit_time");
    }
    if (i == 0) continue;
    const auto& prev = timeline[i - 1];
    if (a.patient_id != prev.patient_id) {
      throw ArgumentError("timeline mixes patients " + prev.patient_id + " and " + a.patient_id);
    }
    if (a.admit_time < prev.admit_time) {
      throw ArgumentError("timeline for patient " + a.patient_id + " is not sorted by admit_time");
    }
    if (a.admit_time == prev.admit_time || a.admit_time < prev.discharge_time) {
      throw ValidationError("overlapping admissions " + prev.admission_id + " and " +
                            a.admission_id + " for patient " + a.patient_id);
    }
  }
}

/// True for every admission followed by any later admission of the patient.
inline std::map<std::string, bool> label_general(std::span<const AdmissionRecord> timeline) {
  validate_timeline(timeline);
  std::map<std::string, bool> labels;
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    labels[timeline[i].admission_id] = i + 1 < timeline.size();
  }
  return labels;
}

/// True when the next admission starts at most 30 days (inclusive) after
/// this admission's discharge.
inline std::map<std::string, bool> label_30day(std::span<const AdmissionRecord> timeline) {
  validate_timeline(timeline);
  std::map<std::string, bool> labels;
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    bool positive = i + 1 < timeline.size() &&
                    timeline[i + 1].admit_time - timeline[i].discharge_time <= kThirtyDaySeconds;
    labels[timeline[i].admission_id] = positive;
  }
  return labels;
}

struct CohortBuild {
  std::vector<CohortSample> samples;  // heart-failure admissions with a summary
  CohortStats stats;
};

/// Groups admissions by patient, labels every heart-failure admission against
/// the patient's full timeline (any later admission counts), and keeps those
/// carrying a discharge summary.
inline CohortBuild build_cohort(std::span<const AdmissionRecord> admissions) {
  std::map<std::string, std::vector<const AdmissionRecord*>> by_patient;
  std::unordered_set<std::string> seen;
  for (const auto& a : admissions) {
    if (!seen.insert(a.admission_id).second) {
      throw ValidationError("duplicate admission_id " + a.admission_id);
    }
    by_patient[a.patient_id].push_back(&a);
  }

  CohortBuild out;
  for (auto& [patient, ptrs] : by_patient) {
    std::sort(ptrs.begin(), ptrs.end(), [](const AdmissionRecord* x, const AdmissionRecord* y) {
      if (x->admit_time != y->admit_time) return x->admit_time < y->admit_time;
      return x->admission_id < y->admission_id;
    });
    std::vector<AdmissionRecord> timeline;
    timeline.reserve(ptrs.size());
    for (const auto* p : ptrs) timeline.push_back(*p);
    auto general = label_general(timeline);
    auto thirty = label_30day(timeline);

    for (const auto& a : timeline) {
      if (!is_heart_failure(a)) continue;
      bool g = general.at(a.admission_id);
      bool t = thirty.at(a.admission_id);
      auto note = select_note(a);
      out.stats.all_admissions++;
      out.stats.general_readmissions += g;
      out.stats.readmissions_30day += t;
      if (!note) continue;
      out.stats.all_with_summary++;
      out.stats.general_with_summary += g;
      out.stats.readmissions_30day_with_summary += t;
      out.samples.push_back({a.admission_id, a.patient_id, note->text, g, t});
    }
  }
  std::sort(out.samples.begin(), out.samples.end(),
            [](const CohortSample& x, const CohortSample& y) { return x.admission_id < y.admission_id; });
  return out;
}

// ---------------------------------------------------------------------------
// balancing and splitting

/// Keeps every minority-class sample and a seeded uniform subset of the
/// majority class of equal size. Output preserves input order. Normally the
/// negatives are subsampled; if positives outnumber them, positives are
/// subsampled instead and a warning is appended.
inline std::vector<CohortSample> balance_undersample(std::span<const CohortSample> samples, Task task,
                                                     std::uint64_t seed,
                                                     std::vector<std::string>* warnings = nullptr) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (label_of(samples[i], task) ? pos : neg).push_back(i);
  }
  if (pos.empty() || neg.empty()) {
    throw ArgumentError("balance_undersample needs at least one positive and one negative sample");
  }
  std::vector<std::size_t>* major = &neg;
  std::size_t keep = pos.size();
  if (neg.size() < pos.size()) {
    major = &pos;
    keep = neg.size();
    if (warnings) {
      warnings->push_back("fewer negatives (" + std::to_string(neg.size()) + ") than positives (" +
                          std::to_string(pos.size()) + "); subsampling positives");
    }
  }
  Pcg32 rng(seed);
  rng.shuffle(std::span<std::size_t>(*major));
  major->resize(keep);

  std::vector<std::size_t> chosen = pos;
  chosen.insert(chosen.end(), neg.begin(), neg.end());
  std::sort(chosen.begin(), chosen.end());
  std::vector<CohortSample> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(samples[i]);
  return out;
}

/// Stratified holdout: floor(ratio * class count) samples per class, at least
/// one, go to test. Ids in both partitions keep input order.
inline DatasetSplit split_holdout(std::span<const CohortSample> samples, Task task, double ratio,
                                  std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("holdout ratio must lie in (0, 1)");
  if (samples.size() < 10) throw ArgumentError("split_holdout needs at least 10 samples");

  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[label_of(samples[i], task)].push_back(i);

  Pcg32 rng(seed);
  std::vector<bool> in_test(samples.size(), false);
  for (auto& idx : by_class) {
    if (idx.empty()) continue;
    auto n_test = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(idx.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size());
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t j = 0; j < n_test; ++j) in_test[idx[j]] = true;
  }

  DatasetSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (in_test[i] ? split.test : split.train).push_back(samples[i].admission_id);
  }
  return split;
}

/// Stratified k-fold partition: each class is shuffled and dealt round-robin
/// with one running counter, so fold sizes differ by at most one.
inline std::vector<std::vector<std::string>> make_cv_folds(std::span<const std::string> ids,
                                                           std::span<const bool> labels, std::size_t k,
                                                           std::uint64_t seed) {
  if (ids.size() != labels.size()) throw ArgumentError("ids and labels differ in length");
  if (k == 0 || k > ids.size()) {
    throw ArgumentError("cannot make " + std::to_string(k) + " folds from " +
                        std::to_string(ids.size()) + " ids");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ids.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  Pcg32 rng(seed);
  rng.shuffle(std::span<std::size_t>(pos));
  rng.shuffle(std::span<std::size_t>(neg));

  std::vector<std::size_t> fold_of(ids.size());
  std::size_t counter = 0;
  for (std::size_t i : pos) fold_of[i] = counter++ % k;
  for (std::size_t i : neg) fold_of[i] = counter++ % k;

  std::vector<std::vector<std::string>> folds(k);
  for (std::size_t i = 0; i < ids.size(); ++i) folds[fold_of[i]].push_back(ids[i]);
  return folds;
}

/// Holdout plus CV folds over the train part, with sub-seeds derived from `seed`.
inline DatasetSplit make_split(std::span<const CohortSample> samples, Task task, double ratio,
                               std::size_t k, std::uint64_t seed) {
  DatasetSplit split = split_holdout(samples, task, ratio, derive_seed(seed, {2}));
  split.seed = seed;
  std::unordered_map<std::string, bool> label;
  for (const auto& s : samples) label[s.admission_id] = label_of(s, task);
  std::vector<std::string> ids = split.train;
  std::unique_ptr<bool[]> flags(new bool[ids.size()]);
  for (std::size_t i = 0; i < ids.size(); ++i) flags[i] = label.at(ids[i]);
  split.cv_folds = make_cv_folds(ids, std::span<const bool>(flags.get(), ids.size()), k,
                                 derive_seed(seed, {3}));
  return split;
}

// ---------------------------------------------------------------------------
// serialization

/// Reads admissions JSON-lines and, optionally, a notes JSON-lines file whose
/// objects carry an admission_id plus the NoteRecord fields.
inline std::vector<AdmissionRecord> load_admissions(const std::filesystem::path& admissions_path,
                                                    const std::optional<std::filesystem::path>& notes_path) {
  std::vector<AdmissionRecord> out;
  std::unordered_map<std::string, std::size_t> index;
  for_each_jsonl(admissions_path, [&](const json& j, std::size_t) {
    AdmissionRecord a = admission_from_json(j);
    if (!index.emplace(a.admission_id, out.size()).second) {
      throw ValidationError("duplicate admission_id " + a.admission_id);
    }
    out.push_back(std::move(a));
  });
  if (notes_path) {
    for_each_jsonl(*notes_path, [&](const json& j, std::size_t) {
      auto id = j.at("admission_id").get<std::string>();
      auto it = index.find(id);
      if (it == index.end()) throw ValidationError("note refers to unknown admission_id " + id);
      out[it->second].notes.push_back(note_from_json(j));
    });
  }
  return out;
}

inline json to_json(const CohortSample& s) {
  return {{"admission_id", s.admission_id},
          {"patient_id", s.patient_id},
          {"note_text", s.note_text},
          {"label_general", s.label_general},
          {"label_30day", s.label_30day}};
}

inline CohortSample sample_from_json(const json& j) {
  CohortSample s{j.at("admission_id").get<std::string>(), j.at("patient_id").get<std::string>(),
                 j.at("note_text").get<std::string>(), j.at("label_general").get<bool>(),
                 j.at("label_30day").get<bool>()};
  if (s.label_30day && !s.label_general) {
    throw ValidationError("sample " + s.admission_id + " is 30-day positive but not general positive");
  }
  return s;
}

inline std::vector<CohortSample> load_cohort(const std::filesystem::path& path) {
  std::vector<CohortSample> out;
  for_each_jsonl(path, [&](const json& j, std::size_t) { out.push_back(sample_from_json(j)); });
  return out;
}

inline json to_json(const CohortStats& s) {
  return {{"all_admissions", s.all_admissions},
          {"all_admissions_with_summary", s.all_with_summary},
          {"general_readmissions", s.general_readmissions},
          {"general_readmissions_with_summary", s.general_with_summary},
          {"readmissions_30day", s.readmissions_30day},
          {"readmissions_30day_with_summary", s.readmissions_30day_with_summary}};
}

inline CohortStats stats_from_json(const json& j) {
  CohortStats s;
  s.all_admissions = j.at("all_admissions").get<std::size_t>();
  s.all_with_summary = j.at("all_admissions_with_summary").get<std::size_t>();
  s.general_readmissions = j.at("general_readmissions").get<std::size_t>();
  s.general_with_summary = j.at("general_readmissions_with_summary").get<std::size_t>();
  s.readmissions_30day = j.at("readmissions_30day").get<std::size_t>();
  s.readmissions_30day_with_summary = j.at("readmissions_30day_with_summary").get<std::size_t>();
  return s;
}

inline json to_json(const DatasetSplit& s) {
  return {{"train", s.train}, {"test", s.test}, {"cv_folds", s.cv_folds}, {"seed", s.seed}};
}

inline DatasetSplit split_from_json(const json& j) {
  DatasetSplit s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  s.cv_folds = j.at("cv_folds").get<std::vector<std::vector<std::string>>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace readmit

#endif  // READMIT_COHORT_HPP
