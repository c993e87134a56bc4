#ifndef READMIT_RECORDS_HPP
#define READMIT_RECORDS_HPP

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "readmit/error.hpp"
#include "readmit/io.hpp"

namespace readmit {

enum class NoteCategory { kDischargeSummary, kOther };

struct NoteRecord {
  std::string note_id;
  NoteCategory category = NoteCategory::kOther;
  std::string text;
};

struct AdmissionRecord {
  std::string patient_id;
  std::string admission_id;
  std::int64_t admit_time = 0;      // UTC seconds
  std::int64_t discharge_time = 0;  // UTC seconds
  std::vector<std::string> icd9_codes;
  std::vector<NoteRecord> notes;
};

struct CohortSample {
  std::string admission_id;
  std::string patient_id;
  std::string note_text;
  bool label_general = false;
  bool label_30day = false;
};

enum class Task { kGeneral, kThirtyDay };

inline std::string_view to_string(Task t) { return t == Task::kGeneral ? "general" : "30day"; }

inline Task parse_task(std::string_view s) {
  if (s == "general") return Task::kGeneral;
  if (s == "30day") return Task::kThirtyDay;
  throw ArgumentError("unknown task '" + std::string(s) + "' (expected general|30day)");
}

inline bool label_of(const CohortSample& s, Task task) {
  return task == Task::kGeneral ? s.label_general : s.label_30day;
}

inline NoteCategory parse_note_category(std::string_view s) {
  std::string lower;
  for (char c : s) lower.push_back(c == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "discharge_summary" ? NoteCategory::kDischargeSummary : NoteCategory::kOther;
}

inline json to_json(const NoteRecord& n) {
  return {{"note_id", n.note_id},
          {"category", n.category == NoteCategory::kDischargeSummary ? "discharge_summary" : "other"},
          {"text", n.text}};
}

inline NoteRecord note_from_json(const json& j) {
  return {j.at("note_id").get<std::string>(),
          parse_note_category(j.at("category").get<std::string>()),
          j.at("text").get<std::string>()};
}

inline json to_json(const AdmissionRecord& a, bool with_notes = true) {
  json j = {{"patient_id", a.patient_id},
            {"admission_id", a.admission_id},
            {"admit_time", format_iso8601(a.admit_time)},
            {"discharge_time", format_iso8601(a.discharge_time)},
            {"icd9_codes", a.icd9_codes}};
  if (with_notes) {
    j["notes"] = json::array();
    for (const auto& n : a.notes) j["notes"].push_back(to_json(n));
  }
  return j;
}

inline AdmissionRecord admission_from_json(const json& j) {
  AdmissionRecord a;
  a.patient_id = j.at("patient_id").get<std::string>();
  a.admission_id = j.at("admission_id").get<std::string>();
  a.admit_time = parse_iso8601(j.at("admit_time").get<std::string>());
  a.discharge_time = parse_iso8601(j.at("discharge_time").get<std::string>());
  a.icd9_codes = j.at("icd9_codes").get<std::vector<std::string>>();
  if (j.contains("notes")) {
    for (const auto& n : j.at("notes")) a.notes.push_back(note_from_json(n));
  }
  if (a.discharge_time < a.admit_time) {
    throw ValidationError("admission " + a.admission_id + ": discharge_time precedes admit_time");
  }
  return a;
}

}  // namespace readmit

#endif  // READMIT_RECORDS_HPP
