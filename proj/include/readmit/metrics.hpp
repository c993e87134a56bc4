#ifndef READMIT_METRICS_HPP
#define READMIT_METRICS_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

#include "readmit/error.hpp"
#include "readmit/io.hpp"

namespace readmit {

/// Counts with readmission as the positive class.
struct ConfusionMatrix {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

/// A classifier's output for one sample.
struct Prediction {
  double probability = 0.0;  // of the positive (readmission) class
  bool label = false;
};

struct MetricReport {
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;
  bool degenerate = false;  // some ratio was 0/0 and reported as 0
  ConfusionMatrix counts;
  std::string task;   // general | 30day
  std::string model;  // cnn | rf
};

inline ConfusionMatrix confusion(std::span<const bool> predicted, std::span<const bool> truth) {
  if (predicted.size() != truth.size()) {
    throw ArgumentError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(truth.size()) + " labels");
  }
  if (truth.empty()) throw ArgumentError("confusion: no samples");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i]) {
      truth[i] ? ++cm.tp : ++cm.fp;
    } else {
      truth[i] ? ++cm.fn : ++cm.tn;
    }
  }
  return cm;
}

/// Harmonic mean; 0 when both inputs are 0.
inline double f1_from(double precision, double recall) {
  double denom = precision + recall;
  return denom > 0 ? 2.0 * precision * recall / denom : 0.0;
}

inline MetricReport report(const ConfusionMatrix& cm, std::string task = {}, std::string model = {}) {
  if (cm.total() == 0) throw ArgumentError("report: empty confusion matrix");
  MetricReport r;
  r.counts = cm;
  r.task = std::move(task);
  r.model = std::move(model);
  auto ratio = [&](std::uint64_t num, std::uint64_t den) {
    if (den == 0) {
      r.degenerate = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(cm.tp, cm.tp + cm.fp);
  r.recall = ratio(cm.tp, cm.tp + cm.fn);
  if (r.precision + r.recall == 0.0) r.degenerate = true;
  r.f1 = f1_from(r.precision, r.recall);
  r.accuracy = ratio(cm.tp + cm.tn, cm.total());
  return r;
}

/// Half-away-from-zero rounding for display.
inline double round_to(double x, int digits) {
  double scale = std::pow(10.0, digits);
  return std::round(x * scale) / scale;
}

inline json to_json(const MetricReport& r) {
  return {{"task", r.task},
          {"model", r.model},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"accuracy", r.accuracy},
          {"degenerate", r.degenerate},
          {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}}};
}

inline MetricReport report_from_json(const json& j) {
  MetricReport r;
  r.task = j.at("task").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.degenerate = j.at("degenerate").get<bool>();
  const auto& c = j.at("counts");
  r.counts = {c.at("tp").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(),
              c.at("fn").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>()};
  return r;
}

inline std::string task_label(std::string_view task) {
  return task == "30day" ? "30day readmission" : "General readmission";
}

inline std::string model_label(std::string_view model) {
  if (model == "cnn") return "Deep learning (CNN)";
  if (model == "rf") return "Random forest (TF-IDF)";
  return std::string(model);
}

inline std::string format_table_header() {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-20s %-24s %6s %6s %6s %8s\n", "Task", "Model", "Prec", "Rec", "F1", "Acc");
  return buf;
}

/// One aligned row: P/R/F1 at 3 d.p., accuracy as a percentage at 2 d.p.
inline std::string format_table_row(const MetricReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-20s %-24s %6.3f %6.3f %6.3f %7.2f%%\n", task_label(r.task).c_str(),
                model_label(r.model).c_str(), round_to(r.precision, 3), round_to(r.recall, 3),
                round_to(r.f1, 3), round_to(r.accuracy * 100.0, 2));
  return buf;
}

}  // namespace readmit

#endif  // READMIT_METRICS_HPP
