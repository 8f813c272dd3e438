#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bass/error.hpp"

namespace bass {

// counts(t, p) = number of samples of true class t predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  ConfusionMatrix(std::size_t classes, std::vector<std::uint64_t> counts) : classes_(classes), counts_(std::move(counts)) {
    require(counts_.size() == classes_ * classes_, "ConfusionMatrix: need C*C counts");
  }

  std::size_t classes() const { return classes_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts_[truth * classes_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < classes_; ++i) s += (*this)(i, i);
    return s;
  }
  std::uint64_t row_sum(std::size_t t) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < classes_; ++p) s += (*this)(t, p);
    return s;
  }
  std::uint64_t col_sum(std::size_t p) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < classes_; ++t) s += (*this)(t, p);
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> pred, std::span<const std::size_t> truth,
                                 std::size_t classes) {
  require(pred.size() == truth.size(), "confusion: prediction and truth lengths differ");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= classes || truth[i] >= classes) {
      fail(ErrorKind::contract, "confusion: class index outside [0, " + std::to_string(classes) + ")");
    }
    ++cm(truth[i], pred[i]);
  }
  return cm;
}

struct BinaryCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  friend bool operator==(const BinaryCounts&, const BinaryCounts&) = default;
};

// One-vs-rest reduction for class c.
inline BinaryCounts per_class_binary(const ConfusionMatrix& cm, std::size_t c) {
  if (c >= cm.classes()) fail(ErrorKind::contract, "per_class_binary: class " + std::to_string(c) + " out of range");
  BinaryCounts b;
  b.tp = cm(c, c);
  b.fp = cm.col_sum(c) - b.tp;
  b.fn = cm.row_sum(c) - b.tp;
  b.tn = cm.total() - b.tp - b.fp - b.fn;
  return b;
}

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
};

namespace detail {
// 0/0 is taken as 0 so empty classes keep macro averages defined.
inline double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
}  // namespace detail

inline Prf prf(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const double t = static_cast<double>(tp), p = static_cast<double>(fp), n = static_cast<double>(fn);
  return {detail::ratio(t, t + p), detail::ratio(t, t + n), detail::ratio(2 * t, 2 * t + p + n)};
}

struct MicroMacro {
  Prf micro;
  Prf macro;
};

// Micro: sum the one-vs-rest counts, then apply the metric. Macro: mean of per-class
// metrics over all C classes, including classes absent from the evaluated set.
inline MicroMacro micro_macro(const ConfusionMatrix& cm) {
  MicroMacro r;
  std::uint64_t tp = 0, fp = 0, fn = 0;
  const std::size_t C = cm.classes();
  for (std::size_t c = 0; c < C; ++c) {
    const auto b = per_class_binary(cm, c);
    tp += b.tp;
    fp += b.fp;
    fn += b.fn;
    const auto m = prf(b.tp, b.fp, b.fn);
    r.macro.precision += m.precision;
    r.macro.recall += m.recall;
    r.macro.f_score += m.f_score;
  }
  if (C > 0) {
    r.macro.precision /= static_cast<double>(C);
    r.macro.recall /= static_cast<double>(C);
    r.macro.f_score /= static_cast<double>(C);
  }
  r.micro = prf(tp, fp, fn);
  return r;
}

// Cohen's kappa. A matrix with chance agreement p_e == 1 (everything in one cell)
// has kappa 1 when observed agreement is also 1.
inline double kappa(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) fail(ErrorKind::contract, "kappa: empty confusion matrix");
  const double n = static_cast<double>(total);
  const double p0 = static_cast<double>(cm.trace()) / n;
  double pe = 0.0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
  }
  pe /= n * n;
  if (pe == 1.0) {
    if (p0 == 1.0) return 1.0;
    fail(ErrorKind::numerical, "kappa: undefined for chance agreement 1");
  }
  return (p0 - pe) / (1.0 - pe);
}

inline double overall_accuracy(const ConfusionMatrix& cm) {
  return detail::ratio(static_cast<double>(cm.trace()), static_cast<double>(cm.total()));
}

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<std::uint64_t> class_support;
  std::vector<double> per_class_accuracy;
  double overall_accuracy = 0.0;
  Prf micro;
  Prf macro;
  double kappa = 0.0;
  std::uint64_t samples = 0;
};

inline MetricsReport make_report(const ConfusionMatrix& cm, std::vector<std::string> names = {}) {
  MetricsReport r;
  const std::size_t C = cm.classes();
  if (names.empty()) {
    for (std::size_t c = 0; c < C; ++c) names.push_back(std::to_string(c + 1));
  }
  require(names.size() == C, "make_report: class name count mismatch");
  r.class_names = std::move(names);
  for (std::size_t c = 0; c < C; ++c) {
    r.class_support.push_back(cm.row_sum(c));
    r.per_class_accuracy.push_back(detail::ratio(static_cast<double>(cm(c, c)), static_cast<double>(cm.row_sum(c))));
  }
  r.overall_accuracy = overall_accuracy(cm);
  const auto mm = micro_macro(cm);
  r.micro = mm.micro;
  r.macro = mm.macro;
  r.kappa = cm.total() > 0 ? kappa(cm) : 0.0;
  r.samples = cm.total();
  return r;
}

inline nlohmann::json to_json(const Prf& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f_score", p.f_score}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.class_names.size(); ++c) {
    classes.push_back({{"name", r.class_names[c]}, {"support", r.class_support[c]}, {"accuracy", r.per_class_accuracy[c]}});
  }
  return {{"classes", classes},      {"overall_accuracy", r.overall_accuracy},
          {"micro", to_json(r.micro)}, {"macro", to_json(r.macro)},
          {"kappa", r.kappa},          {"samples", r.samples}};
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < cm.classes(); ++p) row.push_back(cm(t, p));
    rows.push_back(row);
  }
  return rows;
}

inline ConfusionMatrix confusion_from_json(const nlohmann::json& rows) {
  if (!rows.is_array()) fail(ErrorKind::data, "confusion matrix must be an array of rows");
  const std::size_t C = rows.size();
  ConfusionMatrix cm(C);
  for (std::size_t t = 0; t < C; ++t) {
    if (!rows[t].is_array() || rows[t].size() != C) fail(ErrorKind::data, "confusion matrix must be square");
    for (std::size_t p = 0; p < C; ++p) {
      if (!rows[t][p].is_number_unsigned()) fail(ErrorKind::data, "confusion counts must be non-negative integers");
      cm(t, p) = rows[t][p].get<std::uint64_t>();
    }
  }
  return cm;
}

// Class rows with accuracy in percent, then OA, then the summary statistics.
inline std::string to_table(const MetricsReport& r) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %10s %10s\n", "Class", "Samples", "Acc (%)");
  out += line;
  for (std::size_t c = 0; c < r.class_names.size(); ++c) {
    std::snprintf(line, sizeof line, "%-8s %10llu %10.2f\n", r.class_names[c].c_str(),
                  static_cast<unsigned long long>(r.class_support[c]), 100.0 * r.per_class_accuracy[c]);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-8s %10llu %10.2f\n", "OA", static_cast<unsigned long long>(r.samples),
                100.0 * r.overall_accuracy);
  out += line;
  out += "\n";
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s\n", "", "precision", "recall", "F-score");
  out += line;
  std::snprintf(line, sizeof line, "%-16s %10.4f %10.4f %10.4f\n", "micro-averaged", r.micro.precision, r.micro.recall,
                r.micro.f_score);
  out += line;
  std::snprintf(line, sizeof line, "%-16s %10.4f %10.4f %10.4f\n", "macro-averaged", r.macro.precision, r.macro.recall,
                r.macro.f_score);
  out += line;
  std::snprintf(line, sizeof line, "%-16s %10.4f\n", "kappa", r.kappa);
  out += line;
  return out;
}

}  // namespace bass
