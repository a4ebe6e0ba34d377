#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtc {

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;    // gold count
  std::size_t predicted = 0;  // predicted count
};

struct EvalReport {
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassScores> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::size_t total = 0;
  std::map<std::string, std::string> metadata;
};

/// Single-label multiclass scores. Micro F1 reduces to accuracy; macro F1
/// averages per-class F1 with F1 = 0 wherever precision + recall = 0.
inline EvalReport evaluate(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& gold,
                           std::size_t num_labels) {
  if (preds.size() != gold.size()) throw std::invalid_argument("evaluate: predictions and gold differ in length");
  if (preds.empty()) throw std::invalid_argument("evaluate: empty input");
  EvalReport r;
  r.total = preds.size();
  r.confusion.assign(num_labels, std::vector<std::size_t>(num_labels, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_labels || gold[i] >= num_labels) throw std::invalid_argument("evaluate: label out of range");
    ++r.confusion[gold[i]][preds[i]];
  }
  std::size_t correct = 0;
  r.per_class.resize(num_labels);
  for (std::size_t c = 0; c < num_labels; ++c) {
    auto& s = r.per_class[c];
    const std::size_t tp = r.confusion[c][c];
    correct += tp;
    for (std::size_t k = 0; k < num_labels; ++k) {
      s.support += r.confusion[c][k];
      s.predicted += r.confusion[k][c];
    }
    s.precision = s.predicted ? static_cast<double>(tp) / static_cast<double>(s.predicted) : 0.0;
    s.recall = s.support ? static_cast<double>(tp) / static_cast<double>(s.support) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    r.macro_f1 += s.f1;
  }
  r.macro_f1 /= static_cast<double>(num_labels);
  r.micro_f1 = static_cast<double>(correct) / static_cast<double>(r.total);
  return r;
}

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string report_text(const EvalReport& r, const std::vector<std::string>& label_names) {
  std::ostringstream out;
  out << "micro_f1 " << fixed(r.micro_f1) << "\n";
  out << "macro_f1 " << fixed(r.macro_f1) << "\n";
  out << "documents " << r.total << "\n\n";
  out << "label\tprecision\trecall\tf1\tsupport\tpredicted\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& s = r.per_class[c];
    out << (c < label_names.size() ? label_names[c] : std::to_string(c)) << '\t' << fixed(s.precision) << '\t'
        << fixed(s.recall) << '\t' << fixed(s.f1) << '\t' << s.support << '\t' << s.predicted << "\n";
  }
  out << "\nconfusion (rows = gold, columns = predicted)\n";
  for (const auto& row : r.confusion) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "\t" : "") << row[k];
    out << "\n";
  }
  if (!r.metadata.empty()) {
    out << "\n";
    for (const auto& [k, v] : r.metadata) out << k << " = " << v << "\n";
  }
  return out.str();
}

/// Machine-readable form: one summary line, one line per class.
inline std::string report_jsonl(const EvalReport& r, const std::vector<std::string>& label_names) {
  std::ostringstream out;
  nlohmann::json summary{{"record", "summary"},
                         {"micro_f1", r.micro_f1},
                         {"macro_f1", r.macro_f1},
                         {"documents", r.total},
                         {"confusion", r.confusion},
                         {"metadata", r.metadata}};
  out << summary.dump() << "\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& s = r.per_class[c];
    nlohmann::json j{{"record", "class"},
                     {"label", c < label_names.size() ? label_names[c] : std::to_string(c)},
                     {"precision", s.precision},
                     {"recall", s.recall},
                     {"f1", s.f1},
                     {"support", s.support},
                     {"predicted", s.predicted}};
    out << j.dump() << "\n";
  }
  return out.str();
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Sample standard deviation (n - 1); zero for a single value.
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    for (double x : xs) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(xs.size() - 1));
  }
  return m;
}

}  // namespace mtc
