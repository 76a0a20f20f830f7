// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Inference routing, accuracy measurement, the T x T accuracy matrix and the
// Transfer / Average / Last metrics derived from it.

#pragma once

#include <charconv>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "afa/backbone.hpp"
#include "afa/dds.hpp"
#include "afa/error.hpp"
#include "afa/linalg.hpp"
#include "afa/model.hpp"
#include "afa/parallel.hpp"

namespace afa {

// Classifies inputs against a fixed candidate set. Class text features are
// computed once per encoder path so repeated predictions only encode the image.
class Predictor {
 public:
  Predictor(const ModelState& state, std::vector<std::size_t> candidates)
      : state_(&state), candidates_(std::move(candidates)) {
    require(!candidates_.empty(), "predict: empty candidate class set");
    require(state.trained_tasks > 0, "predict: no task has been trained");
    const AdapterSet adapters = state.adapters();
    affa_text_ = encode_all(EncoderPath::affa(), adapters);
    for (std::size_t t = 0; t < state.trained_tasks; ++t) {
      abfa_text_.push_back(encode_all(EncoderPath::abfa(t), adapters));
    }
  }

  const std::vector<std::size_t>& candidates() const { return candidates_; }

  Selection route(std::span<const double> x) const {
    return select(state_->bank, encode_image(state_->encoder, x, EncoderPath::frozen()));
  }

  EncoderPath path_for(const Selection& sel) const {
    return sel.seen ? EncoderPath::abfa(sel.task_id) : EncoderPath::affa();
  }

  std::size_t predict(std::span<const double> x) const {
    const EncoderPath path = path_for(route(x));
    const Vector v = encode_image(state_->encoder, x, path, state_->adapters());
    const auto& text =
        path.kind() == EncoderPath::Kind::Affa ? affa_text_ : abfa_text_[path.task_id()];
    std::size_t best = 0;
    double best_sim = cosine(v, text[0]);
    for (std::size_t c = 1; c < text.size(); ++c) {
      const double s = cosine(v, text[c]);
      if (s > best_sim || (s == best_sim && candidates_[c] < candidates_[best])) {
        best_sim = s;
        best = c;
      }
    }
    return candidates_[best];
  }

 private:
  std::vector<Vector> encode_all(const EncoderPath& path, const AdapterSet& adapters) const {
    std::vector<Vector> out;
    out.reserve(candidates_.size());
    for (std::size_t c : candidates_) out.push_back(encode_text(state_->encoder, c, path, adapters));
    return out;
  }

  const ModelState* state_;
  std::vector<std::size_t> candidates_;
  std::vector<Vector> affa_text_;
  std::vector<std::vector<Vector>> abfa_text_;
};

inline std::size_t predict(const ModelState& state, std::span<const double> x,
                           const std::vector<std::size_t>& candidates) {
  return Predictor(state, candidates).predict(x);
}

// Fraction of test samples whose prediction is class_ids[label], with the
// task's own classes as the candidate set.
inline double evaluate_task(const ModelState& state, const std::vector<Vector>& test_x,
                            const std::vector<std::size_t>& test_y,
                            const std::vector<std::size_t>& class_ids, std::size_t threads = 1) {
  require(!test_x.empty(), "evaluate_task: empty test set");
  require(test_x.size() == test_y.size(), "evaluate_task: inputs and labels differ in length");
  for (std::size_t y : test_y) {
    require(y < class_ids.size(), "evaluate_task: label " + std::to_string(y) +
                                      " outside the task's " + std::to_string(class_ids.size()) +
                                      " classes");
  }
  const Predictor predictor(state, class_ids);
  std::vector<unsigned char> correct(test_x.size(), 0);
  parallel_for(test_x.size(), threads, [&](std::size_t i) {
    correct[i] = predictor.predict(test_x[i]) == class_ids[test_y[i]] ? 1 : 0;
  });
  std::size_t hits = 0;
  for (unsigned char c : correct) hits += c;
  return static_cast<double>(hits) / static_cast<double>(test_x.size());
}

// ---------------------------------------------------------------------------
// Accuracy matrix
// ---------------------------------------------------------------------------

class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::vector<std::string> names)
      : names_(std::move(names)),
        values_(names_.size(), names_.size()),
        filled_(names_.size() * names_.size(), false) {
    require(!names_.empty(), "accuracy matrix: needs at least one task");
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const Matrix& values() const { return values_; }

  void set(std::size_t i, std::size_t j, double v) {
    check_index(i, j);
    require(v >= 0.0 && v <= 1.0, "accuracy matrix: value " + std::to_string(v) +
                                      " outside [0, 1]");
    values_(i, j) = v;
    filled_[i * size() + j] = true;
  }

  bool filled(std::size_t i, std::size_t j) const {
    check_index(i, j);
    return filled_[i * size() + j];
  }

  bool row_filled(std::size_t i) const {
    for (std::size_t j = 0; j < size(); ++j) {
      if (!filled(i, j)) return false;
    }
    return true;
  }

  bool complete() const {
    for (bool f : filled_) {
      if (!f) return false;
    }
    return true;
  }

  double at(std::size_t i, std::size_t j) const {
    require(filled(i, j), "accuracy matrix: entry (" + std::to_string(i) + ", " +
                              std::to_string(j) + ") is not filled");
    return values_(i, j);
  }

  friend bool operator==(const AccuracyMatrix& a, const AccuracyMatrix& b) {
    return a.names_ == b.names_ && a.values_ == b.values_ && a.filled_ == b.filled_;
  }

 private:
  void check_index(std::size_t i, std::size_t j) const {
    require(i < size() && j < size(), "accuracy matrix: index (" + std::to_string(i) + ", " +
                                          std::to_string(j) + ") outside " +
                                          std::to_string(size()) + "x" + std::to_string(size()));
  }

  std::vector<std::string> names_;
  Matrix values_;
  std::vector<bool> filled_;
};

// Per-task selection accuracy: entry (i, j) for j <= i is the fraction of
// task-j test samples routed Seen(j) by the bank as it stood after task i.
// For j > i, unseen_rate(i, j) is the fraction flagged Unseen.
struct SelectionTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Matrix accuracy;
  Matrix unseen_rate;

  double min_accuracy() const {
    double m = 1.0;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j <= i && j < cols; ++j) m = std::min(m, accuracy(i, j));
    }
    return m;
  }

  // Pooled over every (i, j > i) cell, weighted equally.
  std::optional<double> min_unseen_rate() const {
    std::optional<double> m;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = i + 1; j < cols; ++j) m = std::min(m.value_or(1.0), unseen_rate(i, j));
    }
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json acc = nlohmann::json::array();
    nlohmann::json unseen = nlohmann::json::array();
    for (std::size_t i = 0; i < rows; ++i) {
      nlohmann::json ra = nlohmann::json::array();
      nlohmann::json ru = nlohmann::json::array();
      for (std::size_t j = 0; j < cols; ++j) {
        ra.push_back(j <= i ? nlohmann::json(accuracy(i, j)) : nlohmann::json(nullptr));
        ru.push_back(j > i ? nlohmann::json(unseen_rate(i, j)) : nlohmann::json(nullptr));
      }
      acc.push_back(ra);
      unseen.push_back(ru);
    }
    return {{"selection_accuracy", acc}, {"unseen_rate", unseen}};
  }
};

// `rows` prefixes of the bank (default: every trained task) against every
// given test set.
inline SelectionTable task_selection_table(const ModelState& state,
                                           const std::vector<std::vector<Vector>>& test_sets,
                                           std::optional<std::size_t> rows = std::nullopt,
                                           std::size_t threads = 1) {
  const std::size_t r = rows.value_or(state.trained_tasks);
  require(r >= 1, "task_selection_table: no trained task requested");
  require(r <= state.trained_tasks, "task_selection_table: " + std::to_string(r) +
                                        " rows requested but only " +
                                        std::to_string(state.trained_tasks) + " tasks trained");
  require(test_sets.size() >= r, "task_selection_table: missing test sets for trained tasks");
  SelectionTable table{r, test_sets.size(), Matrix(r, test_sets.size()),
                       Matrix(r, test_sets.size())};
  std::vector<TaskPrototypeBank> banks;
  for (std::size_t i = 0; i < r; ++i) banks.push_back(state.bank.prefix(i + 1));
  for (std::size_t j = 0; j < test_sets.size(); ++j) {
    const auto& xs = test_sets[j];
    require(!xs.empty(), "task_selection_table: test set " + std::to_string(j) + " is empty");
    std::vector<std::vector<Selection>> sel(xs.size());
    parallel_for(xs.size(), threads, [&](std::size_t n) {
      const Vector f = encode_image(state.encoder, xs[n], EncoderPath::frozen());
      for (const auto& b : banks) sel[n].push_back(select(b, f));
    });
    for (std::size_t i = 0; i < r; ++i) {
      std::size_t seen_j = 0, unseen = 0;
      for (const auto& s : sel) {
        if (s[i].seen && s[i].task_id == j) ++seen_j;
        if (!s[i].seen) ++unseen;
      }
      const double denom = static_cast<double>(xs.size());
      if (j <= i) table.accuracy(i, j) = static_cast<double>(seen_j) / denom;
      if (j > i) table.unseen_rate(i, j) = static_cast<double>(unseen) / denom;
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::vector<std::string> names;
  std::vector<std::optional<double>> transfer;  // undefined for the first task
  std::vector<double> average;
  std::vector<double> last;
  std::optional<double> transfer_mean;          // undefined when T = 1
  double average_mean = 0.0;
  double last_mean = 0.0;
  std::optional<SelectionTable> selection;

  nlohmann::json to_json() const;
  std::string to_csv() const;
  std::string to_table() const;
};

inline MetricsReport metrics(const AccuracyMatrix& m) {
  require(m.size() > 0, "metrics: empty matrix");
  require(m.complete(), "metrics: the accuracy matrix is only partially filled");
  const std::size_t t = m.size();
  MetricsReport r;
  r.names = m.names();
  double transfer_sum = 0.0;
  for (std::size_t j = 0; j < t; ++j) {
    if (j == 0) {
      r.transfer.push_back(std::nullopt);
    } else {
      double s = 0.0;
      for (std::size_t i = 0; i < j; ++i) s += m.at(i, j);
      r.transfer.push_back(s / static_cast<double>(j));
      transfer_sum += *r.transfer.back();
    }
    double col = 0.0;
    for (std::size_t i = 0; i < t; ++i) col += m.at(i, j);
    r.average.push_back(col / static_cast<double>(t));
    r.last.push_back(m.at(t - 1, j));
    r.average_mean += r.average.back();
    r.last_mean += r.last.back();
  }
  if (t > 1) r.transfer_mean = transfer_sum / static_cast<double>(t - 1);
  r.average_mean /= static_cast<double>(t);
  r.last_mean /= static_cast<double>(t);
  return r;
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", fraction * 100.0);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) throw FormatError(where + ": empty value");
  double v = 0.0;
  auto res = std::from_chars(s.data() + b, s.data() + e + 1, v);
  if (res.ec != std::errc() || res.ptr != s.data() + e + 1) {
    throw FormatError(where + ": '" + s + "' is not a number");
  }
  return v;
}

}  // namespace detail

// Header row of task names, then one row per training stage.
inline std::string matrix_to_csv(const AccuracyMatrix& m) {
  std::string out;
  for (std::size_t j = 0; j < m.size(); ++j) {
    require(m.names()[j].find_first_of(",\n") == std::string::npos,
            "matrix csv: task name '" + m.names()[j] + "' contains a separator");
    out += (j ? "," : "") + m.names()[j];
  }
  out += "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      out += (j ? "," : "") + (m.filled(i, j) ? format_double(m.at(i, j)) : std::string());
    }
    out += "\n";
  }
  return out;
}

inline AccuracyMatrix matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<std::string>> lines;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(detail::split_csv_line(line));
  }
  if (lines.empty()) throw FormatError("matrix csv: no header row");
  std::vector<std::string> names = lines.front();
  const std::size_t t = names.size();
  if (lines.size() != t + 1) {
    throw FormatError("matrix csv: " + std::to_string(t) + " task columns but " +
                      std::to_string(lines.size() - 1) + " rows");
  }
  AccuracyMatrix m(names);
  for (std::size_t i = 0; i < t; ++i) {
    const auto& row = lines[i + 1];
    if (row.size() != t) {
      throw FormatError("matrix csv: row " + std::to_string(i + 1) + " has " +
                        std::to_string(row.size()) + " cells, expected " + std::to_string(t));
    }
    for (std::size_t j = 0; j < t; ++j) {
      if (row[j].find_first_not_of(" \t") == std::string::npos) continue;
      const std::string where = "matrix csv (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")";
      const double v = detail::parse_double(row[j], where);
      if (!(v >= 0.0 && v <= 1.0)) throw FormatError(where + ": value outside [0, 1]");
      m.set(i, j, v);
    }
  }
  return m;
}

inline nlohmann::json MetricsReport::to_json() const {
  nlohmann::json tasks = nlohmann::json::array();
  for (std::size_t j = 0; j < names.size(); ++j) {
    tasks.push_back({{"name", names[j]},
                     {"transfer", transfer[j] ? nlohmann::json(*transfer[j]) : nlohmann::json(nullptr)},
                     {"average", average[j]},
                     {"last", last[j]}});
  }
  nlohmann::json j = {
      {"tasks", tasks},
      {"overall",
       {{"transfer", transfer_mean ? nlohmann::json(*transfer_mean) : nlohmann::json(nullptr)},
        {"average", average_mean},
        {"last", last_mean}}}};
  if (selection) j["task_selection"] = selection->to_json();
  return j;
}

inline std::string MetricsReport::to_csv() const {
  std::string out = "metric";
  for (const auto& n : names) out += "," + n;
  out += ",mean\n";
  out += "transfer";
  for (const auto& t : transfer) out += "," + (t ? format_double(*t) : std::string());
  out += "," + (transfer_mean ? format_double(*transfer_mean) : std::string()) + "\n";
  out += "average";
  for (double a : average) out += "," + format_double(a);
  out += "," + format_double(average_mean) + "\n";
  out += "last";
  for (double l : last) out += "," + format_double(l);
  out += "," + format_double(last_mean) + "\n";
  return out;
}

// Percentages with one decimal, columns padded to a common width.
inline std::string MetricsReport::to_table() const {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Metric"};
  header.insert(header.end(), names.begin(), names.end());
  header.push_back("Mean");
  rows.push_back(header);
  std::vector<std::string> tr{"Transfer"};
  for (const auto& t : transfer) tr.push_back(t ? format_percent(*t) : "-");
  tr.push_back(transfer_mean ? format_percent(*transfer_mean) : "-");
  rows.push_back(tr);
  std::vector<std::string> av{"Average"};
  for (double a : average) av.push_back(format_percent(a));
  av.push_back(format_percent(average_mean));
  rows.push_back(av);
  std::vector<std::string> la{"Last"};
  for (double l : last) la.push_back(format_percent(l));
  la.push_back(format_percent(last_mean));
  rows.push_back(la);

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c == 0) {
        out += r[c] + std::string(width[c] - r[c].size(), ' ');
      } else {
        out += "  " + std::string(width[c] - r[c].size(), ' ') + r[c];
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace afa
