// Copyright 2026 The advforge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

// Metrics: attack success rate, macro-F1, adversarial finetuning on an
// out-of-distribution challenge set, and Fleiss' kappa for external
// annotation tables.

#include <set>

#include "advforge/advgen.hpp"

namespace advforge::eval {

using advgen::AttackRecord;

// The classifier input of a record's generated text, re-tokenized.
inline TokenSequence record_input(const AttackRecord& r, TaskKind task, const Vocab& vocab) {
  if (task == TaskKind::single_text) return tokenize(r.generated, vocab);
  if (!r.premise) throw Error("attack record " + r.seed_id + " has no premise");
  TokenSequence s = tokenize(*r.premise, vocab);
  s.push_back(Vocab::kSep, "<sep>");
  s.append(tokenize(r.generated, vocab));
  return s;
}

// Percentage of records whose generated text `model` assigns to y'.
inline double attack_success_rate(const std::vector<AttackRecord>& records,
                                  const nnet::ClassifierModel& model, TaskKind task,
                                  const Vocab& vocab) {
  if (records.empty()) throw Error("attack_success_rate: no records");
  std::size_t hits = 0;
  for (const auto& r : records) {
    hits += model.predict(record_input(r, task, vocab).ids) == r.y_prime;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
}

// Unweighted mean of per-class F1; a class absent from both predictions
// and gold labels contributes 0.
inline double macro_f1(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds,
                       std::size_t num_classes) {
  if (preds.size() != golds.size()) {
    throw Error("macro_f1: " + std::to_string(preds.size()) + " predictions vs " +
                std::to_string(golds.size()) + " gold labels");
  }
  if (preds.empty()) throw Error("macro_f1: empty input");
  if (num_classes < 1) throw Error("macro_f1: num_classes must be >= 1");
  std::vector<double> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_classes || golds[i] >= num_classes) throw Error("macro_f1: label out of range");
    if (preds[i] == golds[i]) {
      tp[preds[i]] += 1;
    } else {
      fp[preds[i]] += 1;
      fn[golds[i]] += 1;
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    sum += denom > 0 ? 2 * tp[c] / denom : 0.0;
  }
  return sum / static_cast<double>(num_classes);
}

inline double dataset_macro_f1(const nnet::ClassifierModel& model, const Dataset& d) {
  std::vector<std::size_t> preds, golds;
  for (const auto& ex : d.examples) {
    preds.push_back(model.predict(classifier_input(ex).ids));
    golds.push_back(ex.gold_label);
  }
  return macro_f1(preds, golds, d.num_classes());
}

// Adversarial records as a labeled dataset (label = y'). By default only
// successful records are kept.
inline Dataset records_to_dataset(const std::vector<AttackRecord>& records, TaskKind task,
                                  const Vocab& vocab, const std::vector<std::string>& label_names,
                                  bool successful_only = true) {
  Dataset d;
  d.task = task;
  d.label_names = label_names;
  for (const auto& r : records) {
    if (successful_only && !r.success) continue;
    Example ex;
    ex.id = r.seed_id + "/" + advgen::to_string(r.method);
    ex.task = task;
    if (task == TaskKind::single_text) {
      ex.text = tokenize(r.generated, vocab);
    } else {
      ex.premise = tokenize(r.premise.value_or(""), vocab);
      ex.hypothesis = tokenize(r.generated, vocab);
    }
    if (r.y_prime >= label_names.size()) throw Error("record " + r.seed_id + ": y_prime out of range");
    ex.gold_label = r.y_prime;
    d.examples.push_back(std::move(ex));
  }
  return d;
}

struct EvalReport {
  std::string method;
  std::optional<double> adv1_rate;
  std::optional<double> adv2_rate;
  std::size_t n = 0;
  std::optional<double> macro_f1_before;
  std::optional<double> macro_f1_after;
  std::string notes;
};

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["adv1_rate"] = opt(r.adv1_rate);
  j["adv2_rate"] = opt(r.adv2_rate);
  j["n"] = r.n;
  j["macro_f1_before"] = opt(r.macro_f1_before);
  j["macro_f1_after"] = opt(r.macro_f1_after);
  j["notes"] = r.notes;
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<double>();
  };
  EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.adv1_rate = opt("adv1_rate");
  r.adv2_rate = opt("adv2_rate");
  r.n = j.at("n").get<std::size_t>();
  r.macro_f1_before = opt("macro_f1_before");
  r.macro_f1_after = opt("macro_f1_after");
  r.notes = j.value("notes", "");
  return r;
}

// Finetune defaults: 3 epochs at one tenth of the training learning rate,
// no early stopping.
inline nnet::TrainConfig default_finetune_config() {
  nnet::TrainConfig c;
  c.learning_rate = 2e-5;
  c.max_epochs = 3;
  c.early_stopping = false;
  return c;
}

struct OodResult {
  EvalReport report;
  nnet::ClassifierModel finetuned;
  std::vector<std::string> warnings;
};

inline std::string example_key(const Example& ex) {
  return detokenize(classifier_input(ex));
}

// Finetunes a copy of `model` on the first n adversarial examples and
// reports macro-F1 on `eval_set` before and after. `model` is untouched.
inline OodResult ood_finetune(const nnet::ClassifierModel& model, const Dataset& adversarial_set,
                              const Dataset& eval_set, const nnet::TrainConfig& config,
                              std::size_t n = 150) {
  if (n == 0) throw Error("finetune n must be >= 1");
  if (n > adversarial_set.size()) {
    throw Error("finetune n=" + std::to_string(n) + " exceeds the " +
                std::to_string(adversarial_set.size()) + " available adversarial examples");
  }
  if (eval_set.empty()) throw Error("finetune eval set is empty");
  OodResult out;
  std::set<std::string> eval_keys;
  for (const auto& ex : eval_set.examples) eval_keys.insert(example_key(ex));
  Dataset train = adversarial_set;
  train.examples.resize(n);
  std::size_t overlap = 0;
  for (const auto& ex : train.examples) overlap += eval_keys.count(example_key(ex));
  if (overlap > 0) {
    out.warnings.push_back("finetune set overlaps the eval set in " + std::to_string(overlap) +
                           " of " + std::to_string(n) + " examples (not disjoint)");
  }
  out.report.method = "finetune-ood";
  out.report.n = n;
  out.report.macro_f1_before = dataset_macro_f1(model, eval_set);
  out.finetuned = model;
  nnet::fit_classifier(out.finetuned, train, train, config);
  out.report.macro_f1_after = dataset_macro_f1(out.finetuned, eval_set);
  for (const auto& w : out.warnings) {
    if (!out.report.notes.empty()) out.report.notes += "; ";
    out.report.notes += w;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fleiss' kappa

struct AnnotationTable {
  std::vector<std::vector<long>> counts;  // items x categories

  std::size_t raters() const {
    long n = 0;
    if (!counts.empty()) {
      for (long c : counts.front()) n += c;
    }
    return static_cast<std::size_t>(n);
  }

  void validate() const {
    if (counts.empty()) throw Error("annotation table has no items");
    const std::size_t k = counts.front().size();
    if (k < 1) throw Error("annotation table has no categories");
    const long n = static_cast<long>(raters());
    if (n < 2) throw Error("annotation table needs at least 2 raters per item");
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i].size() != k) throw Error("annotation row " + std::to_string(i + 1) + ": wrong column count");
      long sum = 0;
      for (long c : counts[i]) {
        if (c < 0) throw Error("annotation row " + std::to_string(i + 1) + ": negative count");
        sum += c;
      }
      if (sum != n) {
        throw Error("annotation row " + std::to_string(i + 1) + " sums to " + std::to_string(sum) +
                    ", expected " + std::to_string(n));
      }
    }
  }
};

inline double fleiss_kappa(const AnnotationTable& table) {
  table.validate();
  const double items = static_cast<double>(table.counts.size());
  const double n = static_cast<double>(table.raters());
  const std::size_t k = table.counts.front().size();
  std::vector<double> marg(k, 0.0);
  double p_bar = 0.0;
  for (const auto& row : table.counts) {
    double sq = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
      marg[j] += static_cast<double>(row[j]);
    }
    p_bar += (sq - n) / (n * (n - 1.0));
  }
  p_bar /= items;
  double p_e = 0.0;
  for (double m : marg) {
    const double p = m / (items * n);
    p_e += p * p;
  }
  if (p_e == 1.0) {
    if (p_bar == 1.0) return 1.0;
    throw Error("degenerate marginals");
  }
  return (p_bar - p_e) / (1.0 - p_e);
}

// Rows are items, columns category counts; a non-numeric first row is
// taken as a header.
inline AnnotationTable parse_annotation_csv(const std::string& text) {
  AnnotationTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<long> row;
    std::istringstream cells(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(cells, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      cell = b == std::string::npos ? "" : cell.substr(b, e - b + 1);
      try {
        std::size_t used = 0;
        const long v = std::stol(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (t.counts.empty() && lineno == 1) continue;  // header
      throw Error("annotation csv line " + std::to_string(lineno) + ": non-integer cell \"" + cell + "\"");
    }
    t.counts.push_back(std::move(row));
  }
  t.validate();
  return t;
}

inline AnnotationTable load_annotation_csv(const std::filesystem::path& path) {
  return parse_annotation_csv(read_file(path));
}

}  // namespace advforge::eval
