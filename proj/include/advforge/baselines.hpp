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

// Word-substitution baselines: a TextFooler-style black-box attack
// (deletion importance + nearest-neighbour substitution) and a word-level
// HotFlip white-box attack (first-order flip scoring).

#include "advforge/advgen.hpp"

namespace advforge::baselines {

using attribution::Predictor;

struct SubstitutionCandidate {
  std::size_t position = 0;
  TokenId original = Vocab::kUnk;
  TokenId replacement = Vocab::kUnk;
  double score = 0.0;
  double similarity = 0.0;

  friend bool operator==(const SubstitutionCandidate&, const SubstitutionCandidate&) = default;
};

struct AttackBudget {
  std::optional<std::size_t> max_substitutions;  // unset: ceil(0.3 * attackable length)
  double sim_threshold = 0.5;
  std::size_t neighbor_count = 10;

  std::size_t limit(std::size_t len) const {
    if (max_substitutions) {
      if (*max_substitutions < 1) throw Error("max_substitutions must be >= 1");
      return *max_substitutions;
    }
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(len))));
  }

  void validate() const {
    if (max_substitutions && *max_substitutions < 1) throw Error("max_substitutions must be >= 1");
    if (neighbor_count < 1) throw Error("neighbor_count must be >= 1");
  }
};

struct BaselineResult {
  TokenSequence perturbed;  // full classifier input
  std::vector<SubstitutionCandidate> substitutions;
  bool flipped = false;
  bool no_op = false;
  std::size_t queries = 0;
};

// importance_i = p(S)[y] - p(S with position i masked)[y]. Special tokens
// are never masked, so their importance is exactly 0.
inline std::vector<double> word_importance_by_deletion(const Predictor& predict,
                                                       const TokenSequence& tokens, std::size_t y,
                                                       std::size_t* queries = nullptr) {
  if (tokens.empty()) throw Error("word importance: empty token sequence");
  const double base = predict(tokens)(static_cast<Eigen::Index>(y));
  std::size_t calls = 1;
  std::vector<double> imp(tokens.size(), 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (attribution::is_special(tokens.ids[i])) continue;
    TokenSequence masked = tokens;
    masked.ids[i] = Vocab::kMask;
    imp[i] = base - predict(masked)(static_cast<Eigen::Index>(y));
    ++calls;
  }
  if (queries) *queries += calls;
  return imp;
}

// Positions an attack may change: the hypothesis for pair tasks, the whole
// text otherwise; special tokens never.
inline std::vector<std::size_t> attackable_positions(const Example& ex) {
  const std::size_t offset = ex.task == TaskKind::pair ? ex.premise.size() + 1 : 0;
  const TokenSequence input = classifier_input(ex);
  std::vector<std::size_t> out;
  for (std::size_t i = offset; i < input.size(); ++i) {
    if (!attribution::is_special(input.ids[i])) out.push_back(i);
  }
  return out;
}

inline Mat row_normalized(const Mat& m) {
  Mat out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

// Up to `count` most cosine-similar non-reserved words with similarity at
// least `threshold`; ties go to the lower id.
inline std::vector<std::pair<TokenId, double>> nearest_neighbors(const Mat& unit_embeddings,
                                                                 TokenId word, std::size_t count,
                                                                 double threshold,
                                                                 std::size_t reserved) {
  const RowVec sims = unit_embeddings.row(word) * unit_embeddings.transpose();
  std::vector<std::pair<TokenId, double>> cands;
  for (Eigen::Index j = static_cast<Eigen::Index>(reserved); j < sims.size(); ++j) {
    if (j == word || sims(j) < threshold) continue;
    cands.emplace_back(static_cast<TokenId>(j), std::clamp(sims(j), -1.0, 1.0));
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (cands.size() > count) cands.resize(count);
  return cands;
}

inline std::size_t argmax_of(const RowVec& p) { return argmax(p); }

inline BaselineResult textfooler_attack(const Predictor& predict, const Example& ex,
                                        const Mat& unit_embeddings, const AttackBudget& budget,
                                        std::size_t y, const Vocab& vocab) {
  budget.validate();
  BaselineResult r;
  r.perturbed = classifier_input(ex);
  const auto positions = attackable_positions(ex);
  const std::size_t limit = budget.limit(positions.size());
  const auto imp = word_importance_by_deletion(predict, r.perturbed, y, &r.queries);
  std::vector<std::size_t> order = positions;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });

  bool any_neighbor = false;
  double current = predict(r.perturbed)(static_cast<Eigen::Index>(y));
  ++r.queries;
  for (std::size_t pos : order) {
    if (r.substitutions.size() >= limit || r.flipped) break;
    const TokenId orig = r.perturbed.ids[pos];
    const auto neigh = nearest_neighbors(unit_embeddings, orig, budget.neighbor_count,
                                         budget.sim_threshold, vocab.reserved_count());
    if (neigh.empty()) continue;
    any_neighbor = true;
    std::optional<SubstitutionCandidate> best;
    RowVec best_probs;
    for (const auto& [w, sim] : neigh) {
      TokenSequence trial = r.perturbed;
      trial.ids[pos] = w;
      const RowVec p = predict(trial);
      ++r.queries;
      const double gain = current - p(static_cast<Eigen::Index>(y));
      if (gain > 0 && (!best || gain > best->score)) {
        best = SubstitutionCandidate{pos, orig, w, gain, sim};
        best_probs = p;
      }
    }
    if (!best) continue;
    r.perturbed.ids[pos] = best->replacement;
    r.perturbed.surfaces[pos] = vocab.token(best->replacement);
    r.substitutions.push_back(*best);
    current = best_probs(static_cast<Eigen::Index>(y));
    r.flipped = argmax_of(best_probs) != y;
  }
  r.no_op = !any_neighbor;
  return r;
}

// Best single flip under the first-order estimate g_i . (e_w - e_i) of the
// loss increase. `grads` holds dL/de_i per position (rows past its end are
// treated as zero).
inline std::optional<SubstitutionCandidate> best_first_order_flip(
    const Mat& embeddings, std::span<const TokenId> ids, const Mat& grads,
    const std::vector<std::size_t>& positions, std::size_t reserved) {
  std::optional<SubstitutionCandidate> best;
  for (std::size_t pos : positions) {
    if (static_cast<Eigen::Index>(pos) >= grads.rows()) continue;
    const RowVec g = grads.row(static_cast<Eigen::Index>(pos));
    const double self = g.dot(embeddings.row(ids[pos]));
    const Vec scores = embeddings * g.transpose();
    for (Eigen::Index w = static_cast<Eigen::Index>(reserved); w < embeddings.rows(); ++w) {
      if (w == ids[pos]) continue;
      const double s = scores(w) - self;
      if (!best || s > best->score) {
        best = SubstitutionCandidate{pos, ids[pos], static_cast<TokenId>(w), s, 0.0};
      }
    }
  }
  return best;
}

inline BaselineResult hotflip_attack(const nnet::ClassifierModel& model, const Example& ex,
                                     const AttackBudget& budget, std::size_t y, const Vocab& vocab) {
  budget.validate();
  nnet::check_class(model, y);
  BaselineResult r;
  r.perturbed = classifier_input(ex);
  const auto positions = attackable_positions(ex);
  const std::size_t limit = budget.limit(positions.size());
  const Mat& emb = model.params().tensors[nnet::ClassifierModel::kEmbedding];
  const Mat unit = row_normalized(emb);
  while (r.substitutions.size() < limit) {
    const Mat grads = nnet::loss_gradient(model, model.embed(r.perturbed.ids), y);
    ++r.queries;
    auto best = best_first_order_flip(emb, r.perturbed.ids, grads, positions, vocab.reserved_count());
    if (!best || best->score <= 0) break;
    best->similarity = std::clamp(unit.row(best->original).dot(unit.row(best->replacement)), -1.0, 1.0);
    r.perturbed.ids[best->position] = best->replacement;
    r.perturbed.surfaces[best->position] = vocab.token(best->replacement);
    r.substitutions.push_back(*best);
    r.flipped = model.predict(r.perturbed.ids) != y;
    if (r.flipped) break;
  }
  r.no_op = r.substitutions.empty();
  return r;
}

// Packs a baseline result as an attack candidate (hypothesis only for pair
// tasks).
inline advgen::Candidate to_candidate(const BaselineResult& r, const Example& ex,
                                      advgen::AttackMethod method, std::size_t y_prime) {
  advgen::Candidate c;
  c.seed_id = ex.id;
  c.method = method;
  c.y = ex.gold_label;
  c.y_prime = y_prime;
  if (ex.task == TaskKind::pair) {
    c.premise = ex.premise;
    const std::size_t offset = ex.premise.size() + 1;
    for (std::size_t i = offset; i < r.perturbed.size(); ++i) {
      c.generated.push_back(r.perturbed.ids[i], r.perturbed.surfaces[i]);
    }
  } else {
    c.generated = r.perturbed;
  }
  c.empty = c.generated.empty();
  return c;
}

}  // namespace advforge::baselines
