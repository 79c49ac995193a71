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


#include "advforge/eval.hpp"

#include <gtest/gtest.h>

#include "advforge/nnet/checkpoint.hpp"
#include "test_util.hpp"

namespace advforge::eval {
namespace {

using testing::keyword_world;

AttackRecord record(const std::string& text, std::size_t y, std::size_t y_prime) {
  AttackRecord r;
  r.seed_id = "s";
  r.generated = text;
  r.y = y;
  r.y_prime = y_prime;
  return r;
}

// ---- attack success rate

TEST(AttackSuccessRateTest, AllSuccessful) {
  const auto& w = keyword_world();
  std::vector<AttackRecord> recs;
  for (const auto& ex : w.test.examples) {
    if (recs.size() == 10) break;
    recs.push_back(record(detokenize(ex.text), 1 - ex.gold_label, ex.gold_label));
  }
  EXPECT_EQ(attack_success_rate(recs, w.model, TaskKind::single_text, w.vocab), 100.0);
}

TEST(AttackSuccessRateTest, OneOfFour) {
  const auto& w = keyword_world();
  std::vector<AttackRecord> recs;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& ex = w.test.examples[i];
    const std::size_t target = i == 0 ? ex.gold_label : 1 - ex.gold_label;
    recs.push_back(record(detokenize(ex.text), 1 - target, target));
  }
  EXPECT_EQ(attack_success_rate(recs, w.model, TaskKind::single_text, w.vocab), 25.0);
}

TEST(AttackSuccessRateTest, UnchangedTextAfterFilteringIsZero) {
  const auto& w = keyword_world();
  std::vector<advgen::Candidate> cands;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& ex = w.test.examples[i];
    advgen::Candidate c;
    c.seed_id = ex.id;
    c.y = ex.gold_label;
    c.y_prime = 1 - ex.gold_label;
    c.generated = ex.text;
    cands.push_back(c);
  }
  auto recs = advgen::filter_candidates(cands, w.test, w.model);
  EXPECT_EQ(attack_success_rate(recs, w.model, TaskKind::single_text, w.vocab), 0.0);
}

TEST(AttackSuccessRateTest, EmptyIsAnErrorAndRepeatable) {
  const auto& w = keyword_world();
  EXPECT_THROW(attack_success_rate({}, w.model, TaskKind::single_text, w.vocab), Error);
  std::vector<AttackRecord> recs = {record("trg people .", 0, 1), record("people .", 1, 0)};
  EXPECT_EQ(attack_success_rate(recs, w.model, TaskKind::single_text, w.vocab),
            attack_success_rate(recs, w.model, TaskKind::single_text, w.vocab));
}

// ---- macro F1

TEST(MacroF1Test, PerfectAndHandComputed) {
  EXPECT_EQ(macro_f1({0, 1, 2, 1}, {0, 1, 2, 1}, 3), 1.0);
  EXPECT_NEAR(macro_f1({0, 0, 0, 0}, {0, 0, 1, 1}, 2), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(macro_f1({0}, {0, 1}, 2), Error);
}

// Independent oracle: confusion matrix, then precision and recall per class.
double confusion_macro_f1(const std::vector<std::size_t>& p, const std::vector<std::size_t>& g,
                          std::size_t k) {
  std::vector<std::vector<double>> cm(k, std::vector<double>(k, 0));
  for (std::size_t i = 0; i < p.size(); ++i) cm[g[i]][p[i]] += 1;
  double total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double col = 0, row = 0;
    for (std::size_t j = 0; j < k; ++j) {
      col += cm[j][c];
      row += cm[c][j];
    }
    const double prec = col > 0 ? cm[c][c] / col : 0;
    const double rec = row > 0 ? cm[c][c] / row : 0;
    total += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
  }
  return total / static_cast<double>(k);
}

TEST(MacroF1Test, MatchesConfusionMatrixOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(4);
    std::vector<std::size_t> p(1000), g(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
      p[i] = rng.uniform_index(k);
      g[i] = rng.uniform() < 0.6 ? p[i] : rng.uniform_index(k);
    }
    EXPECT_NEAR(macro_f1(p, g, k), confusion_macro_f1(p, g, k), 1e-9);
    // permutation invariance over pairs
    std::vector<std::size_t> idx(1000);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    std::vector<std::size_t> p2, g2;
    for (auto i : idx) {
      p2.push_back(p[i]);
      g2.push_back(g[i]);
    }
    EXPECT_NEAR(macro_f1(p2, g2, k), macro_f1(p, g, k), 1e-12);
  }
}

// ---- OOD finetune

Dataset challenge_set(const Vocab& vocab, std::size_t n, std::uint64_t seed) {
  synthetic::KeywordOptions opt;
  opt.challenge = true;
  auto recs = synthetic::keyword_corpus(n, seed, "ch", opt);
  return to_dataset(recs, TaskKind::single_text, vocab, synthetic::keyword_labels());
}

TEST(OodFinetuneTest, ZeroLearningRateLeavesF1Unchanged) {
  const auto& w = keyword_world();
  Dataset eval = challenge_set(w.vocab, 80, 31);
  auto cfg = default_finetune_config();
  cfg.learning_rate = 0.0;
  auto r = ood_finetune(w.model, w.train, eval, cfg, 150);
  EXPECT_NEAR(*r.report.macro_f1_before, *r.report.macro_f1_after, 1e-9);
  EXPECT_EQ(r.report.n, 150u);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(OodFinetuneTest, OriginalModelUntouched) {
  const auto& w = keyword_world();
  const std::string before = nnet::detail::encode_params(w.model.params());
  Dataset eval = challenge_set(w.vocab, 80, 32);
  auto cfg = default_finetune_config();
  cfg.learning_rate = 1e-2;
  auto r = ood_finetune(w.model, w.train, eval, cfg, 100);
  EXPECT_EQ(nnet::detail::encode_params(w.model.params()), before);
  EXPECT_NE(nnet::detail::encode_params(r.finetuned.params()), before);
}

TEST(OodFinetuneTest, OverlapWarnsAndTooFewErrors) {
  const auto& w = keyword_world();
  auto r = ood_finetune(w.model, w.test, w.test, default_finetune_config(), 20);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("not disjoint"), std::string::npos);
  EXPECT_NE(r.report.notes.find("not disjoint"), std::string::npos);
  EXPECT_THROW(ood_finetune(w.model, w.dev, w.test, default_finetune_config(), w.dev.size() + 1), Error);
}

TEST(OodFinetuneTest, DefaultsFollowDocumentedValues) {
  auto c = default_finetune_config();
  EXPECT_EQ(c.learning_rate, 2e-5);
  EXPECT_EQ(c.max_epochs, 3u);
}

TEST(RecordsToDatasetTest, SuccessfulOnlyByDefault) {
  const auto& w = keyword_world();
  auto a = record("trg people .", 0, 1);
  a.success = true;
  auto b = record("people .", 1, 0);
  Dataset d = records_to_dataset({a, b}, TaskKind::single_text, w.vocab, synthetic::keyword_labels());
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.examples[0].gold_label, 1u);
  EXPECT_EQ(records_to_dataset({a, b}, TaskKind::single_text, w.vocab, synthetic::keyword_labels(), false).size(), 2u);
}

// ---- Fleiss' kappa

TEST(FleissKappaTest, PerfectAgreementIsOne) {
  EXPECT_EQ(fleiss_kappa({{{3, 0}, {0, 3}, {3, 0}}}), 1.0);
  EXPECT_EQ(fleiss_kappa({{{0, 4, 0}, {4, 0, 0}, {0, 0, 4}}}), 1.0);
}

TEST(FleissKappaTest, TwoByTwoSplitIsMinusOne) {
  EXPECT_EQ(fleiss_kappa({{{1, 1}, {1, 1}}}), -1.0);
}

TEST(FleissKappaTest, HandComputedTextbookTable) {
  // 4 items, 3 raters, 2 categories
  // P_i = {1, 1/3, 1/3, 1}, Pbar = 2/3; p = {0.5, 0.5}, Pe = 0.5 -> 1/3
  EXPECT_NEAR(fleiss_kappa({{{3, 0}, {2, 1}, {1, 2}, {0, 3}}}), 1.0 / 3.0, 1e-15);
}

TEST(FleissKappaTest, RowPermutationInvariance) {
  AnnotationTable t{{{4, 1, 0}, {2, 2, 1}, {0, 5, 0}, {1, 1, 3}, {3, 0, 2}}};
  const double k = fleiss_kappa(t);
  std::reverse(t.counts.begin(), t.counts.end());
  EXPECT_NEAR(fleiss_kappa(t), k, 1e-15);
  std::swap(t.counts[0], t.counts[2]);
  EXPECT_NEAR(fleiss_kappa(t), k, 1e-15);
}

TEST(FleissKappaTest, DegenerateAndInvalidTables) {
  EXPECT_EQ(fleiss_kappa({{{2, 0}, {2, 0}}}), 1.0);  // single category used throughout
  EXPECT_THROW(fleiss_kappa({{{1, 0}}}), Error);     // one rater
  EXPECT_THROW(fleiss_kappa({{{2, 0}, {1, 2}}}), Error);
}

TEST(AnnotationCsvTest, ParsesWithHeader) {
  auto t = parse_annotation_csv("hate,nothate\n1,1\r\n1, 1\n\n");
  EXPECT_EQ(t.counts, (std::vector<std::vector<long>>{{1, 1}, {1, 1}}));
  EXPECT_EQ(fleiss_kappa(t), -1.0);
  EXPECT_THROW(parse_annotation_csv("1,1\nx,1\n"), Error);
}

TEST(EvalReportTest, JsonRoundTrip) {
  EvalReport r;
  r.method = "na_ig";
  r.adv1_rate = 42.5;
  r.n = 7;
  r.notes = "x";
  auto back = eval_report_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(back.adv1_rate, r.adv1_rate);
  EXPECT_FALSE(back.adv2_rate);
  EXPECT_EQ(back.n, 7u);
}

}  // namespace
}  // namespace advforge::eval
