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


#include "advforge/attribution.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace advforge::attribution {
namespace {

using testing::keyword_position;
using testing::keyword_world;

TokenSequence seq_of(std::vector<TokenId> ids) {
  TokenSequence s;
  for (auto id : ids) {
    s.ids.push_back(id);
    s.surfaces.push_back("w" + std::to_string(id));
  }
  return s;
}

double target_prob(const nnet::ClassifierModel& m, const Mat& x, std::size_t c) {
  return m.forward_embedded(x).probs(static_cast<Eigen::Index>(c));
}

// ---- integrated gradients

TEST(IntegratedGradientsTest, LinearFunctionIsExact) {
  Rng rng(3);
  Mat w(4, 6), x(4, 6), base(4, 6);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w.data()[i] = rng.normal();
    x.data()[i] = rng.normal();
    base.data()[i] = rng.normal();
  }
  for (std::size_t m : {1, 3, 64}) {
    const Mat attr = integrated_gradients(x, base, m, [&](const Mat&) { return w; });
    const auto scores = token_scores(attr);
    for (Eigen::Index i = 0; i < 4; ++i) {
      const double exact = (w.row(i).array() * (x.row(i) - base.row(i)).array()).sum();
      EXPECT_NEAR(scores[static_cast<std::size_t>(i)], exact, 1e-12);
    }
  }
}

TEST(IntegratedGradientsTest, AllPadInputGivesZeroScores) {
  const auto& w = keyword_world();
  auto map = ig_attribute(w.model, seq_of({Vocab::kPad, Vocab::kPad, Vocab::kPad}), {64, 1});
  for (double s : map.scores) EXPECT_EQ(s, 0.0);
}

TEST(IntegratedGradientsTest, TargetOutOfRangeIsAnError) {
  const auto& w = keyword_world();
  EXPECT_THROW(ig_attribute(w.model, w.test.examples[0].text, {8, 2}), Error);
  EXPECT_THROW(ig_attribute(w.model, TokenSequence{}, {8, 0}), Error);
}

struct CompletenessGap {
  double max_gap = 0.0;
  double mean_gap = 0.0;
};

CompletenessGap completeness(std::size_t steps, IgRule rule = IgRule::right) {
  const auto& w = keyword_world();
  CompletenessGap g;
  for (std::size_t n = 0; n < 20; ++n) {
    const auto& ex = w.test.examples[n];
    const std::size_t target = ex.gold_label;
    auto map = ig_attribute(w.model, ex.text, {steps, target, rule});
    double total = 0.0;
    for (double s : map.scores) total += s;
    const Mat x = w.model.embed(ex.text.ids);
    const Mat base = w.model.embed(std::vector<TokenId>(ex.text.size(), Vocab::kPad));
    const double gap = std::abs(total - (target_prob(w.model, x, target) - target_prob(w.model, base, target)));
    g.max_gap = std::max(g.max_gap, gap);
    g.mean_gap += gap / 20.0;
  }
  return g;
}

TEST(IntegratedGradientsTest, CompletenessGapShrinksWithSteps) {
  for (IgRule rule : {IgRule::right, IgRule::midpoint}) {
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t m : {4, 16, 64, 256}) {
      const double gap = completeness(m, rule).mean_gap;
      EXPECT_LT(gap, prev) << "m=" << m;
      prev = gap;
    }
  }
}

TEST(IntegratedGradientsTest, RightRuleConvergesAtFirstOrder) {
  // Quadrupling m should cut the gap by about 4x.
  const double ratio = completeness(64).mean_gap / completeness(256).mean_gap;
  EXPECT_GT(ratio, 3.0);
  EXPECT_LT(ratio, 5.0);
}

TEST(IntegratedGradientsTest, MidpointRuleCompletenessAt256Steps) {
  EXPECT_LE(completeness(256, IgRule::midpoint).max_gap, 1e-3);
}

// ---- LIME

TEST(LimeTest, ConstantPredictorGivesZeroCoefficients) {
  Predictor constant = [](const TokenSequence&) {
    RowVec p(2);
    p << 0.3, 0.7;
    return p;
  };
  LimeConfig cfg;
  cfg.seed = 1;
  auto map = lime_attribute(constant, seq_of({10, 11, 12, 13, 14, 15}), 1, cfg);
  for (double s : map.scores) EXPECT_NEAR(s, 0.0, 1e-6);
}

TEST(LimeTest, PlantedPositionDominates) {
  // probability of class 1 is the presence bit of position 3
  Predictor planted = [](const TokenSequence& s) {
    RowVec p(2);
    const double on = s.ids[3] == Vocab::kMask ? 0.0 : 1.0;
    p << 1.0 - on, on;
    return p;
  };
  for (std::uint64_t seed : {1, 2, 3}) {
    LimeConfig cfg;
    cfg.seed = seed;
    auto map = lime_attribute(planted, seq_of({20, 21, 22, 23, 24, 25, 26, 27}), 1, cfg);
    const double peak = map.scores[3];
    EXPECT_GT(peak, 0.0);
    for (std::size_t i = 0; i < map.scores.size(); ++i) {
      if (i != 3) EXPECT_LE(std::abs(map.scores[i]), 0.1 * peak) << "position " << i;
    }
  }
}

TEST(LimeTest, SingleTokenDegenerateCase) {
  Predictor f = [](const TokenSequence& s) {
    RowVec p(2);
    p << (s.ids[0] == Vocab::kMask ? 0.9 : 0.2), (s.ids[0] == Vocab::kMask ? 0.1 : 0.8);
    return p;
  };
  auto map = lime_attribute(f, seq_of({9}), 1, LimeConfig{});
  ASSERT_EQ(map.scores.size(), 1u);
  EXPECT_NEAR(map.scores[0], 0.7, 1e-12);
}

TEST(LimeTest, DeterministicGivenSeed) {
  const auto& w = keyword_world();
  LimeConfig cfg;
  cfg.seed = 9;
  cfg.jobs = 3;
  const auto& s = w.test.examples[1].text;
  auto a = lime_attribute(classifier_predictor(w.model), s, 1, cfg, "x");
  cfg.jobs = 1;
  auto b = lime_attribute(classifier_predictor(w.model), s, 1, cfg, "x");
  EXPECT_EQ(a, b);
}

TEST(LimeTest, QueriesNeverExceedOriginalLength) {
  const auto& w = keyword_world();
  const auto& s = w.test.examples[2].text;
  std::size_t calls = 0;
  bool longer = false;
  std::mutex mu;
  Predictor spy = [&](const TokenSequence& q) {
    std::lock_guard<std::mutex> lock(mu);
    ++calls;
    longer = longer || q.size() > s.size();
    return w.model.probs(q.ids);
  };
  LimeConfig cfg;
  cfg.jobs = 2;
  auto ex = lime_explain(spy, s, 0, cfg);
  EXPECT_FALSE(longer);
  EXPECT_EQ(calls, ex.queries);
  EXPECT_LE(calls, cfg.n_samples);
}

TEST(LimeTest, MaxFeaturesTruncates) {
  const auto& w = keyword_world();
  LimeConfig cfg;
  cfg.max_features = 2;
  const auto& s = w.test.examples[3].text;
  auto ex = lime_explain(classifier_predictor(w.model), s, 1, cfg);
  std::size_t nonzero = 0;
  for (double v : ex.map.scores) nonzero += v != 0.0;
  EXPECT_LE(nonzero, 2u);
  EXPECT_EQ(ex.features.size(), std::min<std::size_t>(2, s.size()));
}

TEST(LimeTest, LocalFidelityOnKeywordClassifier) {
  // Positive examples only: on negatives the target probability is flat.
  const auto& w = keyword_world();
  double worst = 1.0;
  std::size_t seen = 0;
  for (const auto& e : w.test.examples) {
    if (e.gold_label != 1 || seen == 20) continue;
    LimeConfig cfg;
    cfg.seed = seen++;
    auto ex = lime_explain(classifier_predictor(w.model), e.text, 1, cfg);
    worst = std::min(worst, ex.local_fidelity);
  }
  EXPECT_EQ(seen, 20u);
  EXPECT_GE(worst, 0.7);
}

// ---- planted keyword agreement

double keyword_top_rate(Method method) {
  const auto& w = keyword_world();
  std::size_t positives = 0, hits = 0;
  for (const auto& ex : w.test.examples) {
    if (ex.gold_label != 1) continue;
    ++positives;
    AttributionMap map;
    if (method == Method::ig) {
      map = ig_attribute(w.model, ex.text, {64, 1});
    } else {
      LimeConfig cfg;
      cfg.seed = positives;
      map = lime_attribute(classifier_predictor(w.model), ex.text, 1, cfg);
    }
    const auto top = static_cast<std::size_t>(
        std::max_element(map.scores.begin(), map.scores.end()) - map.scores.begin());
    hits += top == keyword_position(ex.text);
  }
  return static_cast<double>(hits) / static_cast<double>(positives);
}

TEST(PlantedKeywordTest, IgRanksKeywordFirst) { EXPECT_GE(keyword_top_rate(Method::ig), 0.95); }

TEST(PlantedKeywordTest, LimeRanksKeywordFirst) { EXPECT_GE(keyword_top_rate(Method::lime), 0.95); }

// ---- selection

AttributionMap map_of(std::vector<double> scores) {
  AttributionMap m;
  m.scores = std::move(scores);
  return m;
}

TEST(SelectInfluentialTest, TwentyPercentOfTen) {
  auto s = seq_of({10, 11, 12, 13, 14, 15, 16, 17, 18, 19});
  auto z = select_influential(map_of({0, 9, 1, 2, 3, 8, 4, 5, 6, 7}), s, {0.2});
  ASSERT_EQ(z.size(), 2u);
  EXPECT_EQ(z[0].position, 1u);
  EXPECT_EQ(z[1].position, 5u);
  EXPECT_EQ(z[1].surface, "w15");
}

TEST(SelectInfluentialTest, DominantScore) {
  auto z = select_influential(map_of({5, 1, 1, 1, 1}), seq_of({10, 11, 12, 13, 14}), {0.2});
  ASSERT_EQ(z.size(), 1u);
  EXPECT_EQ(z[0].position, 0u);
}

TEST(SelectInfluentialTest, TiesPickLowestPositions) {
  auto z = select_influential(map_of({1, 1, 1, 1, 1, 1}), seq_of({10, 11, 12, 13, 14, 15}), {0.5});
  ASSERT_EQ(z.size(), 3u);
  EXPECT_EQ(z[0].position, 0u);
  EXPECT_EQ(z[2].position, 2u);
}

TEST(SelectInfluentialTest, FullFractionReturnsAllNonSpecial) {
  auto s = seq_of({10, Vocab::kSep, 11, Vocab::kUnk, 12});
  auto z = select_influential(map_of({0, 100, -1, 50, 2}), s, {1.0});
  std::vector<std::size_t> pos;
  for (const auto& t : z) pos.push_back(t.position);
  EXPECT_EQ(pos, (std::vector<std::size_t>{0, 2, 4}));
}

TEST(SelectInfluentialTest, AbsScoresFlag) {
  auto s = seq_of({10, 11, 12, 13});
  SelectConfig cfg{0.25};
  EXPECT_EQ(select_influential(map_of({-9, 1, 2, 0}), s, cfg)[0].position, 2u);
  cfg.abs_scores = true;
  EXPECT_EQ(select_influential(map_of({-9, 1, 2, 0}), s, cfg)[0].position, 0u);
}

TEST(SelectInfluentialTest, WeightedSampleConcentrates) {
  auto s = seq_of({10, 11, 12, 13, 14});
  std::size_t hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SelectConfig cfg{0.2, SelectStrategy::weighted_sample, false, seed};
    auto z = select_influential(map_of({1000, 0, 0, 0, 0}), s, cfg);
    hits += z.size() == 1 && z[0].position == 0;
  }
  EXPECT_GE(hits, 99u);
}

TEST(SelectInfluentialTest, WeightedSampleIsOrderedAndDistinct) {
  auto s = seq_of({10, 11, 12, 13, 14, 15, 16, 17});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SelectConfig cfg{0.5, SelectStrategy::weighted_sample, false, seed};
    auto z = select_influential(map_of({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}), s, cfg);
    ASSERT_EQ(z.size(), 4u);
    for (std::size_t i = 1; i < z.size(); ++i) EXPECT_LT(z[i - 1].position, z[i].position);
  }
}

TEST(SelectInfluentialTest, BadFractionIsAnError) {
  auto s = seq_of({10});
  EXPECT_THROW(select_influential(map_of({1}), s, {0.0}), Error);
  EXPECT_THROW(select_influential(map_of({1}), s, {1.5}), Error);
}

TEST(AttributionDumpTest, JsonRoundTrip) {
  auto s = seq_of({10, 11, 12});
  AttributionMap m = map_of({0.5, -0.25, 1.0});
  m.method = Method::lime;
  m.target_class = 1;
  m.sequence_ref = "ex7";
  auto z = select_influential(m, s, {0.34});
  auto rec = attribution_from_json(nlohmann::json::parse(to_json(m, s, z).dump()));
  EXPECT_EQ(rec.map, m);
  EXPECT_EQ(rec.tokens, s.surfaces);
  EXPECT_EQ(rec.z, (std::vector<std::size_t>{0, 2}));
}

}  // namespace
}  // namespace advforge::attribution
