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


#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "advforge/nnet/checkpoint.hpp"
#include "advforge/nnet/decode.hpp"
#include "advforge/nnet/train.hpp"
#include "test_util.hpp"

namespace advforge::nnet {
namespace {

using advforge::testing::numeric_gradient;
using advforge::testing::randomize;
using advforge::testing::rel_error;

ClassifierModel random_classifier(std::uint64_t seed, std::size_t v = 10, std::size_t d = 6,
                                  std::size_t c = 3) {
  ClassifierModel m = ClassifierModel::init({v, d, c, 32}, seed);
  randomize(m.params(), seed + 1000, 0.6);
  return m;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t len, std::size_t v) {
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < len; ++i) ids.push_back(static_cast<TokenId>(rng.uniform_index(v)));
  return ids;
}

TEST(ClassifierTest, ZeroHeadGivesUniform) {
  ClassifierModel m = ClassifierModel::init({20, 8, 3, 16}, 1);
  m.tensor(ClassifierModel::kHead).setZero();
  RowVec p = m.probs(std::vector<TokenId>{9, 10, 11});
  for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(p(c), 1.0 / 3.0, 1e-12);
}

TEST(ClassifierTest, ProbabilitiesSumToOne) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    ClassifierModel m = random_classifier(static_cast<std::uint64_t>(t));
    RowVec p = m.probs(random_ids(rng, 1 + rng.uniform_index(8), 10));
    EXPECT_NEAR(p.sum(), 1.0, 1e-6);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
}

TEST(ClassifierTest, EmptyInputFallsBackToPad) {
  ClassifierModel m = random_classifier(4);
  EXPECT_EQ(m.probs(std::vector<TokenId>{}), m.probs(std::vector<TokenId>{Vocab::kPad}));
}

TEST(ClassifierTest, InputGradientMatchesFiniteDifferences) {
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    ClassifierModel m = random_classifier(100 + static_cast<std::uint64_t>(t));
    const auto ids = random_ids(rng, 2 + rng.uniform_index(6), 10);
    const std::size_t target = rng.uniform_index(3);
    TokenSequence seq;
    for (auto id : ids) seq.push_back(id, "w");
    Mat analytic = input_gradients(m, seq, target);
    Mat numeric = numeric_gradient(m.embed(ids), [&](const Mat& x) {
      return m.forward_embedded(x).probs(static_cast<Eigen::Index>(target));
    });
    EXPECT_LE(rel_error(analytic, numeric), 1e-4) << "draw " << t;
    EXPECT_EQ(analytic.rows(), static_cast<Eigen::Index>(ids.size()));
    EXPECT_EQ(analytic.cols(), 6);
  }
}

TEST(ClassifierTest, ParameterGradientMatchesFiniteDifferences) {
  Rng rng(19);
  for (int t = 0; t < 20; ++t) {
    ClassifierModel m = random_classifier(200 + static_cast<std::uint64_t>(t));
    const auto ids = random_ids(rng, 2 + rng.uniform_index(6), 10);
    const std::size_t gold = rng.uniform_index(3);
    ParamSet grads = m.params().zeros_like();
    m.loss_and_grad(ids, gold, &grads);
    for (std::size_t k = 0; k < m.params().size(); ++k) {
      ClassifierModel probe = m;
      Mat numeric = numeric_gradient(m.params().tensors[k], [&](const Mat& w) {
        probe.params().tensors[k] = w;
        return probe.loss_and_grad(ids, gold, nullptr);
      });
      EXPECT_LE(rel_error(grads.tensors[k], numeric), 1e-4)
          << "draw " << t << " tensor " << m.params().names[k];
    }
  }
}

TEST(ClassifierTest, DeadHeadHasZeroLogitGradient) {
  ClassifierModel m = random_classifier(7);
  m.tensor(ClassifierModel::kHead).setZero();
  Mat x = m.embed(std::vector<TokenId>{1, 2, 3, 4});
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(logit_gradient(m, x, c).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ClassifierTest, GradientOfProbabilitySumIsZero) {
  Rng rng(23);
  for (int t = 0; t < 10; ++t) {
    ClassifierModel m = random_classifier(300 + static_cast<std::uint64_t>(t));
    Mat x = m.embed(random_ids(rng, 5, 10));
    Mat total = Mat::Zero(x.rows(), x.cols());
    for (std::size_t c = 0; c < 3; ++c) total += probability_gradient(m, x, c);
    EXPECT_LE(total.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(ClassifierTest, TargetOutOfRangeThrows) {
  ClassifierModel m = random_classifier(8);
  TokenSequence s;
  s.push_back(1, "a");
  EXPECT_THROW(input_gradients(m, s, 3), Error);
}

TEST(TrainClassifierTest, PlantedKeywordIsLearned) {
  const auto& w = advforge::testing::keyword_world();
  EXPECT_GE(advforge::testing::accuracy(w.model, w.dev), 0.95);
  EXPECT_GE(advforge::testing::accuracy(w.model, w.test), 0.95);
  EXPECT_TRUE(w.model.params().all_finite());
}

TEST(TrainClassifierTest, MemorizesSingleExample) {
  const auto& w = advforge::testing::keyword_world();
  Dataset one = w.train;
  one.examples.resize(1);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 1;
  cfg.max_epochs = 300;
  cfg.patience = 300;
  auto r = train_classifier(one, one, {w.vocab.size(), 16, 2, 64}, cfg);
  EXPECT_LE(r.log.best_dev_loss, 0.01);
}

TEST(TrainClassifierTest, SameSeedIsBitwiseIdentical) {
  const auto& w = advforge::testing::keyword_world();
  Dataset small = w.train;
  small.examples.resize(60);
  TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.max_epochs = 3;
  cfg.seed = 42;
  auto a = train_classifier(small, w.dev, {w.vocab.size(), 16, 2, 64}, cfg);
  auto b = train_classifier(small, w.dev, {w.vocab.size(), 16, 2, 64}, cfg);
  EXPECT_TRUE(a.model.params() == b.model.params());
  cfg.seed = 43;
  auto c = train_classifier(small, w.dev, {w.vocab.size(), 16, 2, 64}, cfg);
  EXPECT_FALSE(a.model.params() == c.model.params());
}

TEST(TrainClassifierTest, NanLossNamesTheEpoch) {
  const auto& w = advforge::testing::keyword_world();
  Dataset small = w.train;
  small.examples.resize(8);
  ClassifierModel m = ClassifierModel::init({w.vocab.size(), 8, 2, 64}, 1);
  m.tensor(ClassifierModel::kBias)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.max_epochs = 2;
  try {
    fit_classifier(m, small, small, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

GeneratorModel small_generator(std::uint64_t seed, std::size_t v = 12, double stddev = 0.3) {
  GeneratorModel g = GeneratorModel::init({v, 8, 10, 12, 2}, seed);
  ParamSet& p = g.params();
  Rng rng(seed + 77);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool is_norm = p.names[i].find("norm") != std::string::npos;
    for (Eigen::Index j = 0; j < p.tensors[i].size(); ++j) {
      p.tensors[i].data()[j] = (is_norm ? 1.0 : 0.0) + rng.normal() * stddev;
    }
  }
  return g;
}

TEST(GeneratorTest, LossGradientMatchesFiniteDifferences) {
  Rng rng(29);
  for (int t = 0; t < 20; ++t) {
    GeneratorModel g = small_generator(400 + static_cast<std::uint64_t>(t));
    const auto ids = random_ids(rng, 2 + rng.uniform_index(7), 12);
    ParamSet grads = g.params().zeros_like();
    g.loss_and_grad(ids, {}, &grads);
    Mat analytic_all(1, static_cast<Eigen::Index>(g.params().count()));
    Mat numeric_all(1, analytic_all.cols());
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < g.params().size(); ++k) {
      GeneratorModel probe = g;
      Mat numeric = numeric_gradient(g.params().tensors[k], [&](const Mat& w) {
        probe.params().tensors[k] = w;
        return lm_loss(probe, ids);
      });
      const auto n = numeric.size();
      analytic_all.block(0, off, 1, n) = grads.tensors[k].reshaped<Eigen::RowMajor>().transpose();
      numeric_all.block(0, off, 1, n) = numeric.reshaped<Eigen::RowMajor>().transpose();
      off += n;
    }
    EXPECT_LE(rel_error(analytic_all, numeric_all), 1e-4) << "draw " << t;
  }
}

TEST(GeneratorTest, CausalMask) {
  Rng rng(31);
  for (int t = 0; t < 10; ++t) {
    GeneratorModel g = small_generator(500 + static_cast<std::uint64_t>(t));
    auto ids = random_ids(rng, 8, 12);
    const Mat base = g.forward(ids).logits;
    const std::size_t j = 1 + rng.uniform_index(7);
    ids[j] = static_cast<TokenId>((ids[j] + 1) % 12);
    const Mat changed = g.forward(ids).logits;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(j); ++i) {
      EXPECT_EQ(base.row(i), changed.row(i)) << "row " << i << " perturbed " << j;
    }
    EXPECT_NE(base.row(static_cast<Eigen::Index>(j)), changed.row(static_cast<Eigen::Index>(j)));
  }
}

TEST(GeneratorTest, ZeroedProjectionGivesLogV) {
  GeneratorModel g = small_generator(9, 12);
  g.token_embedding().setZero();
  EXPECT_NEAR(lm_loss(g, std::vector<TokenId>{1, 2, 3, 4, 5}), std::log(12.0), 1e-6);
}

// Oracle: one forward per prefix, scoring only its last position.
double brute_force_lm_loss(const GeneratorModel& g, const std::vector<TokenId>& ids) {
  double total = 0.0;
  for (std::size_t i = 1; i < ids.size(); ++i) {
    std::vector<TokenId> prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(i));
    RowVec logits = g.forward(prefix).logits.bottomRows(1);
    RowVec p = softmax(logits);
    total -= std::log(p(ids[i]));
  }
  return total / static_cast<double>(ids.size() - 1);
}

TEST(GeneratorTest, LossMatchesPerPositionBruteForce) {
  Rng rng(37);
  for (int t = 0; t < 20; ++t) {
    GeneratorModel g = small_generator(600 + static_cast<std::uint64_t>(t));
    const auto ids = random_ids(rng, 2 + rng.uniform_index(9), 12);
    EXPECT_NEAR(lm_loss(g, ids), brute_force_lm_loss(g, ids), 1e-6);
  }
}

TEST(GeneratorTest, LossRejectsShortAndLongSequences) {
  GeneratorModel g = small_generator(10);
  EXPECT_THROW(lm_loss(g, std::vector<TokenId>{1}), Error);
  EXPECT_THROW(lm_loss(g, std::vector<TokenId>(11, 1)), Error);
}

TEST(GeneratorTest, PredictMaskRestrictsLoss) {
  GeneratorModel g = small_generator(11);
  std::vector<TokenId> ids = {1, 2, 3, 4, 5};
  std::vector<std::uint8_t> mask = {0, 0, 0, 1, 1};
  const double masked = g.loss_and_grad(ids, mask, nullptr);
  std::vector<TokenId> p3(ids.begin(), ids.begin() + 3), p4(ids.begin(), ids.begin() + 4);
  const double expect = -0.5 * (std::log(softmax(RowVec(g.forward(p3).logits.bottomRows(1)))(4)) +
                                std::log(softmax(RowVec(g.forward(p4).logits.bottomRows(1)))(5)));
  EXPECT_NEAR(masked, expect, 1e-9);
}

TEST(TrainGeneratorTest, MemorizesRepeatedSequence) {
  std::vector<LmItem> items(8, LmItem{"s", {3, 5, 7, 2, 9, 4, 1}, {}});
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 4;
  cfg.max_epochs = 150;
  cfg.patience = 150;
  auto r = train_generator(items, items, {12, 16, 10, 32, 2}, cfg);
  EXPECT_LE(r.log.best_dev_loss, 0.01);
  EXPECT_LE(r.log.best_dev_loss, r.log.epochs.front().dev_loss);
}

TEST(TrainGeneratorTest, DeterministicAndNeverWorseThanInit) {
  Rng rng(41);
  std::vector<LmItem> tr, dv;
  for (int i = 0; i < 30; ++i) tr.push_back({"t" + std::to_string(i), random_ids(rng, 6, 12), {}});
  for (int i = 0; i < 10; ++i) dv.push_back({"d" + std::to_string(i), random_ids(rng, 6, 12), {}});
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.max_epochs = 3;
  cfg.seed = 9;
  auto a = train_generator(tr, dv, {12, 8, 10, 16, 2}, cfg);
  auto b = train_generator(tr, dv, {12, 8, 10, 16, 2}, cfg);
  EXPECT_TRUE(a.model.params() == b.model.params());
  EXPECT_LE(a.log.best_dev_loss, a.log.epochs.front().dev_loss);
}

TEST(TrainGeneratorTest, OverlongPromptNamesExample) {
  std::vector<LmItem> tr{{"too-long-7", std::vector<TokenId>(11, 1), {}}};
  try {
    train_generator(tr, tr, {12, 8, 10, 16, 2}, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("too-long-7"), std::string::npos);
  }
}

DecodeConfig cfg_with(DecodeStrategy s, std::size_t k, std::size_t beam, std::size_t max_len,
                      TokenId eos, std::uint64_t seed = 0) {
  DecodeConfig c;
  c.strategy = s;
  c.k = k;
  c.beam_size = beam;
  c.max_len = max_len;
  c.eos = eos;
  c.seed = seed;
  return c;
}

TEST(DecodeTest, TopOneAndBeamOneEqualGreedy) {
  Rng rng(43);
  for (int t = 0; t < 20; ++t) {
    GeneratorModel g = small_generator(700 + static_cast<std::uint64_t>(t), 12, 0.8);
    const auto prompt = random_ids(rng, 1 + rng.uniform_index(3), 12);
    auto greedy = decode_greedy(g, prompt, cfg_with(DecodeStrategy::topk, 1, 1, 6, 7));
    auto topk = decode_topk(g, prompt, cfg_with(DecodeStrategy::topk, 1, 1, 6, 7, 1234));
    auto beam = decode_beam(g, prompt, cfg_with(DecodeStrategy::beam, 1, 1, 6, 7));
    EXPECT_EQ(topk.tokens, greedy.tokens);
    EXPECT_EQ(beam.tokens, greedy.tokens);
    EXPECT_EQ(beam.finished, greedy.finished);
  }
}

TEST(DecodeTest, TopKSamplingMatchesModelDistribution) {
  GeneratorModel g = small_generator(800, 6, 0.8);
  const std::vector<TokenId> prompt = {1, 2};
  RowVec p = softmax(g.next_logits(prompt));
  const int n = 10000;
  std::vector<int> counts(6, 0);
  for (int s = 0; s < n; ++s) {
    auto r = decode_topk(g, prompt, cfg_with(DecodeStrategy::topk, 6, 1, 1, 99,
                                             derive_seed(5, static_cast<std::uint64_t>(s))));
    ASSERT_EQ(r.tokens.size(), 1u);
    ++counts[static_cast<std::size_t>(r.tokens[0])];
  }
  for (int w = 0; w < 6; ++w) {
    const double freq = counts[static_cast<std::size_t>(w)] / static_cast<double>(n);
    const double se = std::sqrt(p(w) * (1 - p(w)) / n);
    EXPECT_LE(std::abs(freq - p(w)), 3 * se) << "token " << w;
  }
}

TEST(DecodeTest, TopKIsSeedDeterministic) {
  GeneratorModel g = small_generator(801, 12, 0.8);
  const std::vector<TokenId> prompt = {3, 1};
  auto a = decode_topk(g, prompt, cfg_with(DecodeStrategy::topk, 5, 1, 8, 7, 99));
  auto b = decode_topk(g, prompt, cfg_with(DecodeStrategy::topk, 5, 1, 8, 7, 99));
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_LE(a.tokens.size(), 8u);
}

// Oracle: the best mean log-prob over every EOS-terminated continuation of
// up to max_len steps.
double exhaustive_best(const GeneratorModel& g, const std::vector<TokenId>& prompt,
                       std::size_t max_len, TokenId eos, std::size_t vocab) {
  double best = -std::numeric_limits<double>::infinity();
  std::function<void(std::vector<TokenId>&, double)> rec = [&](std::vector<TokenId>& ctx,
                                                               double sum) {
    const std::size_t steps = ctx.size() - prompt.size();
    if (steps == max_len) return;
    RowVec p = softmax(g.next_logits(ctx));
    for (std::size_t w = 0; w < vocab; ++w) {
      const double s = sum + std::log(p(static_cast<Eigen::Index>(w)));
      if (static_cast<TokenId>(w) == eos) {
        best = std::max(best, s / static_cast<double>(steps + 1));
      } else {
        ctx.push_back(static_cast<TokenId>(w));
        rec(ctx, s);
        ctx.pop_back();
      }
    }
  };
  std::vector<TokenId> ctx = prompt;
  rec(ctx, 0.0);
  return best;
}

TEST(DecodeTest, FullWidthBeamIsExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GeneratorModel g = small_generator(900 + seed, 5, 0.9);
    const std::vector<TokenId> prompt = {0, 1};
    auto r = decode_beam(g, prompt, cfg_with(DecodeStrategy::beam, 1, 625, 4, 4));
    ASSERT_TRUE(r.finished);
    EXPECT_NEAR(r.score, exhaustive_best(g, prompt, 4, 4, 5), 1e-12);
  }
}

TEST(DecodeTest, WiderBeamNeverScoresWorse) {
  // Trained copy-task generator; untrained random weights can violate this.
  const auto& w = testing::copy_world();
  Rng rng(47);
  for (int t = 0; t < 20; ++t) {
    std::vector<TokenId> prompt = {Vocab::kAttr};
    const std::size_t len = 1 + rng.uniform_index(3);
    for (std::size_t i = 0; i < len; ++i) {
      prompt.push_back(static_cast<TokenId>(w.vocab.reserved_count() + rng.uniform_index(20)));
    }
    prompt.push_back(Vocab::kLabel);
    prompt.push_back(w.vocab.label_token(rng.uniform_index(2)));
    prompt.push_back(Vocab::kText);
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t beam : {1, 2, 4, 8, 16}) {
      auto r = decode_beam(w.generator, prompt, cfg_with(DecodeStrategy::beam, 1, beam, 10, Vocab::kEos));
      EXPECT_GE(r.score, prev - 1e-12) << "prompt " << t << " beam " << beam;
      prev = r.score;
    }
  }
}

TEST(DecodeTest, BeamIsDeterministicAndBounded) {
  GeneratorModel g = small_generator(1100, 12, 0.8);
  const std::vector<TokenId> prompt = {2, 3};
  auto c = cfg_with(DecodeStrategy::beam, 1, 4, 5, 7);
  auto a = decode_beam(g, prompt, c);
  auto b = decode_beam(g, prompt, c);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_LE(a.tokens.size(), 5u);
}

TEST(DecodeTest, BannedTokensNeverAppear) {
  GeneratorModel g = small_generator(1200, 12, 0.8);
  auto c = cfg_with(DecodeStrategy::topk, 12, 1, 8, 7, 3);
  c.banned = {0, 1, 2, 3};
  for (std::uint64_t s = 0; s < 20; ++s) {
    c.seed = s;
    for (TokenId t : decode_topk(g, std::vector<TokenId>{5}, c).tokens) EXPECT_GT(t, 3);
  }
}

TEST(DecodeTest, StopsAtContextLimit) {
  GeneratorModel g = small_generator(1300, 12, 0.8);
  auto c = cfg_with(DecodeStrategy::topk, 3, 1, 100, 99, 3);
  auto r = decode_topk(g, std::vector<TokenId>(8, 1), c);
  EXPECT_LE(r.tokens.size(), 3u);
}

TEST(CheckpointTest, RoundTripAndValidation) {
  const auto& w = advforge::testing::keyword_world();
  auto dir = std::filesystem::temp_directory_path() / "advforge_ckpt_test";
  std::filesystem::remove_all(dir);
  save_classifier(w.model, w.vocab, dir / "clf");
  ClassifierModel loaded = load_classifier(dir / "clf", w.vocab);
  ParamSet rounded = w.model.params();
  round_to_float(rounded);
  EXPECT_TRUE(loaded.params() == rounded);
  EXPECT_EQ(loaded.dims(), w.model.dims());

  Vocab other = build_vocab({"something else"}, 1, synthetic::keyword_labels());
  EXPECT_THROW(load_classifier(dir / "clf", other), Error);
  EXPECT_THROW(load_generator(dir / "clf", w.vocab), Error);

  GeneratorModel g = GeneratorModel::init({w.vocab.size(), 8, 16, 16, 2}, 3);
  save_generator(g, w.vocab, dir / "gen");
  GeneratorModel g2 = load_generator(dir / "gen", w.vocab);
  round_to_float(g.params());
  EXPECT_TRUE(g2.params() == g.params());
  // byte-identical on re-save
  save_generator(g2, w.vocab, dir / "gen2");
  EXPECT_EQ(read_file(dir / "gen" / "params.bin"), read_file(dir / "gen2" / "params.bin"));
}

}  // namespace
}  // namespace advforge::nnet
