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

// Token attribution: integrated gradients over input embeddings (white box),
// LIME with masked-token perturbations (black box), and selection of the
// influential tokens z that condition the generator.

#include <map>
#include <mutex>
#include <numeric>
#include <optional>

#include <json.hpp>

#include "advforge/corpus.hpp"
#include "advforge/nnet/classifier.hpp"

namespace advforge::attribution {

enum class Method { lime, ig };

inline std::string to_string(Method m) { return m == Method::lime ? "lime" : "ig"; }

inline Method parse_method(std::string_view s) {
  if (s == "lime") return Method::lime;
  if (s == "ig") return Method::ig;
  throw Error("unknown attribution method: " + std::string(s));
}

struct AttributionMap {
  std::vector<double> scores;  // one per token position
  std::size_t target_class = 0;
  Method method = Method::ig;
  std::string sequence_ref;

  friend bool operator==(const AttributionMap&, const AttributionMap&) = default;
};

// ---------------------------------------------------------------------------
// Integrated gradients

// Riemann rule for the path integral: right endpoints alpha = t/m, or
// midpoints alpha = (t - 1/2)/m.
enum class IgRule { right, midpoint };

inline std::string to_string(IgRule r) { return r == IgRule::right ? "right" : "midpoint"; }

inline IgRule parse_ig_rule(std::string_view s) {
  if (s == "right") return IgRule::right;
  if (s == "midpoint") return IgRule::midpoint;
  throw Error("unknown ig rule: " + std::string(s));
}

struct IgConfig {
  std::size_t steps = 64;
  std::size_t target_class = 0;
  IgRule rule = IgRule::right;
};

// Per-dimension attributions (x - x') * (1/m) sum_t grad(x' + alpha_t (x - x')).
// `grad(point)` must return d F / d point with the shape of x.
template <class GradFn>
Mat integrated_gradients(const Mat& x, const Mat& baseline, std::size_t steps, GradFn&& grad,
                         IgRule rule = IgRule::right) {
  if (steps < 1) throw Error("integrated gradients needs steps >= 1");
  if (x.rows() != baseline.rows() || x.cols() != baseline.cols()) {
    throw Error("baseline shape differs from input");
  }
  const Mat delta = x - baseline;
  Mat total = Mat::Zero(x.rows(), x.cols());
  for (std::size_t t = 1; t <= steps; ++t) {
    const double offset = rule == IgRule::right ? 0.0 : 0.5;
    const double alpha = (static_cast<double>(t) - offset) / static_cast<double>(steps);
    total += grad(Mat(baseline + alpha * delta));
  }
  return delta.cwiseProduct(total) / static_cast<double>(steps);
}

// Summed over the embedding dimension: one score per token.
inline std::vector<double> token_scores(const Mat& per_dim) {
  std::vector<double> out(static_cast<std::size_t>(per_dim.rows()));
  for (Eigen::Index i = 0; i < per_dim.rows(); ++i) out[static_cast<std::size_t>(i)] = per_dim.row(i).sum();
  return out;
}

// Baseline x' is the PAD embedding repeated to the input length.
inline AttributionMap ig_attribute(const nnet::ClassifierModel& model, const TokenSequence& tokens,
                                   const IgConfig& config, std::string ref = {}) {
  if (tokens.empty()) throw Error("ig_attribute: empty token sequence");
  nnet::check_class(model, config.target_class);
  const Mat x = model.embed(tokens.ids);
  const std::vector<TokenId> pads(static_cast<std::size_t>(x.rows()), Vocab::kPad);
  const Mat baseline = model.embed(pads);
  const Mat per_dim = integrated_gradients(x, baseline, config.steps, [&](const Mat& p) {
    return nnet::probability_gradient(model, p, config.target_class);
  }, config.rule);
  AttributionMap map;
  map.scores = token_scores(per_dim);
  map.scores.resize(tokens.size(), 0.0);  // positions past max_len never reach the model
  map.target_class = config.target_class;
  map.method = Method::ig;
  map.sequence_ref = std::move(ref);
  return map;
}

// ---------------------------------------------------------------------------
// LIME

struct LimeConfig {
  std::size_t n_samples = 2000;
  std::size_t max_features = 20;
  double kernel_width = 0.25;
  double ridge_lambda = 1.0;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const {
    if (n_samples < 10) throw Error("lime n_samples must be >= 10");
    if (max_features < 1) throw Error("lime max_features must be >= 1");
    if (!(kernel_width > 0.0)) throw Error("lime kernel_width must be > 0");
    if (!(ridge_lambda >= 0.0)) throw Error("lime ridge_lambda must be >= 0");
  }
};

using Predictor = std::function<RowVec(const TokenSequence&)>;

struct LimeExplanation {
  AttributionMap map;
  std::vector<std::size_t> features;  // positions kept after truncation
  double intercept = 0.0;
  double local_fidelity = 0.0;  // weighted R^2 of the surrogate on its samples
  std::size_t queries = 0;      // distinct model calls
};

namespace detail {

// Weighted ridge with an unpenalized intercept on the selected columns of Z.
// Returns [intercept, coef...].
inline Vec weighted_ridge(const Mat& z, const Vec& y, const Vec& w,
                          const std::vector<std::size_t>& cols, double lambda) {
  const auto n = z.rows();
  const auto p = static_cast<Eigen::Index>(cols.size()) + 1;
  Mat x(n, p);
  x.col(0).setOnes();
  for (Eigen::Index j = 1; j < p; ++j) x.col(j) = z.col(static_cast<Eigen::Index>(cols[static_cast<std::size_t>(j - 1)]));
  Eigen::MatrixXd gram = x.transpose() * w.asDiagonal() * x;
  for (Eigen::Index j = 1; j < p; ++j) gram(j, j) += lambda;
  Vec rhs = x.transpose() * w.cwiseProduct(y);
  return gram.ldlt().solve(rhs);
}

inline double weighted_r2(const Mat& z, const Vec& y, const Vec& w,
                          const std::vector<std::size_t>& cols, const Vec& beta) {
  Vec pred = Vec::Constant(y.size(), beta(0));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    pred += beta(static_cast<Eigen::Index>(j + 1)) * z.col(static_cast<Eigen::Index>(cols[j]));
  }
  const double wsum = w.sum();
  const double ybar = w.dot(y) / wsum;
  const double ss_res = w.dot((y - pred).cwiseAbs2());
  const double ss_tot = w.dot((y.array() - ybar).matrix().cwiseAbs2());
  if (ss_tot <= 1e-300) return ss_res <= 1e-300 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

inline TokenSequence apply_mask(const TokenSequence& tokens, const std::vector<std::uint8_t>& keep) {
  TokenSequence out = tokens;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) out.ids[i] = Vocab::kMask;
  }
  return out;
}

}  // namespace detail

inline LimeExplanation lime_explain(const Predictor& predict, const TokenSequence& tokens,
                                    std::size_t target_class, const LimeConfig& config,
                                    std::string ref = {}) {
  config.validate();
  if (tokens.empty()) throw Error("lime_attribute: empty token sequence");
  const std::size_t len = tokens.size();
  LimeExplanation out;
  out.map.target_class = target_class;
  out.map.method = Method::lime;
  out.map.sequence_ref = std::move(ref);
  auto target_prob = [&](const TokenSequence& s) {
    RowVec p = predict(s);
    if (target_class >= static_cast<std::size_t>(p.size())) {
      throw Error("lime: target class out of range");
    }
    return p(static_cast<Eigen::Index>(target_class));
  };

  if (len == 1) {
    const double full = target_prob(tokens);
    const double masked = target_prob(detail::apply_mask(tokens, {0}));
    out.map.scores = {full - masked};
    out.features = {0};
    out.intercept = masked;
    out.local_fidelity = 1.0;
    out.queries = 2;
    return out;
  }

  // (1) perturbation neighbourhood
  Rng rng(config.seed);
  std::vector<std::vector<std::uint8_t>> masks(config.n_samples);
  std::vector<std::size_t> order(len);
  for (auto& keep : masks) {
    keep.assign(len, 1);
    const std::size_t u = 1 + rng.uniform_index(len);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < u; ++i) {
      std::swap(order[i], order[i + rng.uniform_index(len - i)]);
      keep[order[i]] = 0;
    }
  }

  // Distinct masks are queried once each; the predictor is pure.
  std::map<std::vector<std::uint8_t>, std::size_t> unique;
  std::vector<const std::vector<std::uint8_t>*> distinct;
  std::vector<std::size_t> slot(masks.size());
  for (std::size_t s = 0; s < masks.size(); ++s) {
    auto [it, inserted] = unique.emplace(masks[s], distinct.size());
    if (inserted) distinct.push_back(&it->first);
    slot[s] = it->second;
  }
  std::vector<double> answers(distinct.size());
  parallel_for(distinct.size(), config.jobs, [&](std::size_t i) {
    answers[i] = target_prob(detail::apply_mask(tokens, *distinct[i]));
  });
  out.queries = distinct.size();

  // (2) exponential kernel on cosine distance to the all-ones vector
  Mat z(static_cast<Eigen::Index>(masks.size()), static_cast<Eigen::Index>(len));
  Vec y(z.rows()), w(z.rows());
  const double sigma2 = config.kernel_width * config.kernel_width;
  for (std::size_t s = 0; s < masks.size(); ++s) {
    std::size_t kept = 0;
    for (std::size_t i = 0; i < len; ++i) {
      z(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = masks[s][i];
      kept += masks[s][i];
    }
    const double cos_sim = kept == 0 ? 0.0
                                     : std::sqrt(static_cast<double>(kept) / static_cast<double>(len));
    const double dist = 1.0 - cos_sim;
    w(static_cast<Eigen::Index>(s)) = std::exp(-dist * dist / sigma2);
    y(static_cast<Eigen::Index>(s)) = answers[slot[s]];
  }

  // (3) fit on all positions, (4) keep the largest |coef|, refit
  std::vector<std::size_t> all(len);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Vec beta = detail::weighted_ridge(z, y, w, all, config.ridge_lambda);
  std::vector<std::size_t> feats = all;
  if (len > config.max_features) {
    std::stable_sort(feats.begin(), feats.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(beta(static_cast<Eigen::Index>(a + 1))) >
             std::abs(beta(static_cast<Eigen::Index>(b + 1)));
    });
    feats.resize(config.max_features);
    std::sort(feats.begin(), feats.end());
    beta = detail::weighted_ridge(z, y, w, feats, config.ridge_lambda);
  }

  // (5) refit coefficients at kept positions, zero elsewhere
  out.map.scores.assign(len, 0.0);
  for (std::size_t j = 0; j < feats.size(); ++j) {
    out.map.scores[feats[j]] = beta(static_cast<Eigen::Index>(j + 1));
  }
  out.features = feats;
  out.intercept = beta(0);
  out.local_fidelity = detail::weighted_r2(z, y, w, feats, beta);
  return out;
}

inline AttributionMap lime_attribute(const Predictor& predict, const TokenSequence& tokens,
                                     std::size_t target_class, const LimeConfig& config,
                                     std::string ref = {}) {
  return lime_explain(predict, tokens, target_class, config, std::move(ref)).map;
}

inline Predictor classifier_predictor(const nnet::ClassifierModel& model) {
  return [&model](const TokenSequence& s) { return model.probs(s.ids); };
}

// ---------------------------------------------------------------------------
// Influential-token selection

enum class SelectStrategy { topk, weighted_sample };

inline std::string to_string(SelectStrategy s) {
  return s == SelectStrategy::topk ? "topk" : "weighted_sample";
}

inline SelectStrategy parse_select_strategy(std::string_view s) {
  if (s == "topk") return SelectStrategy::topk;
  if (s == "weighted_sample") return SelectStrategy::weighted_sample;
  throw Error("unknown selection strategy: " + std::string(s));
}

struct SelectConfig {
  double fraction = 0.2;
  SelectStrategy strategy = SelectStrategy::topk;
  bool abs_scores = false;
  std::uint64_t seed = 0;
};

struct InfluentialToken {
  std::size_t position = 0;
  TokenId id = Vocab::kUnk;
  std::string surface;

  friend bool operator==(const InfluentialToken&, const InfluentialToken&) = default;
};

inline bool is_special(TokenId id) {
  return id >= 0 && static_cast<std::size_t>(id) < Vocab::kNumSpecial;
}

// ceil(fraction * len), at least 1, at most the number of eligible
// positions; special tokens (PAD, UNK, MASK, SEP, ...) are never chosen.
// The result is in original position order.
inline std::vector<InfluentialToken> select_influential(const AttributionMap& attr,
                                                        const TokenSequence& tokens,
                                                        const SelectConfig& config) {
  if (!(config.fraction > 0.0 && config.fraction <= 1.0)) {
    throw Error("selection fraction must be in (0, 1]");
  }
  if (attr.scores.size() != tokens.size()) throw Error("attribution/sequence length mismatch");
  std::vector<std::size_t> cands;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!is_special(tokens.ids[i])) cands.push_back(i);
  }
  const auto want = static_cast<std::size_t>(
      std::ceil(config.fraction * static_cast<double>(tokens.size()) - 1e-9));
  const std::size_t count = std::min(std::max<std::size_t>(1, want), cands.size());
  auto score = [&](std::size_t pos) {
    return config.abs_scores ? std::abs(attr.scores[pos]) : attr.scores[pos];
  };

  std::vector<std::size_t> chosen;
  if (config.strategy == SelectStrategy::topk) {
    chosen = cands;
    std::stable_sort(chosen.begin(), chosen.end(),
                     [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
    chosen.resize(count);
  } else {
    Rng rng(config.seed);
    std::vector<std::size_t> pool = cands;
    for (std::size_t n = 0; n < count; ++n) {
      double mx = -std::numeric_limits<double>::infinity();
      for (auto p : pool) mx = std::max(mx, score(p));
      std::vector<double> weights;
      for (auto p : pool) {
        const double s = score(p);
        if (std::isinf(mx) && mx > 0) {
          weights.push_back(s == mx ? 1.0 : 0.0);
        } else {
          weights.push_back(std::exp(s - mx));
        }
      }
      const std::size_t k = rng.categorical(weights);
      chosen.push_back(pool[k]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<InfluentialToken> z;
  for (auto p : chosen) z.push_back({p, tokens.ids[p], tokens.surfaces[p]});
  return z;
}

// ---------------------------------------------------------------------------
// Dump format: one JSON object per example.

inline nlohmann::ordered_json to_json(const AttributionMap& map, const TokenSequence& tokens,
                                      const std::vector<InfluentialToken>& z) {
  nlohmann::ordered_json j;
  j["id"] = map.sequence_ref;
  j["method"] = to_string(map.method);
  j["target_class"] = map.target_class;
  j["tokens"] = tokens.surfaces;
  j["scores"] = map.scores;
  auto positions = nlohmann::ordered_json::array();
  for (const auto& t : z) positions.push_back(t.position);
  j["z"] = positions;
  return j;
}

struct AttributionRecord {
  AttributionMap map;
  std::vector<std::string> tokens;
  std::vector<std::size_t> z;
};

inline AttributionRecord attribution_from_json(const nlohmann::json& j) {
  AttributionRecord r;
  r.map.sequence_ref = j.at("id").get<std::string>();
  r.map.method = parse_method(j.at("method").get<std::string>());
  r.map.target_class = j.at("target_class").get<std::size_t>();
  r.map.scores = j.at("scores").get<std::vector<double>>();
  r.tokens = j.at("tokens").get<std::vector<std::string>>();
  r.z = j.at("z").get<std::vector<std::size_t>>();
  if (r.tokens.size() != r.map.scores.size()) {
    throw Error("attribution record " + r.map.sequence_ref + ": tokens/scores length mismatch");
  }
  return r;
}

}  // namespace advforge::attribution
