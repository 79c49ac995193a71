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

#include <span>

#include "advforge/nnet/generator.hpp"

namespace advforge::nnet {

enum class DecodeStrategy { topk, beam };

inline std::string to_string(DecodeStrategy s) { return s == DecodeStrategy::topk ? "topk" : "beam"; }

inline DecodeStrategy parse_decode_strategy(std::string_view s) {
  if (s == "topk") return DecodeStrategy::topk;
  if (s == "beam") return DecodeStrategy::beam;
  throw Error("unknown decode strategy: " + std::string(s));
}

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::topk;
  std::size_t k = 10;
  std::size_t beam_size = 10;
  std::size_t max_len = 150;  // decoding steps, the EOS step included
  std::uint64_t seed = 0;
  TokenId eos = Vocab::kEos;
  std::vector<TokenId> banned;  // never emitted

  void validate() const {
    if (k < 1) throw Error("decode k must be >= 1");
    if (beam_size < 1) throw Error("beam_size must be >= 1");
    if (max_len < 1) throw Error("decode max_len must be >= 1");
  }
};

struct DecodeResult {
  std::vector<TokenId> tokens;  // generated tokens, EOS excluded
  bool finished = false;        // ended with EOS
  double score = 0.0;           // mean log-prob over decoding steps
};

namespace detail {

// Log-softmax over the tokens that are not banned.
inline RowVec masked_log_probs(RowVec logits, std::span<const TokenId> banned) {
  for (TokenId b : banned) {
    if (b >= 0 && b < logits.size()) logits(b) = -std::numeric_limits<double>::infinity();
  }
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

inline std::size_t step_budget(const GeneratorModel& model, std::size_t prompt_len,
                               const DecodeConfig& cfg) {
  const std::size_t ctx = model.dims().max_ctx;
  const std::size_t room = prompt_len < ctx ? ctx - prompt_len : 0;
  // The last generated token never needs to be fed back, so one extra
  // step fits beyond the context.
  return std::min(cfg.max_len, room + 1);
}

inline void check_prompt(const GeneratorModel& model, std::span<const TokenId> prompt) {
  if (prompt.empty()) throw Error("decode prompt is empty");
  model.check_ids(prompt);
}

// Ids sorted by (log-prob desc, id asc), truncated to n.
inline std::vector<TokenId> top_tokens(const RowVec& logp, std::size_t n) {
  std::vector<TokenId> ids;
  for (Eigen::Index i = 0; i < logp.size(); ++i) {
    if (std::isfinite(logp(i))) ids.push_back(static_cast<TokenId>(i));
  }
  n = std::min(n, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](TokenId a, TokenId b) {
                      if (logp(a) != logp(b)) return logp(a) > logp(b);
                      return a < b;
                    });
  ids.resize(n);
  return ids;
}

}  // namespace detail

inline DecodeResult decode_greedy(const GeneratorModel& model, std::span<const TokenId> prompt,
                                  const DecodeConfig& cfg) {
  cfg.validate();
  detail::check_prompt(model, prompt);
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  DecodeResult r;
  double sum = 0.0;
  std::size_t steps = 0;
  const std::size_t budget = detail::step_budget(model, prompt.size(), cfg);
  for (std::size_t s = 0; s < budget; ++s) {
    RowVec logp = detail::masked_log_probs(model.next_logits(ctx), cfg.banned);
    const TokenId next = detail::top_tokens(logp, 1).at(0);
    sum += logp(next);
    ++steps;
    if (next == cfg.eos) {
      r.finished = true;
      break;
    }
    r.tokens.push_back(next);
    ctx.push_back(next);
  }
  r.score = steps ? sum / static_cast<double>(steps) : 0.0;
  return r;
}

// Samples each step from the renormalized k most probable tokens.
inline DecodeResult decode_topk(const GeneratorModel& model, std::span<const TokenId> prompt,
                                const DecodeConfig& cfg) {
  cfg.validate();
  detail::check_prompt(model, prompt);
  Rng rng(cfg.seed);
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  DecodeResult r;
  double sum = 0.0;
  std::size_t steps = 0;
  const std::size_t budget = detail::step_budget(model, prompt.size(), cfg);
  for (std::size_t s = 0; s < budget; ++s) {
    RowVec logp = detail::masked_log_probs(model.next_logits(ctx), cfg.banned);
    const auto cands = detail::top_tokens(logp, cfg.k);
    std::vector<double> w;
    w.reserve(cands.size());
    const double top = logp(cands.front());
    for (TokenId t : cands) w.push_back(std::exp(logp(t) - top));
    const TokenId next = cands[rng.categorical(w)];
    sum += logp(next);
    ++steps;
    if (next == cfg.eos) {
      r.finished = true;
      break;
    }
    r.tokens.push_back(next);
    ctx.push_back(next);
  }
  r.score = steps ? sum / static_cast<double>(steps) : 0.0;
  return r;
}

// Beam search. Candidates compete on cumulative log-prob (equal to mean
// log-prob within a step); ties go to the lower token id, then the lower
// beam index. Hypotheses that emit EOS leave the beam. The result is the
// finished hypothesis with the best mean log-prob, else the best live one.
inline DecodeResult decode_beam(const GeneratorModel& model, std::span<const TokenId> prompt,
                                const DecodeConfig& cfg) {
  cfg.validate();
  detail::check_prompt(model, prompt);
  struct Hyp {
    std::vector<TokenId> tokens;
    double sum = 0.0;
  };
  struct Cand {
    double sum;
    TokenId token;
    std::size_t beam;
  };
  std::vector<Hyp> live{Hyp{}};
  std::vector<Hyp> finished;  // tokens include the EOS
  const std::size_t budget = detail::step_budget(model, prompt.size(), cfg);
  std::vector<TokenId> ctx;
  for (std::size_t s = 0; s < budget && !live.empty(); ++s) {
    std::vector<Cand> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      ctx.assign(prompt.begin(), prompt.end());
      ctx.insert(ctx.end(), live[b].tokens.begin(), live[b].tokens.end());
      RowVec logp = detail::masked_log_probs(model.next_logits(ctx), cfg.banned);
      for (Eigen::Index t = 0; t < logp.size(); ++t) {
        if (std::isfinite(logp(t))) {
          cands.push_back({live[b].sum + logp(t), static_cast<TokenId>(t), b});
        }
      }
    }
    const std::size_t keep = std::min(cfg.beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), [](const Cand& a, const Cand& b) {
                        if (a.sum != b.sum) return a.sum > b.sum;
                        if (a.token != b.token) return a.token < b.token;
                        return a.beam < b.beam;
                      });
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      Hyp h = live[cands[i].beam];
      h.tokens.push_back(cands[i].token);
      h.sum = cands[i].sum;
      (cands[i].token == cfg.eos ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);
  }
  auto mean = [](const Hyp& h) { return h.sum / static_cast<double>(h.tokens.size()); };
  DecodeResult r;
  const std::vector<Hyp>& pool = finished.empty() ? live : finished;
  if (pool.empty()) return r;
  const Hyp* best = &pool.front();
  for (const auto& h : pool) {
    if (mean(h) > mean(*best)) best = &h;
  }
  r.finished = !finished.empty();
  r.score = mean(*best);
  r.tokens = best->tokens;
  if (r.finished) r.tokens.pop_back();
  return r;
}

inline DecodeResult decode(const GeneratorModel& model, std::span<const TokenId> prompt,
                           const DecodeConfig& cfg) {
  return cfg.strategy == DecodeStrategy::topk ? decode_topk(model, prompt, cfg)
                                              : decode_beam(model, prompt, cfg);
}

}  // namespace advforge::nnet
