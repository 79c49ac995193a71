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

// Adversarial generation: partition seeds by classifier correctness, build
// control-token prompts [attr z label y' text S eos], decode label-flipped
// candidates and filter them into attack records.

#include <optional>
#include <sstream>

#include "advforge/attribution.hpp"
#include "advforge/nnet/decode.hpp"
#include "advforge/nnet/train.hpp"

namespace advforge::advgen {

// ---------------------------------------------------------------------------
// Partition

struct Partition {
  Dataset d1;  // correctly classified
  Dataset d2;  // misclassified
  std::vector<std::size_t> pred_d1;
  std::vector<std::size_t> pred_d2;

  std::size_t size() const { return d1.size() + d2.size(); }
};

inline Partition partition_by_correctness(const nnet::ClassifierModel& model, const Dataset& d) {
  if (model.dims().num_classes != d.num_classes()) {
    throw Error("classifier has " + std::to_string(model.dims().num_classes) +
                " classes, dataset has " + std::to_string(d.num_classes()));
  }
  Partition p;
  p.d1.task = p.d2.task = d.task;
  p.d1.label_names = p.d2.label_names = d.label_names;
  for (const auto& ex : d.examples) {
    const std::size_t pred = model.predict(classifier_input(ex).ids);
    if (pred == ex.gold_label) {
      p.d1.examples.push_back(ex);
      p.pred_d1.push_back(pred);
    } else {
      p.d2.examples.push_back(ex);
      p.pred_d2.push_back(pred);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Label flip

enum class FlipStrategy { binary_flip, uniform_other, fixed_target };

inline std::string to_string(FlipStrategy s) {
  switch (s) {
    case FlipStrategy::binary_flip: return "binary_flip";
    case FlipStrategy::uniform_other: return "uniform_other";
    case FlipStrategy::fixed_target: return "fixed_target";
  }
  return "?";
}

inline FlipStrategy parse_flip_strategy(std::string_view s) {
  if (s == "binary_flip") return FlipStrategy::binary_flip;
  if (s == "uniform_other") return FlipStrategy::uniform_other;
  if (s == "fixed_target") return FlipStrategy::fixed_target;
  throw Error("unknown flip strategy: " + std::string(s));
}

struct FlipConfig {
  FlipStrategy strategy = FlipStrategy::uniform_other;
  std::size_t target = 0;  // fixed_target only
};

inline std::size_t flip_label(std::size_t y, std::size_t num_classes, const FlipConfig& cfg,
                              std::uint64_t seed) {
  if (num_classes < 2) throw Error("label flip needs at least 2 classes");
  if (y >= num_classes) throw Error("label " + std::to_string(y) + " out of range");
  switch (cfg.strategy) {
    case FlipStrategy::binary_flip:
      if (num_classes != 2) {
        throw Error("binary_flip needs exactly 2 classes, got " + std::to_string(num_classes));
      }
      return 1 - y;
    case FlipStrategy::uniform_other: {
      Rng rng(seed);
      const std::size_t r = rng.uniform_index(num_classes - 1);
      return r < y ? r : r + 1;
    }
    case FlipStrategy::fixed_target:
      if (cfg.target >= num_classes) throw Error("fixed_target out of range");
      if (cfg.target == y) throw Error("fixed_target equals the original label");
      return cfg.target;
  }
  throw Error("bad flip strategy");
}

// ---------------------------------------------------------------------------
// Prompt sequences

enum class Segment : std::uint8_t { attr, z, label, y_prime, text, s, eos };
enum class PromptMode { train, decode };

struct PromptSequence {
  std::vector<TokenId> ids;
  std::vector<std::string> surfaces;
  std::vector<Segment> segments;
  std::string source_example;
  std::size_t y_prime = 0;
  PromptMode mode = PromptMode::train;

  std::size_t size() const { return ids.size(); }

  void push(TokenId id, std::string surface, Segment seg) {
    ids.push_back(id);
    surfaces.push_back(std::move(surface));
    segments.push_back(seg);
  }
};

// The text segment S: the text, or premise <sep> hypothesis.
inline TokenSequence text_segment(const Example& ex) { return classifier_input(ex); }

inline void check_z(const std::vector<attribution::InfluentialToken>& z, const std::string& id) {
  if (z.empty()) throw Error("example " + id + ": no influential tokens");
}

// Train mode: the full sequence with y' = the gold label. Decode mode: the
// prefix up to the text token, plus premise <sep> for pair tasks. max_ctx
// of 0 disables the length check.
inline PromptSequence build_prompt_sequence(const Example& ex,
                                            const std::vector<attribution::InfluentialToken>& z,
                                            std::size_t y_prime, PromptMode mode,
                                            const Vocab& vocab, std::size_t max_ctx = 0) {
  check_z(z, ex.id);
  if (mode == PromptMode::train && y_prime != ex.gold_label) {
    throw Error("example " + ex.id + ": train prompts carry the gold label");
  }
  PromptSequence p;
  p.source_example = ex.id;
  p.y_prime = y_prime;
  p.mode = mode;
  p.push(Vocab::kAttr, "<attr>", Segment::attr);
  for (const auto& t : z) p.push(t.id, t.surface, Segment::z);
  p.push(Vocab::kLabel, "<label>", Segment::label);
  const TokenId yw = vocab.label_token(y_prime);
  p.push(yw, vocab.token(yw), Segment::y_prime);
  p.push(Vocab::kText, "<text>", Segment::text);
  if (mode == PromptMode::train) {
    const TokenSequence s = text_segment(ex);
    for (std::size_t i = 0; i < s.size(); ++i) p.push(s.ids[i], s.surfaces[i], Segment::s);
    p.push(Vocab::kEos, "<eos>", Segment::eos);
  } else if (ex.task == TaskKind::pair) {
    for (std::size_t i = 0; i < ex.premise.size(); ++i) {
      p.push(ex.premise.ids[i], ex.premise.surfaces[i], Segment::s);
    }
    p.push(Vocab::kSep, "<sep>", Segment::s);
  }
  if (max_ctx > 0 && p.size() > max_ctx) {
    throw Error("example " + ex.id + ": prompt length " + std::to_string(p.size()) +
                " exceeds max_ctx " + std::to_string(max_ctx));
  }
  return p;
}

struct ParsedPrompt {
  std::vector<std::string> z;
  std::size_t y_prime = 0;
  std::vector<std::string> s;
  bool has_eos = false;
};

// Inverse of build_prompt_sequence on ids alone.
inline ParsedPrompt parse_prompt(std::span<const TokenId> ids, const Vocab& vocab) {
  auto fail = [](const std::string& why) -> ParsedPrompt { throw Error("malformed prompt: " + why); };
  std::size_t i = 0;
  if (ids.empty() || ids[i++] != Vocab::kAttr) return fail("missing attr token");
  ParsedPrompt out;
  while (i < ids.size() && ids[i] != Vocab::kLabel) out.z.push_back(vocab.token(ids[i++]));
  if (out.z.empty()) return fail("no influential tokens");
  if (i + 2 >= ids.size()) return fail("truncated label block");
  ++i;  // label token
  const auto cls = vocab.label_of_token(ids[i++]);
  if (!cls) return fail("expected a label word");
  out.y_prime = *cls;
  if (i >= ids.size() || ids[i++] != Vocab::kText) return fail("missing text token");
  while (i < ids.size() && ids[i] != Vocab::kEos) out.s.push_back(vocab.token(ids[i++]));
  out.has_eos = i < ids.size();
  if (out.has_eos && i + 1 != ids.size()) return fail("tokens after eos");
  return out;
}

// ---------------------------------------------------------------------------
// Generator training data

struct TrainingPromptConfig {
  bool loss_on_prompt = true;
  std::size_t max_ctx = 64;
};

// Left-truncates S so the sequence fits max_ctx; the control block is
// never cut.
inline nnet::LmItem to_lm_item(PromptSequence p, const TrainingPromptConfig& cfg) {
  if (p.size() > cfg.max_ctx) {
    const std::size_t excess = p.size() - cfg.max_ctx;
    const auto first_s = static_cast<std::size_t>(
        std::find(p.segments.begin(), p.segments.end(), Segment::s) - p.segments.begin());
    const std::size_t s_len = p.size() - 1 - first_s;
    if (first_s == p.size() || excess > s_len) {
      throw Error("example " + p.source_example + ": control block alone exceeds max_ctx " +
                  std::to_string(cfg.max_ctx));
    }
    const auto b = static_cast<std::ptrdiff_t>(first_s);
    const auto e = b + static_cast<std::ptrdiff_t>(excess);
    p.ids.erase(p.ids.begin() + b, p.ids.begin() + e);
    p.surfaces.erase(p.surfaces.begin() + b, p.surfaces.begin() + e);
    p.segments.erase(p.segments.begin() + b, p.segments.begin() + e);
  }
  nnet::LmItem item;
  item.source = p.source_example;
  item.ids = p.ids;
  if (!cfg.loss_on_prompt) {
    // predict S and EOS only
    item.predict_mask.resize(p.size(), 0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      item.predict_mask[i] = p.segments[i] == Segment::s || p.segments[i] == Segment::eos;
    }
  }
  return item;
}

// Reads d1 only: misclassified examples never train the generator.
inline std::vector<nnet::LmItem> build_training_prompts(
    const Partition& partition,
    const std::map<std::string, std::vector<attribution::InfluentialToken>>& z_by_id,
    const Vocab& vocab, const TrainingPromptConfig& cfg) {
  std::vector<nnet::LmItem> out;
  for (const auto& ex : partition.d1.examples) {
    auto it = z_by_id.find(ex.id);
    if (it == z_by_id.end()) throw Error("no influential tokens for example " + ex.id);
    if (it->second.empty()) continue;  // nothing eligible to condition on
    out.push_back(to_lm_item(
        build_prompt_sequence(ex, it->second, ex.gold_label, PromptMode::train, vocab), cfg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Candidates and attack records

enum class AttackMethod { na_lime, na_ig, textfooler, hotflip };

inline std::string to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::na_lime: return "na_lime";
    case AttackMethod::na_ig: return "na_ig";
    case AttackMethod::textfooler: return "textfooler";
    case AttackMethod::hotflip: return "hotflip";
  }
  return "?";
}

inline AttackMethod parse_attack_method(std::string_view s) {
  if (s == "na_lime") return AttackMethod::na_lime;
  if (s == "na_ig") return AttackMethod::na_ig;
  if (s == "textfooler") return AttackMethod::textfooler;
  if (s == "hotflip") return AttackMethod::hotflip;
  throw Error("unknown attack method: " + std::string(s));
}

struct Candidate {
  std::string seed_id;
  AttackMethod method = AttackMethod::na_ig;
  std::size_t y = 0;
  std::size_t y_prime = 0;
  TokenSequence generated;  // the text, or the hypothesis for pair tasks
  TokenSequence premise;    // pair tasks only
  bool empty = false;
  nlohmann::ordered_json decode;  // null for baselines
};

inline TokenSequence candidate_input(const Candidate& c, TaskKind task) {
  if (task == TaskKind::single_text) return c.generated;
  TokenSequence s = c.premise;
  s.push_back(Vocab::kSep, "<sep>");
  s.append(c.generated);
  return s;
}

inline nlohmann::ordered_json decode_info(const nnet::DecodeConfig& cfg) {
  nlohmann::ordered_json j;
  j["strategy"] = nnet::to_string(cfg.strategy);
  if (cfg.strategy == nnet::DecodeStrategy::topk) {
    j["k"] = cfg.k;
  } else {
    j["beam"] = cfg.beam_size;
  }
  j["seed"] = cfg.seed;
  return j;
}

// Reserved ids other than EOS are never emitted.
inline std::vector<TokenId> banned_tokens(const Vocab& vocab) {
  std::vector<TokenId> banned;
  for (std::size_t i = 0; i < vocab.reserved_count(); ++i) {
    if (static_cast<TokenId>(i) != Vocab::kEos) banned.push_back(static_cast<TokenId>(i));
  }
  return banned;
}

inline Candidate generate_adversary(const nnet::GeneratorModel& generator, const PromptSequence& prompt,
                                    const Example& seed, const nnet::DecodeConfig& decode,
                                    const Vocab& vocab, AttackMethod method) {
  if (prompt.mode != PromptMode::decode) throw Error("generate_adversary needs a decode-mode prompt");
  nnet::DecodeConfig cfg = decode;
  cfg.eos = Vocab::kEos;
  cfg.banned = banned_tokens(vocab);
  const auto r = nnet::decode(generator, prompt.ids, cfg);
  Candidate c;
  c.seed_id = seed.id;
  c.method = method;
  c.y = seed.gold_label;
  c.y_prime = prompt.y_prime;
  for (TokenId id : r.tokens) c.generated.push_back(id, vocab.token(id));
  if (seed.task == TaskKind::pair) c.premise = seed.premise;
  c.empty = r.tokens.empty();
  c.decode = decode_info(cfg);
  return c;
}

struct AttackRecord {
  std::string seed_id;
  AttackMethod method = AttackMethod::na_ig;
  std::size_t y = 0;
  std::size_t y_prime = 0;
  std::string generated;
  std::optional<std::string> premise;
  std::size_t pred_before = 0;
  std::size_t pred_after = 0;
  bool success = false;
  bool weak_success = false;
  nlohmann::ordered_json decode;

  friend bool operator==(const AttackRecord&, const AttackRecord&) = default;
};

inline std::vector<AttackRecord> filter_candidates(const std::vector<Candidate>& candidates,
                                                   const Dataset& seeds,
                                                   const nnet::ClassifierModel& target) {
  std::map<std::string, const Example*> by_id;
  for (const auto& ex : seeds.examples) by_id[ex.id] = &ex;
  std::map<std::string, std::size_t> seed_pred;
  std::vector<AttackRecord> out;
  for (const auto& c : candidates) {
    auto it = by_id.find(c.seed_id);
    if (it == by_id.end()) throw Error("candidate references unknown seed " + c.seed_id);
    const Example& seed = *it->second;
    auto pit = seed_pred.find(c.seed_id);
    if (pit == seed_pred.end()) {
      pit = seed_pred.emplace(c.seed_id, target.predict(classifier_input(seed).ids)).first;
    }
    if (pit->second != seed.gold_label || c.empty) continue;
    AttackRecord r;
    r.seed_id = c.seed_id;
    r.method = c.method;
    r.y = c.y;
    r.y_prime = c.y_prime;
    r.generated = detokenize(c.generated);
    if (seeds.task == TaskKind::pair) r.premise = detokenize(c.premise);
    r.pred_before = pit->second;
    r.pred_after = target.predict(candidate_input(c, seeds.task).ids);
    r.success = r.pred_after == r.y_prime;
    r.weak_success = r.pred_after != r.y;
    r.decode = c.decode;
    out.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const AttackRecord& r) {
  nlohmann::ordered_json j;
  j["seed_id"] = r.seed_id;
  j["method"] = to_string(r.method);
  j["y"] = r.y;
  j["y_prime"] = r.y_prime;
  j["generated"] = r.generated;
  if (r.premise) j["premise"] = *r.premise;
  j["pred_before"] = r.pred_before;
  j["pred_after"] = r.pred_after;
  j["success"] = r.success;
  j["weak_success"] = r.weak_success;
  j["decode"] = r.decode;
  return j;
}

inline AttackRecord attack_record_from_json(const nlohmann::json& j) {
  AttackRecord r;
  r.seed_id = j.at("seed_id").get<std::string>();
  r.method = parse_attack_method(j.at("method").get<std::string>());
  r.y = j.at("y").get<std::size_t>();
  r.y_prime = j.at("y_prime").get<std::size_t>();
  r.generated = j.at("generated").get<std::string>();
  if (j.contains("premise")) r.premise = j.at("premise").get<std::string>();
  r.pred_before = j.at("pred_before").get<std::size_t>();
  r.pred_after = j.at("pred_after").get<std::size_t>();
  r.success = j.at("success").get<bool>();
  r.weak_success = j.value("weak_success", r.pred_after != r.y);
  if (j.contains("decode")) r.decode = nlohmann::ordered_json(j.at("decode"));
  if (r.y == r.y_prime) throw Error("attack record " + r.seed_id + ": y_prime equals y");
  return r;
}

inline std::string records_to_jsonl(const std::vector<AttackRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

inline std::vector<AttackRecord> read_attack_report(const std::filesystem::path& path) {
  std::vector<AttackRecord> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(attack_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace advforge::advgen
