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

// Synthetic corpora with known ground truth:
//  - keyword corpus (single_text, 2 classes): label 1 iff the token "trg"
//    occurs (exactly once) in the text; the challenge variant adds negation
//    words, and a negated mention ("not trg") is labeled 0;
//  - templated NLI corpus (pair, 3 classes): the hypothesis template decides
//    contradiction / neutral / entailment.

#include "advforge/corpus.hpp"

namespace advforge::synthetic {

inline constexpr const char* kKeyword = "trg";

inline const std::vector<std::string>& keyword_labels() {
  static const std::vector<std::string> k = {"nothate", "hate"};
  return k;
}

inline const std::vector<std::string>& nli_labels() {
  static const std::vector<std::string> k = {"contradiction", "neutral", "entailment"};
  return k;
}

namespace detail {

inline const std::vector<std::string>& filler() {
  static const std::vector<std::string> w = {
      "people", "they", "always", "say", "that",    "the",   "city",   "is",
      "loud",   "we",   "like",   "food", "weather", "today", "friends", "work",
      "music",  "news", "really", "very", "good",    "bad",   "new",    "old",
      "time",   "home", "movie",  "game", "team",    "street"};
  return w;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.uniform_index(v.size())];
}

inline std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s.push_back(' ');
    s += words[i];
  }
  return s;
}

}  // namespace detail

struct KeywordOptions {
  std::size_t min_words = 4;
  std::size_t max_words = 10;
  double positive_rate = 0.5;
  bool challenge = false;  // negation words, negated mentions, longer texts
};

// Records are ids "<prefix><index>".
inline std::vector<RawRecord> keyword_corpus(std::size_t n, std::uint64_t seed,
                                             const std::string& prefix = "ex",
                                             KeywordOptions opt = {}) {
  Rng rng(seed);
  static const std::vector<std::string> negations = {"not", "never", "no"};
  std::vector<RawRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = opt.challenge ? opt.max_words : opt.min_words;
    const std::size_t hi = opt.challenge ? 2 * opt.max_words : opt.max_words;
    const std::size_t len = lo + rng.uniform_index(hi - lo + 1);
    std::vector<std::string> words;
    for (std::size_t j = 0; j < len; ++j) words.push_back(detail::pick(detail::filler(), rng));
    const bool mention = rng.uniform() < opt.positive_rate;
    bool positive = mention;
    if (mention) {
      const std::size_t at = rng.uniform_index(words.size() + 1);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), kKeyword);
      if (opt.challenge && rng.uniform() < 0.5) {
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(at),
                     detail::pick(negations, rng));
        positive = false;
      }
    } else if (opt.challenge) {
      const std::size_t at = rng.uniform_index(words.size() + 1);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), detail::pick(negations, rng));
    }
    RawRecord r;
    r.id = prefix + std::to_string(i);
    r.text = detail::join(words) + " .";
    r.label = keyword_labels()[positive ? 1 : 0];
    out.push_back(std::move(r));
  }
  return out;
}

struct NliOptions {
  bool challenge = false;  // mixes cue words across templates
};

inline std::vector<RawRecord> nli_corpus(std::size_t n, std::uint64_t seed,
                                         const std::string& prefix = "nli",
                                         NliOptions opt = {}) {
  static const std::vector<std::string> agents = {"cat",  "dog", "bird", "horse", "child",
                                                  "man",  "woman", "girl", "boy", "farmer"};
  static const std::vector<std::string> verbs = {"sleeps", "runs",  "eats",  "sings",
                                                 "plays",  "reads", "waits", "walks"};
  static const std::vector<std::string> places = {"park",  "kitchen", "garden", "street",
                                                  "house", "field",   "river",  "market"};
  Rng rng(seed);
  std::vector<RawRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = detail::pick(agents, rng);
    const auto& v = detail::pick(verbs, rng);
    const auto& p = detail::pick(places, rng);
    const std::size_t label = rng.uniform_index(3);
    const bool alt = rng.uniform() < 0.5;
    std::string hyp;
    switch (label) {
      case 0:  // contradiction
        hyp = alt ? "the " + a + " never " + v : "nobody is in the " + p;
        if (opt.challenge) hyp += " with a friend";
        break;
      case 1:  // neutral
        hyp = alt ? "the " + a + " " + v + " with a friend" : "the " + a + " is happy";
        if (opt.challenge) hyp = "someone " + v + " and " + hyp;
        break;
      default:  // entailment
        hyp = alt ? "a " + a + " " + v : "someone " + v + " in the " + p;
        if (opt.challenge) hyp += " today";
        break;
    }
    RawRecord r;
    r.id = prefix + std::to_string(i);
    r.premise = "the " + a + " " + v + " in the " + p + " .";
    r.hypothesis = hyp + " .";
    r.label = nli_labels()[label];
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string records_to_jsonl(const std::vector<RawRecord>& recs, TaskKind task) {
  std::string out;
  for (const auto& r : recs) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    if (task == TaskKind::single_text) {
      j["text"] = r.text;
    } else {
      j["premise"] = r.premise;
      j["hypothesis"] = r.hypothesis;
    }
    j["label"] = r.label;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace advforge::synthetic
