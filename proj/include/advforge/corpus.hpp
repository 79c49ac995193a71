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

// Word-level tokenization, the shared vocabulary, and JSONL dataset I/O for
// single-text and premise/hypothesis tasks.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "advforge/common.hpp"

namespace advforge {

using TokenId = std::int32_t;

enum class TaskKind { single_text, pair };

inline std::string to_string(TaskKind t) {
  return t == TaskKind::single_text ? "single_text" : "pair";
}

inline TaskKind parse_task(std::string_view s) {
  if (s == "single_text") return TaskKind::single_text;
  if (s == "pair") return TaskKind::pair;
  throw Error("unknown task kind: " + std::string(s));
}

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kAttr = 3;
  static constexpr TokenId kLabel = 4;
  static constexpr TokenId kText = 5;
  static constexpr TokenId kSep = 6;
  static constexpr TokenId kEos = 7;
  static constexpr std::size_t kNumSpecial = 8;

  Vocab() : Vocab({}, {}) {}

  // `corpus_tokens` are appended after the reserved block in the given order.
  Vocab(std::vector<std::string> label_names,
        const std::vector<std::string>& corpus_tokens)
      : label_names_(std::move(label_names)) {
    static const char* kSpecial[kNumSpecial] = {
        "<pad>", "<unk>", "<mask>", "<attr>", "<label>", "<text>", "<sep>", "<eos>"};
    for (const char* s : kSpecial) push(s);
    for (const auto& name : label_names_) push("<label:" + name + ">");
    reserved_ = id_to_token_.size();
    for (const auto& tok : corpus_tokens) {
      if (token_to_id_.count(tok)) {
        throw Error("duplicate vocabulary token: " + tok);
      }
      push(tok);
    }
  }

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t reserved_count() const { return reserved_; }
  std::size_t num_labels() const { return label_names_.size(); }
  const std::vector<std::string>& label_names() const { return label_names_; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool is_reserved(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < reserved_;
  }

  bool contains(const std::string& token) const {
    return token_to_id_.count(token) != 0;
  }

  // UNK for out-of-vocabulary tokens.
  TokenId id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= size()) {
      throw Error("token id out of range: " + std::to_string(id));
    }
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  TokenId label_token(std::size_t cls) const {
    if (cls >= label_names_.size()) {
      throw Error("label index out of range: " + std::to_string(cls));
    }
    return static_cast<TokenId>(kNumSpecial + cls);
  }

  // Inverse of label_token; nullopt for non-label ids.
  std::optional<std::size_t> label_of_token(TokenId id) const {
    if (id >= static_cast<TokenId>(kNumSpecial) &&
        static_cast<std::size_t>(id) < reserved_) {
      return static_cast<std::size_t>(id) - kNumSpecial;
    }
    return std::nullopt;
  }

  // Hex FNV-1a over the newline-joined token list.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : id_to_token_) {
      h = fnv1a(t, h);
      h = fnv1a("\n", h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.id_to_token_ == b.id_to_token_ && a.label_names_ == b.label_names_;
  }

 private:
  void push(std::string tok) {
    token_to_id_.emplace(tok, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(std::move(tok));
  }

  std::vector<std::string> label_names_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::size_t reserved_ = 0;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::string> surfaces;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }

  void push_back(TokenId id, std::string surface) {
    ids.push_back(id);
    surfaces.push_back(std::move(surface));
  }

  void append(const TokenSequence& other) {
    ids.insert(ids.end(), other.ids.begin(), other.ids.end());
    surfaces.insert(surfaces.end(), other.surfaces.begin(), other.surfaces.end());
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

namespace detail {
inline bool is_punct_byte(unsigned char c) { return c < 0x80 && std::ispunct(c); }
inline bool is_space_byte(unsigned char c) { return c < 0x80 && std::isspace(c); }
}  // namespace detail

// Lowercases ASCII letters and splits on whitespace; every ASCII punctuation
// mark becomes its own token. Non-ASCII bytes are word characters.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (detail::is_space_byte(c)) {
      flush();
    } else if (detail::is_punct_byte(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

inline TokenSequence tokenize(std::string_view text, const Vocab& vocab) {
  TokenSequence seq;
  for (auto& w : split_words(text)) {
    TokenId id = vocab.id(w);
    seq.push_back(id, std::move(w));
  }
  return seq;
}

inline std::string detokenize(const TokenSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.surfaces.size(); ++i) {
    if (i) out.push_back(' ');
    out += seq.surfaces[i];
  }
  return out;
}

// Reserved tokens first, then corpus tokens with count >= min_count by
// descending count, ties lexicographic.
inline Vocab build_vocab(const std::vector<std::string>& corpus, int min_count,
                         std::vector<std::string> label_names = {}) {
  if (corpus.empty()) throw Error("empty corpus");
  if (min_count < 1) throw Error("min_count must be >= 1");
  std::map<std::string, long> counts;
  for (const auto& rec : corpus) {
    for (auto& w : split_words(rec)) ++counts[w];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_count) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocab(std::move(label_names), tokens);
}

// {"labels": [...], "tokens": [corpus tokens...], "hash": "..."}
inline nlohmann::ordered_json vocab_to_json(const Vocab& v) {
  nlohmann::ordered_json j;
  j["labels"] = v.label_names();
  j["tokens"] = std::vector<std::string>(v.tokens().begin() + static_cast<std::ptrdiff_t>(v.reserved_count()),
                                         v.tokens().end());
  j["hash"] = v.hash();
  return j;
}

inline Vocab vocab_from_json(const nlohmann::json& j) {
  Vocab v(j.at("labels").get<std::vector<std::string>>(),
          j.at("tokens").get<std::vector<std::string>>());
  if (j.contains("hash") && j.at("hash").get<std::string>() != v.hash()) {
    throw Error("vocabulary hash mismatch");
  }
  return v;
}

inline void save_vocab(const Vocab& v, const std::filesystem::path& path) {
  write_file_atomic(path, vocab_to_json(v).dump(1) + "\n");
}

inline Vocab load_vocab(const std::filesystem::path& path) {
  try {
    return vocab_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad vocabulary file " + path.string() + ": " + e.what());
  }
}

struct Example {
  std::string id;
  TaskKind task = TaskKind::single_text;
  TokenSequence text;        // single_text
  TokenSequence premise;     // pair
  TokenSequence hypothesis;  // pair
  std::size_t gold_label = 0;

  friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
  TaskKind task = TaskKind::single_text;
  std::vector<std::string> label_names;
  std::vector<Example> examples;

  std::size_t num_classes() const { return label_names.size(); }
  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// The sequence a classifier sees: the text, or premise <sep> hypothesis.
inline TokenSequence classifier_input(const Example& ex) {
  if (ex.task == TaskKind::single_text) return ex.text;
  TokenSequence s = ex.premise;
  s.push_back(Vocab::kSep, "<sep>");
  s.append(ex.hypothesis);
  return s;
}

// One JSONL line before tokenization.
struct RawRecord {
  std::string id;
  std::string text;
  std::string premise;
  std::string hypothesis;
  std::string label;
};

inline std::vector<RawRecord> read_records(const std::filesystem::path& path,
                                           TaskKind task) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset: " + path.string());
  std::vector<RawRecord> out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed JSON at line " + std::to_string(lineno) + " (" + where +
                  "): " + e.what());
    }
    auto field = [&](const char* key) -> std::string {
      if (!j.is_object() || !j.contains(key) || !j[key].is_string()) {
        throw Error("line " + std::to_string(lineno) + " (" + where +
                    "): missing string field \"" + key + "\"");
      }
      return j[key].get<std::string>();
    };
    RawRecord r;
    r.id = j.is_object() && j.contains("id") && j["id"].is_string()
               ? j["id"].get<std::string>()
               : std::to_string(index);
    if (task == TaskKind::single_text) {
      r.text = field("text");
    } else {
      r.premise = field("premise");
      r.hypothesis = field("hypothesis");
    }
    r.label = field("label");
    out.push_back(std::move(r));
    ++index;
  }
  return out;
}

// Raw strings that feed build_vocab.
inline std::vector<std::string> record_texts(const std::vector<RawRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (!r.text.empty()) out.push_back(r.text);
    if (!r.premise.empty()) out.push_back(r.premise);
    if (!r.hypothesis.empty()) out.push_back(r.hypothesis);
  }
  return out;
}

inline std::size_t label_index(const std::vector<std::string>& label_names,
                               const std::string& label) {
  auto it = std::find(label_names.begin(), label_names.end(), label);
  if (it == label_names.end()) {
    throw Error("unknown label \"" + label + "\"");
  }
  return static_cast<std::size_t>(it - label_names.begin());
}

inline Dataset to_dataset(const std::vector<RawRecord>& records, TaskKind task,
                          const Vocab& vocab,
                          const std::vector<std::string>& label_names) {
  Dataset ds;
  ds.task = task;
  ds.label_names = label_names;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    Example ex;
    ex.id = r.id;
    ex.task = task;
    try {
      ex.gold_label = label_index(label_names, r.label);
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " in record " + std::to_string(i + 1) +
                  " (id " + r.id + ")");
    }
    if (task == TaskKind::single_text) {
      ex.text = tokenize(r.text, vocab);
    } else {
      ex.premise = tokenize(r.premise, vocab);
      ex.hypothesis = tokenize(r.hypothesis, vocab);
    }
    if (!seen.emplace(ex.id, i).second) {
      throw Error("duplicate example id: " + ex.id);
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, TaskKind task,
                            const Vocab& vocab,
                            const std::vector<std::string>& label_names) {
  return to_dataset(read_records(path, task), task, vocab, label_names);
}

inline nlohmann::ordered_json example_to_json(const Example& ex,
                                              const std::vector<std::string>& labels) {
  nlohmann::ordered_json j;
  j["id"] = ex.id;
  if (ex.task == TaskKind::single_text) {
    j["text"] = detokenize(ex.text);
  } else {
    j["premise"] = detokenize(ex.premise);
    j["hypothesis"] = detokenize(ex.hypothesis);
  }
  j["label"] = labels.at(ex.gold_label);
  return j;
}

inline std::string dataset_to_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& ex : ds.examples) {
    out += example_to_json(ex, ds.label_names).dump();
    out.push_back('\n');
  }
  return out;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, dataset_to_jsonl(ds));
}

}  // namespace advforge
