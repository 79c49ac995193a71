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

// Command-line driver. Every subcommand reads one JSON run config, makes
// sure its upstream artifacts exist in the work directory (building them
// when missing or produced under a different config) and writes its own
// artifact atomically.
//
// Work directory layout:
//   vocab.json
//   classifier/ transfer_classifier/            checkpoints
//   attributions/<lime|ig>_<train|test>.jsonl
//   partition.json
//   prompts/<lime|ig>.jsonl
//   generator/<lime|ig>/                         checkpoint
//   reports/attack_<method>.jsonl, eval_<method>.json, finetune_<method>.json
//   reports/summary.json, summary.md
//   finetuned/<method>/                          checkpoint
//   .stamps/                                     config fingerprints

#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <set>

#include "advforge/advgen.hpp"
#include "advforge/attribution.hpp"
#include "advforge/baselines.hpp"
#include "advforge/eval.hpp"
#include "advforge/nnet/checkpoint.hpp"

namespace advforge::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Typed access to one JSON object; remembers consumed keys so leftovers can
// be reported as unknown fields.
class Section {
 public:
  Section(const json* node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_->is_object()) fail("", "must be an object");
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key) || node_->at(key).is_null()) return fallback;
    try {
      return node_->at(key).get<T>();
    } catch (const json::exception&) {
      fail(key, "has the wrong type");
    }
  }

  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) fail(key, "is required");
    return get<T>(key, T{});
  }

  bool has(const std::string& key) const { return node_ && node_->contains(key); }

  Section sub(const std::string& key) {
    seen_.insert(key);
    const json* child = node_ && node_->contains(key) ? &node_->at(key) : nullptr;
    return Section(child, field(key));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config field " + (key.empty() ? path_ : field(key)) + ": " + what);
  }

  template <class F>
  auto parse(const std::string& key, const std::string& fallback, F&& parser) {
    const auto s = get<std::string>(key, fallback);
    try {
      return parser(s);
    } catch (const Error& e) {
      fail(key, e.what());
    }
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [k, v] : node_->items()) {
      if (!seen_.count(k)) throw ConfigError("config field " + field(k) + ": unknown field");
    }
  }

 private:
  const json* node_;
  std::string path_;
  std::set<std::string> seen_;
};

struct RunConfig {
  fs::path base_dir;
  TaskKind task = TaskKind::single_text;
  std::vector<std::string> label_names;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  fs::path workdir;
  fs::path train_path, dev_path, test_path, challenge_path;
  int vocab_min_count = 1;

  nnet::ClassifierDims classifier_dims;
  nnet::TrainConfig classifier_train;
  nnet::ClassifierDims transfer_dims;
  nnet::TrainConfig transfer_train;

  attribution::Method attribution_method = attribution::Method::ig;
  std::size_t ig_steps = 64;
  attribution::IgRule ig_rule = attribution::IgRule::right;
  attribution::LimeConfig lime;
  attribution::SelectConfig select;

  nnet::GeneratorDims generator_dims;
  nnet::TrainConfig generator_train;
  bool loss_on_prompt = true;
  double generator_dev_fraction = 0.1;

  advgen::FlipConfig flip;
  nnet::DecodeConfig decode;
  std::size_t samples_per_seed = 1;

  baselines::AttackBudget budget;

  std::size_t finetune_n = 150;
  nnet::TrainConfig finetune_train = eval::default_finetune_config();
  bool finetune_successful_only = true;

  std::string fingerprint;  // hash of the resolved config, jobs and workdir excluded
};

inline nnet::TrainConfig read_train(Section s, nnet::TrainConfig d) {
  d.learning_rate = s.get("learning_rate", d.learning_rate);
  d.batch_size = s.get("batch_size", d.batch_size);
  d.max_epochs = s.get("max_epochs", d.max_epochs);
  d.patience = s.get("patience", d.patience);
  d.early_stopping = s.get("early_stopping", d.early_stopping);
  s.finish();
  try {
    d.validate();
  } catch (const Error& e) {
    s.fail("", e.what());
  }
  return d;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

// Sets a dotted path inside a JSON object: "a.b=3" (value parsed as JSON,
// falling back to a plain string).
inline void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad override key: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline RunConfig parse_config(const json& root, const fs::path& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  Section top(&root, "");
  c.task = top.parse("task", "single_text", parse_task);
  c.label_names = top.require<std::vector<std::string>>("label_names");
  if (c.label_names.size() < 2) top.fail("label_names", "needs at least 2 labels");
  if (std::set<std::string>(c.label_names.begin(), c.label_names.end()).size() != c.label_names.size()) {
    top.fail("label_names", "duplicate label");
  }
  c.seed = top.get<std::uint64_t>("seed", 0);
  c.jobs = top.get<std::size_t>("jobs", 1);
  if (c.jobs < 1) top.fail("jobs", "must be >= 1");
  c.workdir = resolve(base_dir, top.get<std::string>("workdir", "run"));

  {
    Section d = top.sub("data");
    auto path = [&](const char* key, bool required) {
      const auto p = required ? d.require<std::string>(key) : d.get<std::string>(key, "");
      fs::path r = resolve(base_dir, p);
      if (!r.empty() && !fs::exists(r)) d.fail(key, "file not found: " + r.string());
      return r;
    };
    c.train_path = path("train", true);
    c.dev_path = path("dev", true);
    c.test_path = path("test", true);
    c.challenge_path = path("challenge", false);
    d.finish();
  }
  {
    Section v = top.sub("vocab");
    c.vocab_min_count = v.get("min_count", 1);
    if (c.vocab_min_count < 1) v.fail("min_count", "must be >= 1");
    v.finish();
  }
  auto read_dims = [&](Section& s, nnet::ClassifierDims d) {
    d.d = s.get("d", d.d);
    d.max_len = s.get("max_len", d.max_len);
    if (d.d < 1) s.fail("d", "must be >= 1");
    if (d.max_len < 1) s.fail("max_len", "must be >= 1");
    return d;
  };
  {
    Section s = top.sub("classifier");
    c.classifier_dims = read_dims(s, {0, 64, c.label_names.size(), 128});
    c.classifier_train = read_train(s.sub("train"), {});
    s.finish();
  }
  {
    Section s = top.sub("transfer_classifier");
    nnet::ClassifierDims d = c.classifier_dims;
    d.d = c.classifier_dims.d * 3 / 2;
    c.transfer_dims = read_dims(s, d);
    c.transfer_train = read_train(s.sub("train"), c.classifier_train);
    s.finish();
  }
  {
    Section s = top.sub("attribution");
    c.attribution_method = s.parse("method", "ig", attribution::parse_method);
    c.ig_steps = s.get("ig_steps", c.ig_steps);
    if (c.ig_steps < 1) s.fail("ig_steps", "must be >= 1");
    c.ig_rule = s.parse("ig_rule", "right", attribution::parse_ig_rule);
    Section l = s.sub("lime");
    c.lime.n_samples = l.get("n_samples", c.lime.n_samples);
    c.lime.max_features = l.get("max_features", c.lime.max_features);
    c.lime.kernel_width = l.get("kernel_width", c.lime.kernel_width);
    c.lime.ridge_lambda = l.get("ridge_lambda", c.lime.ridge_lambda);
    try {
      c.lime.validate();
    } catch (const Error& e) {
      l.fail("", e.what());
    }
    l.finish();
    c.select.fraction = s.get("fraction", c.select.fraction);
    if (!(c.select.fraction > 0.0 && c.select.fraction <= 1.0)) s.fail("fraction", "must be in (0, 1]");
    c.select.strategy = s.parse("strategy", "topk", attribution::parse_select_strategy);
    c.select.abs_scores = s.get("abs_scores", false);
    s.finish();
  }
  {
    Section s = top.sub("generator");
    c.generator_dims.d = s.get("d", c.generator_dims.d);
    c.generator_dims.max_ctx = s.get("max_ctx", c.generator_dims.max_ctx);
    c.generator_dims.ff_hidden = s.get("ff_hidden", c.generator_dims.ff_hidden);
    c.generator_dims.layers = s.get("layers", c.generator_dims.layers);
    if (c.generator_dims.d < 1) s.fail("d", "must be >= 1");
    if (c.generator_dims.max_ctx < 2) s.fail("max_ctx", "must be >= 2");
    if (c.generator_dims.ff_hidden < 1) s.fail("ff_hidden", "must be >= 1");
    if (c.generator_dims.layers < 1) s.fail("layers", "must be >= 1");
    c.loss_on_prompt = s.get("loss_on_prompt", true);
    c.generator_dev_fraction = s.get("dev_fraction", c.generator_dev_fraction);
    if (!(c.generator_dev_fraction > 0.0 && c.generator_dev_fraction < 1.0)) {
      s.fail("dev_fraction", "must be in (0, 1)");
    }
    c.generator_train = read_train(s.sub("train"), {});
    s.finish();
  }
  {
    Section s = top.sub("flip");
    const bool binary = c.label_names.size() == 2;
    c.flip.strategy = s.parse("strategy", binary ? "binary_flip" : "uniform_other",
                              advgen::parse_flip_strategy);
    c.flip.target = s.get<std::size_t>("target", 0);
    if (c.flip.strategy == advgen::FlipStrategy::binary_flip && !binary) {
      s.fail("strategy", "binary_flip needs exactly 2 labels");
    }
    if (c.flip.strategy == advgen::FlipStrategy::fixed_target && c.flip.target >= c.label_names.size()) {
      s.fail("target", "out of range");
    }
    s.finish();
  }
  {
    Section s = top.sub("decode");
    const bool single = c.task == TaskKind::single_text;
    c.decode.strategy = s.parse("strategy", single ? "topk" : "beam", nnet::parse_decode_strategy);
    c.decode.k = s.get("k", c.decode.k);
    c.decode.beam_size = s.get("beam_size", c.decode.beam_size);
    c.decode.max_len = s.get<std::size_t>("max_len", single ? 150 : 500);
    c.samples_per_seed = s.get("samples_per_seed", c.samples_per_seed);
    if (c.samples_per_seed < 1) s.fail("samples_per_seed", "must be >= 1");
    try {
      c.decode.validate();
    } catch (const Error& e) {
      s.fail("", e.what());
    }
    s.finish();
  }
  {
    Section s = top.sub("baselines");
    if (s.has("max_substitutions")) c.budget.max_substitutions = s.get<std::size_t>("max_substitutions", 1);
    else s.get<std::size_t>("max_substitutions", 0);
    c.budget.sim_threshold = s.get("sim_threshold", c.budget.sim_threshold);
    c.budget.neighbor_count = s.get("neighbor_count", c.budget.neighbor_count);
    try {
      c.budget.validate();
    } catch (const Error& e) {
      s.fail("", e.what());
    }
    s.finish();
  }
  {
    Section s = top.sub("finetune");
    c.finetune_n = s.get("n", c.finetune_n);
    if (c.finetune_n < 1) s.fail("n", "must be >= 1");
    c.finetune_successful_only = s.get("successful_only", true);
    c.finetune_train = read_train(s.sub("train"), eval::default_finetune_config());
    s.finish();
  }
  top.finish();

  c.classifier_dims.num_classes = c.transfer_dims.num_classes = c.label_names.size();
  json fp = root;
  fp.erase("jobs");
  fp.erase("workdir");
  for (const auto* path : {&c.train_path, &c.dev_path, &c.test_path, &c.challenge_path}) {
    if (!path->empty()) fp["data_hashes"].push_back(fnv1a(read_file(*path)));
  }
  fp["seed"] = c.seed;
  fp["task"] = to_string(c.task);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(fp.dump())));
  c.fingerprint = buf;
  return c;
}

inline std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("ADVFORGE_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("ADVFORGE_SEED is not an unsigned integer: ") + s);
  }
}

struct Overrides {
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string workdir;
};

inline RunConfig load_config(const fs::path& path, const Overrides& o) {
  json root;
  try {
    root = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!root.is_object()) throw ConfigError("config " + path.string() + " must be a JSON object");
  if (auto s = env_seed()) root["seed"] = *s;
  for (const auto& a : o.set) apply_override(root, a);
  if (o.seed) root["seed"] = *o.seed;
  if (o.jobs) root["jobs"] = *o.jobs;
  if (!o.workdir.empty()) root["workdir"] = fs::absolute(o.workdir).string();
  return parse_config(root, fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Workspace: artifact paths, lazy loading and up-to-date checks.

inline std::string fmt(double v, int prec = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

inline std::string method_name(const std::string& attack, attribution::Method m) {
  return attack == "na" ? "na_" + attribution::to_string(m) : attack;
}

class Workspace {
 public:
  Workspace(RunConfig cfg, std::ostream& out, std::ostream& err)
      : cfg_(std::move(cfg)), out_(out), err_(err) {}

  const RunConfig& config() const { return cfg_; }
  fs::path dir() const { return cfg_.workdir; }

  fs::path vocab_path() const { return dir() / "vocab.json"; }
  fs::path classifier_dir(bool transfer) const {
    return dir() / (transfer ? "transfer_classifier" : "classifier");
  }
  fs::path attributions_path(attribution::Method m, const std::string& split) const {
    return dir() / "attributions" / (attribution::to_string(m) + "_" + split + ".jsonl");
  }
  fs::path partition_path() const { return dir() / "partition.json"; }
  fs::path prompts_path(attribution::Method m) const {
    return dir() / "prompts" / (attribution::to_string(m) + ".jsonl");
  }
  fs::path generator_dir(attribution::Method m) const {
    return dir() / "generator" / attribution::to_string(m);
  }
  fs::path attack_path(const std::string& method) const {
    return dir() / "reports" / ("attack_" + method + ".jsonl");
  }
  fs::path eval_path(const std::string& method) const {
    return dir() / "reports" / ("eval_" + method + ".json");
  }
  fs::path finetune_path(const std::string& method) const {
    return dir() / "reports" / ("finetune_" + method + ".json");
  }
  fs::path finetuned_dir(const std::string& method) const { return dir() / "finetuned" / method; }

  // ---- staleness

  fs::path stamp_path(const fs::path& artifact) const {
    std::string rel = fs::relative(artifact, dir()).generic_string();
    std::replace(rel.begin(), rel.end(), '/', '_');
    return dir() / ".stamps" / rel;
  }
  bool fresh(const fs::path& artifact) const {
    const auto s = stamp_path(artifact);
    return fs::exists(artifact) && fs::exists(s) && read_file(s) == cfg_.fingerprint;
  }
  void mark(const fs::path& artifact) const { write_file_atomic(stamp_path(artifact), cfg_.fingerprint); }

  void say(const std::string& line) const { out_ << line << "\n"; }
  void warn(const std::string& line) const { err_ << "warning: " << line << "\n"; }

  // ---- vocabulary and data

  void build_vocab_step() {
    std::vector<std::string> texts;
    for (const auto* p : {&cfg_.train_path, &cfg_.dev_path, &cfg_.test_path, &cfg_.challenge_path}) {
      if (p->empty()) continue;
      auto more = record_texts(read_records(*p, cfg_.task));
      texts.insert(texts.end(), more.begin(), more.end());
    }
    Vocab v = build_vocab(texts, cfg_.vocab_min_count, cfg_.label_names);
    save_vocab(v, vocab_path());
    mark(vocab_path());
    vocab_.reset();
    datasets_.clear();
  }

  const Vocab& vocab() {
    if (!fresh(vocab_path())) build_vocab_step();
    if (!vocab_) vocab_ = load_vocab(vocab_path());
    return *vocab_;
  }

  const Dataset& dataset(const std::string& split) {
    auto it = datasets_.find(split);
    if (it != datasets_.end()) return it->second;
    fs::path p = split == "train" ? cfg_.train_path
                 : split == "dev" ? cfg_.dev_path
                 : split == "test" ? cfg_.test_path
                                   : cfg_.challenge_path;
    if (p.empty()) throw ConfigError("config field data." + split + ": is required for this command");
    return datasets_[split] = load_dataset(p, cfg_.task, vocab(), cfg_.label_names);
  }

  // ---- classifiers

  void train_classifier_step(bool transfer) {
    const auto& v = vocab();
    nnet::ClassifierDims dims = transfer ? cfg_.transfer_dims : cfg_.classifier_dims;
    dims.vocab_size = v.size();
    nnet::TrainConfig tc = transfer ? cfg_.transfer_train : cfg_.classifier_train;
    tc.seed = derive_seed(cfg_.seed, transfer ? "transfer_classifier" : "classifier");
    auto r = nnet::train_classifier(dataset("train"), dataset("dev"), dims, tc);
    nnet::round_to_float(r.model.params());
    nnet::save_classifier(r.model, v, classifier_dir(transfer));
    mark(classifier_dir(transfer));
    classifiers_.erase(transfer);
    const double acc = accuracy(r.model, dataset("dev"));
    say(std::string("train-classifier: ") + (transfer ? "transfer" : "target") + " d=" +
        std::to_string(dims.d) + " epochs=" + std::to_string(r.log.epochs.size() - 1) +
        " best_epoch=" + std::to_string(r.log.best_epoch) + " dev_acc=" + fmt(acc, 4) + " -> " +
        classifier_dir(transfer).string());
  }

  const nnet::ClassifierModel& classifier(bool transfer = false) {
    if (!fresh(classifier_dir(transfer))) train_classifier_step(transfer);
    auto it = classifiers_.find(transfer);
    if (it == classifiers_.end()) {
      it = classifiers_.emplace(transfer, nnet::load_classifier(classifier_dir(transfer), vocab())).first;
    }
    return it->second;
  }

  static double accuracy(const nnet::ClassifierModel& m, const Dataset& d) {
    std::size_t ok = 0;
    for (const auto& ex : d.examples) ok += m.predict(classifier_input(ex).ids) == ex.gold_label;
    return d.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(d.size());
  }

  // ---- attributions

  void attribute_step(attribution::Method method, const std::string& split) {
    const auto& model = classifier();
    const auto& data = dataset(split);
    std::vector<std::string> lines(data.size());
    const std::uint64_t split_seed = derive_seed(derive_seed(cfg_.seed, "attribution"), split);
    parallel_for(data.size(), cfg_.jobs, [&](std::size_t i) {
      const auto& ex = data.examples[i];
      const TokenSequence input = classifier_input(ex);
      const std::size_t target = model.predict(input.ids);
      attribution::AttributionMap map;
      if (method == attribution::Method::ig) {
        map = attribution::ig_attribute(model, input, {cfg_.ig_steps, target, cfg_.ig_rule}, ex.id);
      } else {
        attribution::LimeConfig lc = cfg_.lime;
        lc.seed = derive_seed(derive_seed(split_seed, "lime"), ex.id);
        lc.jobs = 1;
        map = attribution::lime_attribute(attribution::classifier_predictor(model), input, target, lc, ex.id);
      }
      attribution::SelectConfig sc = cfg_.select;
      sc.seed = derive_seed(derive_seed(split_seed, "select"), ex.id);
      const auto z = attribution::select_influential(map, input, sc);
      lines[i] = attribution::to_json(map, input, z).dump() + "\n";
    });
    std::string body;
    for (const auto& l : lines) body += l;
    write_file_atomic(attributions_path(method, split), body);
    mark(attributions_path(method, split));
    attributions_.erase({method, split});
    say("attribute: " + attribution::to_string(method) + " " + split + " examples=" +
        std::to_string(data.size()) + " -> " + attributions_path(method, split).string());
  }

  using AttrIndex = std::map<std::string, attribution::AttributionRecord>;

  const AttrIndex& attributions(attribution::Method method, const std::string& split) {
    const auto p = attributions_path(method, split);
    if (!fresh(p)) attribute_step(method, split);
    auto key = std::make_pair(method, split);
    auto it = attributions_.find(key);
    if (it != attributions_.end()) return it->second;
    AttrIndex index;
    std::istringstream in(read_file(p));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto rec = attribution::attribution_from_json(json::parse(line));
      const std::string id = rec.map.sequence_ref;
      index.emplace(id, std::move(rec));
    }
    return attributions_[key] = std::move(index);
  }

  // z tokens of `ex` according to a stored attribution record.
  std::vector<attribution::InfluentialToken> influential(const Example& ex, const AttrIndex& index) {
    auto it = index.find(ex.id);
    if (it == index.end()) throw Error("no attribution for example " + ex.id);
    const TokenSequence input = classifier_input(ex);
    if (it->second.tokens != input.surfaces) {
      throw Error("attribution for example " + ex.id + " does not match its tokens");
    }
    std::vector<attribution::InfluentialToken> z;
    for (auto p : it->second.z) {
      if (p >= input.size()) throw Error("attribution for example " + ex.id + ": position out of range");
      z.push_back({p, input.ids[p], input.surfaces[p]});
    }
    return z;
  }

  // ---- partition

  void partition_step() {
    auto p = advgen::partition_by_correctness(classifier(), dataset("train"));
    ojson j;
    j["split"] = "train";
    auto ids = [](const Dataset& d) {
      std::vector<std::string> out;
      for (const auto& ex : d.examples) out.push_back(ex.id);
      return out;
    };
    j["d1"] = ids(p.d1);
    auto d2 = ojson::array();
    for (std::size_t i = 0; i < p.d2.size(); ++i) {
      d2.push_back({{"id", p.d2.examples[i].id}, {"pred", p.pred_d2[i]}});
    }
    j["d2"] = d2;
    write_file_atomic(partition_path(), j.dump(1) + "\n");
    mark(partition_path());
    say("partition: d1=" + std::to_string(p.d1.size()) + " d2=" + std::to_string(p.d2.size()) +
        " -> " + partition_path().string());
  }

  advgen::Partition partition() {
    if (!fresh(partition_path())) partition_step();
    const json j = json::parse(read_file(partition_path()));
    const auto& train = dataset("train");
    std::map<std::string, const Example*> by_id;
    for (const auto& ex : train.examples) by_id[ex.id] = &ex;
    advgen::Partition p;
    p.d1.task = p.d2.task = train.task;
    p.d1.label_names = p.d2.label_names = train.label_names;
    for (const auto& id : j.at("d1")) {
      const Example& ex = *by_id.at(id.get<std::string>());
      p.d1.examples.push_back(ex);
      p.pred_d1.push_back(ex.gold_label);
    }
    for (const auto& e : j.at("d2")) {
      p.d2.examples.push_back(*by_id.at(e.at("id").get<std::string>()));
      p.pred_d2.push_back(e.at("pred").get<std::size_t>());
    }
    return p;
  }

  // ---- generator

  void build_prompts_step(attribution::Method method) {
    const auto p = partition();
    const auto& index = attributions(method, "train");
    std::map<std::string, std::vector<attribution::InfluentialToken>> z_by_id;
    for (const auto& ex : p.d1.examples) z_by_id[ex.id] = influential(ex, index);
    const auto items = advgen::build_training_prompts(
        p, z_by_id, vocab(), {cfg_.loss_on_prompt, cfg_.generator_dims.max_ctx});
    std::string body;
    for (const auto& it : items) {
      ojson j;
      j["source"] = it.source;
      j["ids"] = it.ids;
      std::vector<std::string> toks;
      for (TokenId id : it.ids) toks.push_back(vocab().token(id));
      j["tokens"] = toks;
      if (!it.predict_mask.empty()) j["predict_mask"] = it.predict_mask;
      body += j.dump() + "\n";
    }
    write_file_atomic(prompts_path(method), body);
    mark(prompts_path(method));
    say("build-prompts: " + attribution::to_string(method) + " prompts=" + std::to_string(items.size()) +
        " -> " + prompts_path(method).string());
  }

  std::vector<nnet::LmItem> prompts(attribution::Method method) {
    if (!fresh(prompts_path(method))) build_prompts_step(method);
    std::vector<nnet::LmItem> items;
    std::istringstream in(read_file(prompts_path(method)));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      nnet::LmItem it;
      it.source = j.at("source").get<std::string>();
      it.ids = j.at("ids").get<std::vector<TokenId>>();
      if (j.contains("predict_mask")) it.predict_mask = j.at("predict_mask").get<std::vector<std::uint8_t>>();
      items.push_back(std::move(it));
    }
    return items;
  }

  void train_generator_step(attribution::Method method) {
    auto items = prompts(method);
    if (items.size() < 2) throw Error("need at least 2 training prompts, have " + std::to_string(items.size()));
    Rng rng(derive_seed(cfg_.seed, "generator.split"));
    rng.shuffle(items);
    const auto n_dev = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg_.generator_dev_fraction * static_cast<double>(items.size())));
    std::vector<nnet::LmItem> dev(items.end() - static_cast<std::ptrdiff_t>(n_dev), items.end());
    items.resize(items.size() - n_dev);
    nnet::GeneratorDims dims = cfg_.generator_dims;
    dims.vocab_size = vocab().size();
    nnet::TrainConfig tc = cfg_.generator_train;
    tc.seed = derive_seed(cfg_.seed, "generator." + attribution::to_string(method));
    auto r = nnet::train_generator(items, dev, dims, tc);
    nnet::round_to_float(r.model.params());
    nnet::save_generator(r.model, vocab(), generator_dir(method));
    mark(generator_dir(method));
    generators_.erase(method);
    say("train-generator: " + attribution::to_string(method) + " train=" + std::to_string(items.size()) +
        " dev=" + std::to_string(dev.size()) + " epochs=" + std::to_string(r.log.epochs.size() - 1) +
        " best_epoch=" + std::to_string(r.log.best_epoch) + " dev_loss=" + fmt(r.log.best_dev_loss, 4) +
        " -> " + generator_dir(method).string());
  }

  const nnet::GeneratorModel& generator(attribution::Method method) {
    if (!fresh(generator_dir(method))) train_generator_step(method);
    auto it = generators_.find(method);
    if (it == generators_.end()) {
      it = generators_.emplace(method, nnet::load_generator(generator_dir(method), vocab())).first;
    }
    return it->second;
  }

  // ---- attacks

  std::size_t target_label(const Example& ex) const {
    return advgen::flip_label(ex.gold_label, cfg_.label_names.size(), cfg_.flip,
                              derive_seed(derive_seed(cfg_.seed, "flip"), ex.id));
  }

  void attack_step(const std::string& attack, attribution::Method method) {
    const std::string name = method_name(attack, method);
    const auto& model = classifier();
    const auto& seeds = dataset("test");
    const auto& v = vocab();
    std::vector<std::vector<advgen::Candidate>> per_seed(seeds.size());
    std::size_t skipped = 0;
    std::mutex mu;
    if (attack == "na") {
      const auto& gen = generator(method);
      const auto& index = attributions(method, "test");
      parallel_for(seeds.size(), cfg_.jobs, [&](std::size_t i) {
        const auto& ex = seeds.examples[i];
        if (model.predict(classifier_input(ex).ids) != ex.gold_label) return;  // filtered anyway
        const auto z = influential(ex, index);
        const std::size_t yp = target_label(ex);
        if (z.empty()) {
          std::lock_guard<std::mutex> lock(mu);
          ++skipped;
          return;
        }
        auto prompt = advgen::build_prompt_sequence(ex, z, yp, advgen::PromptMode::decode, v);
        if (prompt.size() > gen.dims().max_ctx) {
          std::lock_guard<std::mutex> lock(mu);
          ++skipped;
          return;
        }
        for (std::size_t s = 0; s < cfg_.samples_per_seed; ++s) {
          nnet::DecodeConfig dc = cfg_.decode;
          dc.seed = derive_seed(derive_seed(derive_seed(cfg_.seed, "decode"), ex.id), s);
          per_seed[i].push_back(advgen::generate_adversary(gen, prompt, ex, dc, v,
                                                           method == attribution::Method::lime
                                                               ? advgen::AttackMethod::na_lime
                                                               : advgen::AttackMethod::na_ig));
        }
      });
    } else if (attack == "textfooler" || attack == "hotflip") {
      const Mat unit = baselines::row_normalized(model.params().tensors[nnet::ClassifierModel::kEmbedding]);
      const auto predictor = attribution::classifier_predictor(model);
      parallel_for(seeds.size(), cfg_.jobs, [&](std::size_t i) {
        const auto& ex = seeds.examples[i];
        if (model.predict(classifier_input(ex).ids) != ex.gold_label) return;
        const std::size_t yp = target_label(ex);
        auto r = attack == "hotflip"
                     ? baselines::hotflip_attack(model, ex, cfg_.budget, ex.gold_label, v)
                     : baselines::textfooler_attack(predictor, ex, unit, cfg_.budget, ex.gold_label, v);
        per_seed[i].push_back(baselines::to_candidate(
            r, ex, attack == "hotflip" ? advgen::AttackMethod::hotflip : advgen::AttackMethod::textfooler, yp));
      });
    } else {
      throw ConfigError("unknown attack method: " + attack);
    }
    std::vector<advgen::Candidate> cands;
    for (auto& c : per_seed) cands.insert(cands.end(), c.begin(), c.end());
    const auto records = advgen::filter_candidates(cands, seeds, model);
    write_file_atomic(attack_path(name), advgen::records_to_jsonl(records));
    mark(attack_path(name));
    std::size_t ok = 0;
    for (const auto& r : records) ok += r.success;
    const double rate = records.empty() ? 0.0 : 100.0 * static_cast<double>(ok) / static_cast<double>(records.size());
    if (skipped) warn(std::to_string(skipped) + " seeds skipped (no influential token or prompt too long)");
    say("attack: " + name + " candidates=" + std::to_string(cands.size()) + " filtered=" +
        std::to_string(records.size()) + " success=" + std::to_string(ok) + " rate=" + fmt(rate) +
        "% -> " + attack_path(name).string());
  }

  std::vector<advgen::AttackRecord> attack_records(const std::string& attack, attribution::Method method) {
    const std::string name = method_name(attack, method);
    if (!fresh(attack_path(name))) attack_step(attack, method);
    return advgen::read_attack_report(attack_path(name));
  }

  void eval_step(const std::string& attack, attribution::Method method, const std::string& target_dir,
                 const std::string& transfer_dir) {
    const std::string name = method_name(attack, method);
    const auto records = attack_records(attack, method);
    if (records.empty()) throw Error("attack report " + attack_path(name).string() + " has no records");
    const auto& v = vocab();
    const nnet::ClassifierModel target =
        target_dir.empty() ? classifier(false) : nnet::load_classifier(target_dir, v);
    const nnet::ClassifierModel transfer =
        transfer_dir.empty() ? classifier(true) : nnet::load_classifier(transfer_dir, v);
    eval::EvalReport rep;
    rep.method = name;
    rep.n = records.size();
    rep.adv1_rate = eval::attack_success_rate(records, target, cfg_.task, v);
    rep.adv2_rate = eval::attack_success_rate(records, transfer, cfg_.task, v);
    write_file_atomic(eval_path(name), eval::to_json(rep).dump(1) + "\n");
    mark(eval_path(name));
    say("eval: " + name + " n=" + std::to_string(rep.n) + " adv1=" + fmt(*rep.adv1_rate) +
        "% adv2=" + fmt(*rep.adv2_rate) + "% -> " + eval_path(name).string());
  }

  void finetune_step(const std::string& attack, attribution::Method method, std::size_t n,
                     std::optional<double> lr) {
    const std::string name = method_name(attack, method);
    const auto records = attack_records(attack, method);
    const auto& v = vocab();
    const Dataset adv =
        eval::records_to_dataset(records, cfg_.task, v, cfg_.label_names, cfg_.finetune_successful_only);
    nnet::TrainConfig tc = cfg_.finetune_train;
    if (lr) tc.learning_rate = *lr;
    tc.seed = derive_seed(cfg_.seed, "finetune");
    auto r = eval::ood_finetune(classifier(), adv, dataset("challenge"), tc, n);
    for (const auto& w : r.warnings) warn(w);
    r.report.method = name;
    nnet::round_to_float(r.finetuned.params());
    nnet::save_classifier(r.finetuned, v, finetuned_dir(name));
    ojson j = eval::to_json(r.report);
    j["learning_rate"] = tc.learning_rate;
    j["epochs"] = tc.max_epochs;
    write_file_atomic(finetune_path(name), j.dump(1) + "\n");
    mark(finetune_path(name));
    say("finetune-ood: " + name + " n=" + std::to_string(n) + " macro_f1_before=" +
        fmt(*r.report.macro_f1_before, 6) + " macro_f1_after=" + fmt(*r.report.macro_f1_after, 6) +
        " -> " + finetune_path(name).string());
  }

 private:
  RunConfig cfg_;
  std::ostream& out_;
  std::ostream& err_;
  std::optional<Vocab> vocab_;
  std::map<std::string, Dataset> datasets_;
  std::map<bool, nnet::ClassifierModel> classifiers_;
  std::map<std::pair<attribution::Method, std::string>, AttrIndex> attributions_;
  std::map<attribution::Method, nnet::GeneratorModel> generators_;
};

// ---------------------------------------------------------------------------
// report: merges attack / eval / finetune reports into one table.

struct SummaryRow {
  std::string method;
  std::size_t n = 0;
  std::size_t success = 0;
  std::size_t weak_success = 0;
  std::optional<double> adv1, adv2, f1_before, f1_after;
};

inline std::string method_of(const fs::path& p, const std::string& prefix) {
  std::string stem = p.stem().string();
  return stem.substr(prefix.size());
}

inline std::pair<std::string, std::string> build_summary(const std::vector<fs::path>& inputs) {
  std::map<std::string, SummaryRow> rows;
  for (const auto& p : inputs) {
    const std::string file = p.filename().string();
    if (file.rfind("attack_", 0) == 0 && p.extension() == ".jsonl") {
      auto& row = rows[method_of(p, "attack_")];
      row.method = method_of(p, "attack_");
      for (const auto& r : advgen::read_attack_report(p)) {
        ++row.n;
        row.success += r.success;
        row.weak_success += r.weak_success;
      }
    } else if (file.rfind("eval_", 0) == 0 && p.extension() == ".json") {
      auto rep = eval::eval_report_from_json(json::parse(read_file(p)));
      auto& row = rows[method_of(p, "eval_")];
      row.method = method_of(p, "eval_");
      row.adv1 = rep.adv1_rate;
      row.adv2 = rep.adv2_rate;
    } else if (file.rfind("finetune_", 0) == 0 && p.extension() == ".json") {
      auto rep = eval::eval_report_from_json(json::parse(read_file(p)));
      auto& row = rows[method_of(p, "finetune_")];
      row.method = method_of(p, "finetune_");
      row.f1_before = rep.macro_f1_before;
      row.f1_after = rep.macro_f1_after;
    } else {
      throw Error("report: unrecognised input " + p.string());
    }
  }
  auto opt = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
  auto cell = [](const std::optional<double>& v, int prec) { return v ? fmt(*v, prec) : std::string("-"); };
  ojson j = ojson::array();
  std::string md =
      "| method | n | success % | weak success % | Adv1 % | Adv2 % | F1 before | F1 after |\n"
      "|---|---|---|---|---|---|---|---|\n";
  for (const auto& [name, r] : rows) {
    const bool has = r.n > 0;
    const double denom = has ? static_cast<double>(r.n) : 1.0;
    const double sr = 100.0 * static_cast<double>(r.success) / denom;
    const double wr = 100.0 * static_cast<double>(r.weak_success) / denom;
    ojson o;
    o["method"] = name;
    o["n"] = r.n;
    o["success_rate"] = has ? ojson(sr) : ojson(nullptr);
    o["weak_success_rate"] = has ? ojson(wr) : ojson(nullptr);
    o["adv1_rate"] = opt(r.adv1);
    o["adv2_rate"] = opt(r.adv2);
    o["macro_f1_before"] = opt(r.f1_before);
    o["macro_f1_after"] = opt(r.f1_after);
    j.push_back(o);
    md += "| " + name + " | " + std::to_string(r.n) + " | " + (has ? fmt(sr) : "-") + " | " + (has ? fmt(wr) : "-") + " | " +
          cell(r.adv1, 2) + " | " + cell(r.adv2, 2) + " | " + cell(r.f1_before, 4) + " | " +
          cell(r.f1_after, 4) + " |\n";
  }
  return {j.dump(1) + "\n", md};
}

inline std::vector<fs::path> default_report_inputs(const fs::path& reports_dir) {
  std::vector<fs::path> out;
  if (!fs::exists(reports_dir)) return out;
  for (const auto& e : fs::directory_iterator(reports_dir)) {
    const std::string f = e.path().filename().string();
    if ((f.rfind("attack_", 0) == 0 && e.path().extension() == ".jsonl") ||
        ((f.rfind("eval_", 0) == 0 || f.rfind("finetune_", 0) == 0) && e.path().extension() == ".json")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(std::vector<std::string> args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"advforge: attribution-guided adversarial text generation and baselines", "advforge"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  Overrides ov;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  app.add_option("-c,--config", config_path, "run config (JSON)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "global seed (overrides config and ADVFORGE_SEED)");
  auto* jobs_opt = app.add_option("--jobs", jobs, "maximum worker threads")->check(CLI::PositiveNumber);
  app.add_option("--set", ov.set, "override a config field: key.path=value (repeatable)");
  app.add_option("--workdir", ov.workdir, "override the work directory");

  std::string which = "target";
  auto* c_train = app.add_subcommand("train-classifier", "train the target (or transfer) classifier");
  c_train->add_option("--which", which, "target|transfer")->check(CLI::IsMember({"target", "transfer"}));

  std::string attr_method, split = "all";
  auto* c_attr = app.add_subcommand("attribute", "compute token attributions and influential tokens");
  c_attr->add_option("--method", attr_method, "lime|ig")->check(CLI::IsMember({"lime", "ig"}));
  c_attr->add_option("--split", split, "train|test|all")->check(CLI::IsMember({"train", "test", "all"}));

  auto* c_part = app.add_subcommand("partition", "split training data by classifier correctness");

  auto* c_prompts = app.add_subcommand("build-prompts", "build generator training prompts from D1");
  c_prompts->add_option("--attribution", attr_method, "lime|ig")->check(CLI::IsMember({"lime", "ig"}));

  auto* c_gen = app.add_subcommand("train-generator", "train the conditional generator");
  c_gen->add_option("--attribution", attr_method, "lime|ig")->check(CLI::IsMember({"lime", "ig"}));

  std::string attack = "na";
  auto* c_attack = app.add_subcommand("attack", "generate adversarial candidates and filter them");
  c_attack->add_option("--method", attack, "na|textfooler|hotflip")
      ->check(CLI::IsMember({"na", "textfooler", "hotflip"}));
  c_attack->add_option("--attribution", attr_method, "lime|ig (na only)")->check(CLI::IsMember({"lime", "ig"}));

  std::string target_dir, transfer_dir;
  auto* c_eval = app.add_subcommand("eval", "score an attack report against target and transfer classifiers");
  c_eval->add_option("--method", attack, "na|textfooler|hotflip")
      ->check(CLI::IsMember({"na", "textfooler", "hotflip"}));
  c_eval->add_option("--attribution", attr_method, "lime|ig (na only)")->check(CLI::IsMember({"lime", "ig"}));
  c_eval->add_option("--target", target_dir, "target classifier checkpoint (default: work directory)");
  c_eval->add_option("--transfer", transfer_dir, "transfer classifier checkpoint (default: work directory)");

  std::size_t n = 0;
  double lr = 0.0;
  auto* c_ft = app.add_subcommand("finetune-ood", "finetune a copy of the target on adversarial examples");
  c_ft->add_option("--method", attack, "na|textfooler|hotflip")
      ->check(CLI::IsMember({"na", "textfooler", "hotflip"}));
  c_ft->add_option("--attribution", attr_method, "lime|ig (na only)")->check(CLI::IsMember({"lime", "ig"}));
  auto* n_opt = c_ft->add_option("--n", n, "number of adversarial examples (default 150)")->check(CLI::PositiveNumber);
  auto* lr_opt = c_ft->add_option("--learning-rate", lr, "finetune learning rate")->check(CLI::NonNegativeNumber);

  std::vector<std::string> inputs;
  auto* c_report = app.add_subcommand("report", "merge reports into a summary table");
  c_report->add_option("inputs", inputs, "report files (default: every report in the work directory)");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*seed_opt) ov.seed = seed;
    if (*jobs_opt) ov.jobs = jobs;
    Workspace ws(load_config(config_path, ov), out, err);
    const auto& cfg = ws.config();
    const auto method =
        attr_method.empty() ? cfg.attribution_method : attribution::parse_method(attr_method);
    if (c_train->parsed()) {
      ws.vocab();
      ws.train_classifier_step(which == "transfer");
    } else if (c_attr->parsed()) {
      if (split == "all" || split == "train") ws.attribute_step(method, "train");
      if (split == "all" || split == "test") ws.attribute_step(method, "test");
    } else if (c_part->parsed()) {
      ws.partition_step();
    } else if (c_prompts->parsed()) {
      ws.build_prompts_step(method);
    } else if (c_gen->parsed()) {
      ws.train_generator_step(method);
    } else if (c_attack->parsed()) {
      ws.attack_step(attack, method);
    } else if (c_eval->parsed()) {
      ws.eval_step(attack, method, target_dir, transfer_dir);
    } else if (c_ft->parsed()) {
      ws.finetune_step(attack, method, *n_opt ? n : cfg.finetune_n,
                       *lr_opt ? std::optional<double>(lr) : std::nullopt);
    } else if (c_report->parsed()) {
      std::vector<fs::path> files;
      for (const auto& f : inputs) files.emplace_back(f);
      if (files.empty()) files = default_report_inputs(ws.dir() / "reports");
      if (files.empty()) throw Error("report: no input reports found in " + (ws.dir() / "reports").string());
      const auto [j, md] = build_summary(files);
      write_file_atomic(ws.dir() / "reports" / "summary.json", j);
      write_file_atomic(ws.dir() / "reports" / "summary.md", md);
      out << md;
      ws.say("report: inputs=" + std::to_string(files.size()) + " -> " +
             (ws.dir() / "reports" / "summary.md").string());
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}

}  // namespace advforge::cli
