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


// Writes the bundled synthetic corpora and their run configs:
//   <out>/data/hate/{train,dev,test,challenge}.jsonl   keyword corpus
//   <out>/data/nli/{train,dev,test,challenge}.jsonl    templated pair corpus
//   <out>/configs/{hate,nli}.json

#include <CLI11.hpp>

#include <iostream>

#include "advforge/synthetic.hpp"

namespace {

using advforge::TaskKind;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;
namespace syn = advforge::synthetic;

struct Sizes {
  std::size_t train, dev, test, challenge;
};

ojson train_block(double lr, std::size_t epochs, std::size_t patience) {
  return {{"learning_rate", lr}, {"batch_size", 16}, {"max_epochs", epochs}, {"patience", patience}};
}

ojson base_config(const std::string& name, TaskKind task, const std::vector<std::string>& labels) {
  ojson c;
  c["task"] = advforge::to_string(task);
  c["label_names"] = labels;
  c["seed"] = 13;
  c["jobs"] = 1;
  c["workdir"] = "../runs/" + name;
  c["data"] = {{"train", "../data/" + name + "/train.jsonl"},
               {"dev", "../data/" + name + "/dev.jsonl"},
               {"test", "../data/" + name + "/test.jsonl"},
               {"challenge", "../data/" + name + "/challenge.jsonl"}};
  c["vocab"] = {{"min_count", 1}};
  c["classifier"] = {{"d", 32}, {"max_len", 64}, {"train", train_block(1e-2, 20, 3)}};
  c["transfer_classifier"] = {{"d", 48}, {"max_len", 64}, {"train", train_block(5e-3, 20, 3)}};
  c["attribution"] = {{"method", "ig"},
                      {"ig_steps", 64},
                      {"ig_rule", "right"},
                      {"lime", {{"n_samples", 2000}, {"max_features", 20}, {"kernel_width", 0.25}}},
                      {"fraction", 0.2},
                      {"strategy", "weighted_sample"}};
  c["generator"] = {{"d", 48},           {"max_ctx", 64},  {"ff_hidden", 96},
                    {"layers", 2},       {"loss_on_prompt", true},
                    {"train", train_block(3e-3, 30, 4)}};
  c["baselines"] = {{"sim_threshold", 0.0}, {"neighbor_count", 10}};
  c["finetune"] = {{"n", 150}, {"train", {{"learning_rate", 1e-3}, {"max_epochs", 3}}}};
  return c;
}

void write(const fs::path& p, const std::string& body) {
  advforge::write_file_atomic(p, body);
  std::cout << "wrote " << p.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the bundled synthetic corpora and run configs", "make_fixtures"};
  std::string out = ".";
  std::uint64_t seed = 2024;
  app.add_option("-o,--out", out, "output root (data/ and configs/ are created below it)");
  app.add_option("--seed", seed, "corpus seed");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path root(out);
    const Sizes hate{600, 150, 300, 200};
    const std::uint64_t hs = advforge::derive_seed(seed, "hate");
    syn::KeywordOptions ch;
    ch.challenge = true;
    write(root / "data/hate/train.jsonl",
          syn::records_to_jsonl(syn::keyword_corpus(hate.train, advforge::derive_seed(hs, "train"), "tr"),
                                TaskKind::single_text));
    write(root / "data/hate/dev.jsonl",
          syn::records_to_jsonl(syn::keyword_corpus(hate.dev, advforge::derive_seed(hs, "dev"), "dv"),
                                TaskKind::single_text));
    write(root / "data/hate/test.jsonl",
          syn::records_to_jsonl(syn::keyword_corpus(hate.test, advforge::derive_seed(hs, "test"), "te"),
                                TaskKind::single_text));
    write(root / "data/hate/challenge.jsonl",
          syn::records_to_jsonl(
              syn::keyword_corpus(hate.challenge, advforge::derive_seed(hs, "challenge"), "ch", ch),
              TaskKind::single_text));

    const Sizes nli{600, 150, 200, 150};
    const std::uint64_t ns = advforge::derive_seed(seed, "nli");
    syn::NliOptions nch;
    nch.challenge = true;
    write(root / "data/nli/train.jsonl",
          syn::records_to_jsonl(syn::nli_corpus(nli.train, advforge::derive_seed(ns, "train"), "tr"),
                                TaskKind::pair));
    write(root / "data/nli/dev.jsonl",
          syn::records_to_jsonl(syn::nli_corpus(nli.dev, advforge::derive_seed(ns, "dev"), "dv"),
                                TaskKind::pair));
    write(root / "data/nli/test.jsonl",
          syn::records_to_jsonl(syn::nli_corpus(nli.test, advforge::derive_seed(ns, "test"), "te"),
                                TaskKind::pair));
    write(root / "data/nli/challenge.jsonl",
          syn::records_to_jsonl(
              syn::nli_corpus(nli.challenge, advforge::derive_seed(ns, "challenge"), "ch", nch),
              TaskKind::pair));

    ojson hc = base_config("hate", TaskKind::single_text, syn::keyword_labels());
    hc["flip"] = {{"strategy", "binary_flip"}};
    hc["decode"] = {{"strategy", "topk"}, {"k", 10}, {"max_len", 40}, {"samples_per_seed", 1}};
    write(root / "configs/hate.json", hc.dump(2) + "\n");

    ojson nc = base_config("nli", TaskKind::pair, syn::nli_labels());
    nc["generator"]["max_ctx"] = 80;
    nc["flip"] = {{"strategy", "uniform_other"}};
    nc["decode"] = {{"strategy", "beam"}, {"beam_size", 10}, {"max_len", 40}, {"samples_per_seed", 1}};
    write(root / "configs/nli.json", nc.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
