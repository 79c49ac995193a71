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

// Checkpoint directory layout:
//   manifest.json  {"version", "kind", "dims", "vocab_hash", "tensors": [{name, shape}]}
//   params.bin     little-endian float32 tensors, concatenated in manifest order

#include <bit>
#include <cstring>
#include <filesystem>

#include <json.hpp>

#include "advforge/nnet/classifier.hpp"
#include "advforge/nnet/generator.hpp"

namespace advforge::nnet {

inline constexpr const char* kCheckpointVersion = "advforge-ckpt-v1";

namespace detail {

inline std::string encode_params(const ParamSet& params) {
  std::string out;
  out.reserve(params.count() * 4);
  for (const auto& t : params.tensors) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t.data()[i]);
      std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  return out;
}

inline void decode_params(const std::string& bytes, ParamSet& params) {
  if (bytes.size() != params.count() * 4) {
    throw Error("params.bin size " + std::to_string(bytes.size()) + " does not match manifest (" +
                std::to_string(params.count() * 4) + " bytes expected)");
  }
  std::size_t off = 0;
  for (auto& t : params.tensors) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + b])) << (8 * b);
      }
      off += 4;
      t.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
}

inline void write_checkpoint(const std::filesystem::path& dir, const std::string& kind,
                             const nlohmann::ordered_json& dims, const std::string& vocab_hash,
                             const ParamSet& params) {
  nlohmann::ordered_json m;
  m["version"] = kCheckpointVersion;
  m["kind"] = kind;
  m["dims"] = dims;
  m["vocab_hash"] = vocab_hash;
  auto tensors = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({{"name", params.names[i]},
                       {"shape", {params.tensors[i].rows(), params.tensors[i].cols()}}});
  }
  m["tensors"] = tensors;
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "params.bin", encode_params(params));
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir, const std::string& kind,
                                    const std::string& vocab_hash) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad manifest in " + dir.string() + ": " + e.what());
  }
  if (m.value("version", "") != kCheckpointVersion) {
    throw Error("unsupported checkpoint version in " + dir.string());
  }
  if (m.value("kind", "") != kind) {
    throw Error("checkpoint " + dir.string() + " is a " + m.value("kind", "?") + ", expected " +
                kind);
  }
  if (m.value("vocab_hash", "") != vocab_hash) {
    throw Error("vocab hash mismatch for checkpoint " + dir.string());
  }
  return m;
}

inline void check_tensor_table(const nlohmann::json& manifest, const ParamSet& expected) {
  const auto& t = manifest.at("tensors");
  if (t.size() != expected.size()) throw Error("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (t[i].at("name").get<std::string>() != expected.names[i] ||
        t[i].at("shape").at(0).get<Eigen::Index>() != expected.tensors[i].rows() ||
        t[i].at("shape").at(1).get<Eigen::Index>() != expected.tensors[i].cols()) {
      throw Error("checkpoint tensor mismatch at " + expected.names[i]);
    }
  }
}

}  // namespace detail

inline void save_classifier(const ClassifierModel& model, const Vocab& vocab,
                            const std::filesystem::path& dir) {
  const auto& d = model.dims();
  if (d.vocab_size != vocab.size()) throw Error("classifier/vocab size mismatch");
  nlohmann::ordered_json dims{{"vocab_size", d.vocab_size},
                              {"d", d.d},
                              {"num_classes", d.num_classes},
                              {"max_len", d.max_len}};
  detail::write_checkpoint(dir, "classifier", dims, vocab.hash(), model.params());
}

inline ClassifierModel load_classifier(const std::filesystem::path& dir, const Vocab& vocab) {
  auto m = detail::read_manifest(dir, "classifier", vocab.hash());
  ClassifierDims dims;
  dims.vocab_size = m.at("dims").at("vocab_size");
  dims.d = m.at("dims").at("d");
  dims.num_classes = m.at("dims").at("num_classes");
  dims.max_len = m.at("dims").at("max_len");
  if (dims.vocab_size != vocab.size()) throw Error("checkpoint vocab size mismatch");
  ClassifierModel model = ClassifierModel::init(dims, 0);
  detail::check_tensor_table(m, model.params());
  detail::decode_params(read_file(dir / "params.bin"), model.params());
  return model;
}

inline void save_generator(const GeneratorModel& model, const Vocab& vocab,
                           const std::filesystem::path& dir) {
  const auto& d = model.dims();
  if (d.vocab_size != vocab.size()) throw Error("generator/vocab size mismatch");
  nlohmann::ordered_json dims{{"vocab_size", d.vocab_size},
                              {"d", d.d},
                              {"max_ctx", d.max_ctx},
                              {"ff_hidden", d.ff_hidden},
                              {"layers", d.layers}};
  detail::write_checkpoint(dir, "generator", dims, vocab.hash(), model.params());
}

inline GeneratorModel load_generator(const std::filesystem::path& dir, const Vocab& vocab) {
  auto m = detail::read_manifest(dir, "generator", vocab.hash());
  GeneratorDims dims;
  dims.vocab_size = m.at("dims").at("vocab_size");
  dims.d = m.at("dims").at("d");
  dims.max_ctx = m.at("dims").at("max_ctx");
  dims.ff_hidden = m.at("dims").at("ff_hidden");
  dims.layers = m.at("dims").at("layers");
  if (dims.vocab_size != vocab.size()) throw Error("checkpoint vocab size mismatch");
  GeneratorModel model = GeneratorModel::init(dims, 0);
  detail::check_tensor_table(m, model.params());
  detail::decode_params(read_file(dir / "params.bin"), model.params());
  return model;
}

// Rounds every parameter to float32 so an in-memory model behaves exactly
// like its saved-and-reloaded checkpoint.
inline void round_to_float(ParamSet& params) {
  for (auto& t : params.tensors) {
    t = t.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  }
}

}  // namespace advforge::nnet
