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

// Single-head self-attention text classifier:
//   h = x + softmax(q k^T / sqrt(d)) v,  logits = mean_rows(h) W + b.
// Gradients are written out by hand; the embedding-level entry points are
// what the white-box attribution and attack code differentiate through.

#include <span>

#include "advforge/corpus.hpp"
#include "advforge/nnet/params.hpp"

namespace advforge::nnet {

struct ClassifierDims {
  std::size_t vocab_size = 0;
  std::size_t d = 64;
  std::size_t num_classes = 2;
  std::size_t max_len = 128;

  friend bool operator==(const ClassifierDims&, const ClassifierDims&) = default;
};

class ClassifierModel {
 public:
  enum Tensor : std::size_t { kEmbedding, kQuery, kKey, kValue, kHead, kBias };

  struct Forward {
    Mat x, q, k, v, attn, h;
    RowVec pooled, logits, probs;
  };

  ClassifierModel() = default;

  static ClassifierModel init(const ClassifierDims& dims, std::uint64_t seed) {
    if (dims.vocab_size == 0 || dims.d == 0 || dims.num_classes < 2 || dims.max_len == 0) {
      throw Error("invalid classifier dims");
    }
    Rng rng(seed);
    const auto v = static_cast<Eigen::Index>(dims.vocab_size);
    const auto d = static_cast<Eigen::Index>(dims.d);
    const auto c = static_cast<Eigen::Index>(dims.num_classes);
    ClassifierModel m;
    m.dims_ = dims;
    m.params_.add("embedding", init_normal(v, d, rng));
    m.params_.add("attn.query", init_normal(d, d, rng));
    m.params_.add("attn.key", init_normal(d, d, rng));
    m.params_.add("attn.value", init_normal(d, d, rng));
    m.params_.add("head.weight", init_normal(d, c, rng));
    m.params_.add("head.bias", Mat::Zero(1, c));
    return m;
  }

  static ClassifierModel from_params(const ClassifierDims& dims, ParamSet params) {
    ClassifierModel m = init(dims, 0);
    if (params.size() != m.params_.size()) throw Error("classifier tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.tensors[i].rows() != m.params_.tensors[i].rows() ||
          params.tensors[i].cols() != m.params_.tensors[i].cols()) {
        throw Error("classifier tensor shape mismatch: " + m.params_.names[i]);
      }
    }
    m.params_ = std::move(params);
    return m;
  }

  const ClassifierDims& dims() const { return dims_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  const Mat& embedding() const { return params_.tensors[kEmbedding]; }
  Mat& tensor(Tensor t) { return params_.tensors[t]; }
  const Mat& tensor(Tensor t) const { return params_.tensors[t]; }

  // Ids actually fed to the network: truncated to max_len, a lone PAD when
  // empty.
  std::vector<TokenId> effective_ids(std::span<const TokenId> ids) const {
    std::vector<TokenId> out(ids.begin(),
                             ids.begin() + static_cast<std::ptrdiff_t>(
                                               std::min(ids.size(), dims_.max_len)));
    if (out.empty()) out.push_back(Vocab::kPad);
    for (TokenId id : out) {
      if (id < 0 || static_cast<std::size_t>(id) >= dims_.vocab_size) {
        throw Error("token id out of range: " + std::to_string(id));
      }
    }
    return out;
  }

  Mat embed(std::span<const TokenId> ids) const {
    const auto eff = effective_ids(ids);
    Mat x(static_cast<Eigen::Index>(eff.size()), static_cast<Eigen::Index>(dims_.d));
    for (std::size_t i = 0; i < eff.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = embedding().row(eff[i]);
    }
    return x;
  }

  Forward forward_embedded(const Mat& x) const {
    Forward f;
    f.x = x;
    f.q = x * tensor(kQuery);
    f.k = x * tensor(kKey);
    f.v = x * tensor(kValue);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims_.d));
    Mat s = (f.q * f.k.transpose()) * scale;
    f.attn.resize(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) f.attn.row(i) = softmax(RowVec(s.row(i)));
    f.h = x + f.attn * f.v;
    f.pooled = f.h.colwise().mean();
    f.logits = f.pooled * tensor(kHead) + tensor(kBias);
    f.probs = softmax(f.logits);
    return f;
  }

  RowVec probs(std::span<const TokenId> ids) const {
    return forward_embedded(embed(ids)).probs;
  }

  std::size_t predict(std::span<const TokenId> ids) const { return argmax(probs(ids)); }

  // Backpropagates dL/dlogits. Returns dL/dx; adds parameter gradients
  // (except the embedding table) into `grads` when given.
  Mat backward_embedded(const Forward& f, const RowVec& dlogits,
                        ParamSet* grads = nullptr) const {
    const Eigen::Index len = f.x.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims_.d));
    if (grads) {
      grads->tensors[kHead] += f.pooled.transpose() * dlogits;
      grads->tensors[kBias] += dlogits;
    }
    const RowVec dpooled = dlogits * tensor(kHead).transpose();
    Mat dh = dpooled.replicate(len, 1) / static_cast<double>(len);
    Mat dx = dh;
    Mat dattn = dh * f.v.transpose();
    Mat dv = f.attn.transpose() * dh;
    Mat ds(len, len);
    for (Eigen::Index i = 0; i < len; ++i) {
      const double dot = dattn.row(i).dot(f.attn.row(i));
      ds.row(i) = (f.attn.row(i).array() * (dattn.row(i).array() - dot)).matrix();
    }
    ds *= scale;
    Mat dq = ds * f.k;
    Mat dk = ds.transpose() * f.q;
    if (grads) {
      grads->tensors[kQuery] += f.x.transpose() * dq;
      grads->tensors[kKey] += f.x.transpose() * dk;
      grads->tensors[kValue] += f.x.transpose() * dv;
    }
    dx += dq * tensor(kQuery).transpose() + dk * tensor(kKey).transpose() +
          dv * tensor(kValue).transpose();
    return dx;
  }

  // Cross-entropy of the gold class; accumulates all parameter gradients
  // (embedding rows included) when `grads` is given.
  double loss_and_grad(std::span<const TokenId> ids, std::size_t gold,
                       ParamSet* grads) const {
    const auto eff = effective_ids(ids);
    Forward f = forward_embedded(embed(eff));
    const double loss = -std::log(std::max(f.probs(static_cast<Eigen::Index>(gold)), 1e-300));
    if (grads) {
      RowVec dlogits = f.probs;
      dlogits(static_cast<Eigen::Index>(gold)) -= 1.0;
      Mat dx = backward_embedded(f, dlogits, grads);
      for (std::size_t i = 0; i < eff.size(); ++i) {
        grads->tensors[kEmbedding].row(eff[i]) += dx.row(static_cast<Eigen::Index>(i));
      }
    }
    return loss;
  }

 private:
  ClassifierDims dims_;
  ParamSet params_;
};

inline void check_class(const ClassifierModel& model, std::size_t cls) {
  if (cls >= model.dims().num_classes) {
    throw Error("target class " + std::to_string(cls) + " out of range [0, " +
                std::to_string(model.dims().num_classes) + ")");
  }
}

inline RowVec forward_classifier(const ClassifierModel& model, const TokenSequence& tokens) {
  return model.probs(tokens.ids);
}

// d P(target | x) / d x, taken at arbitrary input embeddings x.
inline Mat probability_gradient(const ClassifierModel& model, const Mat& x,
                                std::size_t target) {
  check_class(model, target);
  auto f = model.forward_embedded(x);
  const auto t = static_cast<Eigen::Index>(target);
  RowVec dlogits = -f.probs(t) * f.probs;
  dlogits(t) += f.probs(t);
  return model.backward_embedded(f, dlogits);
}

// d logit[target] / d x.
inline Mat logit_gradient(const ClassifierModel& model, const Mat& x, std::size_t target) {
  check_class(model, target);
  auto f = model.forward_embedded(x);
  RowVec dlogits = RowVec::Zero(f.logits.size());
  dlogits(static_cast<Eigen::Index>(target)) = 1.0;
  return model.backward_embedded(f, dlogits);
}

// d CE(x, gold) / d x.
inline Mat loss_gradient(const ClassifierModel& model, const Mat& x, std::size_t gold) {
  check_class(model, gold);
  auto f = model.forward_embedded(x);
  RowVec dlogits = f.probs;
  dlogits(static_cast<Eigen::Index>(gold)) -= 1.0;
  return model.backward_embedded(f, dlogits);
}

// Gradient of the target-class probability w.r.t. the input embeddings,
// shape [len x d].
inline Mat input_gradients(const ClassifierModel& model, const TokenSequence& tokens,
                           std::size_t target_class) {
  check_class(model, target_class);
  return probability_gradient(model, model.embed(tokens.ids), target_class);
}

}  // namespace advforge::nnet
