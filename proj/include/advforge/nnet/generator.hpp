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

// Decoder-only autoregressive generator: token + learned position
// embeddings, pre-norm causal self-attention blocks (single head, GELU
// feed-forward, residual), final RMS norm, output projection tied to the
// token embedding table.

#include <span>

#include "advforge/corpus.hpp"
#include "advforge/nnet/params.hpp"

namespace advforge::nnet {

struct GeneratorDims {
  std::size_t vocab_size = 0;
  std::size_t d = 64;
  std::size_t max_ctx = 64;
  std::size_t ff_hidden = 128;
  std::size_t layers = 2;

  friend bool operator==(const GeneratorDims&, const GeneratorDims&) = default;
};

namespace detail {

constexpr double kNormEps = 1e-5;

struct RmsNormCache {
  Mat xhat;
  Vec rms;
};

inline Mat rms_norm(const Mat& x, const Mat& gain, RmsNormCache& cache) {
  const auto d = static_cast<double>(x.cols());
  cache.rms = ((x.array().square().rowwise().sum() / d) + kNormEps).sqrt().matrix();
  cache.xhat = x.array().colwise() / cache.rms.array();
  return (cache.xhat.array().rowwise() * gain.row(0).array()).matrix();
}

inline Mat rms_norm_backward(const Mat& dy, const Mat& gain, const RmsNormCache& cache,
                             Mat* dgain) {
  if (dgain) *dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  Mat dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const auto d = static_cast<double>(dy.cols());
  Vec proj = (dxhat.array() * cache.xhat.array()).rowwise().sum().matrix() / d;
  Mat dx = dxhat - (cache.xhat.array().colwise() * proj.array()).matrix();
  return (dx.array().colwise() / cache.rms.array()).matrix();
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u)));
}

inline double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) +
         0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

}  // namespace detail

class GeneratorModel {
 public:
  static constexpr std::size_t kPerLayer = 10;
  enum LayerTensor : std::size_t {
    kNorm1, kQuery, kKey, kValue, kOut, kNorm2, kFf1W, kFf1B, kFf2W, kFf2B
  };
  static constexpr std::size_t kTokEmb = 0;
  static constexpr std::size_t kPosEmb = 1;

  struct LayerCache {
    detail::RmsNormCache norm1, norm2;
    Mat n1, q, k, v, attn, ctx, n2, pre, act;
  };

  struct Forward {
    std::vector<TokenId> ids;
    std::vector<LayerCache> layers;
    detail::RmsNormCache final_norm;
    Mat nf;
    Mat logits;  // [T x V], or [1 x V] for the last position only
  };

  GeneratorModel() = default;

  static GeneratorModel init(const GeneratorDims& dims, std::uint64_t seed) {
    if (dims.vocab_size == 0 || dims.d == 0 || dims.max_ctx == 0 || dims.ff_hidden == 0 ||
        dims.layers == 0) {
      throw Error("invalid generator dims");
    }
    Rng rng(seed);
    const auto v = static_cast<Eigen::Index>(dims.vocab_size);
    const auto d = static_cast<Eigen::Index>(dims.d);
    const auto c = static_cast<Eigen::Index>(dims.max_ctx);
    const auto h = static_cast<Eigen::Index>(dims.ff_hidden);
    GeneratorModel m;
    m.dims_ = dims;
    m.params_.add("tok_embedding", init_normal(v, d, rng));
    m.params_.add("pos_embedding", init_normal(c, d, rng));
    for (std::size_t l = 0; l < dims.layers; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      m.params_.add(p + "norm1", Mat::Ones(1, d));
      m.params_.add(p + "attn.query", init_normal(d, d, rng));
      m.params_.add(p + "attn.key", init_normal(d, d, rng));
      m.params_.add(p + "attn.value", init_normal(d, d, rng));
      m.params_.add(p + "attn.out", init_normal(d, d, rng));
      m.params_.add(p + "norm2", Mat::Ones(1, d));
      m.params_.add(p + "ff1.weight", init_normal(d, h, rng));
      m.params_.add(p + "ff1.bias", Mat::Zero(1, h));
      m.params_.add(p + "ff2.weight", init_normal(h, d, rng));
      m.params_.add(p + "ff2.bias", Mat::Zero(1, d));
    }
    m.params_.add("final_norm", Mat::Ones(1, d));
    return m;
  }

  static GeneratorModel from_params(const GeneratorDims& dims, ParamSet params) {
    GeneratorModel m = init(dims, 0);
    if (params.size() != m.params_.size()) throw Error("generator tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.tensors[i].rows() != m.params_.tensors[i].rows() ||
          params.tensors[i].cols() != m.params_.tensors[i].cols()) {
        throw Error("generator tensor shape mismatch: " + m.params_.names[i]);
      }
    }
    m.params_ = std::move(params);
    return m;
  }

  const GeneratorDims& dims() const { return dims_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  std::size_t layer_index(std::size_t layer, LayerTensor t) const {
    return 2 + layer * kPerLayer + t;
  }
  std::size_t final_norm_index() const { return 2 + dims_.layers * kPerLayer; }
  const Mat& P(std::size_t i) const { return params_.tensors[i]; }
  const Mat& L(std::size_t layer, LayerTensor t) const { return P(layer_index(layer, t)); }
  Mat& token_embedding() { return params_.tensors[kTokEmb]; }
  const Mat& token_embedding() const { return params_.tensors[kTokEmb]; }

  void check_ids(std::span<const TokenId> ids) const {
    if (ids.empty()) throw Error("generator input is empty");
    if (ids.size() > dims_.max_ctx) {
      throw Error("sequence length " + std::to_string(ids.size()) + " exceeds max_ctx " +
                  std::to_string(dims_.max_ctx));
    }
    for (TokenId id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= dims_.vocab_size) {
        throw Error("token id out of range: " + std::to_string(id));
      }
    }
  }

  Forward forward(std::span<const TokenId> ids, bool last_only = false) const {
    check_ids(ids);
    Forward f;
    f.ids.assign(ids.begin(), ids.end());
    const auto T = static_cast<Eigen::Index>(ids.size());
    const auto d = static_cast<Eigen::Index>(dims_.d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims_.d));
    Mat x(T, d);
    for (Eigen::Index i = 0; i < T; ++i) {
      x.row(i) = P(kTokEmb).row(ids[static_cast<std::size_t>(i)]) + P(kPosEmb).row(i);
    }
    f.layers.resize(dims_.layers);
    for (std::size_t l = 0; l < dims_.layers; ++l) {
      auto& c = f.layers[l];
      c.n1 = detail::rms_norm(x, L(l, kNorm1), c.norm1);
      c.q = c.n1 * L(l, kQuery);
      c.k = c.n1 * L(l, kKey);
      c.v = c.n1 * L(l, kValue);
      c.attn = Mat::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        RowVec s = (c.k.topRows(i + 1) * c.q.row(i).transpose()).transpose() * scale;
        c.attn.row(i).head(i + 1) = softmax(s);
      }
      c.ctx = c.attn * c.v;
      x += c.ctx * L(l, kOut);
      c.n2 = detail::rms_norm(x, L(l, kNorm2), c.norm2);
      c.pre = (c.n2 * L(l, kFf1W)).rowwise() + L(l, kFf1B).row(0);
      c.act = c.pre.unaryExpr([](double u) { return detail::gelu(u); });
      x += (c.act * L(l, kFf2W)).rowwise() + L(l, kFf2B).row(0);
    }
    f.nf = detail::rms_norm(x, P(final_norm_index()), f.final_norm);
    if (last_only) {
      f.logits = f.nf.bottomRows(1) * P(kTokEmb).transpose();
    } else {
      f.logits = f.nf * P(kTokEmb).transpose();
    }
    return f;
  }

  // Next-token logits after the whole prefix.
  RowVec next_logits(std::span<const TokenId> ids) const {
    return forward(ids, /*last_only=*/true).logits.row(0);
  }

  // Backpropagates dL/dlogits (full [T x V]) into `grads`.
  void backward(const Forward& f, const Mat& dlogits, ParamSet& grads) const {
    const auto T = static_cast<Eigen::Index>(f.ids.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims_.d));
    grads.tensors[kTokEmb] += dlogits.transpose() * f.nf;
    Mat dnf = dlogits * P(kTokEmb);
    Mat dx = detail::rms_norm_backward(dnf, P(final_norm_index()), f.final_norm,
                                       &grads.tensors[final_norm_index()]);
    for (std::size_t li = dims_.layers; li-- > 0;) {
      const auto& c = f.layers[li];
      auto G = [&](LayerTensor t) -> Mat& { return grads.tensors[layer_index(li, t)]; };
      // feed-forward residual branch
      G(kFf2W) += c.act.transpose() * dx;
      G(kFf2B) += dx.colwise().sum();
      Mat dact = dx * L(li, kFf2W).transpose();
      Mat dpre = dact.cwiseProduct(c.pre.unaryExpr([](double u) { return detail::gelu_grad(u); }));
      G(kFf1W) += c.n2.transpose() * dpre;
      G(kFf1B) += dpre.colwise().sum();
      Mat dn2 = dpre * L(li, kFf1W).transpose();
      dx += detail::rms_norm_backward(dn2, L(li, kNorm2), c.norm2, &G(kNorm2));
      // attention residual branch
      G(kOut) += c.ctx.transpose() * dx;
      Mat dctx = dx * L(li, kOut).transpose();
      Mat dattn = dctx * c.v.transpose();
      Mat dv = c.attn.transpose() * dctx;
      Mat ds = Mat::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double dot = dattn.row(i).head(i + 1).dot(c.attn.row(i).head(i + 1));
        ds.row(i).head(i + 1) =
            (c.attn.row(i).head(i + 1).array() * (dattn.row(i).head(i + 1).array() - dot))
                .matrix() *
            scale;
      }
      Mat dq = ds * c.k;
      Mat dk = ds.transpose() * c.q;
      G(kQuery) += c.n1.transpose() * dq;
      G(kKey) += c.n1.transpose() * dk;
      G(kValue) += c.n1.transpose() * dv;
      Mat dn1 = dq * L(li, kQuery).transpose() + dk * L(li, kKey).transpose() +
                dv * L(li, kValue).transpose();
      dx += detail::rms_norm_backward(dn1, L(li, kNorm1), c.norm1, &G(kNorm1));
    }
    for (Eigen::Index i = 0; i < T; ++i) {
      grads.tensors[kTokEmb].row(f.ids[static_cast<std::size_t>(i)]) += dx.row(i);
      grads.tensors[kPosEmb].row(i) += dx.row(i);
    }
  }

  // Mean next-token cross-entropy over positions 1..T-1. `predict_mask`,
  // when non-empty, selects which target positions count (length T; entry 0
  // is ignored). Accumulates gradients into `grads` when given.
  double loss_and_grad(std::span<const TokenId> ids, std::span<const std::uint8_t> predict_mask,
                       ParamSet* grads) const {
    if (ids.size() < 2) throw Error("lm loss needs a sequence of length >= 2");
    if (!predict_mask.empty() && predict_mask.size() != ids.size()) {
      throw Error("predict mask length mismatch");
    }
    Forward f = forward(ids);
    const auto T = static_cast<Eigen::Index>(ids.size());
    Mat dlogits = Mat::Zero(T, f.logits.cols());
    double total = 0.0;
    std::size_t count = 0;
    for (Eigen::Index i = 1; i < T; ++i) {
      if (!predict_mask.empty() && !predict_mask[static_cast<std::size_t>(i)]) continue;
      RowVec p = softmax(RowVec(f.logits.row(i - 1)));
      const TokenId target = ids[static_cast<std::size_t>(i)];
      total -= std::log(std::max(p(target), 1e-300));
      p(target) -= 1.0;
      dlogits.row(i - 1) = p;
      ++count;
    }
    if (count == 0) return 0.0;
    const double inv = 1.0 / static_cast<double>(count);
    if (grads) backward(f, dlogits * inv, *grads);
    return total * inv;
  }

 private:
  GeneratorDims dims_;
  ParamSet params_;
};

inline double lm_loss(const GeneratorModel& model, std::span<const TokenId> sequence) {
  return model.loss_and_grad(sequence, {}, nullptr);
}

}  // namespace advforge::nnet
