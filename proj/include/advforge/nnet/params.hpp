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

#include <string>
#include <vector>

#include "advforge/common.hpp"

namespace advforge::nnet {

// An ordered list of named tensors. Vectors are stored as 1 x n matrices so
// every parameter shares one type for the optimizer and checkpoint code.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Mat> tensors;

  std::size_t size() const { return tensors.size(); }

  void add(std::string name, Mat value) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(value));
  }

  ParamSet zeros_like() const {
    ParamSet z;
    z.names = names;
    for (const auto& t : tensors) z.tensors.push_back(Mat::Zero(t.rows(), t.cols()));
    return z;
  }

  void set_zero() {
    for (auto& t : tensors) t.setZero();
  }

  void scale(double s) {
    for (auto& t : tensors) t *= s;
  }

  bool all_finite() const {
    for (const auto& t : tensors) {
      if (!t.allFinite()) return false;
    }
    return true;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.names != b.names || a.tensors.size() != b.tensors.size()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
      if (a.tensors[i].rows() != b.tensors[i].rows() ||
          a.tensors[i].cols() != b.tensors[i].cols() ||
          a.tensors[i] != b.tensors[i]) {
        return false;
      }
    }
    return true;
  }
};

inline Mat init_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                       double stddev = 0.02) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.truncated_normal(stddev);
  return m;
}

// Adam with bias correction.
class Adam {
 public:
  Adam(const ParamSet& shape, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(shape.zeros_like()), v_(shape.zeros_like()) {}

  void step(ParamSet& params, const ParamSet& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = m_.tensors[i];
      auto& v = v_.tensors[i];
      const auto& g = grads.tensors[i];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
      params.tensors[i].array() -=
          lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  ParamSet m_, v_;
};

}  // namespace advforge::nnet
