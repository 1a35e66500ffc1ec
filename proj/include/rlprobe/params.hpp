/*
 * Copyright 2026 the rlprobe authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef RLPROBE_PARAMS_HPP_
#define RLPROBE_PARAMS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rlprobe/tensor.hpp"

namespace rlprobe {

using GradMap = std::map<std::string, Tensor>;

/// Named parameter tensors plus optimizer moment slots keyed by the
/// same paths. Iteration order is the lexicographic path order, which
/// keeps every consumer deterministic.
class ParameterSet {
 public:
  void add(const std::string& path, Tensor t);
  bool contains(const std::string& path) const;
  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;
  std::vector<std::string> paths() const;
  size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// Entries whose path starts with `prefix`, with the prefix stripped.
  ParameterSet subset(const std::string& prefix) const;
  /// Copies `other`'s entries in under `prefix` (moment slots are not carried).
  void merge(const ParameterSet& other, const std::string& prefix);

  std::map<std::string, Tensor>& values() { return values_; }
  const std::map<std::string, Tensor>& values() const { return values_; }

  /// Binary checkpoint: magic "RLPW", version u16, entry count u64,
  /// then per entry path (u16 length + UTF-8), rank u16, extents u64
  /// each, and raw little-endian f64 data.
  void save(const std::string& path) const;
  static ParameterSet load(const std::string& path);

  uint64_t checksum() const;

  // Adam moment slots; see adam_step.
  std::map<std::string, Tensor>& slot_m() { return m_; }
  std::map<std::string, Tensor>& slot_v() { return v_; }
  std::map<std::string, int64_t>& slot_t() { return t_; }

 private:
  std::map<std::string, Tensor> values_;
  std::map<std::string, Tensor> m_, v_;
  std::map<std::string, int64_t> t_;
};

struct SgdHyper {
  double lr = 0.0;
  double weight_decay = 0.0;
};

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1.5e-4;
  double weight_decay = 0.0;
};

/// Both steps refuse to touch any parameter if any gradient in `grads`
/// holds a non-finite value; the diagnostic names the offending path.
void sgd_step(ParameterSet& params, const GradMap& grads, const SgdHyper& hyper);
void adam_step(ParameterSet& params, const GradMap& grads, const AdamHyper& hyper);

/// target <- tau * target + (1 - tau) * online, elementwise.
/// Requires identical key sets and shapes.
void ema_update(ParameterSet& target, const ParameterSet& online, double tau);

/// Rescales all gradients by min(1, max_norm / global_l2_norm).
void clip_grad_norm(GradMap& grads, double max_norm);

}  // namespace rlprobe

#endif  // RLPROBE_PARAMS_HPP_
