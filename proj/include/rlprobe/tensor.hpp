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
#ifndef RLPROBE_TENSOR_HPP_
#define RLPROBE_TENSOR_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "rlprobe/rng.hpp"

namespace rlprobe {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of 64-bit floats. All model and training
/// arithmetic runs on this type; there is no narrower compute dtype.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(shape_numel(shape), fill) {}

  static Tensor scalar(double v);
  static Tensor from(Shape s, std::vector<double> values);
  static Tensor randn(const Shape& s, RngStream& rng, double stddev = 1.0);
  static Tensor uniform(const Shape& s, RngStream& rng, double lo, double hi);

  size_t size() const { return data.size(); }
  size_t rank() const { return shape.size(); }

  double& operator[](size_t i) { return data[i]; }
  const double& operator[](size_t i) const { return data[i]; }

  /// 2-D accessors; shape checks are the caller's business.
  double& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
  const double& at(size_t i, size_t j) const { return data[i * shape[1] + j]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  double item() const;  // scalar tensors only
};

}  // namespace rlprobe

#endif  // RLPROBE_TENSOR_HPP_
