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
#include "rlprobe/tensor.hpp"

#include <cmath>
#include <sstream>

#include "rlprobe/check.hpp"

namespace rlprobe {

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape = {};
  t.data = {v};
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> values) {
  check(shape_numel(s) == values.size(),
        "tensor init: " + std::to_string(values.size()) + " values for shape " + shape_str(s));
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(values);
  return t;
}

Tensor Tensor::randn(const Shape& s, RngStream& rng, double stddev) {
  Tensor t(s);
  for (double& v : t.data) v = rng.normal() * stddev;
  return t;
}

Tensor Tensor::uniform(const Shape& s, RngStream& rng, double lo, double hi) {
  Tensor t(s);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::item() const {
  check(data.size() == 1, "item() on tensor of shape " + shape_str(shape));
  return data[0];
}

}  // namespace rlprobe
