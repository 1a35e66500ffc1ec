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
#ifndef RLPROBE_TAPE_HPP_
#define RLPROBE_TAPE_HPP_

#include <functional>
#include <vector>

#include "rlprobe/rng.hpp"
#include "rlprobe/tensor.hpp"

namespace rlprobe {

/// Handle to a node on a Tape. Only valid for the tape that created it.
struct Var {
  int id = -1;
};

enum class Padding { kSame, kValid };

/// Append-only record of primitive operations with reverse-mode
/// differentiation. Nodes are stored in topological order by
/// construction; backward() walks the record once from the loss node
/// down, so each node's gradient is accumulated exactly once before its
/// own backward rule fires.
///
/// Elementwise binary ops broadcast shapes right-aligned (an axis of
/// extent 1 stretches); gradients sum over the stretched axes.
class Tape {
 public:
  Var leaf(Tensor value);
  /// Identical to leaf(); spells out that no gradient will be consumed.
  Var constant(Tensor value) { return leaf(std::move(value)); }

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const;
  size_t node_count() const { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var add_scalar(Var a, double c);
  Var mul_scalar(Var a, double c);
  Var exp(Var a);
  Var log(Var a);
  Var sqrt(Var a);
  Var pow_scalar(Var a, double p);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var elu(Var a, double alpha = 1.0);

  Var matmul(Var a, Var b);
  /// x: [B, Cin, H, W], k: [Cout, Cin, kh, kw]. Direct convolution.
  Var conv2d(Var x, Var k, int stride, Padding pad);

  Var concat(const std::vector<Var>& xs, size_t axis);
  Var slice(Var a, size_t axis, size_t start, size_t len);
  Var reshape(Var a, Shape s);

  Var sum(Var a);        // all elements -> rank-0 scalar
  Var mean(Var a);
  Var sum_axis(Var a, size_t axis);
  Var mean_axis(Var a, size_t axis);

  /// Softmax / log-softmax over the last axis, max-shifted.
  Var softmax(Var a);
  Var log_softmax(Var a);

  /// Per-dimension standardization over `sample_axis` using the
  /// population variance. With eps == 0 a zero-variance dimension is
  /// rejected, naming the offending dimension.
  Var standardize(Var a, size_t sample_axis, double eps);

  /// Cosine similarity over the last axis: collapses [.., d] -> [..].
  /// Rejects zero-norm rows.
  Var cosine_similarity(Var a, Var b);

  Var stop_gradient(Var a);

  /// Constant one-hot rows, shape [n, classes].
  Var one_hot(const std::vector<int>& ids, size_t classes);

  /// Forward: exact one-hot sample from softmax(logits) over the last
  /// axis. Backward: gradient of the output is routed through
  /// softmax(logits) unchanged (straight-through).
  Var straight_through_sample(Var logits, RngStream& rng);

  /// Reverse sweep from a scalar loss node. Gradients of earlier
  /// backward calls on the same tape are discarded.
  void backward(Var loss);

  bool has_grad(Var v) const;
  const Tensor& grad(Var v) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    std::function<void(Tape&, const Tensor&)> back;  // empty for leaves
  };

  int push(Tensor value, std::vector<int> parents,
           std::function<void(Tape&, const Tensor&)> back);
  Tensor& grad_buf(int id);
  void add_grad(int id, const Tensor& g);

  Var binary_broadcast(Var a, Var b, int kind);  // 0 add, 1 sub, 2 mul, 3 div
  Var unary(Var a, const std::function<double(double)>& f,
            const std::function<double(double, double)>& dfdx_from_x_y);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_set_;
};

}  // namespace rlprobe

#endif  // RLPROBE_TAPE_HPP_
