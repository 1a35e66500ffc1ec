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
#include "rlprobe/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rlprobe/check.hpp"

namespace rlprobe {

namespace {

struct BroadcastPlan {
  Shape out;
  std::vector<size_t> stride_a;
  std::vector<size_t> stride_b;
};

std::vector<size_t> row_major_strides(const Shape& s) {
  std::vector<size_t> st(s.size(), 0);
  size_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

BroadcastPlan make_broadcast_plan(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  size_t rank = std::max(a.size(), b.size());
  p.out.resize(rank);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  std::vector<size_t> sa = row_major_strides(a);
  std::vector<size_t> sb = row_major_strides(b);
  for (size_t i = 0; i < rank; ++i) {
    size_t ax = rank - 1 - i;
    size_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    size_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    check(ea == eb || ea == 1 || eb == 1,
          "broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
    p.out[ax] = std::max(ea, eb);
    if (ea != 1) p.stride_a[ax] = sa[a.size() - 1 - i];
    if (eb != 1) p.stride_b[ax] = sb[b.size() - 1 - i];
  }
  return p;
}

// Walks the broadcast output space, tracking flat offsets into both
// operands; f(out_index, a_index, b_index).
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  size_t n = shape_numel(p.out);
  std::vector<size_t> idx(p.out.size(), 0);
  size_t ia = 0, ib = 0;
  for (size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (size_t k = p.out.size(); k-- > 0;) {
      idx[k]++;
      ia += p.stride_a[k];
      ib += p.stride_b[k];
      if (idx[k] < p.out[k]) break;
      idx[k] = 0;
      ia -= p.stride_a[k] * p.out[k];
      ib -= p.stride_b[k] * p.out[k];
    }
  }
}

// outer x extent x inner decomposition of one axis.
void axis_split(const Shape& s, size_t axis, size_t* outer, size_t* extent, size_t* inner) {
  check(axis < s.size(), "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  *outer = 1;
  *inner = 1;
  for (size_t i = 0; i < axis; ++i) *outer *= s[i];
  *extent = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) *inner *= s[i];
}

struct ConvGeometry {
  size_t oh, ow;
  long pad_h, pad_w;  // leading pad
};

ConvGeometry conv_geometry(size_t h, size_t w, size_t kh, size_t kw, int stride, Padding pad) {
  ConvGeometry g{};
  size_t s = static_cast<size_t>(stride);
  if (pad == Padding::kSame) {
    g.oh = (h + s - 1) / s;
    g.ow = (w + s - 1) / s;
    long total_h = std::max<long>(static_cast<long>((g.oh - 1) * s + kh) - static_cast<long>(h), 0);
    long total_w = std::max<long>(static_cast<long>((g.ow - 1) * s + kw) - static_cast<long>(w), 0);
    g.pad_h = total_h / 2;
    g.pad_w = total_w / 2;
  } else {
    check(h >= kh && w >= kw, "conv2d: kernel larger than input in valid mode");
    g.oh = (h - kh) / s + 1;
    g.ow = (w - kw) / s + 1;
    g.pad_h = 0;
    g.pad_w = 0;
  }
  return g;
}

}  // namespace

int Tape::push(Tensor value, std::vector<int> parents,
               std::function<void(Tape&, const Tensor&)> back) {
  check(value.all_finite(), "non-finite values produced in forward pass");
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(Tensor value) { return Var{push(std::move(value), {}, nullptr)}; }

const Tensor& Tape::value(Var v) const {
  check(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "invalid tape node");
  return nodes_[static_cast<size_t>(v.id)].value;
}

const Shape& Tape::shape(Var v) const { return value(v).shape; }

Tensor& Tape::grad_buf(int id) {
  if (!grad_set_[static_cast<size_t>(id)]) {
    grads_[static_cast<size_t>(id)] = Tensor(nodes_[static_cast<size_t>(id)].value.shape);
    grad_set_[static_cast<size_t>(id)] = 1;
  }
  return grads_[static_cast<size_t>(id)];
}

void Tape::add_grad(int id, const Tensor& g) {
  Tensor& buf = grad_buf(id);
  for (size_t i = 0; i < buf.data.size(); ++i) buf.data[i] += g.data[i];
}

Var Tape::binary_broadcast(Var a, Var b, int kind) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  BroadcastPlan plan = make_broadcast_plan(ta.shape, tb.shape);
  Tensor out(plan.out);
  const double* pa = ta.data.data();
  const double* pb = tb.data.data();
  double* po = out.data.data();
  switch (kind) {
    case 0:
      for_each_broadcast(plan, [&](size_t i, size_t ia, size_t ib) { po[i] = pa[ia] + pb[ib]; });
      break;
    case 1:
      for_each_broadcast(plan, [&](size_t i, size_t ia, size_t ib) { po[i] = pa[ia] - pb[ib]; });
      break;
    case 2:
      for_each_broadcast(plan, [&](size_t i, size_t ia, size_t ib) { po[i] = pa[ia] * pb[ib]; });
      break;
    default:
      for_each_broadcast(plan, [&](size_t i, size_t ia, size_t ib) { po[i] = pa[ia] / pb[ib]; });
      break;
  }
  int ia_id = a.id, ib_id = b.id;
  auto back = [plan, ia_id, ib_id, kind](Tape& t, const Tensor& g) {
    const Tensor& va = t.nodes_[static_cast<size_t>(ia_id)].value;
    const Tensor& vb = t.nodes_[static_cast<size_t>(ib_id)].value;
    Tensor& ga = t.grad_buf(ia_id);
    Tensor& gb = t.grad_buf(ib_id);
    switch (kind) {
      case 0:
        for_each_broadcast(plan, [&](size_t i, size_t ia, size_t ib) {
          ga.data[ia] += g.data[i];
          gb.data[ib] += g.data[i];
        });
        break;
      case 1:
        for_each_broadcast(plan, [&](size_t i, size_t ia, size_t ib) {
          ga.data[ia] += g.data[i];
          gb.data[ib] -= g.data[i];
        });
        break;
      case 2:
        for_each_broadcast(plan, [&](size_t i, size_t ia, size_t ib) {
          ga.data[ia] += g.data[i] * vb.data[ib];
          gb.data[ib] += g.data[i] * va.data[ia];
        });
        break;
      default:
        for_each_broadcast(plan, [&](size_t i, size_t ia, size_t ib) {
          ga.data[ia] += g.data[i] / vb.data[ib];
          gb.data[ib] -= g.data[i] * va.data[ia] / (vb.data[ib] * vb.data[ib]);
        });
        break;
    }
  };
  return Var{push(std::move(out), {a.id, b.id}, back)};
}

Var Tape::add(Var a, Var b) { return binary_broadcast(a, b, 0); }
Var Tape::sub(Var a, Var b) { return binary_broadcast(a, b, 1); }
Var Tape::mul(Var a, Var b) { return binary_broadcast(a, b, 2); }
Var Tape::div(Var a, Var b) { return binary_broadcast(a, b, 3); }

Var Tape::unary(Var a, const std::function<double(double)>& f,
                const std::function<double(double, double)>& dfdx_from_x_y) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape);
  for (size_t i = 0; i < ta.data.size(); ++i) out.data[i] = f(ta.data[i]);
  int pid = a.id;
  int id = push(std::move(out), {a.id}, nullptr);
  nodes_[static_cast<size_t>(id)].back = [pid, id, dfdx_from_x_y](Tape& t, const Tensor& g) {
    const Tensor& x = t.nodes_[static_cast<size_t>(pid)].value;
    const Tensor& y = t.nodes_[static_cast<size_t>(id)].value;
    Tensor& ga = t.grad_buf(pid);
    for (size_t i = 0; i < x.data.size(); ++i) {
      ga.data[i] += g.data[i] * dfdx_from_x_y(x.data[i], y.data[i]);
    }
  };
  return Var{id};
}

Var Tape::neg(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var Tape::add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var Tape::mul_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var Tape::exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var Tape::log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var Tape::sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var Tape::pow_scalar(Var a, double p) {
  return unary(a, [p](double x) { return std::pow(x, p); },
               [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Var Tape::tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var Tape::sigmoid(Var a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var Tape::relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var Tape::elu(Var a, double alpha) {
  return unary(a, [alpha](double x) { return x > 0.0 ? x : alpha * (std::exp(x) - 1.0); },
               [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[0],
        "matmul mismatch: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
  Tensor out({m, n});
  for (size_t i = 0; i < m; ++i) {
    const double* arow = &ta.data[i * k];
    double* orow = &out.data[i * n];
    for (size_t kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = &tb.data[kk * n];
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  int ia = a.id, ib = b.id;
  auto back = [ia, ib, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& va = t.nodes_[static_cast<size_t>(ia)].value;
    const Tensor& vb = t.nodes_[static_cast<size_t>(ib)].value;
    Tensor& ga = t.grad_buf(ia);
    Tensor& gb = t.grad_buf(ib);
    // dA = g * B^T
    for (size_t i = 0; i < m; ++i) {
      const double* grow = &g.data[i * n];
      double* garow = &ga.data[i * k];
      for (size_t kk = 0; kk < k; ++kk) {
        const double* brow = &vb.data[kk * n];
        double acc = 0.0;
        for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        garow[kk] += acc;
      }
    }
    // dB = A^T * g
    for (size_t i = 0; i < m; ++i) {
      const double* arow = &va.data[i * k];
      const double* grow = &g.data[i * n];
      for (size_t kk = 0; kk < k; ++kk) {
        double av = arow[kk];
        if (av == 0.0) continue;
        double* gbrow = &gb.data[kk * n];
        for (size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
      }
    }
  };
  return Var{push(std::move(out), {a.id, b.id}, back)};
}

Var Tape::conv2d(Var x, Var kern, int stride, Padding pad) {
  const Tensor& tx = value(x);
  const Tensor& tk = value(kern);
  check(tx.rank() == 4 && tk.rank() == 4, "conv2d wants [B,C,H,W] input and [Co,Ci,kh,kw] kernel, got " +
                                              shape_str(tx.shape) + " and " + shape_str(tk.shape));
  check(tx.shape[1] == tk.shape[1], "conv2d channel mismatch: input " + shape_str(tx.shape) +
                                        " vs kernel " + shape_str(tk.shape));
  check(stride >= 1, "conv2d stride must be >= 1");
  size_t batch = tx.shape[0], cin = tx.shape[1], h = tx.shape[2], w = tx.shape[3];
  size_t cout = tk.shape[0], kh = tk.shape[2], kw = tk.shape[3];
  ConvGeometry geo = conv_geometry(h, w, kh, kw, stride, pad);
  Tensor out({batch, cout, geo.oh, geo.ow});
  size_t s = static_cast<size_t>(stride);
  for (size_t b = 0; b < batch; ++b) {
    for (size_t co = 0; co < cout; ++co) {
      double* oplane = &out.data[(b * cout + co) * geo.oh * geo.ow];
      for (size_t ci = 0; ci < cin; ++ci) {
        const double* xplane = &tx.data[(b * cin + ci) * h * w];
        const double* kplane = &tk.data[(co * cin + ci) * kh * kw];
        for (size_t oh = 0; oh < geo.oh; ++oh) {
          for (size_t u = 0; u < kh; ++u) {
            long ih = static_cast<long>(oh * s + u) - geo.pad_h;
            if (ih < 0 || ih >= static_cast<long>(h)) continue;
            const double* xrow = &xplane[static_cast<size_t>(ih) * w];
            const double* krow = &kplane[u * kw];
            double* orow = &oplane[oh * geo.ow];
            for (size_t ow = 0; ow < geo.ow; ++ow) {
              double acc = 0.0;
              for (size_t v = 0; v < kw; ++v) {
                long iw = static_cast<long>(ow * s + v) - geo.pad_w;
                if (iw < 0 || iw >= static_cast<long>(w)) continue;
                acc += xrow[static_cast<size_t>(iw)] * krow[v];
              }
              orow[ow] += acc;
            }
          }
        }
      }
    }
  }
  int ix = x.id, ik = kern.id;
  auto back = [ix, ik, batch, cin, cout, h, w, kh, kw, geo, s](Tape& t, const Tensor& g) {
    const Tensor& vx = t.nodes_[static_cast<size_t>(ix)].value;
    const Tensor& vk = t.nodes_[static_cast<size_t>(ik)].value;
    Tensor& gx = t.grad_buf(ix);
    Tensor& gk = t.grad_buf(ik);
    for (size_t b = 0; b < batch; ++b) {
      for (size_t co = 0; co < cout; ++co) {
        const double* gplane = &g.data[(b * cout + co) * geo.oh * geo.ow];
        for (size_t ci = 0; ci < cin; ++ci) {
          const double* xplane = &vx.data[(b * cin + ci) * h * w];
          const double* kplane = &vk.data[(co * cin + ci) * kh * kw];
          double* gxplane = &gx.data[(b * cin + ci) * h * w];
          double* gkplane = &gk.data[(co * cin + ci) * kh * kw];
          for (size_t oh = 0; oh < geo.oh; ++oh) {
            for (size_t u = 0; u < kh; ++u) {
              long ih = static_cast<long>(oh * s + u) - geo.pad_h;
              if (ih < 0 || ih >= static_cast<long>(h)) continue;
              const double* xrow = &xplane[static_cast<size_t>(ih) * w];
              double* gxrow = &gxplane[static_cast<size_t>(ih) * w];
              const double* grow = &gplane[oh * geo.ow];
              for (size_t ow = 0; ow < geo.ow; ++ow) {
                double gv = grow[ow];
                if (gv == 0.0) continue;
                for (size_t v = 0; v < kw; ++v) {
                  long iw = static_cast<long>(ow * s + v) - geo.pad_w;
                  if (iw < 0 || iw >= static_cast<long>(w)) continue;
                  gxrow[static_cast<size_t>(iw)] += gv * kplane[u * kw + v];
                  gkplane[u * kw + v] += gv * xrow[static_cast<size_t>(iw)];
                }
              }
            }
          }
        }
      }
    }
  };
  return Var{push(std::move(out), {x.id, kern.id}, back)};
}

Var Tape::concat(const std::vector<Var>& xs, size_t axis) {
  check(!xs.empty(), "concat of zero tensors");
  const Shape& base = shape(xs[0]);
  size_t total = 0;
  for (Var v : xs) {
    const Shape& s = shape(v);
    check(s.size() == base.size(), "concat rank mismatch: " + shape_str(base) + " vs " + shape_str(s));
    for (size_t i = 0; i < s.size(); ++i)
      check(i == axis || s[i] == base[i],
            "concat shape mismatch: " + shape_str(base) + " vs " + shape_str(s));
    total += s[axis];
  }
  Shape out_shape = base;
  out_shape[axis] = total;
  size_t outer, extent, inner;
  axis_split(out_shape, axis, &outer, &extent, &inner);
  (void)extent;
  Tensor out(out_shape);
  std::vector<int> parents;
  std::vector<size_t> extents;
  size_t offset = 0;
  for (Var v : xs) {
    const Tensor& tv = value(v);
    size_t e = tv.shape[axis];
    for (size_t o = 0; o < outer; ++o) {
      const double* src = &tv.data[o * e * inner];
      double* dst = &out.data[(o * total + offset) * inner];
      std::copy(src, src + e * inner, dst);
    }
    offset += e;
    parents.push_back(v.id);
    extents.push_back(e);
  }
  auto back = [parents, extents, outer, inner, total](Tape& t, const Tensor& g) {
    size_t off = 0;
    for (size_t p = 0; p < parents.size(); ++p) {
      Tensor& gp = t.grad_buf(parents[p]);
      size_t e = extents[p];
      for (size_t o = 0; o < outer; ++o) {
        const double* src = &g.data[(o * total + off) * inner];
        double* dst = &gp.data[o * e * inner];
        for (size_t i = 0; i < e * inner; ++i) dst[i] += src[i];
      }
      off += e;
    }
  };
  return Var{push(std::move(out), parents, back)};
}

Var Tape::slice(Var a, size_t axis, size_t start, size_t len) {
  const Tensor& ta = value(a);
  size_t outer, extent, inner;
  axis_split(ta.shape, axis, &outer, &extent, &inner);
  check(start + len <= extent, "slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                                   ") out of range for axis extent " + std::to_string(extent));
  Shape out_shape = ta.shape;
  out_shape[axis] = len;
  Tensor out(out_shape);
  for (size_t o = 0; o < outer; ++o) {
    const double* src = &ta.data[(o * extent + start) * inner];
    std::copy(src, src + len * inner, &out.data[o * len * inner]);
  }
  int pid = a.id;
  auto back = [pid, outer, extent, inner, start, len](Tape& t, const Tensor& g) {
    Tensor& gp = t.grad_buf(pid);
    for (size_t o = 0; o < outer; ++o) {
      const double* src = &g.data[o * len * inner];
      double* dst = &gp.data[(o * extent + start) * inner];
      for (size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  };
  return Var{push(std::move(out), {a.id}, back)};
}

Var Tape::reshape(Var a, Shape s) {
  const Tensor& ta = value(a);
  check(shape_numel(s) == ta.size(),
        "reshape " + shape_str(ta.shape) + " -> " + shape_str(s) + " changes element count");
  Tensor out;
  out.shape = std::move(s);
  out.data = ta.data;
  int pid = a.id;
  auto back = [pid](Tape& t, const Tensor& g) {
    Tensor& gp = t.grad_buf(pid);
    for (size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += g.data[i];
  };
  return Var{push(std::move(out), {a.id}, back)};
}

Var Tape::sum(Var a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  for (double v : ta.data) acc += v;
  int pid = a.id;
  auto back = [pid](Tape& t, const Tensor& g) {
    Tensor& gp = t.grad_buf(pid);
    for (double& v : gp.data) v += g.data[0];
  };
  return Var{push(Tensor::scalar(acc), {a.id}, back)};
}

Var Tape::mean(Var a) {
  const Tensor& ta = value(a);
  check(!ta.data.empty(), "mean of empty tensor");
  double inv = 1.0 / static_cast<double>(ta.size());
  return mul_scalar(sum(a), inv);
}

Var Tape::sum_axis(Var a, size_t axis) {
  const Tensor& ta = value(a);
  size_t outer, extent, inner;
  axis_split(ta.shape, axis, &outer, &extent, &inner);
  Shape out_shape = ta.shape;
  out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  Tensor out(out_shape);
  for (size_t o = 0; o < outer; ++o)
    for (size_t e = 0; e < extent; ++e) {
      const double* src = &ta.data[(o * extent + e) * inner];
      double* dst = &out.data[o * inner];
      for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  int pid = a.id;
  auto back = [pid, outer, extent, inner](Tape& t, const Tensor& g) {
    Tensor& gp = t.grad_buf(pid);
    for (size_t o = 0; o < outer; ++o)
      for (size_t e = 0; e < extent; ++e) {
        double* dst = &gp.data[(o * extent + e) * inner];
        const double* src = &g.data[o * inner];
        for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  };
  return Var{push(std::move(out), {a.id}, back)};
}

Var Tape::mean_axis(Var a, size_t axis) {
  const Tensor& ta = value(a);
  size_t outer, extent, inner;
  axis_split(ta.shape, axis, &outer, &extent, &inner);
  (void)outer;
  (void)inner;
  return mul_scalar(sum_axis(a, axis), 1.0 / static_cast<double>(extent));
}

Var Tape::softmax(Var a) {
  const Tensor& ta = value(a);
  check(ta.rank() >= 1, "softmax needs rank >= 1");
  size_t d = ta.shape.back();
  size_t rows = ta.size() / d;
  Tensor out(ta.shape);
  for (size_t r = 0; r < rows; ++r) {
    const double* x = &ta.data[r * d];
    double* y = &out.data[r * d];
    double m = x[0];
    for (size_t i = 1; i < d; ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (size_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - m);
      z += y[i];
    }
    for (size_t i = 0; i < d; ++i) y[i] /= z;
  }
  int pid = a.id;
  int id = push(std::move(out), {a.id}, nullptr);
  nodes_[static_cast<size_t>(id)].back = [pid, id, rows, d](Tape& t, const Tensor& g) {
    const Tensor& y = t.nodes_[static_cast<size_t>(id)].value;
    Tensor& gp = t.grad_buf(pid);
    for (size_t r = 0; r < rows; ++r) {
      const double* yr = &y.data[r * d];
      const double* gr = &g.data[r * d];
      double dot = 0.0;
      for (size_t i = 0; i < d; ++i) dot += yr[i] * gr[i];
      double* dst = &gp.data[r * d];
      for (size_t i = 0; i < d; ++i) dst[i] += yr[i] * (gr[i] - dot);
    }
  };
  return Var{id};
}

Var Tape::log_softmax(Var a) {
  const Tensor& ta = value(a);
  check(ta.rank() >= 1, "log_softmax needs rank >= 1");
  size_t d = ta.shape.back();
  size_t rows = ta.size() / d;
  Tensor out(ta.shape);
  for (size_t r = 0; r < rows; ++r) {
    const double* x = &ta.data[r * d];
    double* y = &out.data[r * d];
    double m = x[0];
    for (size_t i = 1; i < d; ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (size_t i = 0; i < d; ++i) z += std::exp(x[i] - m);
    double lz = m + std::log(z);
    for (size_t i = 0; i < d; ++i) y[i] = x[i] - lz;
  }
  int pid = a.id;
  int id = push(std::move(out), {a.id}, nullptr);
  nodes_[static_cast<size_t>(id)].back = [pid, id, rows, d](Tape& t, const Tensor& g) {
    const Tensor& y = t.nodes_[static_cast<size_t>(id)].value;
    Tensor& gp = t.grad_buf(pid);
    for (size_t r = 0; r < rows; ++r) {
      const double* yr = &y.data[r * d];
      const double* gr = &g.data[r * d];
      double gsum = 0.0;
      for (size_t i = 0; i < d; ++i) gsum += gr[i];
      double* dst = &gp.data[r * d];
      for (size_t i = 0; i < d; ++i) dst[i] += gr[i] - std::exp(yr[i]) * gsum;
    }
  };
  return Var{id};
}

Var Tape::standardize(Var a, size_t sample_axis, double eps) {
  const Tensor& ta = value(a);
  size_t outer, extent, inner;
  axis_split(ta.shape, sample_axis, &outer, &extent, &inner);
  check(extent >= 2, "standardize needs >= 2 samples along axis " + std::to_string(sample_axis));
  Tensor out(ta.shape);
  std::vector<double> sigma(outer * inner);
  double n = static_cast<double>(extent);
  for (size_t o = 0; o < outer; ++o) {
    for (size_t i = 0; i < inner; ++i) {
      double mu = 0.0;
      for (size_t e = 0; e < extent; ++e) mu += ta.data[(o * extent + e) * inner + i];
      mu /= n;
      double var = 0.0;
      for (size_t e = 0; e < extent; ++e) {
        double d = ta.data[(o * extent + e) * inner + i] - mu;
        var += d * d;
      }
      var /= n;
      if (eps == 0.0) {
        check(var > 0.0,
              "standardize: zero variance in dimension " + std::to_string(o * inner + i));
      }
      double s = std::sqrt(var + eps);
      sigma[o * inner + i] = s;
      for (size_t e = 0; e < extent; ++e) {
        size_t at = (o * extent + e) * inner + i;
        out.data[at] = (ta.data[at] - mu) / s;
      }
    }
  }
  int pid = a.id;
  int id = push(std::move(out), {a.id}, nullptr);
  nodes_[static_cast<size_t>(id)].back = [pid, id, outer, extent, inner, sigma, n](
                                             Tape& t, const Tensor& g) {
    const Tensor& y = t.nodes_[static_cast<size_t>(id)].value;
    Tensor& gp = t.grad_buf(pid);
    for (size_t o = 0; o < outer; ++o) {
      for (size_t i = 0; i < inner; ++i) {
        double gbar = 0.0, gydot = 0.0;
        for (size_t e = 0; e < extent; ++e) {
          size_t at = (o * extent + e) * inner + i;
          gbar += g.data[at];
          gydot += g.data[at] * y.data[at];
        }
        gbar /= n;
        gydot /= n;
        double inv_s = 1.0 / sigma[o * inner + i];
        for (size_t e = 0; e < extent; ++e) {
          size_t at = (o * extent + e) * inner + i;
          gp.data[at] += inv_s * (g.data[at] - gbar - y.data[at] * gydot);
        }
      }
    }
  };
  return Var{id};
}

Var Tape::cosine_similarity(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check(ta.shape == tb.shape && ta.rank() >= 1,
        "cosine_similarity shape mismatch: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  size_t last = ta.rank() - 1;
  Var dot = sum_axis(mul(a, b), last);
  Var na2 = sum_axis(mul(a, a), last);
  Var nb2 = sum_axis(mul(b, b), last);
  for (double v : value(na2).data) check(v > 0.0, "cosine_similarity: zero-norm vector");
  for (double v : value(nb2).data) check(v > 0.0, "cosine_similarity: zero-norm vector");
  return div(dot, sqrt(mul(na2, nb2)));
}

Var Tape::stop_gradient(Var a) { return Var{push(value(a), {}, nullptr)}; }

Var Tape::one_hot(const std::vector<int>& ids, size_t classes) {
  Tensor out({ids.size(), classes});
  for (size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && static_cast<size_t>(ids[i]) < classes,
          "one_hot id " + std::to_string(ids[i]) + " out of range " + std::to_string(classes));
    out.data[i * classes + static_cast<size_t>(ids[i])] = 1.0;
  }
  return constant(std::move(out));
}

Var Tape::straight_through_sample(Var logits, RngStream& rng) {
  const Tensor& tl = value(logits);
  check(tl.rank() >= 1, "straight_through_sample needs rank >= 1");
  size_t d = tl.shape.back();
  size_t rows = tl.size() / d;
  Tensor out(tl.shape);
  std::vector<double> probs(tl.size());
  for (size_t r = 0; r < rows; ++r) {
    const double* x = &tl.data[r * d];
    double* p = &probs[r * d];
    double m = x[0];
    for (size_t i = 1; i < d; ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (size_t i = 0; i < d; ++i) {
      p[i] = std::exp(x[i] - m);
      z += p[i];
    }
    double u = rng.uniform() * z;
    size_t pick = d - 1;
    double acc = 0.0;
    for (size_t i = 0; i < d; ++i) {
      acc += p[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    for (size_t i = 0; i < d; ++i) p[i] /= z;
    out.data[r * d + pick] = 1.0;
  }
  int pid = logits.id;
  auto back = [pid, rows, d, probs](Tape& t, const Tensor& g) {
    Tensor& gp = t.grad_buf(pid);
    for (size_t r = 0; r < rows; ++r) {
      const double* p = &probs[r * d];
      const double* gr = &g.data[r * d];
      double dot = 0.0;
      for (size_t i = 0; i < d; ++i) dot += p[i] * gr[i];
      double* dst = &gp.data[r * d];
      for (size_t i = 0; i < d; ++i) dst[i] += p[i] * (gr[i] - dot);
    }
  };
  return Var{push(std::move(out), {logits.id}, back)};
}

void Tape::backward(Var loss) {
  check(loss.id >= 0 && loss.id < static_cast<int>(nodes_.size()), "invalid loss node");
  const Tensor& lv = nodes_[static_cast<size_t>(loss.id)].value;
  check(lv.size() == 1, "backward requires a scalar loss, got shape " + shape_str(lv.shape));
  grads_.assign(nodes_.size(), Tensor{});
  grad_set_.assign(nodes_.size(), 0);
  Tensor seed(lv.shape);
  seed.data[0] = 1.0;
  grads_[static_cast<size_t>(loss.id)] = std::move(seed);
  grad_set_[static_cast<size_t>(loss.id)] = 1;
  for (int id = loss.id; id >= 0; --id) {
    if (!grad_set_[static_cast<size_t>(id)]) continue;
    const Node& node = nodes_[static_cast<size_t>(id)];
    if (node.back) node.back(*this, grads_[static_cast<size_t>(id)]);
  }
}

bool Tape::has_grad(Var v) const {
  return v.id >= 0 && static_cast<size_t>(v.id) < grad_set_.size() &&
         grad_set_[static_cast<size_t>(v.id)];
}

const Tensor& Tape::grad(Var v) const {
  check(has_grad(v), "no gradient recorded for node");
  return grads_[static_cast<size_t>(v.id)];
}

}  // namespace rlprobe
