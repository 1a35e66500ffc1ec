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
#include "rlprobe/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "rlprobe/check.hpp"

namespace rlprobe {

namespace {

constexpr char kMagic[4] = {'R', 'L', 'P', 'W'};
constexpr uint16_t kVersion = 1;

template <class T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(is.good(), "checkpoint read: truncated file");
  return v;
}

uint64_t fnv1a64(const void* bytes, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void ParameterSet::add(const std::string& path, Tensor t) {
  check(!values_.count(path), "duplicate parameter path: " + path);
  values_.emplace(path, std::move(t));
}

bool ParameterSet::contains(const std::string& path) const { return values_.count(path) > 0; }

Tensor& ParameterSet::at(const std::string& path) {
  auto it = values_.find(path);
  check(it != values_.end(), "unknown parameter path: " + path);
  return it->second;
}

const Tensor& ParameterSet::at(const std::string& path) const {
  auto it = values_.find(path);
  check(it != values_.end(), "unknown parameter path: " + path);
  return it->second;
}

std::vector<std::string> ParameterSet::paths() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

ParameterSet ParameterSet::subset(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [k, v] : values_)
    if (k.rfind(prefix, 0) == 0) out.add(k.substr(prefix.size()), v);
  return out;
}

void ParameterSet::merge(const ParameterSet& other, const std::string& prefix) {
  for (const auto& [k, v] : other.values_) add(prefix + k, v);
}

void ParameterSet::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint64_t>(values_.size()));
  for (const auto& [name, t] : values_) {
    check(name.size() <= 0xffff, "parameter path too long: " + name);
    write_pod(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint16_t>(t.rank()));
    for (size_t e : t.shape) write_pod(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  check(os.good(), "checkpoint write failed: " + path);
}

ParameterSet ParameterSet::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  check(is.good() && std::memcmp(magic, kMagic, 4) == 0, "not a parameter checkpoint: " + path);
  uint16_t version = read_pod<uint16_t>(is);
  check(version == kVersion, "unsupported checkpoint version " + std::to_string(version));
  uint64_t count = read_pod<uint64_t>(is);
  ParameterSet out;
  for (uint64_t i = 0; i < count; ++i) {
    uint16_t name_len = read_pod<uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint16_t rank = read_pod<uint16_t>(is);
    Shape shape(rank);
    for (uint16_t r = 0; r < rank; ++r) shape[r] = static_cast<size_t>(read_pod<uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    check(is.good(), "checkpoint read: truncated tensor data for " + name);
    out.add(name, std::move(t));
  }
  return out;
}

uint64_t ParameterSet::checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : values_) {
    h = fnv1a64(name.data(), name.size(), h);
    for (size_t e : t.shape) {
      uint64_t v = e;
      h = fnv1a64(&v, sizeof(v), h);
    }
    h = fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
  }
  return h;
}

namespace {

void check_grads_finite(const ParameterSet& params, const GradMap& grads) {
  for (const auto& [name, g] : grads) {
    check(params.contains(name), "gradient for unknown parameter: " + name);
    check(params.at(name).same_shape(g), "gradient shape mismatch for " + name);
    check(g.all_finite(), "optimizer step refused: non-finite gradient for " + name);
  }
}

}  // namespace

void sgd_step(ParameterSet& params, const GradMap& grads, const SgdHyper& hyper) {
  check(hyper.lr >= 0.0 && hyper.weight_decay >= 0.0, "sgd: lr and weight decay must be >= 0");
  check_grads_finite(params, grads);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    for (size_t i = 0; i < p.data.size(); ++i) {
      double grad = g.data[i] + hyper.weight_decay * p.data[i];
      p.data[i] -= hyper.lr * grad;
    }
  }
}

void adam_step(ParameterSet& params, const GradMap& grads, const AdamHyper& hyper) {
  check(hyper.lr >= 0.0 && hyper.weight_decay >= 0.0, "adam: lr and weight decay must be >= 0");
  check_grads_finite(params, grads);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    Tensor& m = params.slot_m()[name];
    Tensor& v = params.slot_v()[name];
    if (m.data.empty()) m = Tensor(p.shape);
    if (v.data.empty()) v = Tensor(p.shape);
    check(m.same_shape(p) && v.same_shape(p), "adam slot shape mismatch for " + name);
    int64_t t = ++params.slot_t()[name];
    double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    for (size_t i = 0; i < p.data.size(); ++i) {
      double grad = g.data[i] + hyper.weight_decay * p.data[i];
      m.data[i] = hyper.beta1 * m.data[i] + (1.0 - hyper.beta1) * grad;
      v.data[i] = hyper.beta2 * v.data[i] + (1.0 - hyper.beta2) * grad * grad;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p.data[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

void ema_update(ParameterSet& target, const ParameterSet& online, double tau) {
  check(tau >= 0.0 && tau <= 1.0, "ema_update: tau must be in [0,1]");
  check(target.size() == online.size(), "ema_update: key sets differ in size");
  for (const auto& [name, src] : online.values()) {
    check(target.contains(name), "ema_update: missing target key " + name);
    Tensor& dst = target.at(name);
    check(dst.same_shape(src), "ema_update: shape mismatch for " + name);
    for (size_t i = 0; i < dst.data.size(); ++i)
      dst.data[i] = tau * dst.data[i] + (1.0 - tau) * src.data[i];
  }
}

void clip_grad_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data) sq += v * v;
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  double scale = max_norm / norm;
  for (auto& [name, g] : grads)
    for (double& v : g.data) v *= scale;
}

}  // namespace rlprobe
