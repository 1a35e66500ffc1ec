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
#ifndef RLPROBE_RNG_HPP_
#define RLPROBE_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <string_view>

namespace rlprobe {

/// Counter-based splittable random stream. The i-th output is a pure
/// function of (key, i), so substreams keyed by replicate or trajectory
/// index produce identical draws no matter how work is partitioned
/// across threads.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(uint64_t key) : key_(key) {}

  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t at(uint64_t i) const { return mix(mix(key_ + i) ^ 0x2545f4914f6cdd1dULL); }

  uint64_t next_u64() { return at(counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller; consumes two counter slots per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream; `tag` selects the child deterministically.
  RngStream split(uint64_t tag) const {
    return RngStream(mix(key_ ^ mix(tag + 0x632be59bd9b4e019ULL)));
  }

  RngStream split(std::string_view name) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return split(h);
  }

  uint64_t key() const { return key_; }
  uint64_t counter() const { return counter_; }

 private:
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace rlprobe

#endif  // RLPROBE_RNG_HPP_
