// Copyright 2026 The refseg3d Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "refseg/numeric/matrix.hpp"

namespace refseg {

/// Seeded generator with platform-independent derived distributions.
///
/// Only the raw std::mt19937_64 stream is taken from the standard library;
/// every transform below is spelled out so a sequence of draws can be
/// replayed exactly from the seed:
///   uniform()  = ((x >> 11) + 0.5) * 2^-53, strictly inside (0, 1)
///   gumbel()   = -log(-log(uniform()))
///   normal()   = Box-Muller on two uniforms, cosine branch, no caching
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] (inclusive) by rejection-free modulo of a
  /// 64-bit draw; bias is below 2^-40 for the ranges used here.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double gumbel();
  double normal();

  Matrix gumbel_matrix(std::size_t rows, std::size_t cols);
  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0);

  /// Fisher-Yates with uniform_int.
  template <typename Container>
  void shuffle(Container& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(
          uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Source of the stochastic inputs of a forward pass (Gumbel noise for
/// primitive binding, Gaussian draws for primitive sampling).
///
/// kLive draws from the generator; kRecord draws and keeps a copy; kReplay
/// serves the recorded draws in order, which freezes the noise so the loss
/// is a deterministic function of the parameters; kZero returns zeros.
class NoiseSource {
 public:
  enum class Mode { kLive, kRecord, kReplay, kZero };

  NoiseSource() : mode_(Mode::kZero) {}
  NoiseSource(Rng* rng, Mode mode) : rng_(rng), mode_(mode) {}
  static NoiseSource zero() { return NoiseSource(); }

  Matrix gumbel(std::size_t rows, std::size_t cols);
  Matrix normal(std::size_t rows, std::size_t cols);

  Mode mode() const noexcept { return mode_; }
  /// Switch a recording source to replay from the first draw.
  void start_replay();

 private:
  Matrix draw(std::size_t rows, std::size_t cols, bool gumbel);

  Rng* rng_ = nullptr;
  Mode mode_;
  std::vector<Matrix> recorded_;
  std::size_t cursor_ = 0;
};

}  // namespace refseg
