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

#include "refseg/numeric/rng.hpp"

#include <cmath>
#include <numbers>

#include "refseg/error.hpp"

namespace refseg {

double Rng::uniform() {
  const std::uint64_t x = engine_() >> 11;
  return (static_cast<double>(x) + 0.5) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  require(lo <= hi, "Rng::uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(engine_() % span);
}

double Rng::gumbel() { return -std::log(-std::log(uniform())); }

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

Matrix Rng::gumbel_matrix(std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = gumbel();
  return m;
}

Matrix Rng::normal_matrix(std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = stddev * normal();
  return m;
}

Matrix NoiseSource::gumbel(std::size_t rows, std::size_t cols) {
  return draw(rows, cols, true);
}

Matrix NoiseSource::normal(std::size_t rows, std::size_t cols) {
  return draw(rows, cols, false);
}

void NoiseSource::start_replay() {
  require(mode_ == Mode::kRecord || mode_ == Mode::kReplay,
          "NoiseSource::start_replay: source is not recording");
  mode_ = Mode::kReplay;
  cursor_ = 0;
}

Matrix NoiseSource::draw(std::size_t rows, std::size_t cols, bool gumbel) {
  switch (mode_) {
    case Mode::kZero:
      return Matrix(rows, cols);
    case Mode::kLive:
    case Mode::kRecord: {
      require(rng_ != nullptr, "NoiseSource: no generator attached");
      Matrix m = gumbel ? rng_->gumbel_matrix(rows, cols)
                        : rng_->normal_matrix(rows, cols);
      if (mode_ == Mode::kRecord) recorded_.push_back(m);
      return m;
    }
    case Mode::kReplay: {
      require(cursor_ < recorded_.size(),
              "NoiseSource: replay exhausted the recorded draws");
      const Matrix& m = recorded_[cursor_++];
      require(m.rows() == rows && m.cols() == cols,
              "NoiseSource: replay shape differs from recorded draw");
      return m;
    }
  }
  return Matrix(rows, cols);
}

}  // namespace refseg
