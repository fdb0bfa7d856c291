// Copyright 2026 the pagedec authors
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

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pagedec {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Configuration / CLI usage errors (exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// File system failures, always carrying path context (exit code 2).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// Non-finite training loss (exit code 3).
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// Model/data disagreement, e.g. alphabet mismatch (exit code 4).
struct MismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Single-channel 8-bit image, row-major.
struct GrayImage {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> px;

    uint8_t at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
    uint8_t& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG stream. std::*_distribution is implementation-defined,
// so bounded ints and gaussians are derived from raw draws directly; the
// same seed yields the same bytes on every platform.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : state_(splitmix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

    uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }
    /// Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return n <= 1 ? 0 : next_u64() % n; }
    /// Uniform double in [0, 1).
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    /// Uniform double in [lo, hi).
    double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }
    /// Standard normal via Box-Muller.
    double next_gauss() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Decodes UTF-8 into code points. Throws ConfigError on malformed input.
std::vector<char32_t> utf8_decode(const std::string& s);
/// Encodes code points as UTF-8.
std::string utf8_encode(const std::vector<char32_t>& cps);
std::string utf8_encode_one(char32_t cp);

}  // namespace pagedec
