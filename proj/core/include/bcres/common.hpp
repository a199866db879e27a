/* Copyright 2026 The bcres Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef BCRES_COMMON_HPP_
#define BCRES_COMMON_HPP_

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcres {

// Error taxonomy. The CLI maps these onto process exit codes:
// ConfigError -> 2, IoError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration, bad argument values, shape/dimension mismatches.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Missing files, short reads, malformed file formats.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic random number generation.
//
// All randomness in the library flows from explicit Rng instances seeded by
// the caller. Distributions are implemented by hand (not <random>'s
// implementation-defined ones) so that a given seed produces the same stream
// on every platform and standard library.
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t& state);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {
    // Warm up so that small seeds do not produce correlated first draws.
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal via Box-Muller (one draw per pair, no cached spare).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Gamma(alpha, 1) via Marsaglia-Tsang; valid for any alpha > 0.
  double gamma(double alpha);

  // Beta(a, b) as gamma(a) / (gamma(a) + gamma(b)).
  double beta(double a, double b);

  // Derive an independent stream keyed by (this stream's seed, key).
  Rng substream(std::uint64_t key) const;

  // Convenience for deriving streams from string labels.
  Rng substream(const std::string& key) const;

 private:
  std::uint64_t state_;
};

std::uint64_t hash_string(const std::string& s);

// ---------------------------------------------------------------------------
// IEEE 754 binary16 conversions, round-to-nearest-even.
// ---------------------------------------------------------------------------

std::uint16_t f32_to_f16(float value);
float f16_to_f32(std::uint16_t half);

// Round-trip through binary16 (used by the compression fake-quant path).
inline float f16_round(float value) { return f16_to_f32(f32_to_f16(value)); }

// ---------------------------------------------------------------------------
// Little-endian binary stream helpers shared by the file formats.
// ---------------------------------------------------------------------------

void write_u8(std::ostream& os, std::uint8_t v);
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_bytes(std::ostream& os, const void* data, std::size_t n);

std::uint8_t read_u8(std::istream& is, const char* what);
std::uint16_t read_u16(std::istream& is, const char* what);
std::uint32_t read_u32(std::istream& is, const char* what);
std::uint64_t read_u64(std::istream& is, const char* what);
float read_f32(std::istream& is, const char* what);
void read_bytes(std::istream& is, void* data, std::size_t n, const char* what);

// Writes `content` to `path` atomically (temp file + rename) so failed runs
// never leave partial outputs behind.
void atomic_write_file(const std::string& path, const std::string& content);

// Formats a double with fixed precision; used everywhere a value lands in a
// reproducible text artifact (metrics logs, reports).
std::string format_fixed(double v, int precision);

}  // namespace bcres

#endif  // BCRES_COMMON_HPP_
