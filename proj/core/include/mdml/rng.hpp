// Copyright 2026 The MDML Authors
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
#include <string_view>

namespace mdml {

uint64_t mix64(uint64_t x) noexcept;
uint64_t fnv1a64(std::string_view s) noexcept;

/// Counter-based random stream. A draw depends only on (seed, stream name,
/// counter), so emission order between streams never changes the values.
class RngStream {
 public:
  RngStream(uint64_t seed, std::string_view name) noexcept;

  uint64_t bits(uint64_t counter) const noexcept;

  /// Uniform in the open interval (0, 1).
  double uniform(uint64_t counter) const noexcept;

  /// Standard normal via Box-Muller on counters 2c and 2c+1.
  double normal(uint64_t counter) const noexcept;

 private:
  uint64_t key_;
};

}  // namespace mdml
