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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mdml {

std::string base64_encode(std::span<const uint8_t> data);
inline std::string base64_encode(std::string_view data) {
  return base64_encode(std::span(reinterpret_cast<const uint8_t*>(data.data()), data.size()));
}

/// Strict RFC 4648 decoding with padding; nullopt on any malformed input.
std::optional<std::vector<uint8_t>> base64_decode(std::string_view text);

}  // namespace mdml
