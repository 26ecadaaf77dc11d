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

#include <optional>
#include <string>
#include <string_view>

namespace mdml {

enum class TopicKind { kData, kControl, kResults, kEvents };

std::string_view to_string(TopicKind kind) noexcept;

/// mdml/v1/{exp}/data/{dev}, .../control/{dev}, .../results/{node}, .../events.
/// `entity_id` must be empty for kEvents. Throws kInvalidIdentifier.
std::string topic_for(TopicKind kind, std::string_view experiment_id,
                      std::string_view entity_id = {});

struct ParsedTopic {
  TopicKind kind;
  std::string experiment_id;
  std::string entity_id;  // empty for events

  bool operator==(const ParsedTopic&) const = default;
};

std::optional<ParsedTopic> parse_topic(std::string_view topic);

/// MQTT 3.1.1 topic-name rules for publishing: non-empty, no wildcards.
bool is_valid_topic_name(std::string_view topic) noexcept;

/// MQTT 3.1.1 filter rules: '+' occupies a whole level, '#' only as the whole
/// final level.
bool is_valid_topic_filter(std::string_view filter) noexcept;

bool topic_matches(std::string_view filter, std::string_view topic) noexcept;

}  // namespace mdml
