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

#include "mdml/topic.hpp"

#include <vector>

#include "mdml/envelope.hpp"
#include "mdml/error.hpp"

namespace mdml {
namespace {

constexpr std::string_view kPrefix = "mdml/v1/";

std::vector<std::string_view> split_levels(std::string_view s) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t slash = s.find('/', start);
    if (slash == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, slash - start));
    start = slash + 1;
  }
}

}  // namespace

std::string_view to_string(TopicKind kind) noexcept {
  switch (kind) {
    case TopicKind::kData: return "data";
    case TopicKind::kControl: return "control";
    case TopicKind::kResults: return "results";
    case TopicKind::kEvents: return "events";
  }
  return "?";
}

std::string topic_for(TopicKind kind, std::string_view experiment_id, std::string_view entity_id) {
  require_identifier(experiment_id, "experiment_id");
  std::string topic(kPrefix);
  topic += experiment_id;
  topic += '/';
  topic += to_string(kind);
  if (kind == TopicKind::kEvents) {
    if (!entity_id.empty()) {
      throw Error(ErrorCode::kInvalidIdentifier, "events topic takes no entity id");
    }
    return topic;
  }
  require_identifier(entity_id, "entity_id");
  topic += '/';
  topic += entity_id;
  return topic;
}

std::optional<ParsedTopic> parse_topic(std::string_view topic) {
  if (!topic.starts_with(kPrefix)) return std::nullopt;
  const auto levels = split_levels(topic.substr(kPrefix.size()));
  if (levels.size() < 2 || !is_valid_identifier(levels[0])) return std::nullopt;
  ParsedTopic out{TopicKind::kEvents, std::string(levels[0]), {}};
  if (levels[1] == "events") {
    if (levels.size() != 2) return std::nullopt;
    return out;
  }
  if (levels.size() != 3 || !is_valid_identifier(levels[2])) return std::nullopt;
  if (levels[1] == "data") {
    out.kind = TopicKind::kData;
  } else if (levels[1] == "control") {
    out.kind = TopicKind::kControl;
  } else if (levels[1] == "results") {
    out.kind = TopicKind::kResults;
  } else {
    return std::nullopt;
  }
  out.entity_id = std::string(levels[2]);
  return out;
}

bool is_valid_topic_name(std::string_view topic) noexcept {
  if (topic.empty() || topic.size() > 65535) return false;
  return topic.find_first_of("+#") == std::string_view::npos &&
         topic.find('\0') == std::string_view::npos;
}

bool is_valid_topic_filter(std::string_view filter) noexcept {
  if (filter.empty() || filter.size() > 65535) return false;
  if (filter.find('\0') != std::string_view::npos) return false;
  const auto levels = split_levels(filter);
  for (size_t i = 0; i < levels.size(); ++i) {
    const auto level = levels[i];
    if (level.find('#') != std::string_view::npos) {
      if (level != "#" || i + 1 != levels.size()) return false;
    }
    if (level.find('+') != std::string_view::npos && level != "+") return false;
  }
  return true;
}

bool topic_matches(std::string_view filter, std::string_view topic) noexcept {
  const auto f = split_levels(filter);
  const auto t = split_levels(topic);
  size_t i = 0;
  for (; i < f.size(); ++i) {
    if (f[i] == "#") return true;
    if (i >= t.size()) return false;
    if (f[i] != "+" && f[i] != t[i]) return false;
  }
  return i == t.size();
}

}  // namespace mdml
