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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace mdml {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

inline constexpr int kEnvelopeVersion = 1;

/// Entity identifiers (experiments, devices, pipeline nodes): [a-z0-9-]{1,64}.
/// These appear as topic levels.
bool is_valid_identifier(std::string_view s) noexcept;

/// Name identifiers (field names, command names, param keys) also admit '_'
/// so that names such as `s_true` and `set_u` are legal: [a-z0-9_-]{1,64}.
bool is_valid_name(std::string_view s) noexcept;

/// Throws Error(kInvalidIdentifier) naming `what`.
void require_identifier(std::string_view s, std::string_view what);

enum class FieldType { kF64, kI64, kStr, kBool };

std::string_view to_string(FieldType t) noexcept;
std::optional<FieldType> parse_field_type(std::string_view s) noexcept;

struct FieldSpec {
  std::string name;
  FieldType type = FieldType::kF64;
  std::string unit;

  bool operator==(const FieldSpec&) const = default;
};

using Schema = std::vector<FieldSpec>;

/// One typed value. The alternative must match the FieldSpec type.
using Cell = std::variant<double, int64_t, std::string, bool>;
using Row = std::vector<Cell>;
using RowSet = std::vector<Row>;

bool cell_matches(const Cell& cell, FieldType type) noexcept;
Json cell_to_json(const Cell& cell);

/// Opaque payload (for example an image frame) carried as base64 on the wire.
struct Blob {
  std::string media_type;
  std::vector<uint8_t> data;

  bool operator==(const Blob&) const = default;
};

enum class ContentType { kRows, kBlob };

/// The canonical wire unit: one device's timestamped, schema-described batch.
struct Envelope {
  int version = kEnvelopeVersion;
  std::string experiment_id;
  std::string device_id;
  uint64_t seq = 0;
  int64_t ts_us = 0;
  Schema schema;
  std::variant<RowSet, Blob> payload;

  ContentType content_type() const noexcept {
    return payload.index() == 0 ? ContentType::kRows : ContentType::kBlob;
  }
  const RowSet& rows() const { return std::get<RowSet>(payload); }
  const Blob& blob() const { return std::get<Blob>(payload); }

  bool operator==(const Envelope&) const = default;
};

/// Throws Error(kInvalidEnvelope) describing the first violated invariant.
void validate(const Envelope& e);

/// Canonical UTF-8 JSON, fixed key order, no insignificant whitespace.
std::string encode(const Envelope& e);

/// Accepts any key order and whitespace. Throws kParseError on malformed
/// JSON and kInvalidEnvelope on well-formed but invalid documents.
Envelope decode(std::string_view bytes);

OrderedJson to_json(const Envelope& e);
Envelope envelope_from_json(const Json& j);

OrderedJson schema_to_json(const Schema& schema);

/// Steering command addressed to a device's control topic.
using ParamValue = std::variant<double, std::string, bool>;

struct ControlMessage {
  int version = kEnvelopeVersion;
  std::string experiment_id;
  std::string device_id;
  uint64_t seq = 0;
  int64_t ts_us = 0;
  std::string command_name;
  std::map<std::string, ParamValue> params;

  bool operator==(const ControlMessage&) const = default;
};

void validate(const ControlMessage& m);
std::string encode(const ControlMessage& m);
ControlMessage decode_control(std::string_view bytes);

/// Parses the {"command_name":..,"params":{..}} body posted by operators.
std::pair<std::string, std::map<std::string, ParamValue>> parse_command_body(const Json& body);

}  // namespace mdml
