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

#include "mdml/envelope.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "mdml/base64.hpp"
#include "mdml/error.hpp"

namespace mdml {
namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::kInvalidEnvelope, what);
}

bool name_char(char c, bool allow_underscore) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' ||
         (allow_underscore && c == '_');
}

bool check_chars(std::string_view s, bool allow_underscore) {
  if (s.empty() || s.size() > 64) return false;
  for (char c : s) {
    if (!name_char(c, allow_underscore)) return false;
  }
  return true;
}

void require_keys(const Json& j, std::initializer_list<std::string_view> keys,
                  std::string_view what) {
  if (!j.is_object()) invalid(std::string(what) + " must be an object");
  for (auto k : keys) {
    if (!j.contains(std::string(k))) invalid(std::string(what) + " missing key '" + std::string(k) + "'");
  }
  if (j.size() != keys.size()) invalid(std::string(what) + " has unexpected keys");
}

int64_t json_int64(const Json& j, std::string_view what) {
  if (j.is_number_unsigned()) {
    const auto v = j.get<uint64_t>();
    if (v > static_cast<uint64_t>(std::numeric_limits<int64_t>::max())) {
      invalid(std::string(what) + " out of range");
    }
    return static_cast<int64_t>(v);
  }
  if (j.is_number_integer()) return j.get<int64_t>();
  invalid(std::string(what) + " must be an integer");
}

uint64_t json_uint64(const Json& j, std::string_view what) {
  if (j.is_number_unsigned()) return j.get<uint64_t>();
  if (j.is_number_integer() && j.get<int64_t>() >= 0) return static_cast<uint64_t>(j.get<int64_t>());
  invalid(std::string(what) + " must be a non-negative integer");
}

Cell cell_from_json(const Json& j, const FieldSpec& spec) {
  switch (spec.type) {
    case FieldType::kF64:
      if (!j.is_number()) invalid("field '" + spec.name + "' expects f64");
      return j.get<double>();
    case FieldType::kI64:
      if (!j.is_number_integer()) invalid("field '" + spec.name + "' expects i64");
      return json_int64(j, spec.name);
    case FieldType::kStr:
      if (!j.is_string()) invalid("field '" + spec.name + "' expects str");
      return j.get<std::string>();
    case FieldType::kBool:
      if (!j.is_boolean()) invalid("field '" + spec.name + "' expects bool");
      return j.get<bool>();
  }
  invalid("unknown field type");
}

ParamValue param_from_json(const Json& j, const std::string& key) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number()) {
    const double v = j.get<double>();
    if (!std::isfinite(v)) invalid("param '" + key + "' is not finite");
    return v;
  }
  if (j.is_string()) return j.get<std::string>();
  invalid("param '" + key + "' must be number, string or bool");
}

Json param_to_json(const ParamValue& v) {
  return std::visit([](const auto& x) { return Json(x); }, v);
}

Json parse_json(std::string_view bytes) {
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::kParseError, ex.what());
  }
}

std::string dump(const OrderedJson& j) {
  try {
    return j.dump();
  } catch (const OrderedJson::exception& ex) {
    // invalid UTF-8 in a string value
    invalid(ex.what());
  }
}

}  // namespace

bool is_valid_identifier(std::string_view s) noexcept { return check_chars(s, false); }

bool is_valid_name(std::string_view s) noexcept { return check_chars(s, true); }

void require_identifier(std::string_view s, std::string_view what) {
  if (!is_valid_identifier(s)) {
    throw Error(ErrorCode::kInvalidIdentifier,
                std::string(what) + " '" + std::string(s) + "' must match [a-z0-9-]{1,64}");
  }
}

std::string_view to_string(FieldType t) noexcept {
  switch (t) {
    case FieldType::kF64: return "f64";
    case FieldType::kI64: return "i64";
    case FieldType::kStr: return "str";
    case FieldType::kBool: return "bool";
  }
  return "?";
}

std::optional<FieldType> parse_field_type(std::string_view s) noexcept {
  if (s == "f64") return FieldType::kF64;
  if (s == "i64") return FieldType::kI64;
  if (s == "str") return FieldType::kStr;
  if (s == "bool") return FieldType::kBool;
  return std::nullopt;
}

bool cell_matches(const Cell& cell, FieldType type) noexcept {
  switch (type) {
    case FieldType::kF64: return std::holds_alternative<double>(cell);
    case FieldType::kI64: return std::holds_alternative<int64_t>(cell);
    case FieldType::kStr: return std::holds_alternative<std::string>(cell);
    case FieldType::kBool: return std::holds_alternative<bool>(cell);
  }
  return false;
}

Json cell_to_json(const Cell& cell) {
  return std::visit([](const auto& v) { return Json(v); }, cell);
}

void validate(const Envelope& e) {
  if (e.version != kEnvelopeVersion) invalid("unsupported version " + std::to_string(e.version));
  if (!is_valid_identifier(e.experiment_id)) invalid("bad experiment_id '" + e.experiment_id + "'");
  if (!is_valid_identifier(e.device_id)) invalid("bad device_id '" + e.device_id + "'");
  std::set<std::string_view> names;
  for (const auto& f : e.schema) {
    if (!is_valid_name(f.name)) invalid("bad field name '" + f.name + "'");
    if (!names.insert(f.name).second) invalid("duplicate field name '" + f.name + "'");
  }
  if (e.content_type() == ContentType::kRows) {
    size_t r = 0;
    for (const auto& row : e.rows()) {
      if (row.size() != e.schema.size()) {
        invalid("row " + std::to_string(r) + " has arity " + std::to_string(row.size()) +
                ", schema has " + std::to_string(e.schema.size()));
      }
      for (size_t c = 0; c < row.size(); ++c) {
        if (!cell_matches(row[c], e.schema[c].type)) {
          invalid("row " + std::to_string(r) + " field '" + e.schema[c].name + "' is not " +
                  std::string(to_string(e.schema[c].type)));
        }
        if (const auto* d = std::get_if<double>(&row[c]); d && !std::isfinite(*d)) {
          invalid("row " + std::to_string(r) + " field '" + e.schema[c].name + "' is not finite");
        }
      }
      ++r;
    }
  } else if (e.blob().media_type.empty()) {
    invalid("blob media_type is empty");
  }
}

OrderedJson schema_to_json(const Schema& schema) {
  OrderedJson out = OrderedJson::array();
  for (const auto& f : schema) {
    OrderedJson spec;
    spec["name"] = f.name;
    spec["type"] = to_string(f.type);
    spec["unit"] = f.unit;
    out.push_back(std::move(spec));
  }
  return out;
}

OrderedJson to_json(const Envelope& e) {
  OrderedJson j;
  j["version"] = e.version;
  j["experiment_id"] = e.experiment_id;
  j["device_id"] = e.device_id;
  j["seq"] = e.seq;
  j["ts_us"] = e.ts_us;
  j["content_type"] = e.content_type() == ContentType::kRows ? "rows" : "blob";
  j["schema"] = schema_to_json(e.schema);
  if (e.content_type() == ContentType::kRows) {
    OrderedJson rows = OrderedJson::array();
    for (const auto& row : e.rows()) {
      OrderedJson r = OrderedJson::array();
      for (const auto& cell : row) {
        std::visit([&r](const auto& v) { r.push_back(v); }, cell);
      }
      rows.push_back(std::move(r));
    }
    j["payload"] = std::move(rows);
  } else {
    OrderedJson blob;
    blob["media_type"] = e.blob().media_type;
    blob["data"] = base64_encode(e.blob().data);
    j["payload"] = std::move(blob);
  }
  return j;
}

std::string encode(const Envelope& e) {
  validate(e);
  return dump(to_json(e));
}

Envelope envelope_from_json(const Json& j) {
  require_keys(j, {"version", "experiment_id", "device_id", "seq", "ts_us", "content_type",
                   "schema", "payload"},
               "envelope");
  Envelope e;
  e.version = static_cast<int>(json_int64(j["version"], "version"));
  if (e.version != kEnvelopeVersion) invalid("unsupported version " + std::to_string(e.version));
  if (!j["experiment_id"].is_string() || !j["device_id"].is_string()) invalid("ids must be strings");
  e.experiment_id = j["experiment_id"].get<std::string>();
  e.device_id = j["device_id"].get<std::string>();
  e.seq = json_uint64(j["seq"], "seq");
  e.ts_us = json_int64(j["ts_us"], "ts_us");

  if (!j["schema"].is_array()) invalid("schema must be an array");
  for (const auto& f : j["schema"]) {
    require_keys(f, {"name", "type", "unit"}, "schema entry");
    if (!f["name"].is_string() || !f["type"].is_string() || !f["unit"].is_string()) {
      invalid("schema entry values must be strings");
    }
    auto type = parse_field_type(f["type"].get<std::string>());
    if (!type) invalid("unknown field type '" + f["type"].get<std::string>() + "'");
    e.schema.push_back(FieldSpec{f["name"].get<std::string>(), *type, f["unit"].get<std::string>()});
  }

  const auto& ct = j["content_type"];
  if (ct == "rows") {
    if (!j["payload"].is_array()) invalid("rows payload must be an array");
    RowSet rows;
    for (const auto& r : j["payload"]) {
      if (!r.is_array()) invalid("row must be an array");
      if (r.size() != e.schema.size()) invalid("row arity does not match schema");
      Row row;
      row.reserve(r.size());
      for (size_t c = 0; c < r.size(); ++c) row.push_back(cell_from_json(r[c], e.schema[c]));
      rows.push_back(std::move(row));
    }
    e.payload = std::move(rows);
  } else if (ct == "blob") {
    const auto& p = j["payload"];
    require_keys(p, {"media_type", "data"}, "blob payload");
    if (!p["media_type"].is_string() || !p["data"].is_string()) invalid("blob fields must be strings");
    auto data = base64_decode(p["data"].get<std::string>());
    if (!data) invalid("blob data is not canonical base64");
    e.payload = Blob{p["media_type"].get<std::string>(), std::move(*data)};
  } else {
    invalid("content_type must be 'rows' or 'blob'");
  }
  validate(e);
  return e;
}

Envelope decode(std::string_view bytes) { return envelope_from_json(parse_json(bytes)); }

void validate(const ControlMessage& m) {
  if (m.version != kEnvelopeVersion) invalid("unsupported version " + std::to_string(m.version));
  if (!is_valid_identifier(m.experiment_id)) invalid("bad experiment_id '" + m.experiment_id + "'");
  if (!is_valid_identifier(m.device_id)) invalid("bad device_id '" + m.device_id + "'");
  if (!is_valid_name(m.command_name)) invalid("bad command_name '" + m.command_name + "'");
  for (const auto& [k, v] : m.params) {
    if (!is_valid_name(k)) invalid("bad param name '" + k + "'");
    if (const auto* d = std::get_if<double>(&v); d && !std::isfinite(*d)) {
      invalid("param '" + k + "' is not finite");
    }
  }
}

std::string encode(const ControlMessage& m) {
  validate(m);
  OrderedJson j;
  j["version"] = m.version;
  j["experiment_id"] = m.experiment_id;
  j["device_id"] = m.device_id;
  j["seq"] = m.seq;
  j["ts_us"] = m.ts_us;
  j["command_name"] = m.command_name;
  OrderedJson params = OrderedJson::object();
  for (const auto& [k, v] : m.params) params[k] = param_to_json(v);
  j["params"] = std::move(params);
  return dump(j);
}

ControlMessage decode_control(std::string_view bytes) {
  const Json j = parse_json(bytes);
  require_keys(j, {"version", "experiment_id", "device_id", "seq", "ts_us", "command_name", "params"},
               "control message");
  ControlMessage m;
  m.version = static_cast<int>(json_int64(j["version"], "version"));
  if (!j["experiment_id"].is_string() || !j["device_id"].is_string() ||
      !j["command_name"].is_string()) {
    invalid("ids must be strings");
  }
  m.experiment_id = j["experiment_id"].get<std::string>();
  m.device_id = j["device_id"].get<std::string>();
  m.seq = json_uint64(j["seq"], "seq");
  m.ts_us = json_int64(j["ts_us"], "ts_us");
  m.command_name = j["command_name"].get<std::string>();
  if (!j["params"].is_object()) invalid("params must be an object");
  for (const auto& [k, v] : j["params"].items()) m.params[k] = param_from_json(v, k);
  validate(m);
  return m;
}

std::pair<std::string, std::map<std::string, ParamValue>> parse_command_body(const Json& body) {
  if (!body.is_object() || !body.contains("command_name") || !body["command_name"].is_string()) {
    invalid("body needs a string command_name");
  }
  for (const auto& [k, v] : body.items()) {
    if (k != "command_name" && k != "params") invalid("unexpected key '" + k + "'");
  }
  std::pair<std::string, std::map<std::string, ParamValue>> out;
  out.first = body["command_name"].get<std::string>();
  if (!is_valid_name(out.first)) invalid("bad command_name '" + out.first + "'");
  if (body.contains("params")) {
    if (!body["params"].is_object()) invalid("params must be an object");
    for (const auto& [k, v] : body["params"].items()) {
      if (!is_valid_name(k)) invalid("bad param name '" + k + "'");
      out.second[k] = param_from_json(v, k);
    }
  }
  return out;
}

}  // namespace mdml
