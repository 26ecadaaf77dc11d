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

#include "mdml/fusion.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "mdml/error.hpp"

namespace mdml {
namespace {

constexpr int64_t kInfinity = std::numeric_limits<int64_t>::max();

[[noreturn]] void bad_rule(const std::string& what) { throw Error(ErrorCode::kInvalidRule, what); }

int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

bool numeric(FieldType t) { return t == FieldType::kF64 || t == FieldType::kI64; }

double as_double(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return *d;
  return static_cast<double>(std::get<int64_t>(c));
}

bool less_than(const Cell& a, const Cell& b) {
  if (const auto* ia = std::get_if<int64_t>(&a)) return *ia < std::get<int64_t>(b);
  return std::get<double>(a) < std::get<double>(b);
}

int64_t get_int(const Json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer()) bad_rule(std::string(key) + " must be an integer");
  return j[key].get<int64_t>();
}

}  // namespace

std::string_view to_string(RuleKind kind) noexcept {
  switch (kind) {
    case RuleKind::kTumbling: return "tumbling";
    case RuleKind::kCount: return "count";
    case RuleKind::kTrigger: return "trigger";
  }
  return "?";
}

std::string_view to_string(IngestResult r) noexcept {
  switch (r) {
    case IngestResult::kAccepted: return "accepted";
    case IngestResult::kDuplicate: return "duplicate";
    case IngestResult::kLate: return "late";
  }
  return "?";
}

void BatchingRule::validate() const {
  if (devices.empty()) bad_rule("devices must not be empty");
  std::set<std::string_view> seen;
  for (const auto& d : devices) {
    if (!is_valid_identifier(d)) bad_rule("bad device id '" + d + "'");
    if (!seen.insert(d).second) bad_rule("duplicate device '" + d + "'");
  }
  if (max_lateness_ms < 0) bad_rule("max_lateness_ms must be >= 0");
  switch (kind) {
    case RuleKind::kTumbling:
      if (width_ms <= 0) bad_rule("width_ms must be > 0");
      break;
    case RuleKind::kCount:
      if (n == 0) bad_rule("n must be > 0");
      if (devices.size() != 1) {
        throw Error(ErrorCode::kMultiDeviceUnsupported, "count rules take exactly one device");
      }
      break;
    case RuleKind::kTrigger:
      if (!seen.contains(trigger_device)) {
        throw Error(ErrorCode::kUnknownDevice, "trigger device '" + trigger_device + "' is not in devices");
      }
      for (const auto& [dev, ms] : staleness_ms) {
        if (!seen.contains(dev)) {
          throw Error(ErrorCode::kUnknownDevice, "staleness for unknown device '" + dev + "'");
        }
        if (ms < 0) bad_rule("staleness_ms must be >= 0");
      }
      break;
  }
}

BatchingRule BatchingRule::from_json(const Json& j) {
  if (!j.is_object()) bad_rule("rule must be an object");
  BatchingRule r;
  const std::string kind = j.value("kind", "");
  if (kind == "tumbling") {
    r.kind = RuleKind::kTumbling;
    r.width_ms = get_int(j, "width_ms");
  } else if (kind == "count") {
    r.kind = RuleKind::kCount;
    const int64_t n = get_int(j, "n");
    if (n <= 0) bad_rule("n must be > 0");
    r.n = static_cast<uint64_t>(n);
  } else if (kind == "trigger") {
    r.kind = RuleKind::kTrigger;
    if (!j.contains("trigger_device") || !j["trigger_device"].is_string()) {
      bad_rule("trigger_device must be a string");
    }
    r.trigger_device = j["trigger_device"].get<std::string>();
    if (j.contains("staleness_ms")) {
      if (!j["staleness_ms"].is_object()) bad_rule("staleness_ms must be an object");
      for (const auto& [dev, v] : j["staleness_ms"].items()) {
        if (v.is_null()) continue;  // unbounded
        if (!v.is_number_integer()) bad_rule("staleness_ms values must be integers or null");
        r.staleness_ms[dev] = v.get<int64_t>();
      }
    }
  } else {
    bad_rule("kind must be tumbling, count or trigger");
  }
  if (!j.contains("devices") || !j["devices"].is_array()) bad_rule("devices must be an array");
  for (const auto& d : j["devices"]) {
    if (!d.is_string()) bad_rule("devices must be strings");
    r.devices.push_back(d.get<std::string>());
  }
  if (j.contains("max_lateness_ms")) r.max_lateness_ms = get_int(j, "max_lateness_ms");
  r.validate();
  return r;
}

OrderedJson BatchingRule::to_json() const {
  OrderedJson j;
  j["kind"] = to_string(kind);
  j["devices"] = devices;
  switch (kind) {
    case RuleKind::kTumbling: j["width_ms"] = width_ms; break;
    case RuleKind::kCount: j["n"] = n; break;
    case RuleKind::kTrigger: {
      j["trigger_device"] = trigger_device;
      OrderedJson s = OrderedJson::object();
      for (const auto& [d, ms] : staleness_ms) s[d] = ms;
      j["staleness_ms"] = std::move(s);
      break;
    }
  }
  j["max_lateness_ms"] = max_lateness_ms;
  return j;
}

const DeviceCell* FusedRecord::cell(std::string_view device) const {
  for (const auto& c : cells) {
    if (c.device_id == device) return &c;
  }
  return nullptr;
}

OrderedJson FusedRecord::to_json() const {
  OrderedJson j;
  j["ts_us"] = ts_us;
  OrderedJson devs = OrderedJson::object();
  for (const auto& c : cells) {
    OrderedJson d;
    d["present"] = c.present;
    if (c.age_us) d["age_us"] = *c.age_us;
    OrderedJson values = OrderedJson::object();
    for (const auto& [name, v] : c.values) {
      if (const auto* cell = std::get_if<Cell>(&v)) {
        values[name] = cell_to_json(*cell);
      } else {
        const auto& a = std::get<Aggregate>(v);
        OrderedJson agg;
        agg["count"] = a.count;
        agg["last"] = cell_to_json(a.last);
        if (a.mean) agg["mean"] = *a.mean;
        if (a.min) agg["min"] = cell_to_json(*a.min);
        if (a.max) agg["max"] = cell_to_json(*a.max);
        values[name] = std::move(agg);
      }
    }
    d["values"] = std::move(values);
    devs[c.device_id] = std::move(d);
  }
  j["devices"] = std::move(devs);
  return j;
}

Aggregate aggregate_values(FieldType type, const std::vector<const Cell*>& values) {
  Aggregate a;
  if (values.empty()) return a;
  a.count = static_cast<int64_t>(values.size());
  a.last = *values.back();
  if (!numeric(type)) return a;
  double sum = 0.0;
  const Cell* lo = values.front();
  const Cell* hi = values.front();
  for (const Cell* v : values) {
    sum += as_double(*v);
    if (less_than(*v, *lo)) lo = v;
    if (less_than(*hi, *v)) hi = v;
  }
  a.mean = sum / static_cast<double>(values.size());
  a.min = *lo;
  a.max = *hi;
  return a;
}

FusionEngine::FusionEngine(BatchingRule rule) : rule_(std::move(rule)) {
  rule_.validate();
  streams_.resize(rule_.devices.size());
  for (size_t i = 0; i < rule_.devices.size(); ++i) index_.emplace(rule_.devices[i], i);
}

bool FusionEngine::accepts_device(std::string_view device) const { return index_.contains(device); }

IngestResult FusionEngine::ingest(const Envelope& e) {
  const auto it = index_.find(e.device_id);
  if (it == index_.end()) {
    throw Error(ErrorCode::kUnknownDevice, "device '" + e.device_id + "' is not part of this rule");
  }
  if (e.content_type() != ContentType::kRows) {
    throw Error(ErrorCode::kInvalidArgument, "fusion ingests rows envelopes only");
  }
  DeviceStream& s = streams_[it->second];
  if (!s.schema) {
    s.schema = e.schema;
  } else if (*s.schema != e.schema) {
    throw Error(ErrorCode::kSchemaMismatch, "schema for '" + e.device_id + "' differs from first seen");
  }
  if (s.seen_seq.contains(e.seq)) {
    ++stats_.duplicates;
    return IngestResult::kDuplicate;
  }
  if (watermark_ && e.ts_us <= *watermark_) {
    ++stats_.late;
    return IngestResult::kLate;
  }

  const auto& rows = e.rows();
  for (uint32_t r = 0; r < rows.size(); ++r) {
    Event ev{e.ts_us, e.seq, r, rows[r]};
    auto pos = std::upper_bound(s.pending.begin(), s.pending.end(), ev, [](const Event& a, const Event& b) {
      return std::tie(a.ts_us, a.seq, a.row) < std::tie(b.ts_us, b.seq, b.row);
    });
    s.pending.insert(pos, std::move(ev));
  }
  s.seen_seq.emplace(e.seq, e.ts_us);
  ++stats_.accepted;

  max_ts_ = max_ts_ ? std::max(*max_ts_, e.ts_us) : e.ts_us;
  const int64_t wm = *max_ts_ - rule_.max_lateness_ms * 1000;
  if (!watermark_ || wm > *watermark_) advance(wm);
  return IngestResult::kAccepted;
}

std::vector<FusedRecord> FusionEngine::take() {
  std::vector<FusedRecord> out;
  out.swap(ready_);
  return out;
}

std::vector<FusedRecord> FusionEngine::drain() {
  advance(kInfinity);
  return take();
}

void FusionEngine::advance(int64_t watermark) {
  watermark_ = watermark;
  const size_t before = ready_.size();
  switch (rule_.kind) {
    case RuleKind::kTrigger: emit_trigger(watermark); break;
    case RuleKind::kTumbling: emit_tumbling(watermark); break;
    case RuleKind::kCount: emit_count(watermark); break;
  }
  stats_.emitted += ready_.size() - before;
  prune(watermark);
}

void FusionEngine::prune(int64_t watermark) {
  // A re-delivered seq at or below the watermark is rejected as late anyway.
  for (auto& s : streams_) {
    std::erase_if(s.seen_seq, [&](const auto& kv) { return kv.second <= watermark; });
  }
}

void FusionEngine::emit_trigger(int64_t watermark) {
  const size_t trigger = index_.at(rule_.trigger_device);
  auto& trig = streams_[trigger];
  while (!trig.pending.empty() && trig.pending.front().ts_us <= watermark) {
    Event ev = std::move(trig.pending.front());
    trig.pending.pop_front();
    const int64_t t = ev.ts_us;

    FusedRecord rec;
    rec.ts_us = t;
    rec.cells.reserve(streams_.size());
    for (size_t i = 0; i < streams_.size(); ++i) {
      DeviceCell cell;
      cell.device_id = rule_.devices[i];
      const Event* src = nullptr;
      if (i == trigger) {
        src = &ev;
      } else {
        auto& other = streams_[i];
        while (!other.pending.empty() && other.pending.front().ts_us <= t) {
          other.latest_final = std::move(other.pending.front());
          other.pending.pop_front();
        }
        if (other.latest_final) {
          const auto bound = rule_.staleness_ms.find(cell.device_id);
          const int64_t age = t - other.latest_final->ts_us;
          if (bound == rule_.staleness_ms.end() || age <= bound->second * 1000) src = &*other.latest_final;
        }
      }
      if (src != nullptr) {
        const Schema& schema = *streams_[i].schema;
        cell.present = true;
        cell.age_us = t - src->ts_us;
        for (size_t f = 0; f < schema.size(); ++f) cell.values.emplace_back(schema[f].name, src->values[f]);
      }
      rec.cells.push_back(std::move(cell));
    }
    ready_.push_back(std::move(rec));
  }
  // Pending triggers are all above the watermark, so older rows of the other
  // devices can only ever be needed as "latest".
  for (size_t i = 0; i < streams_.size(); ++i) {
    if (i == trigger) continue;
    auto& other = streams_[i];
    while (!other.pending.empty() && other.pending.front().ts_us <= watermark) {
      other.latest_final = std::move(other.pending.front());
      other.pending.pop_front();
    }
  }
}

DeviceCell FusionEngine::aggregate_cell(size_t device_index, const std::vector<const Event*>& events,
                                        int64_t record_ts) const {
  DeviceCell cell;
  cell.device_id = rule_.devices[device_index];
  if (events.empty()) return cell;
  const Schema& schema = *streams_[device_index].schema;
  cell.present = true;
  cell.age_us = record_ts - events.back()->ts_us;
  std::vector<const Cell*> column;
  column.reserve(events.size());
  for (size_t f = 0; f < schema.size(); ++f) {
    column.clear();
    for (const Event* e : events) column.push_back(&e->values[f]);
    cell.values.emplace_back(schema[f].name, aggregate_values(schema[f].type, column));
  }
  return cell;
}

void FusionEngine::emit_tumbling(int64_t watermark) {
  const int64_t width = rule_.width_ms * 1000;
  while (true) {
    std::optional<int64_t> window;
    for (const auto& s : streams_) {
      if (s.pending.empty()) continue;
      const int64_t k = floor_div(s.pending.front().ts_us, width);
      if (!window || k < *window) window = k;
    }
    if (!window) return;
    const int64_t end = (*window + 1) * width;
    if (end > watermark) return;

    FusedRecord rec;
    rec.ts_us = end;
    std::vector<std::deque<Event>> taken(streams_.size());
    for (size_t i = 0; i < streams_.size(); ++i) {
      auto& p = streams_[i].pending;
      while (!p.empty() && p.front().ts_us < end) {
        taken[i].push_back(std::move(p.front()));
        p.pop_front();
      }
      std::vector<const Event*> events;
      for (const auto& e : taken[i]) events.push_back(&e);
      rec.cells.push_back(aggregate_cell(i, events, end));
    }
    ready_.push_back(std::move(rec));
  }
}

void FusionEngine::emit_count(int64_t watermark) {
  auto& p = streams_[0].pending;
  const size_t n = rule_.n;
  while (p.size() >= n && p[n - 1].ts_us <= watermark) {
    std::vector<Event> batch;
    batch.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      batch.push_back(std::move(p.front()));
      p.pop_front();
    }
    std::vector<const Event*> events;
    for (const auto& e : batch) events.push_back(&e);
    FusedRecord rec;
    rec.ts_us = batch.back().ts_us;
    rec.cells.push_back(aggregate_cell(0, events, rec.ts_us));
    ready_.push_back(std::move(rec));
  }
}

}  // namespace mdml
