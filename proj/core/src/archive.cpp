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

#include "mdml/archive.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>
#include <sys/file.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <queue>
#include <sstream>

#include "mdml/error.hpp"
#include "mdml/topic.hpp"

namespace mdml {

namespace fs = std::filesystem;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error(ErrorCode::kIoError, "sha256 init failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view data) { EVP_DigestUpdate(ctx_, data.data(), data.size()); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  Sha256 h;
  std::string buf(1 << 16, '\0');
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(std::string_view(buf.data(), static_cast<size_t>(in.gcount())));
  }
  return h.hex();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view data) {
  fs::path tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
  size_t off = 0;
  while (off < data.size()) {
    ssize_t w = ::write(fd, data.data() + off, data.size() - off);
    if (w < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw Error(ErrorCode::kIoError, "write failed: " + tmp.string());
    }
    off += static_cast<size_t>(w);
  }
  ::fsync(fd);
  ::close(fd);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "rename failed: " + ec.message());
}

std::string segment_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.jsonl.gz", index);
  return buf;
}

fs::path segment_rel(std::string_view device, int index) {
  return fs::path("segments") / std::string(device) / segment_name(index);
}

// Exclusive non-blocking flock on dir/LOCK. Returns the fd or throws ArchiveBusy.
int lock_dir(const fs::path& dir) {
  fs::path lock = dir / "LOCK";
  int fd = ::open(lock.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIoError, "cannot open " + lock.string());
  if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd);
    throw Error(ErrorCode::kArchiveBusy, dir.string() + " is held by a writer");
  }
  return fd;
}

struct DirLock {
  explicit DirLock(const fs::path& dir) {
    if (fs::exists(dir / "LOCK")) fd = lock_dir(dir);
  }
  ~DirLock() {
    if (fd >= 0) ::close(fd);
  }
  int fd = -1;
};

// Reads a gzip file line by line.
class GzLineReader {
 public:
  explicit GzLineReader(const fs::path& path) : gz_(gzopen(path.c_str(), "rb")) {
    if (!gz_) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
    gzbuffer(gz_, 1 << 16);
  }
  ~GzLineReader() {
    if (gz_) gzclose(gz_);
  }
  GzLineReader(const GzLineReader&) = delete;
  GzLineReader& operator=(const GzLineReader&) = delete;

  /// Next line without its newline; nullopt at EOF. `raw` gets the exact
  /// bytes consumed including the newline. Throws kIoError on gzip errors.
  std::optional<std::string> next(std::string* raw = nullptr) {
    std::string line;
    for (;;) {
      if (pos_ == len_) {
        int n = gzread(gz_, buf_, sizeof buf_);
        if (n < 0) {
          int errnum = 0;
          const char* msg = gzerror(gz_, &errnum);
          throw Error(ErrorCode::kIoError, std::string("gzip: ") + (msg ? msg : "read error"));
        }
        if (n == 0) {
          if (!gzeof(gz_)) throw Error(ErrorCode::kIoError, "gzip: unexpected end");
          if (line.empty()) return std::nullopt;
          if (raw) *raw = line;
          partial_ = true;
          return line;
        }
        pos_ = 0;
        len_ = static_cast<size_t>(n);
      }
      const char* start = buf_ + pos_;
      const void* nl = std::memchr(start, '\n', len_ - pos_);
      if (nl) {
        size_t take = static_cast<const char*>(nl) - start;
        line.append(start, take);
        pos_ += take + 1;
        if (raw) *raw = line + "\n";
        return line;
      }
      line.append(start, len_ - pos_);
      pos_ = len_;
    }
  }

  bool partial_last_line() const { return partial_; }

 private:
  gzFile gz_;
  char buf_[1 << 16];
  size_t pos_ = 0;
  size_t len_ = 0;
  bool partial_ = false;
};

int64_t json_i64(const Json& j, const char* key) { return j.at(key).get<int64_t>(); }

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

OrderedJson Manifest::to_json() const {
  OrderedJson j;
  j["format_version"] = format_version;
  j["experiment_id"] = experiment_id;
  j["created_us"] = created_us;
  j["closed_us"] = closed_us ? OrderedJson(*closed_us) : OrderedJson(nullptr);
  OrderedJson devs = OrderedJson::array();
  for (const auto& d : devices) {
    OrderedJson dj;
    dj["device_id"] = d.device_id;
    dj["schema"] = schema_to_json(d.schema);
    dj["count"] = d.count;
    dj["first_ts_us"] = d.first_ts_us ? OrderedJson(*d.first_ts_us) : OrderedJson(nullptr);
    dj["last_ts_us"] = d.last_ts_us ? OrderedJson(*d.last_ts_us) : OrderedJson(nullptr);
    OrderedJson segs = OrderedJson::array();
    for (const auto& s : d.segments) {
      OrderedJson sj;
      sj["index"] = s.index;
      sj["file"] = s.file;
      sj["count"] = s.count;
      sj["first_ts_us"] = s.first_ts_us;
      sj["last_ts_us"] = s.last_ts_us;
      sj["uncompressed_bytes"] = s.uncompressed_bytes;
      sj["sha256"] = s.sha256;
      sj["compressed_sha256"] = s.compressed_sha256;
      segs.push_back(std::move(sj));
    }
    dj["segments"] = std::move(segs);
    devs.push_back(std::move(dj));
  }
  j["devices"] = std::move(devs);
  return j;
}

Manifest Manifest::from_json(const Json& j) {
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kArchiveFormatVersion) {
      throw Error(ErrorCode::kCorruptSegment,
                  "unsupported format_version " + std::to_string(m.format_version));
    }
    m.experiment_id = j.at("experiment_id").get<std::string>();
    require_identifier(m.experiment_id, "experiment_id");
    m.created_us = json_i64(j, "created_us");
    if (!j.at("closed_us").is_null()) m.closed_us = json_i64(j, "closed_us");
    for (const auto& dj : j.at("devices")) {
      DeviceManifest d;
      d.device_id = dj.at("device_id").get<std::string>();
      require_identifier(d.device_id, "device_id");
      // Reuse the envelope schema parser through a minimal envelope.
      Json probe = {{"version", kEnvelopeVersion}, {"experiment_id", m.experiment_id},
                    {"device_id", d.device_id}, {"seq", 0}, {"ts_us", 0},
                    {"content_type", "rows"}, {"schema", dj.at("schema")}, {"payload", Json::array()}};
      d.schema = envelope_from_json(probe).schema;
      d.count = dj.at("count").get<uint64_t>();
      if (!dj.at("first_ts_us").is_null()) d.first_ts_us = json_i64(dj, "first_ts_us");
      if (!dj.at("last_ts_us").is_null()) d.last_ts_us = json_i64(dj, "last_ts_us");
      for (const auto& sj : dj.at("segments")) {
        SegmentInfo s;
        s.index = sj.at("index").get<int>();
        s.file = sj.at("file").get<std::string>();
        s.count = sj.at("count").get<uint64_t>();
        s.first_ts_us = json_i64(sj, "first_ts_us");
        s.last_ts_us = json_i64(sj, "last_ts_us");
        s.uncompressed_bytes = sj.at("uncompressed_bytes").get<uint64_t>();
        s.sha256 = sj.at("sha256").get<std::string>();
        s.compressed_sha256 = sj.at("compressed_sha256").get<std::string>();
        d.segments.push_back(std::move(s));
      }
      m.devices.push_back(std::move(d));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kCorruptSegment, std::string("manifest: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorruptSegment) throw;
    throw Error(ErrorCode::kCorruptSegment, std::string("manifest: ") + e.what());
  }
  return m;
}

Manifest Manifest::load(const fs::path& dir) {
  fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw Error(ErrorCode::kManifestMissing, path.string());
  std::string bytes = read_file(path);
  fs::path sum_path = dir / "manifest.sha256";
  if (!fs::exists(sum_path)) throw Error(ErrorCode::kCorruptSegment, "manifest: checksum file missing");
  std::string expected = read_file(sum_path);
  while (!expected.empty() && expected.back() == '\n') expected.pop_back();
  Sha256 h;
  h.update(bytes);
  if (h.hex() != expected) throw Error(ErrorCode::kCorruptSegment, "manifest: checksum mismatch");
  Json j;
  try {
    j = Json::parse(bytes);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kCorruptSegment, std::string("manifest: ") + e.what());
  }
  return from_json(j);
}

const DeviceManifest* Manifest::device(std::string_view id) const {
  for (const auto& d : devices) {
    if (d.device_id == id) return &d;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Writer

struct ArchiveWriter::OpenSegment {
  gzFile gz = nullptr;
  fs::path path;
  SegmentInfo info;
  Sha256 sha;
  int64_t opened_us = 0;
};

ArchiveWriter::ArchiveWriter(const fs::path& root, std::string experiment_id, ArchiveOptions options,
                             Clock& clock)
    : options_(options), clock_(clock) {
  require_identifier(experiment_id, "experiment_id");
  if (options_.compression_level < 0 || options_.compression_level > 9) {
    throw Error(ErrorCode::kInvalidArgument, "compression level must be 0..9");
  }
  if (options_.rotate_bytes == 0 || options_.rotate_age_us <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "rotation thresholds must be positive");
  }
  dir_ = root / experiment_id;
  std::error_code ec;
  fs::create_directories(dir_ / "segments", ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir_.string() + ": " + ec.message());
  lock_fd_ = lock_dir(dir_);
  if (fs::exists(dir_ / "manifest.json")) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw Error(ErrorCode::kIoError, dir_.string() + " already holds an archive");
  }
  manifest_.experiment_id = std::move(experiment_id);
  manifest_.created_us = clock_.now_us();
  write_manifest();
}

ArchiveWriter::~ArchiveWriter() {
  try {
    close();
  } catch (const std::exception& e) {
    spdlog::error("archive close failed: {}", e.what());
  }
}

void ArchiveWriter::append(const Envelope& e) {
  std::string line = encode(e);
  line.push_back('\n');

  std::lock_guard lock(mu_);
  if (closed_) throw Error(ErrorCode::kClosedWriter, dir_.string());
  if (e.experiment_id != manifest_.experiment_id) {
    throw Error(ErrorCode::kInvalidArgument,
                "envelope for experiment '" + e.experiment_id + "' in archive '" +
                    manifest_.experiment_id + "'");
  }
  auto [it, inserted] = device_index_.try_emplace(e.device_id, manifest_.devices.size());
  size_t di = it->second;
  if (inserted) {
    DeviceManifest d;
    d.device_id = e.device_id;
    d.schema = e.schema;
    manifest_.devices.push_back(std::move(d));
    open_.push_back(nullptr);
    std::error_code ec;
    fs::create_directories(dir_ / "segments" / e.device_id, ec);
    if (ec) throw Error(ErrorCode::kIoError, ec.message());
  }
  DeviceManifest& dev = manifest_.devices[di];
  const int64_t now = clock_.now_us();

  if (open_[di] && now - open_[di]->opened_us >= options_.rotate_age_us) seal(di);
  if (!open_[di]) {
    auto seg = std::make_unique<OpenSegment>();
    seg->info.index = static_cast<int>(dev.segments.size());
    seg->info.file = segment_rel(e.device_id, seg->info.index).string();
    seg->path = dir_ / seg->info.file;
    std::string mode = "wb" + std::to_string(options_.compression_level);
    seg->gz = gzopen(seg->path.c_str(), mode.c_str());
    if (!seg->gz) throw Error(ErrorCode::kIoError, "cannot create " + seg->path.string());
    seg->opened_us = now;
    seg->info.first_ts_us = e.ts_us;
    open_[di] = std::move(seg);
  }

  OpenSegment& seg = *open_[di];
  int written = gzwrite(seg.gz, line.data(), static_cast<unsigned>(line.size()));
  if (written != static_cast<int>(line.size())) {
    throw Error(ErrorCode::kIoError, "gzip write failed: " + seg.path.string());
  }
  seg.sha.update(line);
  seg.info.count += 1;
  seg.info.last_ts_us = e.ts_us;
  seg.info.uncompressed_bytes += line.size();
  dev.count += 1;
  if (!dev.first_ts_us) dev.first_ts_us = e.ts_us;
  dev.last_ts_us = e.ts_us;

  if (seg.info.uncompressed_bytes >= options_.rotate_bytes) seal(di);
}

void ArchiveWriter::seal(size_t di) {
  auto seg = std::move(open_[di]);
  if (!seg) return;
  if (gzclose(seg->gz) != Z_OK) throw Error(ErrorCode::kIoError, "gzip close failed: " + seg->path.string());
  seg->info.sha256 = seg->sha.hex();
  seg->info.compressed_sha256 = sha256_file(seg->path);
  manifest_.devices[di].segments.push_back(seg->info);
  write_manifest();
}

void ArchiveWriter::write_manifest() {
  std::string bytes = manifest_.to_json().dump(2);
  bytes.push_back('\n');
  Sha256 h;
  h.update(bytes);
  // Checksum first: a crash between the two renames leaves a mismatch that
  // verify reports rather than a silently unchecked manifest.
  write_file_atomic(dir_ / "manifest.sha256", h.hex() + "\n");
  write_file_atomic(dir_ / "manifest.json", bytes);
}

void ArchiveWriter::close() {
  std::lock_guard lock(mu_);
  if (closed_) return;
  closed_ = true;
  for (size_t i = 0; i < open_.size(); ++i) seal(i);
  manifest_.closed_us = clock_.now_us();
  write_manifest();
  if (lock_fd_ >= 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
  }
}

Manifest ArchiveWriter::manifest() const {
  std::lock_guard lock(mu_);
  return manifest_;
}

// ---------------------------------------------------------------------------
// Readers

OrderedJson VerifyReport::to_json() const {
  OrderedJson j;
  j["dir"] = dir.string();
  j["clean"] = clean();
  j["closed"] = closed;
  OrderedJson issues_j = OrderedJson::array();
  for (const auto& i : issues) {
    issues_j.push_back({{"device_id", i.device_id}, {"index", i.index}, {"reason", i.reason}});
  }
  j["issues"] = std::move(issues_j);
  j["unsealed"] = unsealed;
  return j;
}

fs::path resolve_archive_dir(const fs::path& dir) {
  if (fs::exists(dir / "manifest.json")) return dir;
  std::optional<fs::path> found;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) {
      if (found) throw Error(ErrorCode::kManifestMissing, dir.string() + " holds several archives");
      found = entry.path();
    }
  }
  if (!found) throw Error(ErrorCode::kManifestMissing, (dir / "manifest.json").string());
  return *found;
}

namespace {

// Checks one segment. Returns an empty string if it is intact.
std::string check_segment(const fs::path& dir, const DeviceManifest& dev, const SegmentInfo& seg,
                          const Schema& schema) {
  fs::path path = dir / seg.file;
  if (seg.file != segment_rel(dev.device_id, seg.index).string()) return "unexpected file name";
  if (!fs::exists(path)) return "missing";
  if (sha256_file(path) != seg.compressed_sha256) return "compressed checksum mismatch";
  try {
    GzLineReader reader(path);
    Sha256 h;
    uint64_t count = 0, bytes = 0;
    std::optional<int64_t> first, last;
    std::string raw;
    while (auto line = reader.next(&raw)) {
      h.update(raw);
      bytes += raw.size();
      ++count;
      Envelope e = decode(*line);
      if (e.device_id != dev.device_id) return "record from another device";
      if (count == 1 && seg.index == 0 && e.schema != schema) return "schema differs from manifest";
      if (!first) first = e.ts_us;
      last = e.ts_us;
    }
    if (reader.partial_last_line()) return "truncated record";
    if (h.hex() != seg.sha256) return "checksum mismatch";
    if (count != seg.count) return "count mismatch";
    if (bytes != seg.uncompressed_bytes) return "size mismatch";
    if (count > 0 && (first != seg.first_ts_us || last != seg.last_ts_us)) return "ts range mismatch";
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

VerifyReport verify_archive(const fs::path& dir_in) {
  fs::path dir = resolve_archive_dir(dir_in);
  DirLock lock(dir);
  VerifyReport report;
  report.dir = dir;
  Manifest m;
  try {
    m = Manifest::load(dir);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kCorruptSegment) throw;
    report.issues.push_back({"", -1, e.what()});
    return report;
  }
  report.closed = m.closed_us.has_value();
  if (m.experiment_id != dir.filename().string()) {
    report.issues.push_back({"", -1, "experiment_id does not match directory name"});
  }

  for (const auto& dev : m.devices) {
    uint64_t total = 0;
    for (size_t i = 0; i < dev.segments.size(); ++i) {
      const auto& seg = dev.segments[i];
      if (seg.index != static_cast<int>(i)) {
        report.issues.push_back({dev.device_id, seg.index, "segment index out of sequence"});
      }
      std::string reason = check_segment(dir, dev, seg, dev.schema);
      if (!reason.empty()) report.issues.push_back({dev.device_id, seg.index, reason});
      total += seg.count;
      if (i > 0 && seg.first_ts_us < dev.segments[i - 1].last_ts_us) {
        report.issues.push_back({dev.device_id, seg.index, "segment ts ranges overlap"});
      }
    }
    // Before close the manifest count also covers records still in open segments.
    if (report.closed && total != dev.count) {
      report.issues.push_back({dev.device_id, -1, "segment counts do not sum to device count"});
    }
  }

  // Files on disk that the manifest does not list: an unsealed tail.
  std::error_code ec;
  fs::path seg_root = dir / "segments";
  if (fs::exists(seg_root)) {
    for (const auto& entry : fs::recursive_directory_iterator(seg_root, ec)) {
      if (!entry.is_regular_file()) continue;
      std::string rel = fs::relative(entry.path(), dir).string();
      bool listed = false;
      for (const auto& dev : m.devices) {
        for (const auto& seg : dev.segments) listed = listed || seg.file == rel;
      }
      if (!listed) report.unsealed.push_back(rel);
    }
  }
  std::sort(report.unsealed.begin(), report.unsealed.end());
  return report;
}

uint64_t replay_archive(const fs::path& dir_in, const ReplayOptions& options,
                        const std::function<void(const Envelope&, const std::string&)>& sink) {
  VerifyReport report = verify_archive(dir_in);
  for (const auto& issue : report.issues) {
    if (issue.device_id.empty()) throw Error(ErrorCode::kCorruptSegment, issue.reason);
    throw CorruptSegmentError(issue.device_id, issue.index, issue.reason);
  }
  for (const auto& u : report.unsealed) spdlog::warn("replay: skipping unsealed segment {}", u);

  fs::path dir = report.dir;
  DirLock lock(dir);
  Manifest m = Manifest::load(dir);

  struct Cursor {
    const DeviceManifest* dev;
    size_t rank;
    size_t segment = 0;
    std::unique_ptr<GzLineReader> reader;
    std::optional<Envelope> head;
    std::string head_bytes;
  };
  std::vector<Cursor> cursors;
  for (size_t r = 0; r < m.devices.size(); ++r) cursors.push_back(Cursor{&m.devices[r], r, 0, nullptr, std::nullopt, {}});

  auto advance = [&](Cursor& c) {
    c.head.reset();
    for (;;) {
      if (!c.reader) {
        if (c.segment >= c.dev->segments.size()) return;
        c.reader = std::make_unique<GzLineReader>(dir / c.dev->segments[c.segment].file);
      }
      if (auto line = c.reader->next()) {
        c.head = decode(*line);
        c.head_bytes = std::move(*line);
        return;
      }
      c.reader.reset();
      ++c.segment;
    }
  };

  using Key = std::pair<int64_t, size_t>;  // (ts, rank)
  std::priority_queue<Key, std::vector<Key>, std::greater<>> heap;
  for (auto& c : cursors) {
    advance(c);
    if (c.head) heap.emplace(c.head->ts_us, c.rank);
  }

  Clock& clock = options.clock ? *options.clock : SystemClock::instance();
  const bool paced = options.speed > 0.0 && std::isfinite(options.speed);
  std::optional<int64_t> first_ts;
  int64_t start_us = clock.now_us();
  uint64_t n = 0;
  while (!heap.empty()) {
    if (options.stop.stop_requested()) break;
    auto [ts, rank] = heap.top();
    heap.pop();
    Cursor& c = cursors[rank];
    if (paced) {
      if (!first_ts) first_ts = ts;
      auto offset = static_cast<int64_t>(static_cast<double>(ts - *first_ts) / options.speed);
      if (!clock.sleep_until(start_us + offset, options.stop)) break;
    }
    sink(*c.head, c.head_bytes);
    ++n;
    advance(c);
    if (c.head) heap.emplace(c.head->ts_us, c.rank);
  }
  return n;
}

uint64_t replay_archive(const fs::path& dir, const ReplayOptions& options, Transport& transport) {
  return replay_archive(dir, options, [&](const Envelope& e, const std::string& bytes) {
    transport.publish(topic_for(TopicKind::kData, e.experiment_id, e.device_id), bytes);
  });
}

}  // namespace mdml
