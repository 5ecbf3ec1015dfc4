#include "shockkit/event_store.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <queue>
#include <sstream>

namespace shockkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Internal spill-run format: TSV with %-encoding of the string fields.
// ---------------------------------------------------------------------------

std::string enc(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '%': out += "%25"; break;
      case '\t': out += "%09"; break;
      case '\n': out += "%0A"; break;
      case '\r': out += "%0D"; break;
      default: out += c;
    }
  }
  return out;
}

std::string dec(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      int hi = s[i + 1] >= 'A' ? s[i + 1] - 'A' + 10 : s[i + 1] - '0';
      int lo = s[i + 2] >= 'A' ? s[i + 2] - 'A' + 10 : s[i + 2] - '0';
      out += static_cast<char>((hi << 4) | lo);
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

struct StagedRecord {
  std::uint64_t seq = 0;
  ActivityRecord rec;
};

std::string staged_to_line(const StagedRecord& r) {
  std::string out = std::to_string(r.seq);
  out += '\t';
  out += std::to_string(r.rec.timestamp);
  out += '\t';
  out += r.rec.kind == Kind::post ? '0' : '1';
  out += '\t';
  out += enc(r.rec.record_id);
  out += '\t';
  out += enc(r.rec.author);
  out += '\t';
  out += enc(r.rec.subreddit);
  return out;
}

StagedRecord staged_from_line(const std::string& line) {
  StagedRecord r;
  std::size_t pos = 0;
  auto next = [&]() {
    std::size_t tab = line.find('\t', pos);
    std::string_view f(line.data() + pos, (tab == std::string::npos ? line.size() : tab) - pos);
    pos = tab == std::string::npos ? line.size() : tab + 1;
    return f;
  };
  r.seq = std::stoull(std::string(next()));
  r.rec.timestamp = std::stoll(std::string(next()));
  r.rec.kind = next() == "0" ? Kind::post : Kind::comment;
  r.rec.record_id = dec(next());
  r.rec.author = dec(next());
  r.rec.subreddit = dec(next());
  return r;
}

// Orders spill runs for the dedup pass: first occurrence (smallest ingest
// sequence) of each record_id surfaces first.
bool id_seq_less(const StagedRecord& a, const StagedRecord& b) {
  if (a.rec.record_id != b.rec.record_id) return a.rec.record_id < b.rec.record_id;
  return a.seq < b.seq;
}

// Final partition order.
bool ts_id_less(const StagedRecord& a, const StagedRecord& b) {
  if (a.rec.timestamp != b.rec.timestamp) return a.rec.timestamp < b.rec.timestamp;
  return a.rec.record_id < b.rec.record_id;
}

class RunMerger {
 public:
  explicit RunMerger(const std::vector<fs::path>& runs,
                     bool (*less)(const StagedRecord&, const StagedRecord&))
      : less_(less) {
    streams_.reserve(runs.size());
    for (const auto& p : runs) {
      auto in = std::make_unique<std::ifstream>(p);
      if (!*in) throw DataError("cannot reopen spill run: " + p.string());
      streams_.push_back(std::move(in));
    }
    heads_.resize(streams_.size());
    alive_.assign(streams_.size(), false);
    for (std::size_t i = 0; i < streams_.size(); ++i) advance(i);
  }

  std::optional<StagedRecord> next() {
    std::size_t best = heads_.size();
    for (std::size_t i = 0; i < heads_.size(); ++i) {
      if (!alive_[i]) continue;
      if (best == heads_.size() || less_(heads_[i], heads_[best])) best = i;
    }
    if (best == heads_.size()) return std::nullopt;
    StagedRecord out = std::move(heads_[best]);
    advance(best);
    return out;
  }

 private:
  void advance(std::size_t i) {
    std::string line;
    if (std::getline(*streams_[i], line) && !line.empty()) {
      heads_[i] = staged_from_line(line);
      alive_[i] = true;
    } else {
      alive_[i] = false;
    }
  }

  std::vector<std::unique_ptr<std::ifstream>> streams_;
  std::vector<StagedRecord> heads_;
  std::vector<bool> alive_;
  bool (*less_)(const StagedRecord&, const StagedRecord&);
};

void write_run(const fs::path& path, std::vector<StagedRecord>& records,
               bool (*less)(const StagedRecord&, const StagedRecord&)) {
  std::sort(records.begin(), records.end(), [less](const auto& a, const auto& b) { return less(a, b); });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write spill run: " + path.string());
  for (const auto& r : records) out << staged_to_line(r) << '\n';
  records.clear();
}

std::uint32_t partition_of(std::string_view subreddit, int partition_count) {
  return static_cast<std::uint32_t>(fnv1a64(subreddit) % static_cast<std::uint64_t>(partition_count));
}

std::string partition_file_name(int pid) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "part-%04d.ndjson", pid);
  return buf;
}

struct AuthorIndexEntry {
  std::string author;
  int partition;
  std::uint64_t offset;
  bool operator<(const AuthorIndexEntry& o) const {
    if (author != o.author) return author < o.author;
    if (partition != o.partition) return partition < o.partition;
    return offset < o.offset;
  }
};

struct PartitionResult {
  std::uint64_t records = 0;
  std::int64_t min_ts = 0;
  std::int64_t max_ts = 0;
  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  std::uint64_t duplicates = 0;
};

}  // namespace

IngestStats ingest(const std::vector<IngestSource>& sources, const IngestOptions& options,
                   const fs::path& out_dir) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir))
    throw DataError("ingest output directory is not empty: " + out_dir.string());
  for (const auto& src : sources) {
    if (!fs::exists(src.path)) throw DataError("input file not readable: " + src.path.string());
  }
  if (sources.empty()) throw DataError("ingest requires at least one input file");

  const int P = options.partition_count;
  fs::create_directories(out_dir);
  fs::path tmp = out_dir / "tmp";
  fs::create_directories(tmp);

  IngestStats stats;
  std::mutex stats_mu;
  std::mutex run_mu;
  std::atomic<std::uint64_t> run_counter{0};
  std::vector<std::vector<fs::path>> phase1_runs(P);

  try {
    // Phase A: parse sources, spill per-partition runs sorted by (id, seq).
    const std::size_t per_thread_budget =
        std::max<std::size_t>(4096, options.buffer_records / std::max(1, options.threads));
    parallel_for(sources.size(), options.threads, [&](std::size_t lo, std::size_t hi) {
      std::vector<std::vector<StagedRecord>> buffers(P);
      std::size_t buffered = 0;
      IngestStats local;
      auto flush = [&]() {
        for (int p = 0; p < P; ++p) {
          if (buffers[p].empty()) continue;
          std::uint64_t r = run_counter.fetch_add(1);
          fs::path run = tmp / ("p" + std::to_string(p) + "-r" + std::to_string(r) + ".run");
          write_run(run, buffers[p], id_seq_less);
          std::lock_guard<std::mutex> g(run_mu);
          phase1_runs[p].push_back(run);
        }
        buffered = 0;
      };
      for (std::size_t fi = lo; fi < hi; ++fi) {
        std::ifstream in(sources[fi].path);
        if (!in) throw DataError("input file not readable: " + sources[fi].path.string());
        std::string line;
        std::uint64_t line_no = 0;
        while (std::getline(in, line)) {
          std::uint64_t seq = (static_cast<std::uint64_t>(fi) << 40) | line_no;
          ++line_no;
          if (line.empty()) continue;
          ++local.lines;
          ParseError err;
          auto rec = parse_activity_record(line, sources[fi].default_kind, &err);
          if (!rec) {
            if (err == ParseError::missing_field) ++local.missing_field;
            else if (err == ParseError::bad_value) ++local.bad_value;
            else ++local.parse_errors;
            continue;
          }
          if (rec->author == "[deleted]") {
            ++local.deleted_author;
            continue;
          }
          if ((options.from_ts && rec->timestamp < *options.from_ts) ||
              (options.to_ts && rec->timestamp >= *options.to_ts)) {
            ++local.filtered_time;
            continue;
          }
          int p = static_cast<int>(partition_of(rec->subreddit, P));
          buffers[p].push_back(StagedRecord{seq, std::move(*rec)});
          if (++buffered >= per_thread_budget) flush();
        }
      }
      flush();
      std::lock_guard<std::mutex> g(stats_mu);
      stats.lines += local.lines;
      stats.parse_errors += local.parse_errors;
      stats.missing_field += local.missing_field;
      stats.bad_value += local.bad_value;
      stats.filtered_time += local.filtered_time;
      stats.deleted_author += local.deleted_author;
    });

    // Phase B: per partition, dedup by id (first ingest sequence wins), then
    // re-sort by (timestamp, id) and write the final NDJSON segment. Emits
    // author-index tuples as it goes.
    std::vector<PartitionResult> results(P);
    std::vector<std::vector<fs::path>> index_runs(P);
    parallel_for(static_cast<std::size_t>(P), options.threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t p = lo; p < hi; ++p) {
        PartitionResult res;
        // Pass 1: merge by (id, seq), keep first of each id, spill (ts, id) runs.
        std::vector<fs::path> phase2;
        {
          RunMerger merger(phase1_runs[p], id_seq_less);
          std::vector<StagedRecord> buf;
          const std::size_t resort_cap = std::max<std::size_t>(1024, options.buffer_records / 4);
          std::uint64_t local_run = 0;
          auto spill = [&]() {
            if (buf.empty()) return;
            fs::path run = tmp / ("q" + std::to_string(p) + "-r" + std::to_string(local_run++) + ".run");
            write_run(run, buf, ts_id_less);
            phase2.push_back(run);
          };
          std::string last_id;
          bool have_last = false;
          while (auto r = merger.next()) {
            if (have_last && r->rec.record_id == last_id) {
              ++res.duplicates;
              continue;
            }
            last_id = r->rec.record_id;
            have_last = true;
            buf.push_back(std::move(*r));
            if (buf.size() >= resort_cap) spill();
          }
          spill();
        }
        for (const auto& run : phase1_runs[p]) fs::remove(run);
        // Pass 2: merge by (ts, id), write canonical partition file.
        {
          fs::path part_path = out_dir / partition_file_name(static_cast<int>(p));
          std::ofstream part(part_path, std::ios::binary);
          if (!part) throw DataError("cannot write partition: " + part_path.string());
          RunMerger merger(phase2, ts_id_less);
          std::vector<AuthorIndexEntry> idx_buf;
          std::uint64_t idx_run = 0;
          auto spill_idx = [&]() {
            if (idx_buf.empty()) return;
            std::sort(idx_buf.begin(), idx_buf.end());
            fs::path run = tmp / ("i" + std::to_string(p) + "-r" + std::to_string(idx_run++) + ".idx");
            std::ofstream out(run, std::ios::binary);
            for (const auto& e : idx_buf)
              out << enc(e.author) << '\t' << e.partition << '\t' << e.offset << '\n';
            index_runs[p].push_back(run);
            idx_buf.clear();
          };
          const std::size_t idx_cap = std::max<std::size_t>(1024, options.buffer_records / 4);
          std::uint64_t offset = 0;
          while (auto r = merger.next()) {
            std::string line = record_to_json_line(r->rec);
            idx_buf.push_back(AuthorIndexEntry{r->rec.author, static_cast<int>(p), offset});
            if (idx_buf.size() >= idx_cap) spill_idx();
            if (res.records == 0) {
              res.min_ts = r->rec.timestamp;
            }
            res.max_ts = r->rec.timestamp;
            ++res.records;
            res.checksum = fnv1a64(line, res.checksum);
            res.checksum = fnv1a64("\n", res.checksum);
            part << line << '\n';
            offset += line.size() + 1;
          }
          spill_idx();
        }
        for (const auto& run : phase2) fs::remove(run);
        results[p] = res;
      }
    });

    // Phase C: merge author-index runs into the sorted authors.idx file.
    {
      std::vector<std::unique_ptr<std::ifstream>> streams;
      std::vector<std::string> heads;
      for (const auto& runs : index_runs)
        for (const auto& run : runs) {
          auto in = std::make_unique<std::ifstream>(run);
          std::string line;
          if (std::getline(*in, line)) {
            streams.push_back(std::move(in));
            heads.push_back(std::move(line));
          }
        }
      std::ofstream idx(out_dir / "authors.idx", std::ios::binary);
      if (!idx) throw DataError("cannot write authors.idx");
      while (!heads.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < heads.size(); ++i)
          if (heads[i] < heads[best]) best = i;
        idx << heads[best] << '\n';
        std::string line;
        if (std::getline(*streams[best], line)) {
          heads[best] = std::move(line);
        } else {
          streams.erase(streams.begin() + static_cast<std::ptrdiff_t>(best));
          heads.erase(heads.begin() + static_cast<std::ptrdiff_t>(best));
        }
      }
    }

    // Manifest. Content is a pure function of the input record multiset, so
    // it is byte-identical across thread counts.
    std::uint64_t store_checksum = 0xcbf29ce484222325ULL;
    std::uint64_t total = 0;
    std::int64_t min_ts = 0, max_ts = 0;
    bool any = false;
    json parts = json::array();
    for (int p = 0; p < P; ++p) {
      const auto& r = results[p];
      stats.duplicates += r.duplicates;
      if (r.records == 0) {
        fs::remove(out_dir / partition_file_name(p));
        continue;
      }
      json jp;
      jp["file"] = partition_file_name(p);
      jp["records"] = r.records;
      jp["min_ts"] = r.min_ts;
      jp["max_ts"] = r.max_ts;
      char hex[17];
      std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(r.checksum));
      jp["checksum"] = hex;
      parts.push_back(jp);
      total += r.records;
      if (!any || r.min_ts < min_ts) min_ts = r.min_ts;
      if (!any || r.max_ts > max_ts) max_ts = r.max_ts;
      any = true;
      store_checksum = fnv1a64(hex, store_checksum);
      store_checksum = fnv1a64(std::to_string(r.records), store_checksum);
    }
    stats.kept = total;

    json manifest;
    manifest["format"] = "shockkit-store-v1";
    manifest["partition_count"] = P;
    manifest["partitions"] = parts;
    manifest["record_count"] = total;
    manifest["time_range"] = {{"min", any ? min_ts : 0}, {"max", any ? max_ts : 0}};
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(store_checksum));
    manifest["store_checksum"] = hex;
    manifest["stats"] = {{"lines", stats.lines},
                         {"kept", stats.kept},
                         {"duplicates", stats.duplicates},
                         {"parse_errors", stats.parse_errors},
                         {"missing_field", stats.missing_field},
                         {"bad_value", stats.bad_value},
                         {"filtered_time", stats.filtered_time},
                         {"deleted_author", stats.deleted_author}};
    std::ofstream mf(out_dir / "manifest.json", std::ios::binary);
    if (!mf) throw DataError("cannot write manifest.json");
    mf << manifest.dump(2) << '\n';

    fs::remove_all(tmp);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(out_dir, ec);
    throw;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// EventStore
// ---------------------------------------------------------------------------

EventStore EventStore::open(const fs::path& root) {
  EventStore store;
  store.root_ = root;
  fs::path manifest_path = root / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError("store manifest not found: " + manifest_path.string());
  json manifest = json::parse(mf, nullptr, false);
  if (manifest.is_discarded()) throw DataError("corrupt manifest: " + manifest_path.string());
  store.record_count_ = manifest.at("record_count").get<std::uint64_t>();
  store.min_ts_ = manifest.at("time_range").at("min").get<std::int64_t>();
  store.max_ts_ = manifest.at("time_range").at("max").get<std::int64_t>();
  store.checksum_ = manifest.at("store_checksum").get<std::string>();

  auto intern = [](std::map<std::string, std::uint32_t, std::less<>>& index,
                   std::vector<std::string>& names, const std::string& name) {
    auto it = index.find(name);
    if (it != index.end()) return it->second;
    std::uint32_t id = static_cast<std::uint32_t>(names.size());
    index.emplace(name, id);
    names.push_back(name);
    return id;
  };

  for (const auto& jp : manifest.at("partitions")) {
    fs::path part = root / jp.at("file").get<std::string>();
    std::ifstream in(part);
    if (!in) throw DataError("store partition missing: " + part.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto rec = parse_activity_record(line, Kind::comment);
      if (!rec) throw DataError("corrupt partition line in " + part.string());
      std::uint32_t aid = intern(store.author_index_, store.authors_, rec->author);
      std::uint32_t sid = intern(store.subreddit_index_, store.subreddits_, rec->subreddit);
      if (aid >= store.by_author_.size()) store.by_author_.resize(aid + 1);
      if (sid >= store.by_subreddit_.size()) store.by_subreddit_.resize(sid + 1);
      store.by_author_[aid].push_back(Event{rec->timestamp, sid, rec->kind});
      store.by_subreddit_[sid].push_back(SubEvent{rec->timestamp, aid});
    }
  }
  // Partition files are time-sorted individually; per-author and
  // cross-partition per-subreddit streams still need a final sort.
  for (auto& v : store.by_author_)
    std::sort(v.begin(), v.end(), [](const Event& a, const Event& b) { return a.ts < b.ts; });
  for (auto& v : store.by_subreddit_)
    std::sort(v.begin(), v.end(), [](const SubEvent& a, const SubEvent& b) { return a.ts < b.ts; });
  return store;
}

std::optional<std::uint32_t> EventStore::author_id(std::string_view name) const {
  auto it = author_index_.find(name);
  if (it == author_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint32_t> EventStore::subreddit_id(std::string_view name) const {
  auto it = subreddit_index_.find(name);
  if (it == subreddit_index_.end()) return std::nullopt;
  return it->second;
}

std::int64_t EventStore::user_activity_count(std::string_view user, std::int64_t t0, std::int64_t t1,
                                             std::optional<std::string_view> subreddit) const {
  if (t0 >= t1) throw DataError("user_activity_count requires t0 < t1");
  auto aid = author_id(user);
  if (!aid) return 0;
  std::optional<std::uint32_t> sid;
  if (subreddit) {
    sid = subreddit_id(*subreddit);
    if (!sid) return 0;
  }
  const auto& events = by_author_[*aid];
  auto lo = std::lower_bound(events.begin(), events.end(), t0,
                             [](const Event& e, std::int64_t t) { return e.ts < t; });
  auto hi = std::lower_bound(lo, events.end(), t1,
                             [](const Event& e, std::int64_t t) { return e.ts < t; });
  if (!sid) return hi - lo;
  std::int64_t n = 0;
  for (auto it = lo; it != hi; ++it)
    if (it->subreddit == *sid) ++n;
  return n;
}

std::optional<std::int64_t> EventStore::first_event_ts(std::string_view user) const {
  auto aid = author_id(user);
  if (!aid || by_author_[*aid].empty()) return std::nullopt;
  return by_author_[*aid].front().ts;
}

bool EventStore::any_activity(std::uint32_t author, std::int64_t t0, std::int64_t t1) const {
  const auto& events = by_author_[author];
  auto lo = std::lower_bound(events.begin(), events.end(), t0,
                             [](const Event& e, std::int64_t t) { return e.ts < t; });
  return lo != events.end() && lo->ts < t1;
}

ActivityMatrix weekly_bins(const EventStore& store, std::string_view user, std::int64_t anchor,
                           std::vector<std::string> dimensions, int week_lo, int week_hi,
                           std::set<int> missing_weeks) {
  if (week_lo > week_hi) throw DataError("weekly_bins requires a nonempty week range");
  ActivityMatrix m;
  m.user = std::string(user);
  m.anchor = anchor;
  m.week_lo = week_lo;
  m.week_hi = week_hi;
  m.missing_weeks = std::move(missing_weeks);
  bool platform_wide = dimensions.empty();
  if (platform_wide) {
    m.dimensions = {std::string(kAllDimensions)};
  } else {
    std::sort(dimensions.begin(), dimensions.end());
    dimensions.erase(std::unique(dimensions.begin(), dimensions.end()), dimensions.end());
    m.dimensions = std::move(dimensions);
  }
  m.counts = Eigen::MatrixXi::Zero(m.week_count(), static_cast<int>(m.dimensions.size()));

  auto aid = store.author_id(user);
  if (!aid) return m;
  std::map<std::uint32_t, int> column;
  if (!platform_wide) {
    for (std::size_t c = 0; c < m.dimensions.size(); ++c) {
      auto sid = store.subreddit_id(m.dimensions[c]);
      if (sid) column[*sid] = static_cast<int>(c);
    }
  }
  std::int64_t t0 = week_start(anchor, week_lo);
  std::int64_t t1 = week_start(anchor, week_hi + 1);
  const auto& events = store.author_events(*aid);
  auto lo = std::lower_bound(events.begin(), events.end(), t0,
                             [](const EventStore::Event& e, std::int64_t t) { return e.ts < t; });
  for (auto it = lo; it != events.end() && it->ts < t1; ++it) {
    int w = week_of(it->ts, anchor);
    if (m.is_missing(w)) continue;
    int col = 0;
    if (!platform_wide) {
      auto cit = column.find(it->subreddit);
      if (cit == column.end()) continue;
      col = cit->second;
    }
    m.counts(m.row_of(w), col) += 1;
  }
  return m;
}

}  // namespace shockkit
