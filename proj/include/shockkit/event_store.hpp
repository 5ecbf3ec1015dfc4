#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shockkit/activity_matrix.hpp"
#include "shockkit/record.hpp"
#include "shockkit/util.hpp"

namespace shockkit {

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

struct IngestSource {
  std::filesystem::path path;
  Kind default_kind = Kind::comment;
};

struct IngestOptions {
  std::optional<std::int64_t> from_ts;  // keep records with from_ts <= t
  std::optional<std::int64_t> to_ts;    // ... and t < to_ts
  int threads = 1;
  int partition_count = 32;
  // Spill threshold in records; fixed (and small enough to saturate on
  // modest corpora) so peak memory does not scale with corpus size.
  std::size_t buffer_records = 16384;
};

struct IngestStats {
  std::uint64_t lines = 0;
  std::uint64_t kept = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t parse_errors = 0;
  std::uint64_t missing_field = 0;
  std::uint64_t bad_value = 0;
  std::uint64_t filtered_time = 0;
  std::uint64_t deleted_author = 0;
};

/// Builds a store directory (manifest.json, authors.idx, sorted NDJSON
/// partitions) from NDJSON sources. Streaming with bounded buffers and
/// external merge; on fatal errors the partial output directory is removed.
IngestStats ingest(const std::vector<IngestSource>& sources, const IngestOptions& options,
                   const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Query side. A finalized store is immutable; all queries are const and safe
// to run concurrently.
// ---------------------------------------------------------------------------

class EventStore {
 public:
  struct Event {
    std::int64_t ts;
    std::uint32_t subreddit;
    Kind kind;
  };
  struct SubEvent {
    std::int64_t ts;
    std::uint32_t author;
  };

  static EventStore open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  std::uint64_t record_count() const { return record_count_; }
  std::int64_t min_ts() const { return min_ts_; }
  std::int64_t max_ts() const { return max_ts_; }
  const std::string& checksum() const { return checksum_; }

  std::optional<std::uint32_t> author_id(std::string_view name) const;
  std::optional<std::uint32_t> subreddit_id(std::string_view name) const;
  const std::string& author_name(std::uint32_t id) const { return authors_[id]; }
  const std::string& subreddit_name(std::uint32_t id) const { return subreddits_[id]; }
  std::size_t author_count() const { return authors_.size(); }
  std::size_t subreddit_count() const { return subreddits_.size(); }

  /// All events by one author, sorted by timestamp.
  const std::vector<Event>& author_events(std::uint32_t author) const { return by_author_[author]; }

  /// All events in one subreddit, sorted by timestamp.
  const std::vector<SubEvent>& subreddit_events(std::uint32_t subreddit) const {
    return by_subreddit_[subreddit];
  }

  /// Records by `user` in [t0, t1), optionally restricted to one subreddit.
  /// Unknown users count 0.
  std::int64_t user_activity_count(std::string_view user, std::int64_t t0, std::int64_t t1,
                                   std::optional<std::string_view> subreddit = std::nullopt) const;

  std::optional<std::int64_t> first_event_ts(std::string_view user) const;

  /// True if the user has at least one record in [t0, t1), any subreddit.
  bool any_activity(std::uint32_t author, std::int64_t t0, std::int64_t t1) const;

 private:
  std::filesystem::path root_;
  std::uint64_t record_count_ = 0;
  std::int64_t min_ts_ = 0;
  std::int64_t max_ts_ = 0;
  std::string checksum_;
  std::vector<std::string> authors_;
  std::vector<std::string> subreddits_;
  std::map<std::string, std::uint32_t, std::less<>> author_index_;
  std::map<std::string, std::uint32_t, std::less<>> subreddit_index_;
  std::vector<std::vector<Event>> by_author_;
  std::vector<std::vector<SubEvent>> by_subreddit_;
};

/// Sentinel for the platform-wide single-column variant of weekly_bins.
inline constexpr std::string_view kAllDimensions = "*";

/// Bins one user's records into the anchored week grid. `dimensions` is a
/// subreddit list, or empty for the platform-wide single column labelled "*".
ActivityMatrix weekly_bins(const EventStore& store, std::string_view user, std::int64_t anchor,
                           std::vector<std::string> dimensions, int week_lo = -52, int week_hi = 53,
                           std::set<int> missing_weeks = {});

}  // namespace shockkit
