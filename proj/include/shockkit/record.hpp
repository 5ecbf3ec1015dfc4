#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace shockkit {

enum class Kind : std::uint8_t { post = 0, comment = 1 };

std::string_view kind_name(Kind k);
std::optional<Kind> kind_from_name(std::string_view name);

/// One post or comment event. Content is deliberately not kept; all
/// downstream analyses are count based.
struct ActivityRecord {
  std::string author;
  std::string subreddit;
  std::int64_t timestamp = 0;  // epoch seconds
  Kind kind = Kind::comment;
  std::string record_id;

  bool operator==(const ActivityRecord&) const = default;
};

enum class ParseError : std::uint8_t {
  none = 0,
  bad_json,
  missing_field,
  bad_value,  // wrong type, negative timestamp, empty author/subreddit
};

std::string_view parse_error_name(ParseError e);

/// Maps one NDJSON line (keys author/subreddit/created_utc/id, optional kind)
/// to a record. Unknown keys are ignored; a "kind" key overrides the default.
/// Returns nullopt on malformed input and reports why via `err`.
std::optional<ActivityRecord> parse_activity_record(std::string_view line, Kind default_kind,
                                                    ParseError* err = nullptr);

/// Canonical single-line JSON form (sorted keys); the on-disk partition format.
std::string record_to_json_line(const ActivityRecord& rec);

}  // namespace shockkit
