#include "shockkit/record.hpp"

#include <json.hpp>

namespace shockkit {

using nlohmann::json;

std::string_view kind_name(Kind k) { return k == Kind::post ? "post" : "comment"; }

std::optional<Kind> kind_from_name(std::string_view name) {
  if (name == "post") return Kind::post;
  if (name == "comment") return Kind::comment;
  return std::nullopt;
}

std::string_view parse_error_name(ParseError e) {
  switch (e) {
    case ParseError::none: return "none";
    case ParseError::bad_json: return "bad_json";
    case ParseError::missing_field: return "missing_field";
    case ParseError::bad_value: return "bad_value";
  }
  return "unknown";
}

namespace {

void set_err(ParseError* err, ParseError value) {
  if (err) *err = value;
}

}  // namespace

std::optional<ActivityRecord> parse_activity_record(std::string_view line, Kind default_kind,
                                                    ParseError* err) {
  set_err(err, ParseError::none);
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    set_err(err, ParseError::bad_json);
    return std::nullopt;
  }
  auto a = j.find("author");
  auto s = j.find("subreddit");
  auto t = j.find("created_utc");
  auto i = j.find("id");
  if (a == j.end() || s == j.end() || t == j.end() || i == j.end()) {
    set_err(err, ParseError::missing_field);
    return std::nullopt;
  }
  if (!a->is_string() || !s->is_string() || !i->is_string()) {
    set_err(err, ParseError::bad_value);
    return std::nullopt;
  }
  ActivityRecord rec;
  rec.author = a->get<std::string>();
  rec.subreddit = s->get<std::string>();
  rec.record_id = i->get<std::string>();
  // Pushshift-style archives carry created_utc as either number or string.
  if (t->is_number_integer()) {
    rec.timestamp = t->get<std::int64_t>();
  } else if (t->is_string()) {
    try {
      rec.timestamp = std::stoll(t->get<std::string>());
    } catch (...) {
      set_err(err, ParseError::bad_value);
      return std::nullopt;
    }
  } else {
    set_err(err, ParseError::bad_value);
    return std::nullopt;
  }
  if (rec.timestamp < 0 || rec.author.empty() || rec.subreddit.empty() || rec.record_id.empty()) {
    set_err(err, ParseError::bad_value);
    return std::nullopt;
  }
  rec.kind = default_kind;
  auto k = j.find("kind");
  if (k != j.end()) {
    if (!k->is_string()) {
      set_err(err, ParseError::bad_value);
      return std::nullopt;
    }
    auto parsed = kind_from_name(k->get<std::string>());
    if (!parsed) {
      set_err(err, ParseError::bad_value);
      return std::nullopt;
    }
    rec.kind = *parsed;
  }
  return rec;
}

std::string record_to_json_line(const ActivityRecord& rec) {
  json j;
  j["author"] = rec.author;
  j["created_utc"] = rec.timestamp;
  j["id"] = rec.record_id;
  j["kind"] = std::string(kind_name(rec.kind));
  j["subreddit"] = rec.subreddit;
  return j.dump();
}

}  // namespace shockkit
