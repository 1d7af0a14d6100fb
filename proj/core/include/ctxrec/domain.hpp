#pragma once

// Identifiers, the contextual vocabulary and the records shared by every
// other module.
//
// Eleven context dimensions are built in. All of them have a closed value
// vocabulary except `country`, which accepts any ISO-3166 alpha-2 code or
// "unknown". Labels are lower case on the wire; country codes are upper case.

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxrec/error.hpp"

namespace ctxrec {

enum class Dim : std::uint8_t {
  daytime,
  weekday,
  isweekend,
  location,
  city,
  country,
  weather,
  battery,
  energy,
  connectivity,
  screen,
};

inline constexpr std::size_t kNumDims = 11;

using ValueIndex = std::uint16_t;
inline constexpr ValueIndex kMissingValue = 0xFFFF;

// Country codes are packed as 1 + 26*a + b with 0 reserved for "unknown".
inline constexpr std::size_t kCountrySlots = 1 + 26 * 26;

struct ContextDimension {
  std::string_view name;
  std::span<const std::string_view> values;  // empty for open vocabularies
  bool open_vocabulary = false;

  std::size_t cardinality() const { return values.size(); }
};

std::span<const Dim> all_dims();
const ContextDimension& dimension(Dim d);
std::string_view dim_name(Dim d);
std::optional<Dim> parse_dim(std::string_view name);

// Number of distinct encodable values for a dimension (closed cardinality, or
// the packed country space).
std::size_t value_slots(Dim d);
std::optional<ValueIndex> encode_value(Dim d, std::string_view label);
std::string decode_value(Dim d, ValueIndex index);
bool is_country_code(std::string_view label);

// Human-readable form used by explanations, e.g. "afternoon" -> "Afternoon",
// "sat" -> "Saturday".
std::string display_value(Dim d, std::string_view label);

// Compact, validated encoding of a full context. Ordered and hashable so it can
// key sparse containers.
struct ContextKey {
  std::array<ValueIndex, kNumDims> values{};

  ValueIndex operator[](Dim d) const { return values[static_cast<std::size_t>(d)]; }
  ValueIndex& operator[](Dim d) { return values[static_cast<std::size_t>(d)]; }

  auto operator<=>(const ContextKey&) const = default;
};

struct ContextKeyHash {
  std::size_t operator()(const ContextKey& k) const noexcept;
};

class ContextVector {
 public:
  ContextVector() = default;

  const std::string& get(Dim d) const { return labels_[index(d)]; }
  bool has(Dim d) const { return !labels_[index(d)].empty(); }
  ContextVector& set(Dim d, std::string label) {
    labels_[index(d)] = std::move(label);
    return *this;
  }

  bool operator==(const ContextVector&) const = default;

 private:
  static std::size_t index(Dim d) { return static_cast<std::size_t>(d); }

  std::array<std::string, kNumDims> labels_;
};

struct Violation {
  Dim dim;
  std::string value;  // empty when the dimension is missing

  bool operator==(const Violation&) const = default;
};

// Every dimension whose value is missing or outside its vocabulary.
std::vector<Violation> validate_context(const ContextVector& v);
bool is_valid(const ContextVector& v);

// Throws ValidationError listing every violation.
ContextKey encode(const ContextVector& v);
ContextVector decode(const ContextKey& k);

// Hamming count of differing dimensions. Throws ValidationError on invalid
// input.
int context_distance(const ContextVector& a, const ContextVector& b);

// "daytime=morning,weekday=mon,..." in dimension order. Missing dims omitted.
std::string format_context(const ContextVector& v);

// Parses comma separated `dim=value` pairs over `defaults`. Unknown dimension
// names and malformed pairs throw ValidationError; values are not checked.
ContextVector parse_context(std::string_view text,
                            const ContextVector& defaults = {});

// A fully valid context used where nothing better is known.
ContextVector neutral_context();

template <class Tag>
class Id {
 public:
  Id() = default;
  explicit Id(std::string value) : value_(std::move(value)) {
    if (value_.empty()) throw ValidationError("identifier must be non-empty");
  }

  const std::string& str() const { return value_; }

  auto operator<=>(const Id&) const = default;
  bool operator==(const Id&) const = default;

 private:
  std::string value_;
};

using UserId = Id<struct UserTag>;
using AppId = Id<struct AppTag>;

// Catalog metadata for an app.
struct AppInfo {
  AppId id;
  std::string category = "unknown";
  std::string language = "unknown";
  std::vector<std::string> audience;  // e.g. {"female"}; empty = everyone
};

struct UserProfile {
  UserId user;
  int tz_offset_seconds = 0;
  std::string country = "unknown";
  std::vector<std::string> languages;
  std::vector<std::string> tags;
};

struct UsageTuple {
  UserId user;
  AppId app;
  std::string category = "unknown";
  ContextVector context;
  std::uint64_t count = 0;
  std::int64_t timestamp = 0;  // earliest observation, 0 when unknown
};

enum class EventKind : std::uint8_t {
  shown,
  viewed,
  installed,
  skipped,
  used,
  uninstalled,
};

std::string_view to_string(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view s);

struct InteractionEvent {
  UserId user;
  AppId app;
  std::string category = "unknown";
  EventKind kind = EventKind::used;
  std::int64_t timestamp = 0;
  ContextVector context;
  std::optional<std::int64_t> session;

  bool operator==(const InteractionEvent&) const = default;
};

struct RawSample {
  UserId user;
  std::int64_t timestamp = 0;
  std::optional<AppId> foreground_app;
  bool screen_on = false;
  std::string location_cell;
  std::optional<double> battery_pct;
  std::string charger;       // "", "usb" or "ac"
  std::string connectivity;  // "wifi", "mobile" or "none"
  std::optional<double> lat;
  std::optional<double> lon;
};

}  // namespace ctxrec

template <class Tag>
struct std::hash<ctxrec::Id<Tag>> {
  std::size_t operator()(const ctxrec::Id<Tag>& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};

template <>
struct std::hash<ctxrec::ContextKey> {
  std::size_t operator()(const ctxrec::ContextKey& k) const noexcept {
    return ctxrec::ContextKeyHash{}(k);
  }
};
