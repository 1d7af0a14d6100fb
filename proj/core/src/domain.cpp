#include "ctxrec/domain.hpp"

#include <algorithm>
#include <cctype>

namespace ctxrec {
namespace {

using namespace std::string_view_literals;

constexpr std::array kDaytime = {"morning"sv, "afternoon"sv, "evening"sv, "night"sv};
constexpr std::array kWeekday = {"mon"sv, "tue"sv, "wed"sv, "thu"sv,
                                 "fri"sv, "sat"sv, "sun"sv};
constexpr std::array kIsWeekend = {"weekend"sv, "workday"sv};
constexpr std::array kLocation = {"home"sv, "work"sv, "other"sv};
constexpr std::array kCity = {"true"sv, "false"sv};
constexpr std::array kWeather = {"sunny"sv,   "cloudy"sv, "foggy"sv,
                                 "windy"sv,   "drizzle"sv, "rainy"sv,
                                 "stormy"sv,  "sleet"sv,  "snowy"sv};
constexpr std::array kBattery = {"full"sv, "high"sv, "medium"sv, "low"sv, "empty"sv};
constexpr std::array kEnergy = {"battery"sv, "usb"sv, "ac"sv};
constexpr std::array kConnectivity = {"wifi"sv, "mobile"sv, "none"sv};
constexpr std::array kScreen = {"on"sv, "off"sv};

const std::array<ContextDimension, kNumDims> kDimensions = {{
    {"daytime", kDaytime, false},
    {"weekday", kWeekday, false},
    {"isweekend", kIsWeekend, false},
    {"location", kLocation, false},
    {"city", kCity, false},
    {"country", {}, true},
    {"weather", kWeather, false},
    {"battery", kBattery, false},
    {"energy", kEnergy, false},
    {"connectivity", kConnectivity, false},
    {"screen", kScreen, false},
}};

constexpr std::array kAllDims = {
    Dim::daytime, Dim::weekday, Dim::isweekend, Dim::location,
    Dim::city,    Dim::country, Dim::weather,   Dim::battery,
    Dim::energy,  Dim::connectivity, Dim::screen,
};

constexpr std::array kWeekdayNames = {"Monday"sv, "Tuesday"sv,  "Wednesday"sv,
                                      "Thursday"sv, "Friday"sv, "Saturday"sv,
                                      "Sunday"sv};

std::string capitalize(std::string_view s) {
  std::string out(s);
  if (!out.empty()) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

std::span<const Dim> all_dims() { return kAllDims; }

const ContextDimension& dimension(Dim d) {
  return kDimensions[static_cast<std::size_t>(d)];
}

std::string_view dim_name(Dim d) { return dimension(d).name; }

std::optional<Dim> parse_dim(std::string_view name) {
  for (Dim d : kAllDims) {
    if (dim_name(d) == name) return d;
  }
  return std::nullopt;
}

std::size_t value_slots(Dim d) {
  return d == Dim::country ? kCountrySlots : dimension(d).cardinality();
}

bool is_country_code(std::string_view label) {
  return label.size() == 2 && label[0] >= 'A' && label[0] <= 'Z' &&
         label[1] >= 'A' && label[1] <= 'Z';
}

std::optional<ValueIndex> encode_value(Dim d, std::string_view label) {
  if (d == Dim::country) {
    if (label == "unknown") return ValueIndex{0};
    if (!is_country_code(label)) return std::nullopt;
    return static_cast<ValueIndex>(1 + 26 * (label[0] - 'A') + (label[1] - 'A'));
  }
  const auto values = dimension(d).values;
  const auto it = std::find(values.begin(), values.end(), label);
  if (it == values.end()) return std::nullopt;
  return static_cast<ValueIndex>(it - values.begin());
}

std::string decode_value(Dim d, ValueIndex index) {
  if (d == Dim::country) {
    if (index == 0) return "unknown";
    if (index >= kCountrySlots) throw ValidationError("country index out of range");
    const int packed = index - 1;
    return {static_cast<char>('A' + packed / 26), static_cast<char>('A' + packed % 26)};
  }
  const auto values = dimension(d).values;
  if (index >= values.size()) {
    throw ValidationError("value index out of range for " + std::string(dim_name(d)));
  }
  return std::string(values[index]);
}

std::string display_value(Dim d, std::string_view label) {
  switch (d) {
    case Dim::weekday: {
      const auto idx = encode_value(d, label);
      return idx ? std::string(kWeekdayNames[*idx]) : std::string(label);
    }
    case Dim::city:
      return label == "true" ? "Near a city center" : "Away from city centers";
    case Dim::country:
      return std::string(label);
    case Dim::connectivity:
      return label == "wifi" ? "WiFi" : label == "none" ? "Offline" : "Mobile data";
    case Dim::energy:
      return label == "usb" ? "USB charging" : label == "ac" ? "Charging" : "On battery";
    case Dim::battery:
      return capitalize(label) + " battery";
    case Dim::screen:
      return label == "on" ? "Screen on" : "Screen off";
    default:
      return capitalize(label);
  }
}

std::size_t ContextKeyHash::operator()(const ContextKey& k) const noexcept {
  // FNV-1a over the packed indices.
  std::uint64_t h = 1469598103934665603ULL;
  for (ValueIndex v : k.values) {
    h ^= v;
    h *= 1099511628211ULL;
  }
  return static_cast<std::size_t>(h);
}

std::vector<Violation> validate_context(const ContextVector& v) {
  std::vector<Violation> out;
  for (Dim d : kAllDims) {
    if (!v.has(d) || !encode_value(d, v.get(d))) {
      out.push_back({d, v.get(d)});
    }
  }
  return out;
}

bool is_valid(const ContextVector& v) { return validate_context(v).empty(); }

ContextKey encode(const ContextVector& v) {
  ContextKey key;
  std::vector<std::string> problems;
  for (Dim d : kAllDims) {
    const auto idx = v.has(d) ? encode_value(d, v.get(d)) : std::nullopt;
    if (!idx) {
      problems.push_back(std::string(dim_name(d)) +
                         (v.has(d) ? "=" + v.get(d) : " missing"));
      continue;
    }
    key[d] = *idx;
  }
  if (!problems.empty()) {
    std::string msg = "invalid context:";
    for (const auto& p : problems) msg += " " + p;
    throw ValidationError(msg, std::move(problems));
  }
  return key;
}

ContextVector decode(const ContextKey& k) {
  ContextVector v;
  for (Dim d : kAllDims) v.set(d, decode_value(d, k[d]));
  return v;
}

int context_distance(const ContextVector& a, const ContextVector& b) {
  const ContextKey ka = encode(a);
  const ContextKey kb = encode(b);
  int n = 0;
  for (std::size_t i = 0; i < kNumDims; ++i) n += ka.values[i] != kb.values[i];
  return n;
}

std::string format_context(const ContextVector& v) {
  std::string out;
  for (Dim d : kAllDims) {
    if (!v.has(d)) continue;
    if (!out.empty()) out += ',';
    out += dim_name(d);
    out += '=';
    out += v.get(d);
  }
  return out;
}

ContextVector parse_context(std::string_view text, const ContextVector& defaults) {
  ContextVector out = defaults;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view pair = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (pair.empty()) continue;
    const auto eq = pair.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("expected dim=value, got '" + std::string(pair) + "'");
    }
    const auto name = trim(pair.substr(0, eq));
    const auto dim = parse_dim(name);
    if (!dim) throw ValidationError("unknown context dimension '" + std::string(name) + "'");
    out.set(*dim, std::string(trim(pair.substr(eq + 1))));
  }
  return out;
}

ContextVector neutral_context() {
  ContextVector v;
  v.set(Dim::daytime, "morning")
      .set(Dim::weekday, "mon")
      .set(Dim::isweekend, "workday")
      .set(Dim::location, "other")
      .set(Dim::city, "false")
      .set(Dim::country, "unknown")
      .set(Dim::weather, "sunny")
      .set(Dim::battery, "medium")
      .set(Dim::energy, "battery")
      .set(Dim::connectivity, "wifi")
      .set(Dim::screen, "on");
  return v;
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::shown: return "shown";
    case EventKind::viewed: return "viewed";
    case EventKind::installed: return "installed";
    case EventKind::skipped: return "skipped";
    case EventKind::used: return "used";
    case EventKind::uninstalled: return "uninstalled";
  }
  return "unknown";
}

std::optional<EventKind> parse_event_kind(std::string_view s) {
  for (auto k : {EventKind::shown, EventKind::viewed, EventKind::installed,
                 EventKind::skipped, EventKind::used, EventKind::uninstalled}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

}  // namespace ctxrec
