#include "ctxrec/ingest.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace ctxrec {
namespace {

using namespace std::string_view_literals;

constexpr std::array kCanonicalColumns = {
    "user"sv,    "app"sv,     "category"sv, "daytime"sv, "weekday"sv,
    "isweekend"sv, "location"sv, "city"sv,   "country"sv, "weather"sv,
    "battery"sv, "energy"sv,  "connectivity"sv, "cnt"sv,
};

const std::array<std::size_t, kNumDims + 1>& slot_offsets() {
  static const auto offsets = [] {
    std::array<std::size_t, kNumDims + 1> o{};
    for (std::size_t i = 0; i < kNumDims; ++i) {
      o[i + 1] = o[i] + value_slots(static_cast<Dim>(i));
    }
    return o;
  }();
  return offsets;
}

std::size_t total_slots() { return slot_offsets()[kNumDims]; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  T value{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
  return value;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  for (auto part : split_fields(s, ',')) {
    part = trim(part);
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += ',';
    out += item;
  }
  return out;
}

// Proleptic Gregorian date from days since 1970-01-01.
std::tuple<int, unsigned, unsigned> civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {static_cast<int>(y + (m <= 2)), m, d};
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

struct WindowTally {
  std::map<std::string, std::size_t> counts;
  std::map<std::string, std::int64_t> first_seen;
  std::set<std::int64_t> days;

  void add(const std::string& cell, std::int64_t ts, std::int64_t day) {
    ++counts[cell];
    auto [it, inserted] = first_seen.emplace(cell, ts);
    if (!inserted) it->second = std::min(it->second, ts);
    days.insert(day);
  }

  // Modal cell, ties to the earliest first observation.
  std::optional<std::pair<std::string, std::size_t>> mode(
      const std::optional<std::string>& exclude) const {
    std::optional<std::pair<std::string, std::size_t>> best;
    std::int64_t best_first = 0;
    for (const auto& [cell, n] : counts) {
      if (exclude && cell == *exclude) continue;
      const std::int64_t first = first_seen.at(cell);
      if (!best || n > best->second || (n == best->second && first < best_first)) {
        best = {cell, n};
        best_first = first;
      }
    }
    return best;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// UsageCube

UsageCube::UsageCube() : context_totals_(total_slots(), 0) {}

std::size_t UsageCube::slot(Dim d, ValueIndex v) {
  return slot_offsets()[static_cast<std::size_t>(d)] + v;
}

std::uint32_t UsageCube::intern_user(const UserId& u) {
  auto [it, inserted] = user_index_.emplace(u, static_cast<std::uint32_t>(users_.size()));
  if (inserted) {
    users_.push_back(u);
    user_totals_.push_back(0);
  }
  return it->second;
}

std::uint32_t UsageCube::intern_app(const AppId& a, std::string_view category) {
  auto [it, inserted] = app_index_.emplace(a, static_cast<std::uint32_t>(apps_.size()));
  if (inserted) {
    apps_.push_back(a);
    categories_.emplace_back(category.empty() ? "unknown" : category);
    app_totals_.push_back(0);
    app_context_.emplace_back(total_slots(), 0);
  } else if (categories_[it->second] == "unknown" && !category.empty()) {
    categories_[it->second] = std::string(category);
  }
  return it->second;
}

void UsageCube::add(const UsageTuple& t) {
  add(t.user, t.app, t.category, encode(t.context), t.count, t.timestamp);
}

void UsageCube::add(const UserId& user, const AppId& app, std::string_view category,
                    const ContextKey& context, std::uint64_t count, std::int64_t ts) {
  if (count == 0) return;
  const std::uint32_t u = intern_user(user);
  const std::uint32_t a = intern_app(app, category);
  auto [it, inserted] = cells_.try_emplace(Key{u, a, context}, Cell{0, ts});
  it->second.count += count;
  if (!inserted && ts != 0 && (it->second.first_ts == 0 || ts < it->second.first_ts)) {
    it->second.first_ts = ts;
  }
  grand_total_ += count;
  app_totals_[a] += count;
  user_totals_[u] += count;
  auto& per_app = app_context_[a];
  for (Dim d : all_dims()) {
    const std::size_t s = slot(d, context[d]);
    context_totals_[s] += count;
    per_app[s] += count;
  }
}

std::optional<std::uint32_t> UsageCube::find_user(const UserId& u) const {
  const auto it = user_index_.find(u);
  if (it == user_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint32_t> UsageCube::find_app(const AppId& a) const {
  const auto it = app_index_.find(a);
  if (it == app_index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t UsageCube::context_total(Dim d, ValueIndex v) const {
  if (v >= value_slots(d)) return 0;
  return context_totals_[slot(d, v)];
}

std::uint64_t UsageCube::app_context_count(std::uint32_t app, Dim d, ValueIndex v) const {
  if (v >= value_slots(d)) return 0;
  return app_context_.at(app)[slot(d, v)];
}

std::size_t UsageCube::observed_values(Dim d) const {
  std::size_t n = 0;
  for (std::size_t v = 0; v < value_slots(d); ++v) {
    n += context_totals_[slot(d, static_cast<ValueIndex>(v))] > 0;
  }
  return n;
}

bool UsageCube::marginals_consistent() const {
  std::uint64_t grand = 0;
  std::vector<std::uint64_t> apps(apps_.size(), 0);
  std::vector<std::uint64_t> users(users_.size(), 0);
  std::vector<std::uint64_t> ctx(total_slots(), 0);
  std::vector<std::vector<std::uint64_t>> app_ctx(apps_.size(),
                                                  std::vector<std::uint64_t>(total_slots(), 0));
  for (const auto& [key, cell] : cells_) {
    grand += cell.count;
    apps[key.app] += cell.count;
    users[key.user] += cell.count;
    for (Dim d : all_dims()) {
      ctx[slot(d, key.context[d])] += cell.count;
      app_ctx[key.app][slot(d, key.context[d])] += cell.count;
    }
  }
  return grand == grand_total_ && apps == app_totals_ && users == user_totals_ &&
         ctx == context_totals_ && app_ctx == app_context_;
}

std::vector<UsageTuple> UsageCube::tuples() const {
  std::vector<UsageTuple> out;
  out.reserve(cells_.size());
  for (const auto& [key, cell] : cells_) {
    out.push_back({users_[key.user], apps_[key.app], categories_[key.app],
                   decode(key.context), cell.count, cell.first_ts});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tuple files

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::span<const std::string_view> canonical_tuple_columns() { return kCanonicalColumns; }

ColumnMapping ColumnMapping::load(std::istream& in) {
  ColumnMapping m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", lineno, 1);
    const std::string key(trim(s.substr(0, eq)));
    const std::string value(trim(s.substr(eq + 1)));
    if (key == "delimiter") {
      if (value == "tab") {
        m.delimiter = '\t';
      } else if (value == "comma") {
        m.delimiter = ',';
      } else {
        throw ParseError("delimiter must be tab or comma", lineno, eq + 2);
      }
    } else if (key.starts_with("column.")) {
      m.columns[key.substr(7)] = value;
    } else if (key.starts_with("default.")) {
      m.defaults[key.substr(8)] = value;
    } else if (key.starts_with("value.")) {
      const auto rest = key.substr(6);
      const auto dot = rest.find('.');
      if (dot == std::string::npos) throw ParseError("expected value.<dim>.<label>", lineno, 1);
      m.values[rest.substr(0, dot)][rest.substr(dot + 1)] = value;
    } else {
      throw ParseError("unknown mapping key '" + key + "'", lineno, 1);
    }
  }
  return m;
}

ColumnMapping ColumnMapping::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mapping file " + path);
  return load(in);
}

UsageCube parse_tuples(std::istream& in, const ColumnMapping* mapping) {
  UsageCube cube;
  const char delim = mapping ? mapping->delimiter : '\t';
  std::string line;
  if (!std::getline(in, line)) return cube;

  // canonical column name -> field index
  std::map<std::string, std::size_t, std::less<>> where;
  {
    const auto header = split_fields(strip_cr(line), delim);
    for (std::size_t i = 0; i < header.size(); ++i) {
      std::string name(trim(header[i]));
      if (mapping) {
        const auto it = mapping->columns.find(name);
        if (it != mapping->columns.end()) name = it->second;
      }
      where.emplace(name, i);
    }
  }
  auto fixed = [&](std::string_view col) -> std::optional<std::string> {
    if (mapping) {
      const auto it = mapping->defaults.find(std::string(col));
      if (it != mapping->defaults.end()) return it->second;
    }
    if (col == "screen") return "on";
    if (col == "category") return "unknown";
    return std::nullopt;
  };
  for (std::string_view col : {"user"sv, "app"sv, "cnt"sv}) {
    if (!where.contains(col)) throw ParseError("missing column '" + std::string(col) + "'", 1, 0);
  }
  for (Dim d : all_dims()) {
    if (!where.contains(dim_name(d)) && !fixed(dim_name(d))) {
      throw ParseError("missing column '" + std::string(dim_name(d)) + "'", 1, 0);
    }
  }
  const auto ts_col = where.find("ts");

  auto map_value = [&](Dim d, std::string_view raw) -> std::string {
    if (mapping) {
      const auto dv = mapping->values.find(std::string(dim_name(d)));
      if (dv != mapping->values.end()) {
        if (auto it = dv->second.find(std::string(raw)); it != dv->second.end()) return it->second;
        if (auto it = dv->second.find("*"); it != dv->second.end()) return it->second;
      }
    }
    return std::string(raw);
  };

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view row = strip_cr(line);
    if (trim(row).empty()) continue;
    const auto fields = split_fields(row, delim);
    auto field = [&](std::string_view col) -> std::pair<std::string, std::size_t> {
      const auto it = where.find(col);
      if (it == where.end()) return {*fixed(col), 0};
      if (it->second >= fields.size()) {
        throw ParseError("row has too few fields", lineno, fields.size() + 1);
      }
      return {std::string(trim(fields[it->second])), it->second + 1};
    };

    const auto [user, user_col] = field("user");
    const auto [app, app_col] = field("app");
    if (user.empty()) throw ParseError("empty user", lineno, user_col);
    if (app.empty()) throw ParseError("empty app", lineno, app_col);
    const auto [category, category_col] = field("category");

    ContextKey key;
    for (Dim d : all_dims()) {
      const auto [raw, col] = field(dim_name(d));
      const std::string value = map_value(d, raw);
      const auto idx = encode_value(d, value);
      if (!idx) {
        throw ParseError("unknown " + std::string(dim_name(d)) + " value '" + value + "'",
                         lineno, col);
      }
      key[d] = *idx;
    }
    const auto [cnt_raw, cnt_col] = field("cnt");
    const auto cnt = parse_number<std::uint64_t>(cnt_raw);
    if (!cnt) throw ParseError("invalid count '" + cnt_raw + "'", lineno, cnt_col);
    std::int64_t ts = 0;
    if (ts_col != where.end()) {
      const auto [ts_raw, col] = field("ts");
      if (!ts_raw.empty()) {
        const auto parsed = parse_number<std::int64_t>(ts_raw);
        if (!parsed) throw ParseError("invalid timestamp '" + ts_raw + "'", lineno, col);
        ts = *parsed;
      }
    }
    (void)category_col;
    cube.add(UserId(user), AppId(app), category, key, *cnt, ts);
  }
  return cube;
}

UsageCube parse_tuples(const std::string& path, const ColumnMapping* mapping) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open tuple file " + path);
  return parse_tuples(in, mapping);
}

void write_tuples(const UsageCube& cube, std::ostream& out) {
  for (std::size_t i = 0; i < kCanonicalColumns.size(); ++i) {
    out << (i ? "\t" : "") << kCanonicalColumns[i];
  }
  out << '\n';
  for (const auto& [key, cell] : cube.cells()) {
    out << cube.user(key.user).str() << '\t' << cube.app(key.app).str() << '\t'
        << cube.category(key.app);
    for (Dim d : all_dims()) {
      if (d == Dim::screen) continue;
      out << '\t' << decode_value(d, key.context[d]);
    }
    out << '\t' << cell.count << '\n';
  }
}

// ---------------------------------------------------------------------------
// Time

std::int64_t local_day(std::int64_t ts, int tz_offset_seconds) {
  return floor_div(ts + tz_offset_seconds, 86400);
}

int local_hour(std::int64_t ts, int tz_offset_seconds) {
  const std::int64_t local = ts + tz_offset_seconds;
  return static_cast<int>((local - floor_div(local, 86400) * 86400) / 3600);
}

TimeBuckets bucket_timestamp(std::int64_t ts, int tz_offset_seconds) {
  const auto daytime_labels = dimension(Dim::daytime).values;
  const auto weekday_labels = dimension(Dim::weekday).values;
  const int hour = local_hour(ts, tz_offset_seconds);
  const std::string_view daytime = hour < 6    ? daytime_labels[3]
                                   : hour < 12 ? daytime_labels[0]
                                   : hour < 18 ? daytime_labels[1]
                                               : daytime_labels[2];
  // 1970-01-01 was a Thursday; index 0 is Monday.
  const std::int64_t day = local_day(ts, tz_offset_seconds);
  const auto wd = static_cast<std::size_t>(((day % 7) + 7 + 3) % 7);
  return {daytime, weekday_labels[wd], wd >= 5 ? "weekend"sv : "workday"sv};
}

// ---------------------------------------------------------------------------
// Places

PlaceLabels infer_home_work(std::span<const RawSample> samples, const HomeWorkOptions& options) {
  PlaceLabels labels;
  if (samples.empty()) return labels;
  labels.user = samples.front().user;

  WindowTally night;
  WindowTally office;
  for (const auto& s : samples) {
    if (s.location_cell.empty()) continue;
    const int hour = local_hour(s.timestamp, options.tz_offset_seconds);
    const std::int64_t day = local_day(s.timestamp, options.tz_offset_seconds);
    if (hour >= 1 && hour < 6) {
      night.add(s.location_cell, s.timestamp, day);
    } else if (hour >= 9 && hour < 18 &&
               bucket_timestamp(s.timestamp, options.tz_offset_seconds).isweekend == "workday") {
      office.add(s.location_cell, s.timestamp, day);
    }
  }

  labels.home_days = night.days.size();
  labels.work_days = office.days.size();
  if (labels.home_days >= options.min_days) {
    if (auto m = night.mode(std::nullopt)) {
      labels.home = m->first;
      labels.home_support = m->second;
    }
  }
  if (labels.work_days >= options.min_days) {
    if (auto m = office.mode(labels.home)) {
      labels.work = m->first;
      labels.work_support = m->second;
    }
  }
  return labels;
}

std::string_view classify_location(std::string_view cell, const PlaceLabels& labels) {
  if (!cell.empty()) {
    if (labels.home && cell == *labels.home) return "home";
    if (labels.work && cell == *labels.work) return "work";
  }
  return "other";
}

// ---------------------------------------------------------------------------
// Geography and weather

std::vector<CityCenter> load_city_centers(std::istream& in) {
  std::vector<CityCenter> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = strip_cr(line);
    if (trim(row).empty() || row.front() == '#') continue;
    const auto f = split_fields(row);
    if (f.size() < 3) throw ParseError("expected name, lat, lon", lineno, f.size() + 1);
    const auto lat = parse_double(f[1]);
    const auto lon = parse_double(f[2]);
    if (!lat) {
      if (lineno == 1) continue;  // header
      throw ParseError("invalid latitude", lineno, 2);
    }
    if (!lon) throw ParseError("invalid longitude", lineno, 3);
    out.push_back({std::string(trim(f[0])), *lat, *lon});
  }
  return out;
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kEarthRadiusKm = 6371.0;
  constexpr double kRad = 3.14159265358979323846 / 180.0;
  const double dlat = (lat2 - lat1) * kRad;
  const double dlon = (lon2 - lon1) * kRad;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * kRad) * std::cos(lat2 * kRad) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

bool classify_city(std::optional<double> lat, std::optional<double> lon,
                   std::span<const CityCenter> centers, DataQuality* quality) {
  if (!lat || !lon) {
    if (quality) ++quality->missing_coordinates;
    return false;
  }
  for (const auto& c : centers) {
    if (haversine_km(*lat, *lon, c.lat, c.lon) < kCityRadiusKm) return true;
  }
  return false;
}

FileWeatherProvider::FileWeatherProvider(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = strip_cr(line);
    if (trim(row).empty() || row.front() == '#') continue;
    const auto f = split_fields(row);
    if (f.size() < 4) throw ParseError("expected lat_bucket, lon_bucket, day, weather", lineno, 1);
    const auto lat = parse_double(f[0]);
    const auto lon = parse_double(f[1]);
    if (!lat || !lon) {
      if (lineno == 1) continue;
      throw ParseError("invalid bucket coordinate", lineno, lat ? 2 : 1);
    }
    const std::string weather(trim(f[3]));
    if (!encode_value(Dim::weather, weather)) {
      throw ParseError("unknown weather '" + weather + "'", lineno, 4);
    }
    table_[{std::llround(*lat / kBucketDegrees), std::llround(*lon / kBucketDegrees),
            std::string(trim(f[2]))}] = weather;
  }
}

FileWeatherProvider FileWeatherProvider::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open weather file " + path);
  return FileWeatherProvider(in);
}

std::int64_t FileWeatherProvider::bucket(double degrees) {
  return static_cast<std::int64_t>(std::floor(degrees / kBucketDegrees));
}

std::string FileWeatherProvider::utc_date(std::int64_t ts) {
  const auto [y, m, d] = civil_from_days(floor_div(ts, 86400));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", y, m, d);
  return buf;
}

std::string FileWeatherProvider::lookup(double lat, double lon, std::int64_t ts) const {
  const auto it = table_.find({bucket(lat), bucket(lon), utc_date(ts)});
  return it == table_.end() ? "unknown" : it->second;
}

std::string_view battery_level(double pct) {
  if (pct >= 95) return "full";
  if (pct >= 60) return "high";
  if (pct >= 30) return "medium";
  if (pct >= 10) return "low";
  return "empty";
}

// ---------------------------------------------------------------------------
// Enrichment

std::string Enricher::category_of(const AppId& app) const {
  const auto it = config_.catalog.find(app);
  return it == config_.catalog.end() ? "unknown" : it->second.category;
}

ContextVector Enricher::enrich(const RawSample& s) {
  int tz = 0;
  std::string country = "unknown";
  if (const auto p = config_.profiles.find(s.user); p != config_.profiles.end()) {
    tz = p->second.tz_offset_seconds;
    if (encode_value(Dim::country, p->second.country)) country = p->second.country;
  }
  const auto time = bucket_timestamp(s.timestamp, tz);

  std::string_view location = "other";
  if (const auto p = config_.places.find(s.user); p != config_.places.end()) {
    location = classify_location(s.location_cell, p->second);
  }

  const bool city = classify_city(s.lat, s.lon, config_.cities, &quality_);

  std::string weather = "unknown";
  if (config_.weather && s.lat && s.lon) weather = config_.weather->lookup(*s.lat, *s.lon, s.timestamp);
  if (!encode_value(Dim::weather, weather)) {
    ++quality_.unknown_weather;
    weather = config_.weather_fallback;
  }

  std::string_view battery = "medium";
  if (s.battery_pct) {
    battery = battery_level(*s.battery_pct);
  } else {
    ++quality_.missing_battery;
  }

  const std::string_view energy = s.charger == "usb" ? "usb" : s.charger == "ac" ? "ac" : "battery";
  std::string_view conn = s.connectivity;
  if (!encode_value(Dim::connectivity, conn)) {
    ++quality_.unknown_connectivity;
    conn = "none";
  }

  ContextVector v;
  v.set(Dim::daytime, std::string(time.daytime))
      .set(Dim::weekday, std::string(time.weekday))
      .set(Dim::isweekend, std::string(time.isweekend))
      .set(Dim::location, std::string(location))
      .set(Dim::city, city ? "true" : "false")
      .set(Dim::country, country)
      .set(Dim::weather, weather)
      .set(Dim::battery, std::string(battery))
      .set(Dim::energy, std::string(energy))
      .set(Dim::connectivity, std::string(conn))
      .set(Dim::screen, s.screen_on ? "on" : "off");
  return v;
}

// ---------------------------------------------------------------------------
// Usage events

std::vector<UsageRun> find_usage_runs(std::span<const RawSample> samples,
                                      std::int64_t max_gap_seconds) {
  std::vector<UsageRun> runs;
  const RawSample* prev = nullptr;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const bool active = s.screen_on && s.foreground_app.has_value();
    if (!active) {
      prev = nullptr;
      continue;
    }
    const bool extends = prev && prev->user == s.user &&
                         *prev->foreground_app == *s.foreground_app &&
                         s.timestamp - prev->timestamp <= max_gap_seconds;
    if (extends) {
      ++runs.back().length;
    } else {
      runs.push_back({i, 1});
    }
    prev = &s;
  }
  return runs;
}

std::vector<InteractionEvent> extract_usage_events(std::span<const RawSample> samples,
                                                   Enricher& enricher,
                                                   std::int64_t max_gap_seconds) {
  std::vector<InteractionEvent> events;
  for (const auto& run : find_usage_runs(samples, max_gap_seconds)) {
    const RawSample& s = samples[run.first];
    InteractionEvent e;
    e.user = s.user;
    e.app = *s.foreground_app;
    e.category = enricher.category_of(e.app);
    e.kind = EventKind::used;
    e.timestamp = s.timestamp;
    e.context = enricher.enrich(s);
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<InteractionEvent> sessionize(std::vector<InteractionEvent> events,
                                         std::int64_t gap_seconds) {
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    if (a.user != b.user) return a.user < b.user;
    return a.timestamp < b.timestamp;
  });
  std::int64_t next_session = 0;
  const UserId* current_user = nullptr;
  std::optional<std::int64_t> last_ts;
  for (auto& e : events) {
    if (e.kind == EventKind::used) {
      e.session.reset();
      continue;
    }
    if (!current_user || *current_user != e.user) {
      current_user = &e.user;
      last_ts.reset();
    }
    if (!last_ts || e.timestamp - *last_ts > gap_seconds) ++next_session;
    e.session = next_session;
    last_ts = e.timestamp;
  }
  return events;
}

UsageCube aggregate_usage(std::span<const InteractionEvent> events) {
  UsageCube cube;
  for (const auto& e : events) {
    if (e.kind != EventKind::used) continue;
    cube.add(e.user, e.app, e.category, encode(e.context), 1, e.timestamp);
  }
  return cube;
}

CleanResult clean(const UsageCube& cube, std::span<const InteractionEvent> events,
                  std::span<const UserId> retrieval_failures) {
  std::map<UserId, std::string> removed;
  for (const auto& u : retrieval_failures) removed.emplace(u, "retrieval failure");
  for (const auto& e : events) {
    if (!cube.find_user(e.user)) removed.emplace(e.user, "no usage");
  }

  CleanResult result;
  for (const auto& [key, cell] : cube.cells()) {
    if (removed.contains(cube.user(key.user))) continue;
    result.cube.add(cube.user(key.user), cube.app(key.app), cube.category(key.app), key.context,
                    cell.count, cell.first_ts);
  }
  for (const auto& e : events) {
    if (!removed.contains(e.user)) result.events.push_back(e);
  }
  for (const auto& [user, reason] : removed) result.report.push_back({user, reason});
  return result;
}

PipelineResult run_pipeline(PipelineInput input) {
  auto& samples = input.samples;
  std::stable_sort(samples.begin(), samples.end(), [](const RawSample& a, const RawSample& b) {
    if (a.user != b.user) return a.user < b.user;
    return a.timestamp < b.timestamp;
  });

  PipelineResult result;
  EnrichmentConfig& cfg = input.enrichment;
  const bool infer = cfg.places.empty();
  std::vector<UserId> sample_users;
  for (std::size_t i = 0; i < samples.size();) {
    std::size_t j = i;
    while (j < samples.size() && samples[j].user == samples[i].user) ++j;
    const UserId& user = samples[i].user;
    sample_users.push_back(user);
    if (infer) {
      HomeWorkOptions opts;
      opts.min_days = input.min_days;
      if (const auto p = cfg.profiles.find(user); p != cfg.profiles.end()) {
        opts.tz_offset_seconds = p->second.tz_offset_seconds;
      }
      cfg.places[user] = infer_home_work(std::span(samples).subspan(i, j - i), opts);
    }
    i = j;
  }
  for (const auto& [user, labels] : cfg.places) result.places.push_back(labels);
  std::sort(result.places.begin(), result.places.end(),
            [](const PlaceLabels& a, const PlaceLabels& b) { return a.user < b.user; });

  Enricher enricher(std::move(cfg));
  auto events = extract_usage_events(samples, enricher, input.max_gap_seconds);
  const UsageCube cube = aggregate_usage(events);
  CleanResult cleaned = clean(cube, events, input.retrieval_failures);

  std::map<UserId, std::string> report;
  for (auto& entry : cleaned.report) report.emplace(entry.user, std::move(entry.reason));
  for (const auto& user : sample_users) {
    if (!cube.find_user(user)) report.emplace(user, "no usage");
  }
  for (auto& [user, reason] : report) result.report.push_back({user, std::move(reason)});

  result.cube = std::move(cleaned.cube);
  result.events = std::move(cleaned.events);
  result.quality = enricher.quality();
  return result;
}

void write_clean_report(std::span<const CleanEntry> report, std::ostream& out) {
  for (const auto& entry : report) out << entry.user.str() << '\t' << entry.reason << '\n';
}

// ---------------------------------------------------------------------------
// Raw samples, profiles, catalog

std::vector<RawSample> parse_raw_samples(std::istream& in) {
  std::vector<RawSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = strip_cr(line);
    if (trim(row).empty()) continue;
    const auto f = split_fields(row);
    if (lineno == 1 && !f.empty() && trim(f[0]) == "user") continue;
    if (f.size() < 10) throw ParseError("raw sample needs 10 fields", lineno, f.size() + 1);
    RawSample s;
    if (trim(f[0]).empty()) throw ParseError("empty user", lineno, 1);
    s.user = UserId(std::string(trim(f[0])));
    const auto ts = parse_number<std::int64_t>(f[1]);
    if (!ts) throw ParseError("invalid timestamp", lineno, 2);
    s.timestamp = *ts;
    if (!trim(f[2]).empty()) s.foreground_app = AppId(std::string(trim(f[2])));
    const auto screen = trim(f[3]);
    if (screen == "on" || screen == "1" || screen == "true") {
      s.screen_on = true;
    } else if (screen == "off" || screen == "0" || screen == "false" || screen.empty()) {
      s.screen_on = false;
    } else {
      throw ParseError("invalid screen state '" + std::string(screen) + "'", lineno, 4);
    }
    s.location_cell = std::string(trim(f[4]));
    auto opt_double = [&](std::size_t idx) -> std::optional<double> {
      if (trim(f[idx]).empty()) return std::nullopt;
      const auto v = parse_double(f[idx]);
      if (!v) throw ParseError("invalid number", lineno, idx + 1);
      return v;
    };
    s.lat = opt_double(5);
    s.lon = opt_double(6);
    s.battery_pct = opt_double(7);
    s.charger = std::string(trim(f[8]));
    s.connectivity = std::string(trim(f[9]));
    out.push_back(std::move(s));
  }
  return out;
}

void write_raw_samples(std::span<const RawSample> samples, std::ostream& out) {
  out << "user\tts\tapp\tscreen\tcell\tlat\tlon\tbattery_pct\tcharger\tconn\n";
  char buf[64];
  auto num = [&](const std::optional<double>& v) -> std::string {
    if (!v) return "";
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
  };
  for (const auto& s : samples) {
    out << s.user.str() << '\t' << s.timestamp << '\t'
        << (s.foreground_app ? s.foreground_app->str() : "") << '\t'
        << (s.screen_on ? "on" : "off") << '\t' << s.location_cell << '\t' << num(s.lat) << '\t'
        << num(s.lon) << '\t' << num(s.battery_pct) << '\t' << s.charger << '\t'
        << s.connectivity << '\n';
  }
}

std::unordered_map<UserId, UserProfile> parse_profiles(std::istream& in) {
  std::unordered_map<UserId, UserProfile> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = strip_cr(line);
    if (trim(row).empty() || row.front() == '#') continue;
    const auto f = split_fields(row);
    if (lineno == 1 && trim(f[0]) == "user") continue;
    if (f.size() < 2) throw ParseError("profile needs user and tz_offset", lineno, f.size() + 1);
    UserProfile p;
    p.user = UserId(std::string(trim(f[0])));
    const auto tz = parse_number<int>(f[1]);
    if (!tz) throw ParseError("invalid tz offset", lineno, 2);
    p.tz_offset_seconds = *tz;
    if (f.size() > 2 && !trim(f[2]).empty()) p.country = std::string(trim(f[2]));
    if (!encode_value(Dim::country, p.country)) {
      throw ParseError("invalid country '" + p.country + "'", lineno, 3);
    }
    if (f.size() > 3) p.languages = split_list(f[3]);
    if (f.size() > 4) p.tags = split_list(f[4]);
    out[p.user] = std::move(p);
  }
  return out;
}

void write_profiles(std::span<const UserProfile> profiles, std::ostream& out) {
  out << "user\ttz_offset\tcountry\tlanguages\ttags\n";
  for (const auto& p : profiles) {
    out << p.user.str() << '\t' << p.tz_offset_seconds << '\t' << p.country << '\t'
        << join_list(p.languages) << '\t' << join_list(p.tags) << '\n';
  }
}

std::unordered_map<AppId, AppInfo> parse_catalog(std::istream& in) {
  std::unordered_map<AppId, AppInfo> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = strip_cr(line);
    if (trim(row).empty() || row.front() == '#') continue;
    const auto f = split_fields(row);
    if (lineno == 1 && trim(f[0]) == "app") continue;
    AppInfo a;
    if (trim(f[0]).empty()) throw ParseError("empty app", lineno, 1);
    a.id = AppId(std::string(trim(f[0])));
    if (f.size() > 1 && !trim(f[1]).empty()) a.category = std::string(trim(f[1]));
    if (f.size() > 2 && !trim(f[2]).empty()) a.language = std::string(trim(f[2]));
    if (f.size() > 3) a.audience = split_list(f[3]);
    out[a.id] = std::move(a);
  }
  return out;
}

void write_catalog(std::span<const AppInfo> apps, std::ostream& out) {
  out << "app\tcategory\tlanguage\taudience\n";
  for (const auto& a : apps) {
    out << a.id.str() << '\t' << a.category << '\t' << a.language << '\t'
        << join_list(a.audience) << '\n';
  }
}

}  // namespace ctxrec
