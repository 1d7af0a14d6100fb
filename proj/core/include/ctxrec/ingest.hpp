#pragma once

// Dataset parsing, raw-sample enrichment and aggregation into a UsageCube.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "ctxrec/domain.hpp"

namespace ctxrec {

// Sparse (user, app, context) -> count tensor with cached marginals.
//
// Users and apps are interned to dense indices in first-seen order. Marginals
// are kept in sync on every add() and can be cross-checked against a rebuild
// with marginals_consistent().
class UsageCube {
 public:
  struct Key {
    std::uint32_t user = 0;
    std::uint32_t app = 0;
    ContextKey context;

    auto operator<=>(const Key&) const = default;
  };

  struct Cell {
    std::uint64_t count = 0;
    std::int64_t first_ts = 0;
  };

  UsageCube();

  // Zero counts are ignored. Duplicate keys are summed.
  void add(const UsageTuple& t);
  void add(const UserId& user, const AppId& app, std::string_view category,
           const ContextKey& context, std::uint64_t count, std::int64_t ts = 0);

  const std::map<Key, Cell>& cells() const { return cells_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }

  std::size_t num_users() const { return users_.size(); }
  std::size_t num_apps() const { return apps_.size(); }
  const UserId& user(std::uint32_t idx) const { return users_.at(idx); }
  const AppId& app(std::uint32_t idx) const { return apps_.at(idx); }
  const std::string& category(std::uint32_t app_idx) const { return categories_.at(app_idx); }
  std::optional<std::uint32_t> find_user(const UserId& u) const;
  std::optional<std::uint32_t> find_app(const AppId& a) const;

  std::uint64_t grand_total() const { return grand_total_; }
  std::uint64_t app_total(std::uint32_t app) const { return app_totals_.at(app); }
  std::uint64_t user_total(std::uint32_t user) const { return user_totals_.at(user); }
  std::uint64_t context_total(Dim d, ValueIndex v) const;
  std::uint64_t app_context_count(std::uint32_t app, Dim d, ValueIndex v) const;
  // Distinct values of `d` with non-zero total usage.
  std::size_t observed_values(Dim d) const;

  bool marginals_consistent() const;

  std::vector<UsageTuple> tuples() const;

 private:
  static std::size_t slot(Dim d, ValueIndex v);
  std::uint32_t intern_user(const UserId& u);
  std::uint32_t intern_app(const AppId& a, std::string_view category);

  std::vector<UserId> users_;
  std::vector<AppId> apps_;
  std::vector<std::string> categories_;
  std::unordered_map<UserId, std::uint32_t> user_index_;
  std::unordered_map<AppId, std::uint32_t> app_index_;

  std::map<Key, Cell> cells_;
  std::uint64_t grand_total_ = 0;
  std::vector<std::uint64_t> app_totals_;
  std::vector<std::uint64_t> user_totals_;
  std::vector<std::uint64_t> context_totals_;           // per value slot
  std::vector<std::vector<std::uint64_t>> app_context_;  // per app, per slot
};

// Adapts an external tuple dataset to the canonical schema. Loaded from a
// key=value file:
//
//   column.<external> = <canonical column>
//   value.<dimension>.<external> = <canonical value>   ("*" matches anything)
//   default.<canonical column> = <value>              (for absent columns)
//   delimiter = tab | comma
struct ColumnMapping {
  std::map<std::string, std::string> columns;
  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::string> defaults;
  char delimiter = '\t';

  static ColumnMapping load(std::istream& in);
  static ColumnMapping load_file(const std::string& path);
};

// Canonical header, in order.
std::span<const std::string_view> canonical_tuple_columns();

UsageCube parse_tuples(std::istream& in, const ColumnMapping* mapping = nullptr);
UsageCube parse_tuples(const std::string& path, const ColumnMapping* mapping = nullptr);
void write_tuples(const UsageCube& cube, std::ostream& out);

struct TimeBuckets {
  std::string_view daytime;
  std::string_view weekday;
  std::string_view isweekend;
};

// Morning [06,12), afternoon [12,18), evening [18,24), night [00,06) local.
TimeBuckets bucket_timestamp(std::int64_t ts, int tz_offset_seconds = 0);
int local_hour(std::int64_t ts, int tz_offset_seconds);
// Days since the Unix epoch in local time.
std::int64_t local_day(std::int64_t ts, int tz_offset_seconds);

struct PlaceLabels {
  UserId user;
  std::optional<std::string> home;
  std::optional<std::string> work;
  std::size_t home_support = 0;  // samples backing the home label
  std::size_t work_support = 0;
  std::size_t home_days = 0;     // distinct local days in the night window
  std::size_t work_days = 0;     // distinct local workdays in office hours
};

struct HomeWorkOptions {
  std::size_t min_days = 3;
  int tz_offset_seconds = 0;
};

// Home: modal cell over local [01:00,06:00). Work: modal cell over
// [09:00,18:00) on workdays, excluding the home cell. A label needs at least
// `min_days` distinct contributing days. Ties go to the earliest-observed cell.
// `samples` must belong to a single user.
PlaceLabels infer_home_work(std::span<const RawSample> samples,
                            const HomeWorkOptions& options = {});

std::string_view classify_location(std::string_view cell, const PlaceLabels& labels);

struct CityCenter {
  std::string name;
  double lat = 0;
  double lon = 0;
};

std::vector<CityCenter> load_city_centers(std::istream& in);

double haversine_km(double lat1, double lon1, double lat2, double lon2);
inline constexpr double kCityRadiusKm = 20.0;

struct DataQuality {
  std::size_t missing_coordinates = 0;
  std::size_t unknown_weather = 0;
  std::size_t missing_battery = 0;
  std::size_t unknown_connectivity = 0;
};

// True iff the point lies strictly within 20 km of the nearest center.
// Missing coordinates count against `quality` and yield false.
bool classify_city(std::optional<double> lat, std::optional<double> lon,
                   std::span<const CityCenter> centers, DataQuality* quality = nullptr);

class WeatherProvider {
 public:
  virtual ~WeatherProvider() = default;
  // Weather label or "unknown".
  virtual std::string lookup(double lat, double lon, std::int64_t ts) const = 0;
};

// Table keyed by 0.5 degree grid cell and UTC day:
//   lat_bucket <TAB> lon_bucket <TAB> YYYY-MM-DD <TAB> weather
class FileWeatherProvider : public WeatherProvider {
 public:
  static constexpr double kBucketDegrees = 0.5;

  explicit FileWeatherProvider(std::istream& in);
  static FileWeatherProvider load_file(const std::string& path);

  std::string lookup(double lat, double lon, std::int64_t ts) const override;

  static std::int64_t bucket(double degrees);
  static std::string utc_date(std::int64_t ts);

 private:
  std::map<std::tuple<std::int64_t, std::int64_t, std::string>, std::string> table_;
};

std::string_view battery_level(double pct);

struct EnrichmentConfig {
  std::vector<CityCenter> cities;
  std::shared_ptr<const WeatherProvider> weather;
  std::string weather_fallback = "cloudy";
  std::unordered_map<UserId, UserProfile> profiles;
  std::unordered_map<UserId, PlaceLabels> places;
  std::unordered_map<AppId, AppInfo> catalog;
};

// Turns raw samples into full context vectors.
class Enricher {
 public:
  explicit Enricher(EnrichmentConfig config) : config_(std::move(config)) {}

  ContextVector enrich(const RawSample& s);
  std::string category_of(const AppId& app) const;
  const DataQuality& quality() const { return quality_; }
  const EnrichmentConfig& config() const { return config_; }

 private:
  EnrichmentConfig config_;
  DataQuality quality_;
};

struct UsageRun {
  std::size_t first = 0;   // index of the first sample
  std::size_t length = 0;  // samples in the run
};

inline constexpr std::int64_t kDefaultRunGapSeconds = 120;

// Maximal runs of consecutive samples of one user with the screen on and the
// same foreground app. A sampling gap above `max_gap_seconds` ends a run.
// `samples` must be sorted by (user, timestamp).
std::vector<UsageRun> find_usage_runs(std::span<const RawSample> samples,
                                      std::int64_t max_gap_seconds = kDefaultRunGapSeconds);

// One `used` event per usage run, with the context of the run's first sample.
std::vector<InteractionEvent> extract_usage_events(
    std::span<const RawSample> samples, Enricher& enricher,
    std::int64_t max_gap_seconds = kDefaultRunGapSeconds);

// Sorts stably by (user, timestamp) and numbers client-event sessions from 1.
// A new session starts when the gap to the user's previous client event
// exceeds `gap_seconds`. `used` events are left without a session.
std::vector<InteractionEvent> sessionize(std::vector<InteractionEvent> events,
                                         std::int64_t gap_seconds = 300);

// Builds a cube from `used` events, one count per event.
UsageCube aggregate_usage(std::span<const InteractionEvent> events);

struct CleanEntry {
  UserId user;
  std::string reason;

  bool operator==(const CleanEntry&) const = default;
};

struct CleanResult {
  UsageCube cube;
  std::vector<InteractionEvent> events;
  std::vector<CleanEntry> report;  // sorted by user
};

// Drops users without usage tuples ("no usage") and users whose data
// retrieval was flagged as failed ("retrieval failure").
CleanResult clean(const UsageCube& cube, std::span<const InteractionEvent> events,
                  std::span<const UserId> retrieval_failures = {});

void write_clean_report(std::span<const CleanEntry> report, std::ostream& out);

struct PipelineInput {
  std::vector<RawSample> samples;  // any order
  EnrichmentConfig enrichment;     // places are inferred when left empty
  std::vector<UserId> retrieval_failures;
  std::size_t min_days = 3;
  std::int64_t max_gap_seconds = kDefaultRunGapSeconds;
};

struct PipelineResult {
  UsageCube cube;
  std::vector<InteractionEvent> events;  // `used` events of kept users
  std::vector<PlaceLabels> places;       // sorted by user
  std::vector<CleanEntry> report;        // sorted by user
  DataQuality quality;
};

// Home/work inference, enrichment, usage-run extraction, aggregation and
// cleaning. Users with samples but no usage runs are reported as "no usage".
PipelineResult run_pipeline(PipelineInput input);

// Raw sample TSV:
//   user ts app screen cell lat lon battery_pct charger conn
std::vector<RawSample> parse_raw_samples(std::istream& in);
void write_raw_samples(std::span<const RawSample> samples, std::ostream& out);

// user tz_offset_seconds country languages(csv) tags(csv)
std::unordered_map<UserId, UserProfile> parse_profiles(std::istream& in);
void write_profiles(std::span<const UserProfile> profiles, std::ostream& out);

// app category language audience(csv)
std::unordered_map<AppId, AppInfo> parse_catalog(std::istream& in);
void write_catalog(std::span<const AppInfo> apps, std::ostream& out);

// Splits on `delim`, keeping empty fields.
std::vector<std::string_view> split_fields(std::string_view line, char delim = '\t');

}  // namespace ctxrec
