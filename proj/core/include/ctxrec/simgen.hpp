#pragma once

// Synthetic worlds with planted contextual effects, rendered as raw device
// samples (for the ingest pipeline) and as recommendation-session event logs.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "ctxrec/domain.hpp"
#include "ctxrec/ingest.hpp"
#include "ctxrec/model.hpp"

namespace ctxrec {

struct CategorySpec {
  std::string name;
  double weight = 1.0;  // base popularity of the category
};

std::vector<CategorySpec> default_categories();

// Multiplies the choice weight of matching apps by `gamma` whenever the true
// context has dim == value. `target` is a category name, or an app id when
// `is_app` is set.
struct Affinity {
  std::string target;
  bool is_app = false;
  Dim dim = Dim::isweekend;
  std::string value;
  double gamma = 1.0;
};

struct WorldSpec {
  std::size_t n_users = 200;
  std::size_t n_apps = 50;
  std::vector<CategorySpec> categories = default_categories();
  std::vector<Affinity> affinities;
  double zipf_exponent = 0.8;  // app popularity within the catalog
  double taste_sigma = 0.0;    // per-user log-normal category taste
  double location_noise = 0.1; // chance a sample reports a random other cell
  double work_dwell = 0.85;    // P(at work) during workday office hours
  double broken_fraction = 0.0;
  std::size_t n_days = 28;
  std::int64_t start_ts = 1388966400;  // Monday 2014-01-06 00:00 UTC
  std::vector<int> tz_offsets = {0};
  std::uint64_t seed = 1;

  void validate() const;  // throws ValidationError
};

// The world's app catalog (ids, categories, languages, audiences).
std::vector<AppInfo> world_catalog(const WorldSpec& spec);

enum class BrokenKind { none, no_usage, retrieval_failure };
std::string_view to_string(BrokenKind k);

struct UserTruth {
  UserId user;
  std::string home;
  std::string work;
  int tz_offset_seconds = 0;
  std::string country;
  BrokenKind broken = BrokenKind::none;
  std::map<std::string, double> taste;  // category -> multiplier
};

struct GroundTruth {
  std::uint64_t seed = 0;
  std::size_t n_events = 0;
  std::vector<UserTruth> users;
  std::vector<AppInfo> apps;
  std::vector<double> app_weights;
  std::vector<Affinity> affinities;
};

struct WeatherRow {
  double lat = 0;  // south-west corner of the grid cell
  double lon = 0;
  std::string date;
  std::string weather;
};

struct GeneratedUsage {
  std::vector<RawSample> samples;  // sorted by (user, timestamp)
  std::vector<UserProfile> profiles;
  std::vector<AppInfo> catalog;
  std::vector<CityCenter> cities;
  std::vector<WeatherRow> weather;
  std::vector<UserId> retrieval_failures;
  GroundTruth truth;

  // Everything run_pipeline() needs, places left for inference.
  PipelineInput pipeline_input() const;
};

// Hourly screen-off heartbeats per user plus `n_events` usage runs. Each run is
// 1 to 5 one-minute samples of one app followed by a screen-off sample, so the
// ingest pipeline sees exactly one usage event per run. Throws
// ValidationError when the calendar cannot hold `n_events`.
GeneratedUsage generate_usage(const WorldSpec& spec, std::size_t n_events);

void write_weather_table(std::span<const WeatherRow> rows, std::ostream& out);
void write_city_centers(std::span<const CityCenter> cities, std::ostream& out);
void to_json(nlohmann::json& j, const GroundTruth& truth);

struct SessionSimConfig {
  std::size_t list_size = 21;
  double p_view = 0.04;
  double p_install = 0.19;  // per view
  std::map<std::string, double> category_install;  // per-category override of p_install
  double p_direct = 0.578;  // use within the window after install
  std::int64_t direct_window_seconds = 24 * 3600;
  double p_late_use = 0.3;  // use after the window when not used directly
  double p_uninstall = 0.3;
  double ttl_short_share = 0.5;  // mixture weight of the short component
  double ttl_short_mean_seconds = 3600;
  double ttl_long_mean_seconds = 3 * 86400;
  std::optional<std::size_t> stop_after_views;
  std::optional<std::size_t> stop_after_installs;
  std::uint64_t seed = 1;

  void validate() const;  // throws ValidationError
};

// Sessions of `list_size` shown apps. The list is the recommender's top
// apps when given (training users only), otherwise a popularity-weighted
// sample. Unviewed items emit `skipped`. Sessions are numbered from 1 and lie
// far enough apart to survive re-sessionizing.
std::vector<InteractionEvent> simulate_sessions(const WorldSpec& spec, const SessionSimConfig& config,
                                                std::size_t n_sessions, const Scorer* recommender = nullptr);

}  // namespace ctxrec
