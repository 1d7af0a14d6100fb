#include "ctxrec/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace ctxrec {
namespace {

struct City {
  const char* name;
  double lat;
  double lon;
  const char* country;
  const char* language;
};

constexpr City kCities[] = {
    {"Barcelona", 41.3874, 2.1686, "ES", "es"}, {"Madrid", 40.4168, -3.7038, "ES", "es"},
    {"Berlin", 52.5200, 13.4050, "DE", "de"},   {"London", 51.5072, -0.1276, "GB", "en"},
    {"Paris", 48.8566, 2.3522, "FR", "fr"},     {"Amsterdam", 52.3676, 4.9041, "NL", "nl"},
};
constexpr std::size_t kNumCities = std::size(kCities);
constexpr std::size_t kOtherCellsPerCity = 6;

constexpr const char* kForeignLanguages[] = {"de", "fr", "es", "nl"};

struct Cell {
  std::string id;
  double lat = 0;
  double lon = 0;
  std::size_t city = 0;
};

// Point at `km` from the city center in direction `bearing` (radians).
Cell place(std::string id, std::size_t city, double km, double bearing) {
  const City& c = kCities[city];
  const double dlat = km * std::cos(bearing) / 111.0;
  const double dlon = km * std::sin(bearing) / (111.0 * std::cos(c.lat * std::numbers::pi / 180.0));
  return {std::move(id), c.lat + dlat, c.lon + dlon, city};
}

std::string padded(const char* prefix, std::size_t value, std::size_t count) {
  const int width = std::max(3, static_cast<int>(std::to_string(count).size()));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, value);
  return buf;
}

bool bernoulli(std::mt19937_64& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

// Deterministic catalog: apps are dealt round-robin to categories, weights
// decay by a Zipf law over the app index.
void build_catalog(const WorldSpec& spec, std::vector<AppInfo>& apps, std::vector<double>& weights) {
  for (std::size_t a = 0; a < spec.n_apps; ++a) {
    const CategorySpec& cat = spec.categories[a % spec.categories.size()];
    AppInfo info;
    info.id = AppId(padded("app", a + 1, spec.n_apps));
    info.category = cat.name;
    info.language = a % 10 == 9 ? kForeignLanguages[(a / 10) % std::size(kForeignLanguages)] : "en";
    if (a % 12 == 11) info.audience = {"female"};
    apps.push_back(std::move(info));
    weights.push_back(cat.weight * std::pow(1.0 / static_cast<double>(a + 1), spec.zipf_exponent));
  }
}

// Local-time usage propensity per hour of day.
double hour_weight(int hour) {
  if (hour < 7) return 0.15;
  if (hour == 23) return 0.5;
  return 1.0;
}

enum class Place { home, work, other };

std::string_view place_label(Place p) {
  return p == Place::home ? "home" : p == Place::work ? "work" : "other";
}

struct HourState {
  Place place = Place::home;
  std::size_t cell = 0;  // index into the world's cell table
  double battery = 50;
  std::string charger;
  std::string conn;
};

}  // namespace

std::vector<CategorySpec> default_categories() {
  return {{"communication", 1.6}, {"social", 1.4}, {"games", 1.0},       {"tools", 1.0},
          {"news", 0.8},          {"entertainment", 0.8}, {"travel", 0.5}, {"productivity", 0.7},
          {"music", 0.7},         {"weather", 0.5}};
}

std::vector<AppInfo> world_catalog(const WorldSpec& spec) {
  spec.validate();
  std::vector<AppInfo> apps;
  std::vector<double> weights;
  build_catalog(spec, apps, weights);
  return apps;
}

void WorldSpec::validate() const {
  if (n_users == 0) throw ValidationError("n_users must be >= 1");
  if (n_apps == 0) throw ValidationError("n_apps must be >= 1");
  if (categories.empty()) throw ValidationError("at least one category is required");
  std::set<std::string> names;
  for (const auto& c : categories) {
    if (c.name.empty() || !names.insert(c.name).second) throw ValidationError("category names must be unique");
    if (!(c.weight > 0) || !std::isfinite(c.weight)) throw ValidationError("category weight must be > 0");
  }
  for (const auto& a : affinities) {
    if (!(a.gamma >= 0) || !std::isfinite(a.gamma)) throw ValidationError("affinity multiplier must be finite and >= 0");
    if (!encode_value(a.dim, a.value)) {
      throw ValidationError("affinity value '" + a.value + "' invalid for " + std::string(dim_name(a.dim)));
    }
    if (!a.is_app && !names.contains(a.target)) throw ValidationError("affinity on unknown category '" + a.target + "'");
  }
  auto prob = [](double p, const char* what) {
    if (!(p >= 0 && p <= 1)) throw ValidationError(std::string(what) + " must be in [0, 1]");
  };
  prob(location_noise, "location_noise");
  prob(work_dwell, "work_dwell");
  prob(broken_fraction, "broken_fraction");
  if (!(zipf_exponent >= 0) || !std::isfinite(zipf_exponent)) throw ValidationError("zipf_exponent must be >= 0");
  if (!(taste_sigma >= 0) || !std::isfinite(taste_sigma)) throw ValidationError("taste_sigma must be >= 0");
  if (n_days == 0) throw ValidationError("n_days must be >= 1");
  if (tz_offsets.empty()) throw ValidationError("tz_offsets must not be empty");
}

std::string_view to_string(BrokenKind k) {
  switch (k) {
    case BrokenKind::none: return "none";
    case BrokenKind::no_usage: return "no_usage";
    case BrokenKind::retrieval_failure: return "retrieval_failure";
  }
  return "none";
}

PipelineInput GeneratedUsage::pipeline_input() const {
  PipelineInput in;
  in.samples = samples;
  in.enrichment.cities = cities;
  std::ostringstream table;
  write_weather_table(weather, table);
  std::istringstream parsed(table.str());
  in.enrichment.weather = std::make_shared<FileWeatherProvider>(parsed);
  for (const auto& p : profiles) in.enrichment.profiles.emplace(p.user, p);
  for (const auto& a : catalog) in.enrichment.catalog.emplace(a.id, a);
  in.retrieval_failures = retrieval_failures;
  return in;
}

GeneratedUsage generate_usage(const WorldSpec& spec, std::size_t n_events) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GeneratedUsage out;
  out.truth.seed = spec.seed;
  out.truth.n_events = n_events;
  out.truth.affinities = spec.affinities;
  build_catalog(spec, out.catalog, out.truth.app_weights);
  out.truth.apps = out.catalog;
  for (const auto& c : kCities) out.cities.push_back({c.name, c.lat, c.lon});

  // Cell table: per city a pool of "other" places, half near the center.
  std::vector<Cell> cells;
  std::vector<std::vector<std::size_t>> city_pool(kNumCities);
  for (std::size_t c = 0; c < kNumCities; ++c) {
    for (std::size_t k = 0; k < kOtherCellsPerCity; ++k) {
      const double km = k % 2 == 0 ? 2 + 8 * unit(rng) : 35 + 25 * unit(rng);
      city_pool[c].push_back(cells.size());
      cells.push_back(place("o" + std::to_string(c) + "-" + std::to_string(k), c, km,
                            2 * std::numbers::pi * unit(rng)));
    }
  }
  const std::size_t n_pool = cells.size();

  // Users.
  const auto n_broken = static_cast<std::size_t>(std::llround(spec.broken_fraction * static_cast<double>(spec.n_users)));
  std::vector<std::size_t> order(spec.n_users);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<BrokenKind> broken(spec.n_users, BrokenKind::none);
  for (std::size_t k = 0; k < n_broken; ++k) {
    broken[order[k]] = k % 2 == 0 ? BrokenKind::no_usage : BrokenKind::retrieval_failure;
  }

  std::vector<std::size_t> home_cell(spec.n_users), work_cell(spec.n_users), user_city(spec.n_users);
  std::normal_distribution<double> taste_noise(0.0, spec.taste_sigma > 0 ? spec.taste_sigma : 1.0);
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    const std::size_t city = std::uniform_int_distribution<std::size_t>(0, kNumCities - 1)(rng);
    user_city[u] = city;
    const UserId id(padded("u", u + 1, spec.n_users));
    home_cell[u] = cells.size();
    cells.push_back(place(id.str() + "-home", city, 1 + 7 * unit(rng), 2 * std::numbers::pi * unit(rng)));
    work_cell[u] = cells.size();
    cells.push_back(place(id.str() + "-work", city, 1 + 7 * unit(rng), 2 * std::numbers::pi * unit(rng)));

    UserProfile profile;
    profile.user = id;
    profile.tz_offset_seconds = spec.tz_offsets[u % spec.tz_offsets.size()];
    profile.country = kCities[city].country;
    profile.languages = {kCities[city].language};
    if (profile.languages.front() != "en") profile.languages.push_back("en");
    profile.tags = {bernoulli(rng, 0.5) ? "female" : "male"};
    out.profiles.push_back(profile);

    UserTruth t;
    t.user = id;
    t.home = cells[home_cell[u]].id;
    t.work = cells[work_cell[u]].id;
    t.tz_offset_seconds = profile.tz_offset_seconds;
    t.country = profile.country;
    t.broken = broken[u];
    for (const auto& c : spec.categories) t.taste[c.name] = spec.taste_sigma > 0 ? std::exp(taste_noise(rng)) : 1.0;
    out.truth.users.push_back(std::move(t));
    if (broken[u] == BrokenKind::retrieval_failure) out.retrieval_failures.push_back(id);
  }

  // Weather per (city, UTC day), replicated to each grid cell a place occupies.
  static constexpr std::pair<const char*, double> kWeatherMix[] = {
      {"sunny", 0.35}, {"cloudy", 0.25}, {"rainy", 0.12}, {"drizzle", 0.08}, {"windy", 0.07},
      {"foggy", 0.05}, {"stormy", 0.03}, {"snowy", 0.03}, {"sleet", 0.02}};
  std::vector<double> mix_weights;
  for (const auto& [label, w] : kWeatherMix) mix_weights.push_back(w);
  std::discrete_distribution<std::size_t> weather_draw(mix_weights.begin(), mix_weights.end());
  const std::size_t n_weather_days = spec.n_days + 2;
  std::vector<std::vector<std::string>> city_weather(kNumCities);
  for (auto& days : city_weather) {
    for (std::size_t d = 0; d < n_weather_days; ++d) days.emplace_back(kWeatherMix[weather_draw(rng)].first);
  }
  const std::int64_t first_day = (spec.start_ts / 86400) * 86400 - 86400;
  std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> bucket_city;
  for (const auto& c : cells) {
    bucket_city.emplace(std::make_pair(FileWeatherProvider::bucket(c.lat), FileWeatherProvider::bucket(c.lon)), c.city);
  }
  for (const auto& [bucket, city] : bucket_city) {
    for (std::size_t d = 0; d < n_weather_days; ++d) {
      out.weather.push_back({static_cast<double>(bucket.first) * FileWeatherProvider::kBucketDegrees,
                             static_cast<double>(bucket.second) * FileWeatherProvider::kBucketDegrees,
                             FileWeatherProvider::utc_date(first_day + static_cast<std::int64_t>(d) * 86400),
                             city_weather[city][d]});
    }
  }
  auto weather_at = [&](const Cell& c, std::int64_t ts) -> const std::string& {
    const auto city = bucket_city.at({FileWeatherProvider::bucket(c.lat), FileWeatherProvider::bucket(c.lon)});
    return city_weather[city][static_cast<std::size_t>((ts - first_day) / 86400)];
  };

  // Event quota per user with usage.
  std::vector<std::size_t> active;
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    if (broken[u] != BrokenKind::no_usage) active.push_back(u);
  }
  std::vector<std::size_t> quota(spec.n_users, 0);
  if (n_events > 0 && active.empty()) throw ValidationError("no users can carry usage events");
  for (std::size_t k = 0; k < active.size(); ++k) {
    quota[active[k]] = n_events / active.size() + (k < n_events % active.size() ? 1 : 0);
  }
  constexpr std::size_t kSubSlots = 5;
  const std::size_t n_hours = spec.n_days * 24;
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    if (quota[u] > n_hours * kSubSlots / 2) {
      throw ValidationError("too many events per user for the simulated calendar; raise n_days");
    }
  }

  std::vector<double> hour_weights(24);
  for (int h = 0; h < 24; ++h) hour_weights[static_cast<std::size_t>(h)] = hour_weight(h);

  for (std::size_t u = 0; u < spec.n_users; ++u) {
    const UserProfile& profile = out.profiles[u];
    const UserTruth& truth = out.truth.users[u];
    const int tz = profile.tz_offset_seconds;

    // Hourly mobility schedule.
    std::vector<HourState> hours(n_hours);
    for (std::size_t h = 0; h < n_hours; ++h) {
      const std::int64_t ts = spec.start_ts + static_cast<std::int64_t>(h) * 3600;
      const int lh = local_hour(ts, tz);
      const bool workday = bucket_timestamp(ts, tz).isweekend == "workday";
      HourState& s = hours[h];
      if (lh < 7 || lh >= 23) {
        s.place = Place::home;
      } else if (workday && lh >= 9 && lh < 18) {
        s.place = bernoulli(rng, spec.work_dwell) ? Place::work : Place::other;
      } else {
        s.place = bernoulli(rng, workday ? 0.6 : 0.5) ? Place::home : Place::other;
      }
      const auto& pool = city_pool[user_city[u]];
      s.cell = s.place == Place::home   ? home_cell[u]
               : s.place == Place::work ? work_cell[u]
                                        : pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      s.battery = 5 + 95 * unit(rng);
      const double c = unit(rng);
      s.charger = s.place == Place::home && lh < 7 ? (c < 0.6 ? "ac" : "") : (c < 0.05 ? "usb" : c < 0.1 ? "ac" : "");
      const double n = unit(rng);
      if (s.place == Place::other) {
        s.conn = n < 0.8 ? "mobile" : n < 0.9 ? "wifi" : "none";
      } else {
        s.conn = n < 0.85 ? "wifi" : "mobile";
      }
    }

    auto reported_cell = [&](std::size_t true_cell) {
      if (bernoulli(rng, spec.location_noise)) {
        std::size_t other = std::uniform_int_distribution<std::size_t>(0, n_pool - 1)(rng);
        if (other == true_cell) other = (other + 1) % n_pool;
        return other;
      }
      return true_cell;
    };
    auto sample = [&](std::int64_t ts, const HourState& s, std::size_t cell) {
      RawSample r;
      r.user = profile.user;
      r.timestamp = ts;
      r.location_cell = cells[cell].id;
      r.lat = cells[cell].lat;
      r.lon = cells[cell].lon;
      r.battery_pct = s.battery;
      r.charger = s.charger;
      r.connectivity = s.conn;
      return r;
    };

    std::vector<RawSample> user_samples;
    user_samples.reserve(n_hours + quota[u] * 5);
    for (std::size_t h = 0; h < n_hours; ++h) {
      const std::int64_t ts = spec.start_ts + static_cast<std::int64_t>(h) * 3600;
      user_samples.push_back(sample(ts, hours[h], reported_cell(hours[h].cell)));
    }

    // Usage runs in distinct (hour, sub-slot) positions.
    std::set<std::size_t> used_slots;
    std::vector<double> slot_weights(n_hours);
    for (std::size_t h = 0; h < n_hours; ++h) {
      const std::int64_t ts = spec.start_ts + static_cast<std::int64_t>(h) * 3600;
      slot_weights[h] = hour_weights[static_cast<std::size_t>(local_hour(ts, tz))];
    }
    std::discrete_distribution<std::size_t> pick_hour(slot_weights.begin(), slot_weights.end());
    std::vector<double> app_w(spec.n_apps);
    for (std::size_t e = 0; e < quota[u]; ++e) {
      std::size_t slot = 0;
      do {
        const std::size_t h = pick_hour(rng);
        slot = h * kSubSlots + std::uniform_int_distribution<std::size_t>(0, kSubSlots - 1)(rng);
      } while (!used_slots.insert(slot).second);
      const std::size_t h = slot / kSubSlots;
      const HourState& s = hours[h];
      const std::int64_t start = spec.start_ts + static_cast<std::int64_t>(h) * 3600 +
                                 static_cast<std::int64_t>(slot % kSubSlots) * 720 + 60 +
                                 std::uniform_int_distribution<std::int64_t>(0, 240)(rng);
      const int minutes = std::uniform_int_distribution<int>(1, 5)(rng);

      // True context of the run.
      const Cell& cell = cells[s.cell];
      const auto time = bucket_timestamp(start, tz);
      ContextVector ctx;
      ctx.set(Dim::daytime, std::string(time.daytime))
          .set(Dim::weekday, std::string(time.weekday))
          .set(Dim::isweekend, std::string(time.isweekend))
          .set(Dim::location, std::string(place_label(s.place)))
          .set(Dim::city, classify_city(cell.lat, cell.lon, out.cities) ? "true" : "false")
          .set(Dim::country, profile.country)
          .set(Dim::weather, weather_at(cell, start))
          .set(Dim::battery, std::string(battery_level(s.battery)))
          .set(Dim::energy, s.charger.empty() ? "battery" : s.charger)
          .set(Dim::connectivity, s.conn)
          .set(Dim::screen, "on");

      for (std::size_t a = 0; a < spec.n_apps; ++a) {
        const AppInfo& app = out.catalog[a];
        double w = out.truth.app_weights[a] * truth.taste.at(app.category);
        for (const auto& aff : spec.affinities) {
          const bool target = aff.is_app ? aff.target == app.id.str() : aff.target == app.category;
          if (target && ctx.get(aff.dim) == aff.value) w *= aff.gamma;
        }
        app_w[a] = w;
      }
      if (std::all_of(app_w.begin(), app_w.end(), [](double w) { return w <= 0; })) {
        throw ValidationError("affinities leave no app with positive weight");
      }
      std::discrete_distribution<std::size_t> pick_app(app_w.begin(), app_w.end());
      const AppInfo& app = out.catalog[pick_app(rng)];

      const std::size_t cell_idx = reported_cell(s.cell);
      for (int m = 0; m < minutes; ++m) {
        RawSample r = sample(start + 60 * m, s, cell_idx);
        r.screen_on = true;
        r.foreground_app = app.id;
        user_samples.push_back(std::move(r));
      }
      user_samples.push_back(sample(start + 60 * minutes, s, cell_idx));
    }
    std::stable_sort(user_samples.begin(), user_samples.end(),
                     [](const RawSample& a, const RawSample& b) { return a.timestamp < b.timestamp; });
    std::move(user_samples.begin(), user_samples.end(), std::back_inserter(out.samples));
  }
  return out;
}

void write_weather_table(std::span<const WeatherRow> rows, std::ostream& out) {
  out << "lat_bucket\tlon_bucket\tdate\tweather\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.1f\t%.1f\t", r.lat, r.lon);
    out << buf << r.date << '\t' << r.weather << '\n';
  }
}

void write_city_centers(std::span<const CityCenter> cities, std::ostream& out) {
  out << "name\tlat\tlon\n";
  char buf[64];
  for (const auto& c : cities) {
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\n", c.lat, c.lon);
    out << c.name << buf;
  }
}

void to_json(nlohmann::json& j, const GroundTruth& truth) {
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : truth.users) {
    users.push_back({{"user", u.user.str()},
                     {"home", u.home},
                     {"work", u.work},
                     {"tz_offset_seconds", u.tz_offset_seconds},
                     {"country", u.country},
                     {"broken", to_string(u.broken)},
                     {"taste", u.taste}});
  }
  nlohmann::json apps = nlohmann::json::array();
  for (std::size_t a = 0; a < truth.apps.size(); ++a) {
    apps.push_back({{"app", truth.apps[a].id.str()},
                    {"category", truth.apps[a].category},
                    {"language", truth.apps[a].language},
                    {"audience", truth.apps[a].audience},
                    {"weight", truth.app_weights[a]}});
  }
  nlohmann::json affinities = nlohmann::json::array();
  for (const auto& a : truth.affinities) {
    affinities.push_back({{a.is_app ? "app" : "category", a.target},
                          {"dimension", dim_name(a.dim)},
                          {"value", a.value},
                          {"gamma", a.gamma}});
  }
  j = nlohmann::json{{"seed", truth.seed},   {"n_events", truth.n_events}, {"users", users},
                     {"apps", apps},         {"affinities", affinities}};
}

// ---------------------------------------------------------------------------

void SessionSimConfig::validate() const {
  auto prob = [](double p, const std::string& what) {
    if (!(p >= 0 && p <= 1)) throw ValidationError(what + " must be in [0, 1]");
  };
  prob(p_view, "p_view");
  prob(p_install, "p_install");
  prob(p_direct, "p_direct");
  prob(p_late_use, "p_late_use");
  prob(p_uninstall, "p_uninstall");
  prob(ttl_short_share, "ttl_short_share");
  for (const auto& [cat, p] : category_install) prob(p, "install probability of " + cat);
  if (list_size == 0) throw ValidationError("list_size must be >= 1");
  if (direct_window_seconds < 120) throw ValidationError("direct_window_seconds must be >= 120");
  if (!(ttl_short_mean_seconds > 0) || !(ttl_long_mean_seconds > 0)) throw ValidationError("TTL means must be > 0");
}

std::vector<InteractionEvent> simulate_sessions(const WorldSpec& spec, const SessionSimConfig& config,
                                                std::size_t n_sessions, const Scorer* recommender) {
  spec.validate();
  config.validate();
  std::vector<AppInfo> catalog;
  std::vector<double> weights;
  build_catalog(spec, catalog, weights);
  std::vector<UserId> users;
  for (std::size_t u = 0; u < spec.n_users; ++u) users.emplace_back(padded("u", u + 1, spec.n_users));

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick_user(0, users.size() - 1);
  std::exponential_distribution<double> gap(1.0 / 1800.0);
  std::exponential_distribution<double> ttl_short(1.0 / config.ttl_short_mean_seconds);
  std::exponential_distribution<double> ttl_long(1.0 / config.ttl_long_mean_seconds);

  std::unordered_map<AppId, std::size_t> app_pos;
  for (std::size_t a = 0; a < catalog.size(); ++a) app_pos.emplace(catalog[a].id, a);

  auto context_at = [](std::int64_t ts) {
    ContextVector c = neutral_context();
    const auto t = bucket_timestamp(ts, 0);
    c.set(Dim::daytime, std::string(t.daytime))
        .set(Dim::weekday, std::string(t.weekday))
        .set(Dim::isweekend, std::string(t.isweekend));
    return c;
  };

  std::vector<InteractionEvent> events;
  auto emit = [&](const UserId& user, const AppInfo& app, EventKind kind, std::int64_t ts,
                  std::optional<std::int64_t> session) {
    events.push_back({user, app.id, app.category, kind, ts, context_at(ts), session});
  };

  std::size_t views = 0;
  std::size_t installs = 0;
  auto done = [&] {
    return (config.stop_after_views && views >= *config.stop_after_views) ||
           (config.stop_after_installs && installs >= *config.stop_after_installs);
  };

  double clock = static_cast<double>(spec.start_ts);
  std::vector<std::size_t> shown;
  std::vector<double> scores;
  for (std::size_t s = 1; s <= n_sessions && !done(); ++s) {
    const UserId& user = users[pick_user(rng)];
    clock += 600 + gap(rng);
    const auto ts = static_cast<std::int64_t>(clock);
    const auto session = static_cast<std::int64_t>(s);

    shown.clear();
    if (recommender && recommender->knows_user(user)) {
      const auto apps = recommender->apps();
      scores.assign(apps.size(), 0.0);
      try {
        recommender->score_all(user, context_at(ts), scores);
        for (const auto& item : rank_apps(apps, scores, config.list_size, {})) {
          if (const auto it = app_pos.find(item.app); it != app_pos.end()) shown.push_back(it->second);
        }
      } catch (const ColdStartError&) {
        shown.clear();
      }
    }
    if (shown.empty()) {
      std::vector<double> w = weights;
      const std::size_t n = std::min(config.list_size, catalog.size());
      for (std::size_t k = 0; k < n; ++k) {
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        const std::size_t a = pick(rng);
        shown.push_back(a);
        w[a] = 0;
      }
    }

    for (std::size_t a : shown) emit(user, catalog[a], EventKind::shown, ts, session);
    for (std::size_t k = 0; k < shown.size() && !done(); ++k) {
      const AppInfo& app = catalog[shown[k]];
      const std::int64_t view_ts = ts + 10 + 5 * static_cast<std::int64_t>(k);
      if (!bernoulli(rng, config.p_view)) {
        emit(user, app, EventKind::skipped, view_ts, session);
        continue;
      }
      emit(user, app, EventKind::viewed, view_ts, session);
      ++views;
      const auto override_it = config.category_install.find(app.category);
      const double p_install = override_it == config.category_install.end() ? config.p_install : override_it->second;
      if (!bernoulli(rng, p_install)) continue;
      const std::int64_t install_ts = view_ts + 2;
      emit(user, app, EventKind::installed, install_ts, session);
      ++installs;
      if (bernoulli(rng, config.p_direct)) {
        emit(user, app, EventKind::used,
             install_ts + std::uniform_int_distribution<std::int64_t>(60, config.direct_window_seconds - 60)(rng),
             std::nullopt);
      } else if (bernoulli(rng, config.p_late_use)) {
        emit(user, app, EventKind::used,
             install_ts + config.direct_window_seconds + std::uniform_int_distribution<std::int64_t>(3600, 5 * 86400)(rng),
             std::nullopt);
      }
      if (bernoulli(rng, config.p_uninstall)) {
        const double ttl = bernoulli(rng, config.ttl_short_share) ? ttl_short(rng) : ttl_long(rng);
        emit(user, app, EventKind::uninstalled, install_ts + std::max<std::int64_t>(1, std::llround(ttl)),
             std::nullopt);
      }
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const InteractionEvent& a, const InteractionEvent& b) { return a.timestamp < b.timestamp; });
  return events;
}

}  // namespace ctxrec
