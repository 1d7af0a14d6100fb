#include "ctxrec/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace ctxrec {
namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

std::string join(std::span<const std::string> parts, char sep) {
  std::string out;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (k) out += sep;
    out += parts[k];
  }
  return out;
}

// Accumulates (row key, column labels, count) observations into a table.
class TableBuilder {
 public:
  TableBuilder(const RowSelector& rows, std::span<const Dim> cols) : rows_(rows), dims_(cols.begin(), cols.end()) {}

  // First pass: open-vocabulary column values.
  void see(std::span<const std::string> labels) {
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      if (dimension(dims_[k]).open_vocabulary) open_values_[k].insert(labels[k]);
    }
  }

  void prepare() {
    values_.resize(dims_.size());
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      if (dimension(dims_[k]).open_vocabulary) {
        values_[k].assign(open_values_[k].begin(), open_values_[k].end());
      } else {
        for (auto v : dimension(dims_[k]).values) values_[k].emplace_back(v);
      }
    }
    std::size_t n = dims_.empty() ? 0 : 1;
    for (const auto& v : values_) n *= v.size();
    ncols_ = n;
  }

  void add(const std::string& row, std::span<const std::string> labels, std::uint64_t count) {
    if (ncols_ == 0 || count == 0) return;
    std::size_t col = 0;
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      const auto& vals = values_[k];
      const auto it = std::find(vals.begin(), vals.end(), labels[k]);
      if (it == vals.end()) return;
      col = col * vals.size() + static_cast<std::size_t>(it - vals.begin());
    }
    auto& counts = counts_[row];
    if (counts.empty()) counts.assign(ncols_, 0);
    counts[col] += count;
  }

  ContingencyTable finish() const {
    ContingencyTable t;
    t.rows_by = rows_;
    t.col_dims = dims_;
    std::uint64_t total = 0;
    for (const auto& [row, counts] : counts_) {
      total += std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
    }
    if (total == 0) return t;
    t.total = total;

    for (std::size_t c = 0; c < ncols_; ++c) {
      std::vector<std::string> parts(dims_.size());
      std::size_t rest = c;
      for (std::size_t k = dims_.size(); k-- > 0;) {
        parts[k] = values_[k][rest % values_[k].size()];
        rest /= values_[k].size();
      }
      t.cols.push_back(join(parts, '|'));
      t.col_parts.push_back(std::move(parts));
    }
    t.col_totals.assign(ncols_, 0);
    for (const auto& [row, counts] : counts_) {
      t.rows.push_back(row);
      t.row_totals.push_back(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
      for (std::size_t c = 0; c < ncols_; ++c) t.col_totals[c] += counts[c];
    }
    const double n = static_cast<double>(total);
    std::size_t r = 0;
    for (const auto& [row, counts] : counts_) {
      for (std::size_t c = 0; c < ncols_; ++c) {
        ContingencyCell cell;
        cell.row = row;
        cell.col = t.cols[c];
        cell.observed = counts[c];
        cell.expected = static_cast<double>(t.row_totals[r]) * static_cast<double>(t.col_totals[c]) / n;
        if (cell.expected > 0) {
          cell.residual = (static_cast<double>(cell.observed) - cell.expected) / std::sqrt(cell.expected);
          cell.signif = classify_residual(cell.residual);
          cell.strong = std::fabs(cell.residual) >= kStrongResidualThreshold;
        }
        t.cells.push_back(std::move(cell));
      }
      ++r;
    }
    return t;
  }

 private:
  RowSelector rows_;
  std::vector<Dim> dims_;
  std::map<std::size_t, std::set<std::string>> open_values_;
  std::vector<std::vector<std::string>> values_;
  std::size_t ncols_ = 0;
  std::map<std::string, std::vector<std::uint64_t>> counts_;
};

}  // namespace

std::string_view to_string(Significance s) {
  switch (s) {
    case Significance::above: return "above";
    case Significance::below: return "below";
    case Significance::neutral: return "neutral";
  }
  return "neutral";
}

RowSelector RowSelector::parse(std::string_view text) {
  if (text == "app") return {Kind::app, Dim::daytime};
  if (text == "category") return {Kind::category, Dim::daytime};
  if (const auto d = parse_dim(text)) return {Kind::dimension, *d};
  throw ValidationError("unknown row selector '" + std::string(text) + "'");
}

std::string RowSelector::name() const {
  switch (kind) {
    case Kind::app: return "app";
    case Kind::category: return "category";
    case Kind::dimension: return std::string(dim_name(dim));
  }
  return "category";
}

std::vector<Dim> parse_dim_list(std::string_view text) {
  std::vector<Dim> out;
  for (auto part : split_fields(text, ',')) {
    if (part.empty()) continue;
    const auto d = parse_dim(part);
    if (!d) throw ValidationError("unknown context dimension '" + std::string(part) + "'");
    if (std::find(out.begin(), out.end(), *d) != out.end()) {
      throw ValidationError("dimension '" + std::string(part) + "' listed twice");
    }
    out.push_back(*d);
  }
  if (out.empty()) throw ValidationError("no column dimensions selected");
  return out;
}

Significance classify_residual(double residual) {
  if (residual >= kResidualThreshold) return Significance::above;
  if (residual <= -kResidualThreshold) return Significance::below;
  return Significance::neutral;
}

ContingencyTable contingency(const UsageCube& cube, const RowSelector& rows, std::span<const Dim> cols) {
  TableBuilder b(rows, cols);
  std::vector<std::string> labels(cols.size());
  auto fill = [&](const UsageCube::Key& key) {
    for (std::size_t k = 0; k < cols.size(); ++k) labels[k] = decode_value(cols[k], key.context[cols[k]]);
  };
  for (const auto& [key, cell] : cube.cells()) {
    fill(key);
    b.see(labels);
  }
  b.prepare();
  for (const auto& [key, cell] : cube.cells()) {
    std::string row;
    switch (rows.kind) {
      case RowSelector::Kind::app: row = cube.app(key.app).str(); break;
      case RowSelector::Kind::category: row = cube.category(key.app); break;
      case RowSelector::Kind::dimension: row = decode_value(rows.dim, key.context[rows.dim]); break;
    }
    fill(key);
    b.add(row, labels, cell.count);
  }
  return b.finish();
}

ContingencyTable contingency(std::span<const InteractionEvent> events, const RowSelector& rows,
                             std::span<const Dim> cols, EventKind kind) {
  TableBuilder b(rows, cols);
  std::vector<std::string> labels(cols.size());
  auto fill = [&](const InteractionEvent& e) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (!e.context.has(cols[k]) || !encode_value(cols[k], e.context.get(cols[k]))) return false;
      labels[k] = e.context.get(cols[k]);
    }
    return true;
  };
  for (const auto& e : events) {
    if (e.kind == kind && fill(e)) b.see(labels);
  }
  b.prepare();
  for (const auto& e : events) {
    if (e.kind != kind || !fill(e)) continue;
    std::string row;
    switch (rows.kind) {
      case RowSelector::Kind::app: row = e.app.str(); break;
      case RowSelector::Kind::category: row = e.category; break;
      case RowSelector::Kind::dimension:
        if (!e.context.has(rows.dim)) continue;
        row = e.context.get(rows.dim);
        break;
    }
    b.add(row, labels, 1);
  }
  return b.finish();
}

// ---------------------------------------------------------------------------

MosaicLayout mosaic_export(const ContingencyTable& table) {
  if (table.empty()) throw ValidationError("cannot lay out an empty table");
  MosaicLayout layout;
  layout.col_dims = table.col_dims;
  const double n = static_cast<double>(table.total);

  std::vector<std::string> slice_keys;
  std::vector<std::vector<std::size_t>> slice_cols;
  for (std::size_t c = 0; c < table.cols.size(); ++c) {
    const auto& parts = table.col_parts[c];
    const std::string key = join(std::span(parts).subspan(1), '|');
    auto it = std::find(slice_keys.begin(), slice_keys.end(), key);
    if (it == slice_keys.end()) {
      slice_keys.push_back(key);
      slice_cols.emplace_back();
      it = slice_keys.end() - 1;
    }
    slice_cols[static_cast<std::size_t>(it - slice_keys.begin())].push_back(c);
  }

  double y = 0;
  for (std::size_t s = 0; s < slice_keys.size(); ++s) {
    std::uint64_t slice_total = 0;
    for (std::size_t c : slice_cols[s]) slice_total += table.col_totals[c];
    const double band = static_cast<double>(slice_total) / n;
    layout.slices.push_back({slice_keys[s], y, band});
    double x = 0;
    for (std::size_t c : slice_cols[s]) {
      const std::uint64_t col_total = table.col_totals[c];
      const double width = ratio(col_total, slice_total);
      double ty = y;
      for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const ContingencyCell& cell = table.cell(r, c);
        MosaicTile tile;
        tile.row = cell.row;
        tile.col = table.col_parts[c][0];
        tile.slice = slice_keys[s];
        tile.x = x;
        tile.y = ty;
        tile.width = width;
        tile.height = ratio(cell.observed, col_total) * band;
        tile.observed = cell.observed;
        tile.residual = cell.residual;
        tile.signif = cell.signif;
        tile.zero_width = col_total == 0;
        ty += tile.height;
        layout.tiles.push_back(std::move(tile));
      }
      x += width;
    }
    y += band;
  }
  return layout;
}

std::string render_mosaic_svg(const MosaicLayout& layout, int width, int height) {
  std::ostringstream svg;
  svg << std::setprecision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  for (const auto& t : layout.tiles) {
    if (t.zero_width || t.height <= 0) continue;
    const bool strong = std::fabs(t.residual) >= kStrongResidualThreshold;
    const char* fill = "#cccccc";
    if (t.signif == Significance::above) fill = strong ? "#1f4e99" : "#6f9bd6";
    if (t.signif == Significance::below) fill = strong ? "#a11d12" : "#e0776c";
    svg << "  <rect x=\"" << t.x * width << "\" y=\"" << t.y * height << "\" width=\""
        << t.width * width << "\" height=\"" << t.height * height << "\" fill=\"" << fill
        << "\" stroke=\"#ffffff\" stroke-width=\"1\"><title>" << t.row << " | " << t.col;
    if (!t.slice.empty()) svg << " | " << t.slice;
    svg << ": O=" << t.observed << " r=" << t.residual << "</title></rect>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------

namespace {

using UserApp = std::pair<UserId, AppId>;

std::vector<std::size_t> chronological(std::span<const InteractionEvent> events) {
  std::vector<std::size_t> order(events.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (events[a].user != events[b].user) return events[a].user < events[b].user;
    return events[a].timestamp < events[b].timestamp;
  });
  return order;
}

struct CategoryTally {
  std::uint64_t viewed = 0, attributed = 0, installs = 0, direct = 0;
};

}  // namespace

FunnelReport funnel(std::span<const InteractionEvent> events, const FunnelOptions& options) {
  FunnelReport f;
  std::map<UserApp, std::vector<std::int64_t>> used_at;
  std::set<std::int64_t> sessions;
  for (const auto& e : events) {
    if (e.kind == EventKind::used) {
      used_at[{e.user, e.app}].push_back(e.timestamp);
    } else if (e.session) {
      sessions.insert(*e.session);
    }
  }
  for (auto& [key, ts] : used_at) std::sort(ts.begin(), ts.end());

  std::map<std::tuple<UserId, AppId, std::int64_t>, std::uint64_t> open_views;
  std::map<std::tuple<UserId, AppId, std::int64_t>, std::uint64_t> session_views;
  std::map<UserApp, std::uint64_t> views_seen;
  std::map<std::string, CategoryTally> by_category;

  for (std::size_t idx : chronological(events)) {
    const InteractionEvent& e = events[idx];
    switch (e.kind) {
      case EventKind::shown: ++f.shown; break;
      case EventKind::skipped: ++f.skipped; break;
      case EventKind::uninstalled: ++f.uninstalled; break;
      case EventKind::used: break;
      case EventKind::viewed:
        ++f.viewed;
        ++by_category[e.category].viewed;
        ++views_seen[{e.user, e.app}];
        if (e.session) {
          ++open_views[{e.user, e.app, *e.session}];
          ++session_views[{e.user, e.app, *e.session}];
        }
        break;
      case EventKind::installed: {
        ++f.installed;
        CategoryTally& cat = by_category[e.category];
        ++cat.installs;
        std::uint64_t same_session = 0;
        if (e.session) {
          const auto it = open_views.find({e.user, e.app, *e.session});
          if (it != open_views.end() && it->second > 0) {
            --it->second;
            same_session = 1;
          }
        }
        if (same_session) {
          ++f.attributed_installs;
          ++cat.attributed;
        } else {
          std::uint64_t in_session = 0;
          if (e.session) {
            const auto it = session_views.find({e.user, e.app, *e.session});
            if (it != session_views.end()) in_session = it->second;
          }
          const auto seen = views_seen.find({e.user, e.app});
          if (seen != views_seen.end() && seen->second > in_session) {
            ++f.delayed_installs;
          } else {
            ++f.unattributed_installs;
          }
        }
        const auto used = used_at.find({e.user, e.app});
        if (used != used_at.end()) {
          const auto it = std::lower_bound(used->second.begin(), used->second.end(), e.timestamp);
          if (it != used->second.end() && *it - e.timestamp <= options.direct_use_window_seconds) {
            ++f.direct_used;
            ++cat.direct;
          }
        }
        break;
      }
    }
  }

  f.sessions = sessions.size();
  f.view_to_install = ratio(f.attributed_installs, f.viewed);
  f.install_to_direct_use = ratio(f.direct_used, f.installed);
  f.installs_per_session = ratio(f.installed, f.sessions);
  f.views_per_session = ratio(f.viewed, f.sessions);
  for (const auto& [name, t] : by_category) {
    if (t.installs < options.min_category_installs) continue;
    CategoryFunnel c;
    c.category = name;
    c.viewed = t.viewed;
    c.installed = t.attributed;
    c.all_installs = t.installs;
    c.direct_used = t.direct;
    c.view_to_install = ratio(t.attributed, t.viewed);
    c.install_to_direct_use = ratio(t.direct, t.installs);
    f.categories.push_back(std::move(c));
  }
  return f;
}

std::vector<CategoryFunnel> category_conversion(std::span<const InteractionEvent> events,
                                                std::uint64_t min_installs,
                                                const FunnelOptions& options) {
  FunnelOptions o = options;
  o.min_category_installs = min_installs;
  return funnel(events, o).categories;
}

// ---------------------------------------------------------------------------

TtlReport uninstall_ttl(std::span<const InteractionEvent> events) {
  TtlReport r;
  std::map<UserApp, std::vector<std::int64_t>> open_installs;
  for (std::size_t idx : chronological(events)) {
    const InteractionEvent& e = events[idx];
    if (e.kind == EventKind::installed) {
      open_installs[{e.user, e.app}].push_back(e.timestamp);
    } else if (e.kind == EventKind::uninstalled) {
      auto it = open_installs.find({e.user, e.app});
      if (it == open_installs.end() || it->second.empty()) {
        ++r.unmatched_uninstalls;
        continue;
      }
      const std::int64_t ttl = e.timestamp - it->second.back();
      it->second.pop_back();
      r.ttls.push_back(ttl);
      ++r.matched;
      ++r.hour_histogram[ttl / 3600];
      ++r.day_histogram[ttl / 86400];
    }
  }
  std::uint64_t hour = 0, day = 0;
  for (std::int64_t t : r.ttls) {
    hour += t <= 3600;
    day += t <= 86400;
  }
  r.within_hour = ratio(hour, r.matched);
  r.within_day = ratio(day, r.matched);
  return r;
}

// ---------------------------------------------------------------------------

bool language_mismatch(const UserProfile& user, const AppInfo& app) {
  if (app.language.empty() || app.language == "unknown" || user.languages.empty()) return false;
  return std::find(user.languages.begin(), user.languages.end(), app.language) == user.languages.end();
}

bool profile_tag_mismatch(const UserProfile& user, const AppInfo& app) {
  if (app.audience.empty() || user.tags.empty()) return false;
  for (const auto& tag : app.audience) {
    if (std::find(user.tags.begin(), user.tags.end(), tag) != user.tags.end()) return false;
  }
  return true;
}

std::vector<std::string> builtin_wtf_rule_names() { return {"language_mismatch", "profile_tag_mismatch"}; }

std::vector<WtfRule> make_wtf_rules(std::span<const std::string> names) {
  std::vector<WtfRule> rules;
  for (const auto& name : names) {
    if (name == "language_mismatch") {
      rules.push_back({name, language_mismatch});
    } else if (name == "profile_tag_mismatch") {
      rules.push_back({name, profile_tag_mismatch});
    } else {
      throw ConfigError("unknown WTF rule '" + name + "'");
    }
  }
  return rules;
}

std::vector<RecommendationList> shown_lists(std::span<const InteractionEvent> events) {
  std::vector<RecommendationList> out;
  std::map<std::pair<UserId, std::int64_t>, std::size_t> index;
  for (const auto& e : events) {
    if (e.kind != EventKind::shown) continue;
    const auto key = std::make_pair(e.user, e.session.value_or(-1));
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back({e.user, {}});
    }
    out[it->second].items.push_back(e.app);
  }
  return out;
}

WtfReport wtf_score(std::span<const RecommendationList> lists,
                    const std::unordered_map<UserId, UserProfile>& profiles,
                    const std::unordered_map<AppId, AppInfo>& catalog,
                    std::span<const WtfRule> rules, std::size_t top_n) {
  WtfReport r;
  r.top_n = top_n;
  for (const auto& rule : rules) r.rules.push_back(rule.name);
  std::map<UserId, UserWtf> per_user;
  for (const auto& list : lists) {
    UserWtf& u = per_user[list.user];
    u.user = list.user;
    ++u.lists;
    ++r.lists;
    const auto profile = profiles.find(list.user);
    if (profile == profiles.end()) continue;
    const std::size_t n = std::min(top_n, list.items.size());
    for (std::size_t k = 0; k < n; ++k) {
      const auto app = catalog.find(list.items[k]);
      if (app == catalog.end()) continue;
      const bool bad = std::any_of(rules.begin(), rules.end(), [&](const WtfRule& rule) {
        return rule.violates(profile->second, app->second);
      });
      if (bad) {
        ++u.score;
        ++r.total;
      }
    }
  }
  for (auto& [user, u] : per_user) r.users.push_back(std::move(u));
  r.mean_per_list = ratio(r.total, r.lists);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

void add_location(LocationShare& s, std::string_view label, std::uint64_t count) {
  if (label == "home") s.home += count;
  else if (label == "work") s.work += count;
  else if (label == "other") s.other += count;
  else return;
  s.total += count;
}

void finish_shares(LocationShare& s) {
  s.home_share = ratio(s.home, s.total);
  s.work_share = ratio(s.work, s.total);
  s.other_share = ratio(s.other, s.total);
}

}  // namespace

LocationShare location_share(std::span<const InteractionEvent> events) {
  LocationShare s;
  for (const auto& e : events) {
    if (e.kind == EventKind::used && e.context.has(Dim::location)) {
      add_location(s, e.context.get(Dim::location), 1);
    }
  }
  finish_shares(s);
  return s;
}

LocationShare location_share(const UsageCube& cube) {
  LocationShare s;
  for (const auto& [key, cell] : cube.cells()) {
    add_location(s, decode_value(Dim::location, key.context[Dim::location]), cell.count);
  }
  finish_shares(s);
  return s;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const ContingencyTable& t) {
  std::vector<std::string> dims;
  for (Dim d : t.col_dims) dims.emplace_back(dim_name(d));
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : t.cells) {
    cells.push_back({{"row", c.row},
                     {"col", c.col},
                     {"observed", c.observed},
                     {"expected", c.expected},
                     {"residual", c.residual},
                     {"signif", to_string(c.signif)},
                     {"strong", c.strong}});
  }
  j = nlohmann::json{{"rows_by", t.rows_by.name()}, {"col_dims", dims}, {"rows", t.rows},
                     {"cols", t.cols},              {"total", t.total}, {"cells", cells}};
}

void to_json(nlohmann::json& j, const MosaicLayout& m) {
  std::vector<std::string> dims;
  for (Dim d : m.col_dims) dims.emplace_back(dim_name(d));
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : m.slices) slices.push_back({{"label", s.label}, {"y", s.y}, {"height", s.height}});
  nlohmann::json tiles = nlohmann::json::array();
  for (const auto& t : m.tiles) {
    tiles.push_back({{"row", t.row},
                     {"col", t.col},
                     {"slice", t.slice},
                     {"x", t.x},
                     {"y", t.y},
                     {"width", t.width},
                     {"height", t.height},
                     {"observed", t.observed},
                     {"residual", t.residual},
                     {"signif", to_string(t.signif)},
                     {"zero_width", t.zero_width}});
  }
  j = nlohmann::json{{"col_dims", dims}, {"slices", slices}, {"tiles", tiles}};
}

void to_json(nlohmann::json& j, const CategoryFunnel& c) {
  j = nlohmann::json{{"category", c.category},
                     {"viewed", c.viewed},
                     {"installed", c.installed},
                     {"all_installs", c.all_installs},
                     {"direct_used", c.direct_used},
                     {"view_to_install", c.view_to_install},
                     {"install_to_direct_use", c.install_to_direct_use}};
}

void to_json(nlohmann::json& j, const FunnelReport& f) {
  j = nlohmann::json{{"shown", f.shown},
                     {"viewed", f.viewed},
                     {"skipped", f.skipped},
                     {"installed", f.installed},
                     {"attributed_installs", f.attributed_installs},
                     {"delayed_installs", f.delayed_installs},
                     {"unattributed_installs", f.unattributed_installs},
                     {"direct_used", f.direct_used},
                     {"uninstalled", f.uninstalled},
                     {"sessions", f.sessions},
                     {"view_to_install", f.view_to_install},
                     {"install_to_direct_use", f.install_to_direct_use},
                     {"installs_per_session", f.installs_per_session},
                     {"views_per_session", f.views_per_session},
                     {"categories", f.categories}};
}

void to_json(nlohmann::json& j, const TtlReport& t) {
  auto hist = [](const std::map<std::int64_t, std::uint64_t>& h) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [bin, n] : h) out.push_back({bin, n});
    return out;
  };
  j = nlohmann::json{{"matched", t.matched},
                     {"unmatched_uninstalls", t.unmatched_uninstalls},
                     {"within_hour", t.within_hour},
                     {"within_day", t.within_day},
                     {"hour_histogram", hist(t.hour_histogram)},
                     {"day_histogram", hist(t.day_histogram)}};
}

void to_json(nlohmann::json& j, const WtfReport& w) {
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : w.users) users.push_back({{"user", u.user.str()}, {"lists", u.lists}, {"score", u.score}});
  j = nlohmann::json{{"top_n", w.top_n}, {"rules", w.rules},  {"lists", w.lists},
                     {"total", w.total}, {"mean_per_list", w.mean_per_list}, {"users", users}};
}

void to_json(nlohmann::json& j, const LocationShare& l) {
  j = nlohmann::json{{"home", l.home},
                     {"work", l.work},
                     {"other", l.other},
                     {"total", l.total},
                     {"home_share", l.home_share},
                     {"work_share", l.work_share},
                     {"other_share", l.other_share}};
}

void write_tsv(const ContingencyTable& t, std::ostream& out) {
  out << t.rows_by.name() << "\tcol\tobserved\texpected\tresidual\tsignif\n";
  for (const auto& c : t.cells) {
    out << c.row << '\t' << c.col << '\t' << c.observed << '\t' << c.expected << '\t' << c.residual << '\t'
        << to_string(c.signif) << (c.strong ? "*" : "") << '\n';
  }
}

void write_tsv(const MosaicLayout& m, std::ostream& out) {
  out << "row\tcol\tslice\tx\ty\twidth\theight\tobserved\tresidual\tsignif\n";
  for (const auto& t : m.tiles) {
    out << t.row << '\t' << t.col << '\t' << t.slice << '\t' << t.x << '\t' << t.y << '\t' << t.width << '\t'
        << t.height << '\t' << t.observed << '\t' << t.residual << '\t' << to_string(t.signif)
        << (t.zero_width ? "\tzero_width" : "") << '\n';
  }
}

void write_tsv(const FunnelReport& f, std::ostream& out) {
  out << "shown\t" << f.shown << "\nviewed\t" << f.viewed << "\nskipped\t" << f.skipped << "\ninstalled\t"
      << f.installed << "\nattributed_installs\t" << f.attributed_installs << "\ndelayed_installs\t"
      << f.delayed_installs << "\nunattributed_installs\t" << f.unattributed_installs << "\ndirect_used\t"
      << f.direct_used << "\nuninstalled\t" << f.uninstalled << "\nsessions\t" << f.sessions
      << "\nview_to_install\t" << f.view_to_install << "\ninstall_to_direct_use\t" << f.install_to_direct_use
      << "\ninstalls_per_session\t" << f.installs_per_session << "\nviews_per_session\t"
      << f.views_per_session << '\n';
  if (!f.categories.empty()) {
    out << '\n';
    write_tsv(f.categories, out);
  }
}

void write_tsv(std::span<const CategoryFunnel> c, std::ostream& out) {
  out << "category\tviewed\tinstalled\tall_installs\tdirect_used\tview_to_install\tinstall_to_direct_use\n";
  for (const auto& r : c) {
    out << r.category << '\t' << r.viewed << '\t' << r.installed << '\t' << r.all_installs << '\t'
        << r.direct_used << '\t' << r.view_to_install << '\t' << r.install_to_direct_use << '\n';
  }
}

void write_tsv(const TtlReport& t, std::ostream& out) {
  out << "matched\t" << t.matched << "\nunmatched_uninstalls\t" << t.unmatched_uninstalls << "\nwithin_hour\t"
      << t.within_hour << "\nwithin_day\t" << t.within_day << "\n\nunit\tbin\tcount\n";
  for (const auto& [bin, n] : t.hour_histogram) out << "hour\t" << bin << '\t' << n << '\n';
  for (const auto& [bin, n] : t.day_histogram) out << "day\t" << bin << '\t' << n << '\n';
}

void write_tsv(const WtfReport& w, std::ostream& out) {
  out << "user\tlists\twtf@" << w.top_n << '\n';
  for (const auto& u : w.users) out << u.user.str() << '\t' << u.lists << '\t' << u.score << '\n';
  out << "TOTAL\t" << w.lists << '\t' << w.total << '\n';
}

void write_tsv(const LocationShare& l, std::ostream& out) {
  out << "location\tcount\tshare\n"
      << "home\t" << l.home << '\t' << l.home_share << '\n'
      << "work\t" << l.work << '\t' << l.work_share << '\n'
      << "other\t" << l.other << '\t' << l.other_share << '\n';
}

}  // namespace ctxrec
