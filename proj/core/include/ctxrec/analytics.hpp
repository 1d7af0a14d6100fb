#pragma once

// Contextual dependence tables and usage-centric metrics.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxrec/domain.hpp"
#include "ctxrec/ingest.hpp"

namespace ctxrec {

// ---------------------------------------------------------------------------
// Contingency tables

enum class Significance { neutral, above, below };
std::string_view to_string(Significance s);

inline constexpr double kResidualThreshold = 2.0;
inline constexpr double kStrongResidualThreshold = 4.0;

// What a table row stands for: the app, its category, or a context dimension.
struct RowSelector {
  enum class Kind { app, category, dimension } kind = Kind::category;
  Dim dim = Dim::daytime;

  // "app", "category" or a dimension name. Throws ValidationError.
  static RowSelector parse(std::string_view text);
  std::string name() const;
};

// Comma separated dimension names, e.g. "location,isweekend".
std::vector<Dim> parse_dim_list(std::string_view text);

struct ContingencyCell {
  std::string row;
  std::string col;
  std::uint64_t observed = 0;
  double expected = 0;
  double residual = 0;  // 0 when expected is 0
  Significance signif = Significance::neutral;
  bool strong = false;
};

Significance classify_residual(double residual);

struct ContingencyTable {
  RowSelector rows_by;
  std::vector<Dim> col_dims;
  std::vector<std::string> rows;
  std::vector<std::string> cols;                   // values joined with '|'
  std::vector<std::vector<std::string>> col_parts;  // per column, one value per col dim
  std::vector<ContingencyCell> cells;              // row-major
  std::vector<std::uint64_t> row_totals;
  std::vector<std::uint64_t> col_totals;
  std::uint64_t total = 0;

  bool empty() const { return total == 0; }
  const ContingencyCell& cell(std::size_t r, std::size_t c) const { return cells.at(r * cols.size() + c); }
};

// Columns are every combination of the col dims' values (country: the
// observed ones), first dimension varying slowest. Rows are the observed row
// keys in sorted order. Cells use E = row total * col total / N.
ContingencyTable contingency(const UsageCube& cube, const RowSelector& rows,
                             std::span<const Dim> cols);
// One count per event of `kind`; events missing a selected value are skipped.
ContingencyTable contingency(std::span<const InteractionEvent> events, const RowSelector& rows,
                             std::span<const Dim> cols, EventKind kind = EventKind::used);

// ---------------------------------------------------------------------------
// Mosaic layout

struct MosaicTile {
  std::string row;
  std::string col;    // value of the first col dim
  std::string slice;  // values of the remaining col dims joined with '|'
  double x = 0, y = 0, width = 0, height = 0;
  std::uint64_t observed = 0;
  double residual = 0;
  Significance signif = Significance::neutral;
  bool zero_width = false;
};

struct MosaicSlice {
  std::string label;
  double y = 0;
  double height = 0;
};

struct MosaicLayout {
  std::vector<Dim> col_dims;
  std::vector<MosaicSlice> slices;
  std::vector<MosaicTile> tiles;
};

// The first col dim gives tile widths; combinations of the remaining dims are
// horizontal bands with height proportional to their share. Within a band
// column widths are proportional to the column's share of the band and sum to
// 1; tiles stack by within-column row share. Throws ValidationError on an
// empty table.
MosaicLayout mosaic_export(const ContingencyTable& table);

std::string render_mosaic_svg(const MosaicLayout& layout, int width = 800, int height = 600);

// ---------------------------------------------------------------------------
// Conversion funnel

struct FunnelOptions {
  std::int64_t direct_use_window_seconds = 24 * 3600;
  std::uint64_t min_category_installs = 10;
};

struct CategoryFunnel {
  std::string category;
  std::uint64_t viewed = 0;
  std::uint64_t installed = 0;  // attributed to a same-session view
  std::uint64_t all_installs = 0;
  std::uint64_t direct_used = 0;
  double view_to_install = 0;
  double install_to_direct_use = 0;
};

struct FunnelReport {
  std::uint64_t shown = 0;
  std::uint64_t viewed = 0;
  std::uint64_t skipped = 0;
  std::uint64_t installed = 0;
  std::uint64_t attributed_installs = 0;
  std::uint64_t delayed_installs = 0;  // prior view only in another session
  std::uint64_t unattributed_installs = 0;
  std::uint64_t direct_used = 0;
  std::uint64_t uninstalled = 0;
  std::uint64_t sessions = 0;
  double view_to_install = 0;        // attributed installs / views
  double install_to_direct_use = 0;  // direct used / installs
  double installs_per_session = 0;
  double views_per_session = 0;
  std::vector<CategoryFunnel> categories;  // only categories at the install threshold
};

// Each view is consumed by at most one install (last touch within the
// session). Events should be sessionized.
FunnelReport funnel(std::span<const InteractionEvent> events, const FunnelOptions& options = {});

std::vector<CategoryFunnel> category_conversion(std::span<const InteractionEvent> events,
                                                std::uint64_t min_installs = 10,
                                                const FunnelOptions& options = {});

// ---------------------------------------------------------------------------
// Uninstall time-to-live

struct TtlReport {
  std::map<std::int64_t, std::uint64_t> hour_histogram;  // floor(ttl / 1h) -> count
  std::map<std::int64_t, std::uint64_t> day_histogram;   // floor(ttl / 1d) -> count
  std::vector<std::int64_t> ttls;                         // seconds, event order
  std::uint64_t matched = 0;
  std::uint64_t unmatched_uninstalls = 0;
  double within_hour = 0;
  double within_day = 0;
};

// Each uninstall is paired with the latest earlier unmatched install of the
// same (user, app).
TtlReport uninstall_ttl(std::span<const InteractionEvent> events);

// ---------------------------------------------------------------------------
// WTF score

using WtfPredicate = std::function<bool(const UserProfile&, const AppInfo&)>;

struct WtfRule {
  std::string name;
  WtfPredicate violates;
};

// App language known and not among the user's languages.
bool language_mismatch(const UserProfile& user, const AppInfo& app);
// App has an audience and the user's tags share none of it.
bool profile_tag_mismatch(const UserProfile& user, const AppInfo& app);

std::vector<std::string> builtin_wtf_rule_names();
// Throws ConfigError for an unknown name.
std::vector<WtfRule> make_wtf_rules(std::span<const std::string> names);

struct RecommendationList {
  UserId user;
  std::vector<AppId> items;  // ranked
};

// Groups `shown` events per (user, session) in event order.
std::vector<RecommendationList> shown_lists(std::span<const InteractionEvent> events);

struct UserWtf {
  UserId user;
  std::size_t lists = 0;
  std::uint64_t score = 0;
};

struct WtfReport {
  std::size_t top_n = 0;
  std::vector<std::string> rules;
  std::vector<UserWtf> users;  // sorted by user
  std::size_t lists = 0;
  std::uint64_t total = 0;
  double mean_per_list = 0;
};

// Counts top-n items violating any rule. Users without a profile and apps
// without catalog metadata never violate.
WtfReport wtf_score(std::span<const RecommendationList> lists,
                    const std::unordered_map<UserId, UserProfile>& profiles,
                    const std::unordered_map<AppId, AppInfo>& catalog,
                    std::span<const WtfRule> rules, std::size_t top_n = 10);

// ---------------------------------------------------------------------------
// Location shares

struct LocationShare {
  std::uint64_t home = 0, work = 0, other = 0;
  std::uint64_t total = 0;
  double home_share = 0, work_share = 0, other_share = 0;
};

// Over `used` events.
LocationShare location_share(std::span<const InteractionEvent> events);
LocationShare location_share(const UsageCube& cube);

// ---------------------------------------------------------------------------
// Output

void to_json(nlohmann::json& j, const ContingencyTable& t);
void to_json(nlohmann::json& j, const MosaicLayout& m);
void to_json(nlohmann::json& j, const CategoryFunnel& c);
void to_json(nlohmann::json& j, const FunnelReport& f);
void to_json(nlohmann::json& j, const TtlReport& t);
void to_json(nlohmann::json& j, const WtfReport& w);
void to_json(nlohmann::json& j, const LocationShare& l);

void write_tsv(const ContingencyTable& t, std::ostream& out);
void write_tsv(const MosaicLayout& m, std::ostream& out);
void write_tsv(const FunnelReport& f, std::ostream& out);
void write_tsv(std::span<const CategoryFunnel> c, std::ostream& out);
void write_tsv(const TtlReport& t, std::ostream& out);
void write_tsv(const WtfReport& w, std::ostream& out);
void write_tsv(const LocationShare& l, std::ostream& out);

}  // namespace ctxrec
