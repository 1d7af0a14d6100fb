#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "ctxrec/analytics.hpp"
#include "ctxrec/explain.hpp"
#include "ctxrec/simgen.hpp"
#include "support.hpp"

namespace ctxrec {
namespace {

WorldSpec small_world(std::uint64_t seed) {
  WorldSpec spec;
  spec.seed = seed;
  spec.n_users = 20;
  spec.n_apps = 20;
  spec.n_days = 7;
  return spec;
}

std::string samples_text(const GeneratedUsage& g) {
  std::ostringstream out;
  write_raw_samples(g.samples, out);
  return out.str();
}

TEST(WorldSpec, Validation) {
  WorldSpec spec;
  EXPECT_NO_THROW(spec.validate());
  spec.n_users = 0;
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = {};
  spec.affinities = {{"games", false, Dim::isweekend, "weekend", -1.0}};
  EXPECT_THROW(spec.validate(), ValidationError);
  spec.affinities = {{"games", false, Dim::isweekend, "holiday", 2.0}};
  EXPECT_THROW(spec.validate(), ValidationError);
  spec.affinities = {{"no_such_category", false, Dim::isweekend, "weekend", 2.0}};
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = {};
  spec.location_noise = 1.5;
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = {};
  spec.categories = {{"games", 1}, {"games", 2}};
  EXPECT_THROW(spec.validate(), ValidationError);
}

TEST(GenerateUsage, DeterministicUnderSeed) {
  const auto a = generate_usage(small_world(3), 300);
  const auto b = generate_usage(small_world(3), 300);
  EXPECT_EQ(samples_text(a), samples_text(b));
  nlohmann::json ja = a.truth, jb = b.truth;
  EXPECT_EQ(ja.dump(), jb.dump());
  EXPECT_NE(samples_text(a), samples_text(generate_usage(small_world(4), 300)));
}

TEST(GenerateUsage, PipelineSeesExactlyTheRequestedEvents) {
  for (std::size_t n : {std::size_t{1}, std::size_t{57}, std::size_t{500}}) {
    const auto r = run_pipeline(generate_usage(small_world(5), n).pipeline_input());
    EXPECT_EQ(r.events.size(), n);
    EXPECT_EQ(r.cube.grand_total(), n);
  }
}

TEST(GenerateUsage, ZeroEventsStillEmitTruth) {
  const auto g = generate_usage(small_world(6), 0);
  EXPECT_EQ(g.truth.users.size(), 20u);
  EXPECT_EQ(g.truth.apps.size(), 20u);
  EXPECT_EQ(g.truth.n_events, 0u);
  for (const auto& s : g.samples) EXPECT_FALSE(s.foreground_app.has_value());
}

TEST(GenerateUsage, CatalogMatchesTruth) {
  const WorldSpec spec = small_world(7);
  const auto g = generate_usage(spec, 10);
  const auto catalog = world_catalog(spec);
  ASSERT_EQ(catalog.size(), g.catalog.size());
  for (std::size_t a = 0; a < catalog.size(); ++a) {
    EXPECT_EQ(catalog[a].id, g.catalog[a].id);
    EXPECT_EQ(catalog[a].category, g.catalog[a].category);
  }
  EXPECT_EQ(g.profiles.size(), spec.n_users);
}

TEST(GenerateUsage, NeutralWorldPassesIndependence) {
  // gamma = 1 everywhere: category usage should be independent of daytime.
  int passed = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    WorldSpec spec = small_world(seed);
    spec.categories = {{"games", 1}, {"tools", 1}, {"social", 1}};
    spec.zipf_exponent = 0;
    const auto r = run_pipeline(generate_usage(spec, 600).pipeline_input());
    const std::vector<Dim> cols{Dim::daytime};
    const auto t = contingency(r.cube, RowSelector::parse("category"), cols);
    double chi2 = 0;
    for (const auto& c : t.cells) chi2 += c.residual * c.residual;
    std::size_t live_cols = 0;
    for (auto total : t.col_totals) live_cols += total > 0;
    const int df = static_cast<int>((t.rows.size() - 1) * (live_cols - 1));
    passed += chi_square_pvalue(chi2, df) >= 0.01;
  }
  EXPECT_GE(passed, 95);
}

TEST(SimulateSessions, Validation) {
  SessionSimConfig cfg;
  cfg.p_view = 1.2;
  EXPECT_THROW(simulate_sessions(small_world(1), cfg, 1), ValidationError);
  cfg = {};
  cfg.list_size = 0;
  EXPECT_THROW(simulate_sessions(small_world(1), cfg, 1), ValidationError);
}

TEST(SimulateSessions, AllZeroProbabilitiesGiveAnEmptyFunnel) {
  SessionSimConfig cfg;
  cfg.p_view = 0;
  cfg.p_install = 0;
  cfg.p_direct = 0;
  cfg.p_late_use = 0;
  cfg.p_uninstall = 0;
  const auto events = simulate_sessions(small_world(2), cfg, 50);
  const auto f = funnel(events);
  EXPECT_EQ(f.viewed, 0u);
  EXPECT_EQ(f.installed, 0u);
  EXPECT_EQ(f.direct_used, 0u);
  EXPECT_EQ(f.uninstalled, 0u);
  EXPECT_EQ(f.shown, 50u * 20u);  // the list is capped by the 20-app catalog
  EXPECT_EQ(f.sessions, 50u);
}

TEST(SimulateSessions, DeterministicAndSurvivesResessionizing) {
  SessionSimConfig cfg;
  cfg.p_view = 0.2;
  const auto a = simulate_sessions(small_world(3), cfg, 200);
  EXPECT_EQ(a, simulate_sessions(small_world(3), cfg, 200));
  auto stripped = a;
  for (auto& e : stripped) e.session.reset();
  const auto again = sessionize(stripped);
  // Uninstalls carry no session, so they may open sessions of their own.
  EXPECT_EQ(funnel(again).attributed_installs, funnel(a).attributed_installs);
  EXPECT_GE(funnel(again).sessions, funnel(a).sessions);
}

TEST(SimulateSessions, StopsAfterTheRequestedViews) {
  SessionSimConfig cfg;
  cfg.p_view = 0.3;
  cfg.stop_after_views = 1000;
  const auto f = funnel(simulate_sessions(small_world(4), cfg, 1000000));
  EXPECT_EQ(f.viewed, 1000u);
}

TEST(SimulateSessions, FunnelRatesWithinBinomialBounds) {
  // Many (user, app) pairs, so repeat installs of one app by one user stay rare.
  WorldSpec world = small_world(8);
  world.n_users = 5000;
  world.n_apps = 100;
  SessionSimConfig views;
  views.p_view = 0.3;
  views.stop_after_views = 10000;
  views.seed = 11;
  const auto fv = funnel(simulate_sessions(world, views, 1000000));
  EXPECT_NEAR(fv.view_to_install, 0.19, 0.012);

  SessionSimConfig installs = views;
  installs.stop_after_views.reset();
  installs.stop_after_installs = 5000;
  const auto fi = funnel(simulate_sessions(world, installs, 1000000));
  EXPECT_EQ(fi.installed, 5000u);
  EXPECT_NEAR(fi.install_to_direct_use, 0.578, 0.021);
}

}  // namespace
}  // namespace ctxrec
