#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

#include "ctxrec/explain.hpp"
#include "ctxrec/simgen.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace ctxrec {
namespace {

using testing::ctx;
using testing::cube_of;
using testing::tuple;

// App A used 9 times on weekends out of 10; 40 of 100 uses overall are on weekends.
UsageCube weekend_cube() {
  return cube_of({tuple("u1", "A", "isweekend=weekend,weekday=sat", 9), tuple("u1", "A", "isweekend=workday", 1),
                  tuple("u2", "B", "isweekend=weekend,weekday=sun", 31), tuple("u2", "B", "isweekend=workday", 59)});
}

ValueIndex idx(Dim d, std::string_view v) { return *encode_value(d, v); }

TEST(ExpectedCount, Formula) {
  const UsageCube cube = weekend_cube();
  ASSERT_EQ(cube.grand_total(), 100u);
  EXPECT_DOUBLE_EQ(expected_count(cube, *cube.find_app(AppId("A")), Dim::isweekend, idx(Dim::isweekend, "weekend")),
                   4.0);
  EXPECT_DOUBLE_EQ(expected_count(cube, 0, Dim::weather, idx(Dim::weather, "snowy")), 0.0);
}

TEST(ExpectedCount, AppUsedOnlyInAContextCoveringEverything) {
  const UsageCube cube = cube_of({tuple("u", "A", "daytime=night", 7), tuple("u", "B", "daytime=night", 3)});
  EXPECT_DOUBLE_EQ(expected_count(cube, 0, Dim::daytime, idx(Dim::daytime, "night")), 7.0);
}

TEST(ExpectedCount, EmptyCubeIsUndefined) {
  EXPECT_THROW(expected_count(UsageCube{}, 0, Dim::daytime, 0), UndefinedStatisticError);
}

TEST(ChiSquareStat, Examples) {
  EXPECT_DOUBLE_EQ(chi_square_stat(8, 4), 4.0);
  EXPECT_DOUBLE_EQ(chi_square_stat(4, 4), 0.0);
  EXPECT_DOUBLE_EQ(chi_square_stat(9, 4), 6.25);
  EXPECT_THROW(chi_square_stat(1, 0), UndefinedStatisticError);
  EXPECT_THROW(chi_square_stat(1, -2), UndefinedStatisticError);
}

TEST(ChiSquarePValue, Examples) {
  for (int df = 1; df <= 20; ++df) EXPECT_EQ(chi_square_pvalue(0, df), 1.0);
  EXPECT_NEAR(chi_square_pvalue(6.25, 2), 0.043937, 5e-7);
  EXPECT_NEAR(chi_square_pvalue(3.841, 1), 0.0500, 5e-5);
  EXPECT_THROW(chi_square_pvalue(1, 0), Error);
  EXPECT_THROW(chi_square_pvalue(-1, 2), Error);
  EXPECT_THROW(chi_square_pvalue(std::nan(""), 2), Error);
}

TEST(ChiSquarePValue, TwoDegreesOfFreedomIsExponential) {
  for (double x = 0; x <= 50.0; x += 0.01) EXPECT_NEAR(chi_square_pvalue(x, 2), std::exp(-x / 2), 1e-10) << x;
}

TEST(ChiSquarePValue, MatchesFiniteSumsForIntegerDf) {
  for (int df = 1; df <= 30; ++df) {
    for (double x = 0.05; x < 80; x *= 1.3) {
      EXPECT_NEAR(chi_square_pvalue(x, df), oracle::chi2_upper_closed(x, df), 1e-10) << df << " " << x;
    }
  }
}

TEST(ChiSquarePValue, MatchesNumericIntegration) {
  for (int df = 1; df <= 12; ++df) {
    for (double x : {0.01, 0.3, 1.0, 2.5, 3.841, 7.0, 12.0, 25.0, 40.0}) {
      EXPECT_NEAR(chi_square_pvalue(x, df), oracle::chi2_upper_integrated(x, df), 1e-8) << df << " " << x;
    }
  }
}

TEST(ChiSquarePValue, MonotoneAndVanishing) {
  for (int df = 1; df <= 15; ++df) {
    double prev = 1.0;
    for (double x = 0; x < 200; x += 0.25) {
      const double p = chi_square_pvalue(x, df);
      EXPECT_LE(p, prev);
      EXPECT_GE(p, 0.0);
      prev = p;
    }
    EXPECT_LT(prev, 1e-30);
    EXPECT_EQ(chi_square_pvalue(std::numeric_limits<double>::infinity(), df), 0.0);
  }
}

TEST(DegreesOfFreedom, CardinalityOrObservedCountries) {
  const UsageCube cube =
      cube_of({tuple("u", "A", "country=ES", 1), tuple("u", "A", "country=DE", 1), tuple("u", "B", "country=ES", 1)});
  EXPECT_EQ(degrees_of_freedom(cube, Dim::weather, DfConvention::cardinality), 9);
  EXPECT_EQ(degrees_of_freedom(cube, Dim::isweekend, DfConvention::cardinality), 2);
  EXPECT_EQ(degrees_of_freedom(cube, Dim::isweekend, DfConvention::conventional), 1);
  EXPECT_EQ(degrees_of_freedom(cube, Dim::country, DfConvention::cardinality), 2);
  EXPECT_EQ(parse_df_convention("conventional"), DfConvention::conventional);
  EXPECT_EQ(parse_df_convention("cardinality"), DfConvention::cardinality);
  EXPECT_FALSE(parse_df_convention("other"));
}

TEST(FilterFactors, KeepsSignificantOverRepresentedOnly) {
  std::vector<FactorStat> c(3);
  c[0] = {Dim::daytime, "morning", 10, 5, 0, 4, 0.03};
  c[1] = {Dim::weather, "sunny", 10, 5, 0, 9, 0.2};
  c[2] = {Dim::location, "home", 1, 5, 0, 3, 0.01};
  const auto kept = filter_factors(c);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].dim, Dim::daytime);
}

TEST(FilterFactors, TopThreeByAscendingP) {
  std::vector<FactorStat> c;
  const double ps[] = {0.05, 0.001, 0.09, 0.02, 0.03};
  const Dim dims[] = {Dim::daytime, Dim::weekday, Dim::isweekend, Dim::location, Dim::weather};
  for (int i = 0; i < 5; ++i) c.push_back({dims[i], "x", 10, 5, 0, 2, ps[i]});
  const auto kept = filter_factors(c);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[0].p, 0.001);
  EXPECT_EQ(kept[1].p, 0.02);
  EXPECT_EQ(kept[2].p, 0.03);
  EXPECT_EQ(filter_factors(c, 1).size(), 1u);
}

TEST(SelectFactors, WeekendExample) {
  const UsageCube cube = weekend_cube();
  ExplainOptions opts;
  opts.dims = {Dim::isweekend};
  const auto sel = select_factors(cube, *cube.find_app(AppId("A")), ctx("isweekend=weekend,weekday=sat"), opts);
  ASSERT_EQ(sel.size(), 1u);
  EXPECT_EQ(sel[0].dim, Dim::isweekend);
  EXPECT_EQ(sel[0].value, "weekend");
  EXPECT_EQ(sel[0].observed, 9u);
  EXPECT_DOUBLE_EQ(sel[0].expected, 4.0);
  EXPECT_DOUBLE_EQ(sel[0].chi2, 6.25);
  EXPECT_EQ(sel[0].df, 2);
  EXPECT_NEAR(sel[0].p, 0.043937, 5e-7);
}

TEST(SelectFactors, ProportionalUsageSelectsNothing) {
  // Both apps split 1:3 between morning and evening, exactly like the total.
  const UsageCube cube = cube_of({tuple("u", "A", "daytime=morning", 2), tuple("u", "A", "daytime=evening", 6),
                                  tuple("v", "B", "daytime=morning", 5), tuple("v", "B", "daytime=evening", 15)});
  ExplainOptions opts;
  opts.dims = {Dim::daytime};
  const auto all = evaluate_factors(cube, 0, ctx("daytime=morning"), opts);
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0].chi2, 0.0);
  EXPECT_EQ(all[0].p, 1.0);
  EXPECT_TRUE(select_factors(cube, 0, ctx("daytime=morning"), opts).empty());
}

TEST(SelectFactors, UnobservedValueIsSkippedAndCounted) {
  const UsageCube cube = weekend_cube();
  ExplainOptions opts;
  opts.dims = {Dim::weather, Dim::isweekend};
  ExplainCounters counters;
  const auto all = evaluate_factors(cube, 0, ctx("weather=snowy,isweekend=weekend"), opts, &counters);
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0].dim, Dim::isweekend);
  EXPECT_EQ(counters.skipped_zero_expected, 1u);
}

TEST(SelectFactors, MatchesBruteForceOnFuzzedCubes) {
  std::mt19937_64 rng(2024);
  for (int round = 0; round < 500; ++round) {
    const auto f = testing::fuzz_cube(rng);
    const UsageCube cube = cube_of(f.tuples);
    ContextVector query = testing::random_context(rng);
    // Half the time, query a context that actually occurs.
    if (rng() % 2) query = f.tuples[rng() % f.tuples.size()].context;
    const AppId app = f.tuples[rng() % f.tuples.size()].app;
    for (double significance : {0.1, 1.01}) {
      ExplainOptions opts;
      opts.dims = f.dims;
      opts.significance = significance;
      const auto got = select_factors(cube, *cube.find_app(app), query, opts);
      const auto want = oracle::brute_force_factors(f.tuples, app, query, f.dims, 3, significance);
      ASSERT_EQ(got.size(), want.size()) << "round " << round;
      for (std::size_t k = 0; k < got.size(); ++k) {
        EXPECT_EQ(got[k].dim, want[k].dim);
        EXPECT_EQ(got[k].value, want[k].value);
        EXPECT_EQ(got[k].observed, want[k].observed);
        EXPECT_NEAR(got[k].expected, want[k].expected, 1e-9);
        EXPECT_NEAR(got[k].chi2, want[k].chi2, 1e-9);
        EXPECT_EQ(got[k].df, want[k].df);
        EXPECT_NEAR(got[k].p, want[k].p, 1e-8);
      }
    }
  }
}

TEST(SelectFactors, InvariantsOnFuzzedCubes) {
  std::mt19937_64 rng(99);
  for (int round = 0; round < 300; ++round) {
    const auto f = testing::fuzz_cube(rng);
    const UsageCube cube = cube_of(f.tuples);
    ExplainOptions opts;
    opts.dims = f.dims;
    for (std::uint32_t a = 0; a < cube.num_apps(); ++a) {
      const auto sel = select_factors(cube, a, testing::random_context(rng), opts);
      EXPECT_LE(sel.size(), 3u);
      for (std::size_t k = 0; k < sel.size(); ++k) {
        EXPECT_LT(sel[k].p, 0.1);
        EXPECT_GT(static_cast<double>(sel[k].observed), sel[k].expected);
        EXPECT_GE(sel[k].chi2, 0.0);
        if (k > 0) {
          EXPECT_LE(sel[k - 1].p, sel[k].p);
        }
      }
    }
  }
}

TEST(SelectFactors, PlantedWeekendGamesAreFlagged) {
  WorldSpec spec;
  spec.affinities = {{"games", false, Dim::isweekend, "weekend", 3.0}};
  const auto r = run_pipeline(generate_usage(spec, 10000).pipeline_input());
  std::optional<std::uint32_t> top_game;
  for (std::uint32_t a = 0; a < r.cube.num_apps(); ++a) {
    if (r.cube.category(a) != "games") continue;
    if (!top_game || r.cube.app_total(a) > r.cube.app_total(*top_game)) top_game = a;
  }
  ASSERT_TRUE(top_game);
  ExplainOptions opts;
  opts.dims = {Dim::isweekend};
  const auto sel = select_factors(r.cube, *top_game, ctx("isweekend=weekend,weekday=sat"), opts);
  ASSERT_EQ(sel.size(), 1u);
  EXPECT_LT(sel[0].p, 0.01);
}

TEST(RenderExplanation, Templates) {
  const std::vector<FactorStat> three = {{Dim::daytime, "afternoon"}, {Dim::city, "true"}, {Dim::country, "ES"}};
  ContextVector display;
  display.set(Dim::city, "Barcelona");
  display.set(Dim::country, "Spain");
  EXPECT_EQ(render_explanation(three, display),
            "Recommended because your current situation is: Afternoon, Barcelona, Spain");
  EXPECT_EQ(render_explanation({}), "Recommended based on your overall app usage");
  const std::vector<FactorStat> weekend = {{Dim::isweekend, "weekend"}};
  EXPECT_EQ(render_explanation(weekend), "Recommended because your current situation is: Weekend");
}

TEST(Explain, ReportAndJson) {
  const UsageCube cube = weekend_cube();
  ExplainOptions opts;
  opts.dims = {Dim::isweekend};
  const auto r = explain(cube, AppId("A"), ctx("isweekend=weekend,weekday=sat"), opts);
  EXPECT_EQ(r.text, "Recommended because your current situation is: Weekend");
  const nlohmann::json j = r;
  EXPECT_EQ(j["app"], "A");
  EXPECT_EQ(j["factors"][0]["dimension"], "isweekend");
  EXPECT_EQ(j["factors"][0]["observed"], 9);
  EXPECT_EQ(explain(cube, AppId("nope"), neutral_context()).text, kNeutralExplanation);
}

}  // namespace
}  // namespace ctxrec
