#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ctxrec/model.hpp"
#include "ctxrec/simgen.hpp"
#include "support.hpp"

namespace ctxrec {
namespace {

using testing::ctx;
using testing::cube_of;
using testing::tuple;

UsageCube small_cube() {
  return cube_of({tuple("u1", "a", "daytime=morning", 5), tuple("u1", "b", "daytime=evening", 2),
                  tuple("u2", "b", "daytime=evening,country=ES", 3), tuple("u2", "c", "daytime=night", 1),
                  tuple("u3", "d", "isweekend=weekend,weekday=sat", 4)});
}

void zero_all(FactorModel& m) {
  for (std::uint32_t u = 0; u < m.num_users(); ++u) std::ranges::fill(m.user_row(u), 0.0);
  for (std::uint32_t i = 0; i < m.num_apps(); ++i) {
    std::ranges::fill(m.item_row(i), 0.0);
    m.bias(i) = 0;
  }
  for (std::size_t j = 0; j < m.dim_values().size(); ++j) {
    for (std::size_t r = 0; r < m.dim_values()[j].size(); ++r) std::ranges::fill(m.context_row(j, r), 0.0);
  }
}

// Random model with factors of order one.
FactorModel random_model(std::uint64_t seed, std::size_t d = 4) {
  ModelConfig cfg;
  cfg.latent_dim = d;
  cfg.seed = seed;
  cfg.context_dims = {Dim::daytime, Dim::isweekend, Dim::country};
  FactorModel m = FactorModel::initialize(small_cube(), cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 0.7);
  for (std::uint32_t u = 0; u < m.num_users(); ++u)
    for (double& v : m.user_row(u)) v = n(rng);
  for (std::uint32_t i = 0; i < m.num_apps(); ++i) {
    for (double& v : m.item_row(i)) v = n(rng);
    m.bias(i) = n(rng);
  }
  for (std::size_t j = 0; j < m.dim_values().size(); ++j)
    for (std::size_t r = 0; r < m.dim_values()[j].size(); ++r)
      for (double& v : m.context_row(j, r)) v = n(rng);
  return m;
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.latent_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.regularization = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.context_dims = {Dim::daytime, Dim::daytime};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Score, BiasOnly) {
  FactorModel m = FactorModel::initialize(small_cube(), {});
  zero_all(m);
  m.bias(*m.find_app(AppId("a"))) = 0.7;
  EXPECT_DOUBLE_EQ(m.score(UserId("u1"), AppId("a"), neutral_context()), 0.7);
}

TEST(Score, InnerProductIdentity) {
  FactorModel m = FactorModel::initialize(small_cube(), {});
  zero_all(m);
  m.user_row(*m.find_user(UserId("u1")))[0] = 1;
  m.item_row(*m.find_app(AppId("a")))[0] = 1;
  EXPECT_DOUBLE_EQ(m.score(UserId("u1"), AppId("a"), neutral_context()), 1.0);
}

TEST(Score, SingleContextFactorShiftsByItsInnerProduct) {
  FactorModel m = FactorModel::initialize(small_cube(), {});
  const std::size_t j = 0;  // daytime
  ASSERT_EQ(m.config().context_dims[j], Dim::daytime);
  for (std::size_t r = 0; r < m.dim_values()[j].size(); ++r) std::ranges::fill(m.context_row(j, r), 0.0);
  const auto evening = static_cast<std::size_t>(*encode_value(Dim::daytime, "evening"));
  std::mt19937_64 rng(1);
  for (double& v : m.context_row(j, evening)) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto a = *m.find_app(AppId("b"));
  double expected = 0;
  for (std::size_t k = 0; k < m.latent_dim(); ++k) expected += m.item_row(a)[k] * m.context_row(j, evening)[k];
  const double diff = m.score(UserId("u1"), AppId("b"), ctx("daytime=evening")) -
                      m.score(UserId("u1"), AppId("b"), ctx("daytime=morning"));
  EXPECT_NEAR(diff, expected, 1e-12);
}

TEST(Score, UnknownIdsAreColdStartNotValidation) {
  const FactorModel m = FactorModel::initialize(small_cube(), {});
  EXPECT_THROW(m.score(UserId("nobody"), AppId("a"), neutral_context()), ColdStartError);
  EXPECT_THROW(m.score(UserId("u1"), AppId("zzz"), neutral_context()), ColdStartError);
  EXPECT_THROW(m.score(UserId("u1"), AppId("a"), ctx("weather=hail")), ValidationError);
}

TEST(Score, UnseenCountryContributesNothing) {
  const FactorModel m = random_model(3);
  const double es = m.score(UserId("u1"), AppId("a"), ctx("country=ES"));
  const double fr = m.score(UserId("u1"), AppId("a"), ctx("country=FR"));
  const double de = m.score(UserId("u1"), AppId("a"), ctx("country=DE"));
  EXPECT_NE(es, fr);
  EXPECT_EQ(fr, de);
}

TEST(Score, DifferenceDependsOnlyOnDifferingDimensions) {
  const FactorModel m = random_model(8);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const ContextVector a = testing::random_context(rng), b = testing::random_context(rng);
    const auto ra = m.resolve(a), rb = m.resolve(b);
    for (std::uint32_t i = 0; i < m.num_apps(); ++i) {
      double expected = 0;
      for (std::size_t j = 0; j < ra.rows.size(); ++j) {
        if (ra.rows[j] == rb.rows[j]) continue;
        for (std::size_t k = 0; k < m.latent_dim(); ++k) {
          const double wa = ra.rows[j] < 0 ? 0 : m.context_row(j, ra.rows[j])[k];
          const double wb = rb.rows[j] < 0 ? 0 : m.context_row(j, rb.rows[j])[k];
          expected += m.item_row(i)[k] * (wa - wb);
        }
      }
      EXPECT_NEAR(m.score(0, i, ra) - m.score(0, i, rb), expected, 1e-12);
    }
  }
}

TEST(Gradient, MatchesCentralFiniteDifferences) {
  std::mt19937_64 rng(77);
  const double reg = 0.05;
  const double h = 1e-6;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    FactorModel m = random_model(100 + trial);
    Triple t;
    t.user = static_cast<std::uint32_t>(rng() % m.num_users());
    t.positive = static_cast<std::uint32_t>(rng() % m.num_apps());
    do {
      t.negative = static_cast<std::uint32_t>(rng() % m.num_apps());
    } while (t.negative == t.positive);
    t.context = m.resolve(testing::random_context(rng));
    t.weight = confidence_weight(rng() % 10, 1.0);

    PairwiseGradient g;
    pairwise_gradient(m, t, reg, g);

    auto check = [&](double& param, double analytic) {
      const double saved = param;
      param = saved + h;
      const double up = pairwise_loss(m, t, reg);
      param = saved - h;
      const double down = pairwise_loss(m, t, reg);
      param = saved;
      const double numeric = (up - down) / (2 * h);
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-4);
    };
    for (std::size_t k = 0; k < m.latent_dim(); ++k) {
      check(m.user_row(t.user)[k], g.user[k]);
      check(m.item_row(t.positive)[k], g.positive[k]);
      check(m.item_row(t.negative)[k], g.negative[k]);
      for (std::size_t j = 0; j < t.context.rows.size(); ++j) {
        if (t.context.rows[j] >= 0) check(m.context_row(j, t.context.rows[j])[k], g.context[j][k]);
      }
    }
    check(m.bias(t.positive), g.positive_bias);
    check(m.bias(t.negative), g.negative_bias);
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Train, EmptyCubeIsAnError) { EXPECT_THROW(train(UsageCube{}, {}), Error); }

TEST(Train, ZeroEpochsEqualsInitialization) {
  ModelConfig cfg;
  cfg.epochs = 0;
  const UsageCube cube = small_cube();
  EXPECT_TRUE(train(cube, cfg) == FactorModel::initialize(cube, cfg));
}

TEST(Train, DeterministicBytes) {
  ModelConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 7;
  const UsageCube cube = small_cube();
  EXPECT_EQ(serialize_model(train(cube, cfg)), serialize_model(train(cube, cfg)));
  cfg.seed = 8;
  EXPECT_NE(serialize_model(train(cube, cfg)), serialize_model(train(small_cube(), ModelConfig{.epochs = 5, .seed = 7})));
}

TEST(Train, DivergenceNamesTheEpoch) {
  ModelConfig cfg;
  cfg.learning_rate = 1e6;
  cfg.epochs = 50;
  try {
    train(small_cube(), cfg);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, LossTraceHasOneEntryPerEpochAndDecreases) {
  WorldSpec spec;
  spec.n_users = 30;
  spec.n_days = 7;
  const auto r = run_pipeline(generate_usage(spec, 1500).pipeline_input());
  ModelConfig cfg;
  cfg.epochs = 20;
  const FactorModel m = train(r.cube, cfg);
  ASSERT_EQ(m.loss_trace().size(), 20u);
  EXPECT_LT(m.loss_trace().back(), m.loss_trace().front());
  EXPECT_TRUE(m.all_finite());
}

TEST(Train, NoContextModelHasNoContextRows) {
  ModelConfig cfg;
  cfg.epochs = 2;
  const FactorModel m = train_nocontext(small_cube(), cfg);
  EXPECT_TRUE(m.config().context_dims.empty());
  EXPECT_EQ(m.name(), "mf_nocontext");
  EXPECT_EQ(m.score(UserId("u1"), AppId("a"), ctx("daytime=morning")),
            m.score(UserId("u1"), AppId("a"), ctx("daytime=night,weather=snowy")));
}

// Rank position of `app` among all apps, 1 = best.
std::size_t position(const FactorModel& m, const UserId& u, const AppId& app, const ContextVector& c) {
  std::vector<double> scores(m.num_apps());
  m.score_all(u, c, scores);
  const double s = scores[*m.find_app(app)];
  std::size_t better = 0;
  for (double x : scores) better += x > s;
  return better + 1;
}

TEST(Train, PlantedWeekendAppsRankHigherOnWeekends) {
  const std::set<std::string> planted{"app010", "app020", "app030"};
  WorldSpec spec;
  spec.seed = 5;
  spec.zipf_exponent = 0.3;
  spec.categories = {{"games", 1}, {"tools", 1}, {"social", 1}, {"news", 1}};
  for (const auto& id : planted) spec.affinities.push_back({id, true, Dim::isweekend, "weekend", 3.0});
  const auto r = run_pipeline(generate_usage(spec, 30000).pipeline_input());
  ModelConfig cfg;
  cfg.context_dims = {Dim::isweekend, Dim::location};
  cfg.regularization = 0.1;
  cfg.learning_rate = 0.02;
  cfg.epochs = 60;
  const FactorModel m = train(r.cube, cfg);
  const ContextVector weekend = ctx("isweekend=weekend,weekday=sat,location=home");
  const ContextVector workday = ctx("isweekend=workday,weekday=wed,location=home");
  std::size_t higher = 0, probes = 0;
  for (std::uint32_t u = 0; u < m.num_users(); ++u) {
    for (std::uint32_t i = 0; i < m.num_apps(); ++i) {
      if (!planted.contains(m.app(i).str())) continue;
      ++probes;
      higher += position(m, m.user(u), m.app(i), weekend) < position(m, m.user(u), m.app(i), workday);
    }
  }
  ASSERT_EQ(probes, 3 * m.num_users());
  EXPECT_GE(static_cast<double>(higher) / static_cast<double>(probes), 0.9) << higher << "/" << probes;
}

TEST(RankApps, TiesBreakByAppId) {
  const std::vector<AppId> apps{AppId("c"), AppId("a"), AppId("b")};
  const std::vector<double> scores{1.0, 1.0, 2.0};
  const auto ranked = rank_apps(apps, scores, 3, {});
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].app.str(), "b");
  EXPECT_EQ(ranked[1].app.str(), "a");
  EXPECT_EQ(ranked[2].app.str(), "c");
  EXPECT_EQ(ranked[2].rank, 3u);
}

TEST(Recommend, ExactlyNWithNonIncreasingScores) {
  const FactorModel m = random_model(12);
  RecommendOptions opts;
  opts.n = 3;
  opts.exclude_installed = false;
  const auto rec = recommend(m, UserId("u1"), neutral_context(), opts);
  ASSERT_EQ(rec.items.size(), 3u);
  EXPECT_FALSE(rec.cold_start);
  for (std::size_t k = 0; k < rec.items.size(); ++k) {
    EXPECT_EQ(rec.items[k].rank, k + 1);
    if (k > 0) {
      EXPECT_GE(rec.items[k - 1].score, rec.items[k].score);
    }
  }
}

TEST(Recommend, LargeNReturnsEveryEligibleApp) {
  const FactorModel m = random_model(12);
  RecommendOptions opts;
  opts.n = 100;
  EXPECT_EQ(recommend(m, UserId("u1"), neutral_context(), opts).items.size(), m.num_apps() - 2);
  opts.exclude_installed = false;
  EXPECT_EQ(recommend(m, UserId("u1"), neutral_context(), opts).items.size(), m.num_apps());
}

TEST(Recommend, ExcludesInstalledTopApp) {
  FactorModel m = random_model(12);
  m.bias(*m.find_app(AppId("a"))) = 100;
  RecommendOptions opts;
  opts.exclude_installed = false;
  EXPECT_EQ(recommend(m, UserId("u1"), neutral_context(), opts).items[0].app.str(), "a");
  opts.exclude_installed = true;
  for (const auto& item : recommend(m, UserId("u1"), neutral_context(), opts).items) {
    EXPECT_NE(item.app.str(), "a");
  }
  opts.also_installed = {AppId("c")};
  for (const auto& item : recommend(m, UserId("u1"), neutral_context(), opts).items) {
    EXPECT_NE(item.app.str(), "c");
  }
}

TEST(Recommend, UnknownUserFallsBackFlaggedColdStart) {
  const UsageCube cube = small_cube();
  const FactorModel m = random_model(12);
  const ContextPopularityScorer fallback(cube, m.config().context_dims);
  const auto rec = recommend(m, UserId("stranger"), ctx("daytime=evening"), {}, &fallback);
  EXPECT_TRUE(rec.cold_start);
  ASSERT_FALSE(rec.items.empty());
  EXPECT_EQ(rec.items[0].app.str(), "b");
  const auto plain = recommend(m, UserId("stranger"), neutral_context());
  EXPECT_TRUE(plain.cold_start);
  EXPECT_EQ(plain.items[0].app.str(), "a");
}

TEST(Recommend, BiasShiftLeavesOrderingUnchanged) {
  FactorModel m = random_model(21);
  std::mt19937_64 rng(2);
  RecommendOptions opts;
  opts.exclude_installed = false;
  for (int trial = 0; trial < 20; ++trial) {
    const ContextVector c = testing::random_context(rng);
    const auto before = recommend(m, UserId("u2"), c, opts).items;
    const double shift = std::uniform_real_distribution<double>(-5, 5)(rng);
    FactorModel shifted = m;
    for (std::uint32_t i = 0; i < m.num_apps(); ++i) shifted.bias(i) += shift;
    const auto after = recommend(shifted, UserId("u2"), c, opts).items;
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(before[k].app, after[k].app);
  }
}

TEST(Baselines, PopularityRanksTheMostUsedAppFirst) {
  const UsageCube cube = small_cube();
  const PopularityScorer pop(cube);
  std::vector<double> scores(pop.apps().size());
  pop.score_all(UserId("anyone"), neutral_context(), scores);
  EXPECT_EQ(rank_apps(pop.apps(), scores, 1, {})[0].app.str(), "a");
}

TEST(Baselines, ContextPopularityFollowsTheContext) {
  // B dominates weekends only; A dominates overall.
  const UsageCube cube = cube_of({tuple("u1", "A", "isweekend=workday", 20), tuple("u2", "A", "isweekend=weekend", 1),
                                  tuple("u1", "B", "isweekend=weekend,weekday=sat", 6),
                                  tuple("u2", "C", "isweekend=workday", 4), tuple("u3", "D", "isweekend=weekend", 2),
                                  tuple("u3", "E", "", 1)});
  const std::vector<Dim> dims{Dim::isweekend};
  const ContextPopularityScorer cp(cube, dims);
  const PopularityScorer pop(cube);
  std::vector<double> s(cp.apps().size());
  cp.score_all(UserId("x"), ctx("isweekend=weekend"), s);
  EXPECT_EQ(rank_apps(cp.apps(), s, 1, {})[0].app.str(), "B");
  EXPECT_EQ(cp.matching_count(*cube.find_app(AppId("B")), ctx("isweekend=weekend")), 6u);
  pop.score_all(UserId("x"), neutral_context(), s);
  EXPECT_EQ(rank_apps(pop.apps(), s, 1, {})[0].app.str(), "A");
}

TEST(Baselines, ContextMatchingEverythingEqualsPopularity) {
  const UsageCube cube = small_cube();
  const ContextPopularityScorer cp(cube, {});
  const PopularityScorer pop(cube);
  std::vector<double> a(cp.apps().size()), b(pop.apps().size());
  cp.score_all(UserId("x"), neutral_context(), a);
  pop.score_all(UserId("x"), neutral_context(), b);
  const auto ra = rank_apps(cp.apps(), a, 10, {}), rb = rank_apps(pop.apps(), b, 10, {});
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t k = 0; k < ra.size(); ++k) EXPECT_EQ(ra[k].app, rb[k].app);
}

TEST(Persistence, RoundTripScoresBitExactly) {
  const FactorModel m = random_model(31);
  std::stringstream buf;
  save_model(m, buf);
  const FactorModel back = load_model(buf);
  EXPECT_TRUE(back == m);
  std::mt19937_64 rng(6);
  for (int p = 0; p < 1000; ++p) {
    const auto u = m.user(static_cast<std::uint32_t>(rng() % m.num_users()));
    const auto a = m.app(static_cast<std::uint32_t>(rng() % m.num_apps()));
    const auto c = testing::random_context(rng);
    EXPECT_EQ(m.score(u, a, c), back.score(u, a, c));
  }
  EXPECT_EQ(model_fingerprint(m), model_fingerprint(back));
}

TEST(Persistence, FileRoundTrip) {
  testing::TempDir dir;
  const FactorModel m = random_model(32);
  save_model(m, dir.file("m.bin"));
  EXPECT_TRUE(load_model(dir.file("m.bin")) == m);
  EXPECT_THROW(load_model(dir.file("missing.bin")), Error);
}

std::vector<std::uint8_t> bytes_of(const FactorModel& m) { return serialize_model(m); }

FactorModel load_bytes(const std::vector<std::uint8_t>& bytes) {
  std::stringstream buf(std::string(bytes.begin(), bytes.end()));
  return load_model(buf);
}

TEST(Persistence, CorruptHeaderIsAFormatError) {
  auto bytes = bytes_of(random_model(1));
  bytes[0] = 'X';
  EXPECT_THROW(load_bytes(bytes), FormatError);
}

TEST(Persistence, FutureVersionIsUnsupported) {
  auto bytes = bytes_of(random_model(1));
  bytes[8] = 2;
  EXPECT_THROW(load_bytes(bytes), UnsupportedVersionError);
}

TEST(Persistence, TruncationAndBitFlipsAreDetected) {
  const auto bytes = bytes_of(random_model(1));
  for (std::size_t cut : {std::size_t{4}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(load_bytes({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)}), FormatError) << cut;
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(load_bytes(flipped), FormatError);
  auto extended = bytes;
  extended.push_back(0);
  EXPECT_THROW(load_bytes(extended), FormatError);
}

}  // namespace
}  // namespace ctxrec
