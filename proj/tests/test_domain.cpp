#include <gtest/gtest.h>

#include <random>
#include <set>

#include "ctxrec/domain.hpp"
#include "support.hpp"

namespace ctxrec {
namespace {

using testing::ctx;
using testing::random_context;

TEST(Vocabulary, ElevenDimensionsWithTheirCardinalities) {
  ASSERT_EQ(all_dims().size(), 11u);
  const std::pair<Dim, std::size_t> expected[] = {
      {Dim::daytime, 4}, {Dim::weekday, 7}, {Dim::isweekend, 2}, {Dim::location, 3},
      {Dim::city, 2},    {Dim::weather, 9}, {Dim::battery, 5},   {Dim::energy, 3},
      {Dim::connectivity, 3}, {Dim::screen, 2}};
  for (const auto& [d, n] : expected) {
    EXPECT_EQ(dimension(d).cardinality(), n) << dim_name(d);
    std::set<std::string_view> unique(dimension(d).values.begin(), dimension(d).values.end());
    EXPECT_EQ(unique.size(), n);
    for (auto v : unique) EXPECT_FALSE(v.empty());
  }
  EXPECT_TRUE(dimension(Dim::country).open_vocabulary);
}

TEST(Vocabulary, DimensionNamesRoundTrip) {
  for (Dim d : all_dims()) EXPECT_EQ(parse_dim(dim_name(d)), d);
  EXPECT_FALSE(parse_dim("mood"));
}

TEST(Vocabulary, CountryCodes) {
  EXPECT_TRUE(is_country_code("ES"));
  EXPECT_FALSE(is_country_code("es"));
  EXPECT_FALSE(is_country_code("ESP"));
  EXPECT_EQ(encode_value(Dim::country, "unknown"), ValueIndex{0});
  for (std::string code : {"AA", "ES", "ZZ"}) {
    const auto idx = encode_value(Dim::country, code);
    ASSERT_TRUE(idx);
    EXPECT_LT(*idx, kCountrySlots);
    EXPECT_EQ(decode_value(Dim::country, *idx), code);
  }
}

TEST(ValidateContext, AllValidIsOk) {
  EXPECT_TRUE(validate_context(neutral_context()).empty());
  EXPECT_TRUE(is_valid(neutral_context()));
}

TEST(ValidateContext, UnknownWeatherIsReported) {
  const auto v = validate_context(ctx("weather=hail"));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].dim, Dim::weather);
  EXPECT_EQ(v[0].value, "hail");
}

TEST(ValidateContext, MissingBatteryIsReported) {
  ContextVector c = neutral_context();
  c.set(Dim::battery, "");
  const auto v = validate_context(c);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].dim, Dim::battery);
  EXPECT_TRUE(v[0].value.empty());
}

TEST(ValidateContext, ReportsEveryViolation) {
  const auto v = validate_context(ContextVector{});
  EXPECT_EQ(v.size(), 11u);
  EXPECT_THROW(encode(ContextVector{}), ValidationError);
  try {
    encode(ctx("weather=hail,daytime=noon"));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.details().size(), 2u);
  }
}

TEST(ContextDistance, Examples) {
  const ContextVector a = neutral_context();
  EXPECT_EQ(context_distance(a, a), 0);
  EXPECT_EQ(context_distance(a, ctx("daytime=evening")), 1);
  const ContextVector b = ctx(
      "daytime=night,weekday=sun,isweekend=weekend,location=home,city=true,country=ES,weather=rainy,"
      "battery=low,energy=ac,connectivity=none,screen=off");
  EXPECT_EQ(context_distance(a, b), 11);
  EXPECT_THROW(context_distance(a, ctx("weather=hail")), ValidationError);
}

TEST(ContextDistance, MetricAxiomsOnRandomVectors) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_context(rng), b = random_context(rng), c = random_context(rng);
    const int ab = context_distance(a, b);
    EXPECT_GE(ab, 0);
    EXPECT_LE(ab, 11);
    EXPECT_EQ(ab, context_distance(b, a));
    EXPECT_EQ(ab == 0, a == b);
    EXPECT_LE(context_distance(a, c), ab + context_distance(b, c));
  }
}

TEST(ContextSerialization, RoundTripsValidVectors) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto v = random_context(rng);
    EXPECT_EQ(parse_context(format_context(v)), v);
    EXPECT_EQ(decode(encode(v)), v);
  }
}

TEST(ContextSerialization, RejectsMalformedPairs) {
  EXPECT_THROW(parse_context("daytime"), ValidationError);
  EXPECT_THROW(parse_context("mood=happy"), ValidationError);
  EXPECT_EQ(parse_context("").get(Dim::daytime), "");
  EXPECT_EQ(parse_context("daytime=evening", neutral_context()).get(Dim::weather), "sunny");
}

TEST(DisplayValue, HumanReadableLabels) {
  EXPECT_EQ(display_value(Dim::daytime, "afternoon"), "Afternoon");
  EXPECT_EQ(display_value(Dim::weekday, "sat"), "Saturday");
  EXPECT_EQ(display_value(Dim::isweekend, "weekend"), "Weekend");
  EXPECT_EQ(display_value(Dim::country, "ES"), "ES");
}

TEST(Ids, RejectEmpty) {
  EXPECT_THROW(UserId(""), ValidationError);
  EXPECT_LT(AppId("a"), AppId("b"));
}

TEST(EventKinds, ClosedVocabulary) {
  for (auto k : {EventKind::shown, EventKind::viewed, EventKind::installed, EventKind::skipped, EventKind::used,
                 EventKind::uninstalled}) {
    EXPECT_EQ(parse_event_kind(to_string(k)), k);
  }
  EXPECT_FALSE(parse_event_kind("liked"));
}

}  // namespace
}  // namespace ctxrec
