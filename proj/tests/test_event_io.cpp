#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "ctxrec/event_io.hpp"
#include "ctxrec/ingest.hpp"
#include "support.hpp"

namespace ctxrec {
namespace {

std::vector<InteractionEvent> random_events(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::vector<InteractionEvent> out;
  for (std::size_t i = 0; i < n; ++i) {
    InteractionEvent e;
    e.user = UserId("u" + std::to_string(rng() % 5));
    e.app = AppId("a" + std::to_string(rng() % 9));
    e.category = rng() % 2 ? "games" : "tools";
    e.kind = static_cast<EventKind>(rng() % 6);
    e.timestamp = static_cast<std::int64_t>(rng() % 1000000);
    if (rng() % 3) e.session = static_cast<std::int64_t>(rng() % 50);
    e.context = testing::random_context(rng);
    out.push_back(std::move(e));
  }
  return out;
}

TEST(EventTsv, RoundTrip) {
  const auto events = random_events(1, 300);
  std::stringstream buf;
  write_events(events, buf);
  EXPECT_EQ(parse_events(buf), events);
}

TEST(EventTsv, ErrorsNameLineAndColumn) {
  std::istringstream bad_kind(
      "user\tts\tkind\tapp\tcategory\tsession\tcontext\n"
      "u\t10\tliked\ta\ttools\t\tdaytime=morning\n");
  try {
    parse_events(bad_kind);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.column(), 3u);
  }
  std::istringstream bad_ts("u\tnoon\tviewed\ta\ttools\t\t\n");
  EXPECT_THROW(parse_events(bad_ts), ParseError);
  std::istringstream bad_context("u\t1\tviewed\ta\ttools\t1\tweather=hail\n");
  try {
    parse_events(bad_context);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.column(), 7u);
  }
}

TEST(EventJson, RoundTripAndDefaults) {
  for (const auto& e : random_events(2, 100)) {
    const nlohmann::json j = e;
    EXPECT_EQ(event_from_json(j), e);
  }
  const auto e = event_from_json(nlohmann::json{{"user", "u"}, {"app", "a"}, {"kind", "installed"},
                                                {"context", {{"weather", "rainy"}}}});
  EXPECT_EQ(e.kind, EventKind::installed);
  EXPECT_EQ(e.context.get(Dim::weather), "rainy");
  EXPECT_EQ(e.context.get(Dim::daytime), neutral_context().get(Dim::daytime));
  EXPECT_FALSE(e.session);
}

TEST(EventJson, Rejections) {
  EXPECT_THROW(event_from_json(nlohmann::json{{"app", "a"}, {"kind", "viewed"}}), ValidationError);
  EXPECT_THROW(event_from_json(nlohmann::json{{"user", "u"}, {"app", "a"}, {"kind", "liked"}}), ValidationError);
  EXPECT_THROW(event_from_json(nlohmann::json{{"user", "u"}, {"app", "a"}, {"kind", "viewed"}, {"timestamp", "x"}}),
               ValidationError);
  EXPECT_THROW(event_from_json(
                   nlohmann::json{{"user", "u"}, {"app", "a"}, {"kind", "viewed"}, {"context", {{"weather", "hail"}}}}),
               ValidationError);
  EXPECT_THROW(
      event_from_json(nlohmann::json{{"user", "u"}, {"app", "a"}, {"kind", "viewed"}, {"context", {{"mood", "x"}}}}),
      ValidationError);
}

TEST(EventLog, RecordsRoundTrip) {
  const auto events = random_events(3, 50);
  std::string bytes;
  for (const auto& e : events) bytes += encode_log_record(e);
  std::istringstream in(bytes);
  const auto r = read_event_log(in);
  EXPECT_EQ(r.events, events);
  EXPECT_EQ(r.valid_bytes, bytes.size());
  EXPECT_FALSE(r.truncated_tail);
}

TEST(EventLog, PartialTailIsReportedNotThrown) {
  const auto events = random_events(4, 3);
  std::string bytes;
  for (const auto& e : events) bytes += encode_log_record(e);
  const std::size_t full = bytes.size();
  bytes += encode_log_record(events[0]).substr(0, 9);
  std::istringstream in(bytes);
  const auto r = read_event_log(in);
  EXPECT_EQ(r.events.size(), 3u);
  EXPECT_EQ(r.valid_bytes, full);
  EXPECT_TRUE(r.truncated_tail);
}

TEST(EventLog, CorruptCompleteRecordIsAFormatError) {
  std::string record = encode_log_record(random_events(5, 1)[0]);
  record[6] = '#';
  std::istringstream in(record);
  EXPECT_THROW(read_event_log(in), FormatError);
}

TEST(EventLog, FileRoundTrip) {
  testing::TempDir dir;
  const auto events = random_events(6, 20);
  {
    std::ofstream out(dir.file("log.bin"), std::ios::binary);
    for (const auto& e : events) out << encode_log_record(e);
  }
  EXPECT_EQ(read_event_log(dir.file("log.bin")).events, events);
  EXPECT_THROW(read_event_log(dir.file("absent.bin")), Error);
}

TEST(PrepareForAnalytics, SessionizesOnlyWhenNeeded) {
  auto events = random_events(7, 40);
  for (auto& e : events) e.session = e.kind == EventKind::used ? std::nullopt : std::optional<std::int64_t>(3);
  EXPECT_FALSE(needs_sessionizing(events));
  EXPECT_EQ(prepare_for_analytics(events), events);
  events[0].kind = EventKind::viewed;
  events[0].session.reset();
  EXPECT_TRUE(needs_sessionizing(events));
  for (const auto& e : prepare_for_analytics(events)) {
    EXPECT_EQ(e.session.has_value(), e.kind != EventKind::used);
  }
}

}  // namespace
}  // namespace ctxrec
