#pragma once

// Interaction event files.
//
// TSV, one event per line:
//   user  ts  kind  app  category  session  context
// with `session` empty when unset and `context` as comma separated dim=value.
//
// Binary log: a sequence of records, each a 4-byte little-endian length
// followed by that many bytes of JSON (one event object).

#include <cstdint>
#include <iosfwd>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string>
#include <vector>

#include "ctxrec/domain.hpp"

namespace ctxrec {

// Throws ParseError naming the line and column.
std::vector<InteractionEvent> parse_events(std::istream& in);
std::vector<InteractionEvent> read_events(const std::string& path);
void write_events(std::span<const InteractionEvent> events, std::ostream& out);

void to_json(nlohmann::json& j, const InteractionEvent& e);

// Parses an event object. Missing context dimensions are taken from
// `defaults`; the result must be a valid context. Throws ValidationError.
InteractionEvent event_from_json(const nlohmann::json& j, const ContextVector& defaults = neutral_context());

std::string encode_log_record(const InteractionEvent& e);

struct LogReadResult {
  std::vector<InteractionEvent> events;
  std::size_t valid_bytes = 0;  // prefix made of complete records
  bool truncated_tail = false;
};

// Reads complete records; a partial trailing record is reported, not thrown.
// Throws FormatError for a complete record that is not a valid event.
LogReadResult read_event_log(std::istream& in);
LogReadResult read_event_log(const std::string& path);

// True when any non-`used` event has no session id.
bool needs_sessionizing(std::span<const InteractionEvent> events);

// Sessionizes when needed, otherwise returns the events unchanged.
std::vector<InteractionEvent> prepare_for_analytics(std::vector<InteractionEvent> events);

}  // namespace ctxrec
