#include "ctxrec/event_io.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <ostream>

#include "ctxrec/ingest.hpp"

namespace ctxrec {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
std::optional<T> parse_int(std::string_view s) {
  s = trim(s);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

std::vector<InteractionEvent> parse_events(std::istream& in) {
  std::vector<InteractionEvent> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view row = trim(line);
    if (row.empty() || row.front() == '#') continue;
    const auto f = split_fields(row);
    if (lineno == 1 && trim(f[0]) == "user") continue;
    if (f.size() < 7) throw ParseError("event needs 7 fields", lineno, f.size() + 1);
    InteractionEvent e;
    if (trim(f[0]).empty()) throw ParseError("empty user", lineno, 1);
    e.user = UserId(std::string(trim(f[0])));
    const auto ts = parse_int<std::int64_t>(f[1]);
    if (!ts) throw ParseError("invalid timestamp", lineno, 2);
    e.timestamp = *ts;
    const auto kind = parse_event_kind(trim(f[2]));
    if (!kind) throw ParseError("unknown event kind '" + std::string(trim(f[2])) + "'", lineno, 3);
    e.kind = *kind;
    if (trim(f[3]).empty()) throw ParseError("empty app", lineno, 4);
    e.app = AppId(std::string(trim(f[3])));
    if (!trim(f[4]).empty()) e.category = std::string(trim(f[4]));
    if (!trim(f[5]).empty()) {
      const auto session = parse_int<std::int64_t>(f[5]);
      if (!session) throw ParseError("invalid session id", lineno, 6);
      e.session = *session;
    }
    try {
      e.context = parse_context(f[6]);
    } catch (const ValidationError& err) {
      throw ParseError(err.what(), lineno, 7);
    }
    if (const auto bad = validate_context(e.context); !bad.empty()) {
      throw ParseError("invalid context value for " + std::string(dim_name(bad.front().dim)), lineno, 7);
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<InteractionEvent> read_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open event file " + path);
  return parse_events(in);
}

void write_events(std::span<const InteractionEvent> events, std::ostream& out) {
  out << "user\tts\tkind\tapp\tcategory\tsession\tcontext\n";
  for (const auto& e : events) {
    out << e.user.str() << '\t' << e.timestamp << '\t' << to_string(e.kind) << '\t' << e.app.str() << '\t'
        << e.category << '\t';
    if (e.session) out << *e.session;
    out << '\t' << format_context(e.context) << '\n';
  }
}

void to_json(nlohmann::json& j, const InteractionEvent& e) {
  nlohmann::json ctx = nlohmann::json::object();
  for (Dim d : all_dims()) {
    if (e.context.has(d)) ctx[std::string(dim_name(d))] = e.context.get(d);
  }
  j = nlohmann::json{{"user", e.user.str()},   {"app", e.app.str()},         {"category", e.category},
                     {"kind", to_string(e.kind)}, {"timestamp", e.timestamp}, {"context", ctx}};
  j["session"] = e.session ? nlohmann::json(*e.session) : nlohmann::json(nullptr);
}

InteractionEvent event_from_json(const nlohmann::json& j, const ContextVector& defaults) {
  if (!j.is_object()) throw ValidationError("event must be a JSON object");
  auto str = [&](const char* key, bool required) -> std::string {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
      if (required) throw ValidationError(std::string("missing field '") + key + "'");
      return {};
    }
    if (!it->is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
  };
  InteractionEvent e;
  const std::string user = str("user", true);
  const std::string app = str("app", true);
  if (user.empty() || app.empty()) throw ValidationError("user and app must be non-empty");
  e.user = UserId(user);
  e.app = AppId(app);
  if (auto c = str("category", false); !c.empty()) e.category = std::move(c);
  const std::string kind = str("kind", true);
  const auto k = parse_event_kind(kind);
  if (!k) throw ValidationError("unknown event kind '" + kind + "'");
  e.kind = *k;
  if (const auto it = j.find("timestamp"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw ValidationError("timestamp must be an integer");
    e.timestamp = it->get<std::int64_t>();
  }
  if (const auto it = j.find("session"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw ValidationError("session must be an integer");
    e.session = it->get<std::int64_t>();
  }
  e.context = defaults;
  if (const auto it = j.find("context"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw ValidationError("context must be an object");
    for (const auto& [key, value] : it->items()) {
      const auto d = parse_dim(key);
      if (!d) throw ValidationError("unknown context dimension '" + key + "'");
      if (!value.is_string()) throw ValidationError("context value for '" + key + "' must be a string");
      e.context.set(*d, value.get<std::string>());
    }
  }
  (void)encode(e.context);
  return e;
}

std::string encode_log_record(const InteractionEvent& e) {
  const std::string body = nlohmann::json(e).dump();
  std::string out(4, '\0');
  const auto n = static_cast<std::uint32_t>(body.size());
  for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)] = static_cast<char>((n >> (8 * i)) & 0xFF);
  return out + body;
}

LogReadResult read_event_log(std::istream& in) {
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  LogReadResult r;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) {
      r.truncated_tail = true;
      break;
    }
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)])) << (8 * i);
    if (bytes.size() - pos - 4 < n) {
      r.truncated_tail = true;
      break;
    }
    const std::string_view body(bytes.data() + pos + 4, n);
    try {
      r.events.push_back(event_from_json(nlohmann::json::parse(body)));
    } catch (const nlohmann::json::exception& err) {
      throw FormatError("corrupt event log record at byte " + std::to_string(pos) + ": " + err.what());
    } catch (const ValidationError& err) {
      throw FormatError("invalid event log record at byte " + std::to_string(pos) + ": " + err.what());
    }
    pos += 4 + n;
    r.valid_bytes = pos;
  }
  return r;
}

LogReadResult read_event_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open event log " + path);
  return read_event_log(in);
}

bool needs_sessionizing(std::span<const InteractionEvent> events) {
  for (const auto& e : events) {
    if (e.kind != EventKind::used && !e.session) return true;
  }
  return false;
}

std::vector<InteractionEvent> prepare_for_analytics(std::vector<InteractionEvent> events) {
  if (needs_sessionizing(events)) return sessionize(std::move(events));
  return events;
}

}  // namespace ctxrec
