#include "ctxrec/server.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ctxrec/analytics.hpp"
#include "ctxrec/event_io.hpp"

namespace ctxrec {
namespace {

using json = nlohmann::json;

Service::Response json_response(int status, const json& body) {
  return {status, body.dump(), "application/json"};
}

Service::Response error_response(int status, const std::string& message,
                                 const std::vector<std::string>& details = {}) {
  json body{{"error", message}};
  if (!details.empty()) body["details"] = details;
  return json_response(status, body);
}

std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

ContextVector context_from_json(const json& j, const ContextVector& defaults) {
  ContextVector ctx = defaults;
  if (j.is_null()) return ctx;
  if (j.is_string()) return parse_context(j.get<std::string>(), defaults);
  if (!j.is_object()) throw ValidationError("context must be an object or a dim=value string");
  for (const auto& [key, value] : j.items()) {
    const auto d = parse_dim(key);
    if (!d) throw ValidationError("unknown context dimension '" + key + "'");
    if (!value.is_string()) throw ValidationError("context value for '" + key + "' must be a string");
    ctx.set(*d, value.get<std::string>());
  }
  return ctx;
}

std::string param(const std::multimap<std::string, std::string>& params, const std::string& key,
                  const std::string& fallback) {
  const auto it = params.find(key);
  return it == params.end() || it->second.empty() ? fallback : it->second;
}

void write_all(int fd, const std::string& bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("event log write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// EventLog

EventLog::EventLog(const std::string& path) {
  std::size_t keep = 0;
  {
    std::ifstream in(path, std::ios::binary);
    if (in) {
      auto existing = read_event_log(in);
      mirror_ = std::move(existing.events);
      keep = existing.valid_bytes;
    }
  }
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT, 0644);
  if (fd_ < 0) throw Error("cannot open event log " + path + ": " + std::strerror(errno));
  if (::ftruncate(fd_, static_cast<off_t>(keep)) != 0 || ::lseek(fd_, 0, SEEK_END) < 0) {
    ::close(fd_);
    throw Error("cannot prepare event log " + path + ": " + std::strerror(errno));
  }
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(std::span<const InteractionEvent> batch) {
  std::lock_guard write_lock(write_mu_);
  if (fd_ >= 0) {
    std::string bytes;
    for (const auto& e : batch) bytes += encode_log_record(e);
    write_all(fd_, bytes);
    if (::fsync(fd_) != 0) throw Error(std::string("event log fsync failed: ") + std::strerror(errno));
  }
  std::lock_guard mirror_lock(mirror_mu_);
  mirror_.insert(mirror_.end(), batch.begin(), batch.end());
}

std::vector<InteractionEvent> EventLog::snapshot() const {
  std::lock_guard lock(mirror_mu_);
  return mirror_;
}

std::size_t EventLog::size() const {
  std::lock_guard lock(mirror_mu_);
  return mirror_.size();
}

// ---------------------------------------------------------------------------
// Service

Service::Service(ServerConfig config) : config_(std::move(config)) {
  if (!config_.data_path.empty()) {
    cube_ = std::make_unique<UsageCube>(parse_tuples(config_.data_path));
    fallback_ = std::make_unique<ContextPopularityScorer>(*cube_, ModelConfig{}.context_dims);
  }
  if (!config_.events_path.empty()) preloaded_ = read_events(config_.events_path);
  if (!config_.profiles_path.empty()) {
    std::ifstream in(config_.profiles_path);
    if (!in) throw Error("cannot open profiles " + config_.profiles_path);
    profiles_ = parse_profiles(in);
  }
  if (!config_.catalog_path.empty()) {
    std::ifstream in(config_.catalog_path);
    if (!in) throw Error("cannot open catalog " + config_.catalog_path);
    catalog_ = parse_catalog(in);
  }
  (void)make_wtf_rules(config_.wtf_rules);
  if (!config_.event_log_path.empty()) {
    file_log_ = std::make_unique<EventLog>(config_.event_log_path);
    for (const auto& e : file_log_->snapshot()) {
      if (e.kind == EventKind::installed) installed_[e.user].insert(e.app);
      if (e.kind == EventKind::uninstalled) installed_[e.user].erase(e.app);
    }
  }
  if (!config_.model_path.empty()) load_model(config_.model_path);
}

std::string Service::load_model(const std::string& path) {
  FactorModel model = ctxrec::load_model(path);
  const std::string version = model_fingerprint(model);
  auto snap = std::make_shared<ModelSnapshot>();
  snap->model = std::make_shared<const FactorModel>(std::move(model));
  snap->version = version;
  std::lock_guard lock(snapshot_mu_);
  snapshot_ = std::move(snap);
  return version;
}

void Service::set_model(FactorModel model) {
  auto snap = std::make_shared<ModelSnapshot>();
  snap->version = model_fingerprint(model);
  snap->model = std::make_shared<const FactorModel>(std::move(model));
  std::lock_guard lock(snapshot_mu_);
  snapshot_ = std::move(snap);
}

std::shared_ptr<const ModelSnapshot> Service::snapshot() const {
  std::lock_guard lock(snapshot_mu_);
  return snapshot_;
}

Service::Response Service::health() const {
  const auto snap = snapshot();
  return json_response(200, {{"status", "ok"},
                             {"model_loaded", snap != nullptr},
                             {"model_version", snap ? snap->version : ""},
                             {"events", (file_log_ ? file_log_->size() : log_.size()) + preloaded_.size()}});
}

Service::Response Service::recommend(const std::string& body) const {
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return error_response(400, std::string("invalid JSON: ") + e.what());
  }
  if (!req.is_object()) return error_response(400, "request must be a JSON object");

  const auto user_it = req.find("user");
  if (user_it == req.end() || !user_it->is_string() || user_it->get<std::string>().empty()) {
    return error_response(400, "field 'user' must be a non-empty string");
  }
  const UserId user(user_it->get<std::string>());

  std::size_t n = config_.default_n;
  if (const auto it = req.find("n"); it != req.end() && !it->is_null()) {
    if (!it->is_number_integer()) return error_response(400, "field 'n' must be an integer");
    const auto v = it->get<std::int64_t>();
    if (v < 1 || v > static_cast<std::int64_t>(config_.max_n)) {
      return error_response(400, "n must be between 1 and " + std::to_string(config_.max_n));
    }
    n = static_cast<std::size_t>(v);
  }

  ContextVector context;
  ContextVector display;
  try {
    context = context_from_json(req.value("context", json()), config_.context_defaults);
    display = context_from_json(req.value("display", json()), ContextVector{});
    (void)encode(context);
  } catch (const ValidationError& e) {
    return error_response(400, e.what(), e.details());
  }

  const auto snap = snapshot();
  if (!snap) return error_response(503, "no model loaded");
  const FactorModel& model = *snap->model;
  const bool known = model.knows_user(user);
  if (!known && !config_.fallback) return error_response(404, "unknown user " + user.str());

  RecommendOptions opts;
  opts.n = n;
  if (const auto it = req.find("exclude_installed"); it != req.end() && it->is_boolean()) {
    opts.exclude_installed = it->get<bool>();
  }
  if (opts.exclude_installed) {
    std::lock_guard lock(installed_mu_);
    if (const auto it = installed_.find(user); it != installed_.end()) {
      opts.also_installed.assign(it->second.begin(), it->second.end());
    }
  }

  Recommendation rec;
  try {
    rec = ctxrec::recommend(model, user, context, opts, fallback_.get());
  } catch (const ValidationError& e) {
    return error_response(400, e.what(), e.details());
  }

  json items = json::array();
  for (const auto& item : rec.items) {
    std::string category = "unknown";
    if (const auto a = model.find_app(item.app)) category = model.category(*a);
    std::vector<FactorStat> factors;
    if (cube_) {
      if (const auto a = cube_->find_app(item.app)) factors = select_factors(*cube_, *a, context, config_.explain);
    }
    items.push_back({{"app", item.app.str()},
                     {"name", item.app.str()},
                     {"category", category},
                     {"score", item.score},
                     {"rank", item.rank},
                     {"explanation", render_explanation(factors, display)},
                     {"factors", factors}});
  }
  return json_response(200, {{"user", user.str()},
                             {"items", items},
                             {"cold_start", rec.cold_start},
                             {"model_version", snap->version}});
}

Service::Response Service::feedback(const std::string& body) {
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return error_response(400, std::string("invalid JSON: ") + e.what());
  }
  std::vector<json> items;
  if (req.is_array()) {
    items.assign(req.begin(), req.end());
  } else {
    items.push_back(req);
  }
  if (items.empty()) return error_response(400, "empty feedback batch");

  std::vector<InteractionEvent> batch;
  const std::int64_t now = unix_now();
  for (std::size_t k = 0; k < items.size(); ++k) {
    try {
      InteractionEvent e = event_from_json(items[k], config_.context_defaults);
      if (e.kind != EventKind::viewed && e.kind != EventKind::installed && e.kind != EventKind::skipped &&
          e.kind != EventKind::uninstalled) {
        return error_response(400, "feedback kind must be viewed, installed, skipped or uninstalled");
      }
      if (!items[k].contains("timestamp")) e.timestamp = now;
      batch.push_back(std::move(e));
    } catch (const ValidationError& e) {
      return error_response(400, "event " + std::to_string(k) + ": " + e.what());
    }
  }
  try {
    (file_log_ ? *file_log_ : log_).append(batch);
  } catch (const Error& e) {
    return error_response(500, e.what());
  }
  {
    std::lock_guard lock(installed_mu_);
    for (const auto& e : batch) {
      if (e.kind == EventKind::installed) installed_[e.user].insert(e.app);
      if (e.kind == EventKind::uninstalled) installed_[e.user].erase(e.app);
    }
  }
  return json_response(200, {{"accepted", batch.size()}});
}

std::vector<InteractionEvent> Service::analytics_events() const {
  std::vector<InteractionEvent> events = preloaded_;
  const auto logged = file_log_ ? file_log_->snapshot() : log_.snapshot();
  events.insert(events.end(), logged.begin(), logged.end());
  return prepare_for_analytics(std::move(events));
}

Service::Response Service::analytics(const std::string& report,
                                     const std::multimap<std::string, std::string>& params) const {
  try {
    if (report == "funnel") {
      FunnelOptions opts;
      const std::string window = param(params, "window", "");
      if (!window.empty()) opts.direct_use_window_seconds = std::stoll(window);
      const std::string min_installs = param(params, "min_installs", "");
      if (!min_installs.empty()) opts.min_category_installs = std::stoull(min_installs);
      return json_response(200, json(funnel(analytics_events(), opts)));
    }
    if (report == "mosaic") {
      const RowSelector rows = RowSelector::parse(param(params, "rows", "category"));
      const std::vector<Dim> cols = parse_dim_list(param(params, "cols", "location,isweekend"));
      const std::string source = param(params, "source", cube_ ? "cube" : "events");
      ContingencyTable table;
      if (source == "cube") {
        if (!cube_) return error_response(400, "no usage data loaded; use source=events");
        table = contingency(*cube_, rows, cols);
      } else if (source == "events") {
        table = contingency(analytics_events(), rows, cols);
      } else {
        return error_response(400, "source must be cube or events");
      }
      json out{{"table", table}};
      out["layout"] = table.empty() ? json(nullptr) : json(mosaic_export(table));
      return json_response(200, out);
    }
    if (report == "uninstall") return json_response(200, json(uninstall_ttl(analytics_events())));
    if (report == "wtf") {
      std::vector<std::string> names = config_.wtf_rules;
      if (const auto it = params.find("rules"); it != params.end()) {
        names.clear();
        for (auto part : split_fields(it->second, ',')) {
          if (!part.empty()) names.emplace_back(part);
        }
      }
      const auto rules = make_wtf_rules(names);
      std::size_t top_n = config_.wtf_top_n;
      const std::string n = param(params, "n", "");
      if (!n.empty()) top_n = std::stoull(n);
      const auto events = analytics_events();
      return json_response(200, json(wtf_score(shown_lists(events), profiles_, catalog_, rules, top_n)));
    }
  } catch (const ValidationError& e) {
    return error_response(400, e.what());
  } catch (const ConfigError& e) {
    return error_response(400, e.what());
  } catch (const std::invalid_argument& e) {
    return error_response(400, "invalid numeric parameter");
  } catch (const std::out_of_range& e) {
    return error_response(400, "numeric parameter out of range");
  }
  return error_response(400, "unknown report '" + report + "'; expected funnel, mosaic, uninstall or wtf");
}

Service::Response Service::reload(const std::string& body) {
  std::string path = config_.model_path;
  if (!body.empty()) {
    try {
      const json req = json::parse(body);
      if (req.is_object() && req.contains("path")) {
        if (!req["path"].is_string()) return error_response(400, "field 'path' must be a string");
        path = req["path"].get<std::string>();
      }
    } catch (const json::exception& e) {
      return error_response(400, std::string("invalid JSON: ") + e.what());
    }
  }
  if (path.empty()) return error_response(400, "no model path given");
  try {
    const std::string version = load_model(path);
    return json_response(200, {{"status", "reloaded"}, {"model_version", version}});
  } catch (const Error& e) {
    return error_response(422, e.what());
  }
}

// ---------------------------------------------------------------------------
// Server

struct Server::Impl {
  httplib::Server http;
};

namespace {

void reply(httplib::Response& res, const Service::Response& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

Server::Server(ServerConfig config)
    : service_(std::make_unique<Service>(std::move(config))), impl_(std::make_unique<Impl>()) {
  auto& http = impl_->http;
  const std::size_t threads = std::max<std::size_t>(1, service_->config().threads);
  http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  Service* svc = service_.get();

  http.Post("/recommend", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->recommend(req.body));
  });
  http.Post("/feedback", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->feedback(req.body));
  });
  http.Get(R"(/analytics/([A-Za-z_]+))", [svc](const httplib::Request& req, httplib::Response& res) {
    std::multimap<std::string, std::string> params(req.params.begin(), req.params.end());
    reply(res, svc->analytics(req.matches[1], params));
  });
  http.Post("/admin/reload", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->reload(req.body));
  });
  http.Get("/health", [svc](const httplib::Request&, httplib::Response& res) { reply(res, svc->health()); });
  if (!service_->config().ui_dir.empty()) http.set_mount_point("/ui", service_->config().ui_dir);
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(json{{"error", what}}.dump(), "application/json");
  });
}

Server::~Server() { stop(); }

int Server::bind() {
  const auto& cfg = service_->config();
  if (cfg.port == 0) {
    port_ = impl_->http.bind_to_any_port(cfg.host);
  } else if (impl_->http.bind_to_port(cfg.host, cfg.port)) {
    port_ = cfg.port;
  } else {
    port_ = -1;
  }
  if (port_ < 0) throw Error("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  return port_;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

}  // namespace ctxrec
