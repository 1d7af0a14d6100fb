#pragma once

// HTTP recommendation service.
//
//   POST /recommend        {"user", "context", "n", "exclude_installed", "display"}
//   POST /feedback         event object or array of them
//   GET  /analytics/funnel | mosaic | uninstall | wtf
//   POST /admin/reload     {"path"}
//   GET  /health

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxrec/domain.hpp"
#include "ctxrec/explain.hpp"
#include "ctxrec/ingest.hpp"
#include "ctxrec/model.hpp"

namespace ctxrec {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t threads = 64;  // each open keep-alive connection holds one
  std::string model_path;
  std::string data_path;        // usage tuples for explanations and cold start
  std::string event_log_path;   // empty keeps feedback in memory only
  std::string events_path;      // event TSV preloaded for analytics
  std::string profiles_path;
  std::string catalog_path;
  std::string ui_dir;           // served under /ui when set
  bool fallback = true;
  std::size_t default_n = 21;
  std::size_t max_n = 50;
  ExplainOptions explain;
  std::vector<std::string> wtf_rules;
  std::size_t wtf_top_n = 10;
  ContextVector context_defaults = neutral_context();
};

// Append-only event log of length-prefixed JSON records with an in-memory
// mirror. Each append batch is written and fsynced before it becomes visible.
class EventLog {
 public:
  EventLog() = default;
  // Loads the complete records already in `path`, drops a partial tail, and
  // opens the file for appending. Throws Error.
  explicit EventLog(const std::string& path);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  void append(std::span<const InteractionEvent> batch);
  std::vector<InteractionEvent> snapshot() const;
  std::size_t size() const;

 private:
  int fd_ = -1;
  std::mutex write_mu_;
  mutable std::mutex mirror_mu_;
  std::vector<InteractionEvent> mirror_;
};

struct ModelSnapshot {
  std::shared_ptr<const FactorModel> model;
  std::string version;
};

// Request handling independent of the transport.
class Service {
 public:
  struct Response {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
  };

  // Loads whatever the config names. Throws on unreadable inputs.
  explicit Service(ServerConfig config);

  Response recommend(const std::string& body) const;
  Response feedback(const std::string& body);
  Response analytics(const std::string& report, const std::multimap<std::string, std::string>& params) const;
  Response reload(const std::string& body);
  Response health() const;

  // Throws FormatError / Error; the previous snapshot stays on failure.
  std::string load_model(const std::string& path);
  void set_model(FactorModel model);
  std::shared_ptr<const ModelSnapshot> snapshot() const;

  const ServerConfig& config() const { return config_; }
  std::vector<InteractionEvent> analytics_events() const;

 private:
  ServerConfig config_;
  mutable std::mutex snapshot_mu_;
  std::shared_ptr<const ModelSnapshot> snapshot_;

  std::unique_ptr<UsageCube> cube_;
  std::unique_ptr<ContextPopularityScorer> fallback_;
  std::vector<InteractionEvent> preloaded_;
  std::unordered_map<UserId, UserProfile> profiles_;
  std::unordered_map<AppId, AppInfo> catalog_;
  EventLog log_;
  std::unique_ptr<EventLog> file_log_;

  mutable std::mutex installed_mu_;
  std::unordered_map<UserId, std::set<AppId>> installed_;  // from feedback
};

// HTTP front end over a Service.
class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();

  Service& service() { return *service_; }
  // Binds and returns the port.
  int bind();
  // Blocks until stop().
  void listen();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Service> service_;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace ctxrec
