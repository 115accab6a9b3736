#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "atomchip/runner.hpp"

namespace atomchip {

// One accepted revision of a session. Never modified after publication, so
// a reader holding it sees a consistent scenario, pattern and source.
struct SessionState {
  std::uint64_t revision = 0;
  Scenario scenario;
  std::shared_ptr<const MagnetizationPattern> pattern;
  std::shared_ptr<const FieldSource> source;
};

class SessionNotFound : public std::runtime_error {
 public:
  explicit SessionNotFound(const std::string& id) : std::runtime_error("no session " + id) {}
};

class RevisionConflict : public std::runtime_error {
 public:
  RevisionConflict(std::uint64_t base, std::uint64_t current)
      : std::runtime_error("base revision " + std::to_string(base) + " is stale; current is " +
                           std::to_string(current)),
        current_(current) {}
  std::uint64_t current() const { return current_; }

 private:
  std::uint64_t current_;
};

// Sessions with single-writer mutation and snapshot reads. Every accepted
// mutation is logged as JSON so the final scenario can be replayed.
class SessionStore {
 public:
  std::string create(Scenario scenario);
  std::shared_ptr<const SessionState> get(const std::string& id) const;

  // base_revision, when given, must equal the current revision.
  std::shared_ptr<const SessionState> append_edits(const std::string& id, const std::vector<EditOp>& edits,
                                                   std::optional<std::uint64_t> base_revision);
  std::shared_ptr<const SessionState> set_bias(const std::string& id, const BiasField& bias,
                                               std::optional<std::uint64_t> base_revision);

  Scenario initial_scenario(const std::string& id) const;
  std::vector<nlohmann::json> mutation_log(const std::string& id) const;

  // Bumped by every stream start; a running stream stops when it no longer
  // holds the latest value.
  std::uint64_t next_run(const std::string& id);
  std::uint64_t current_run(const std::string& id) const;

 private:
  struct Session {
    std::mutex write;
    mutable std::mutex read;
    std::shared_ptr<const SessionState> state;
    Scenario initial;
    std::vector<nlohmann::json> log;
    std::atomic<std::uint64_t> run{0};
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  template <class Mutate>
  std::shared_ptr<const SessionState> mutate(const std::string& id, std::optional<std::uint64_t> base,
                                             nlohmann::json entry, Mutate&& change);

  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// Applies a logged mutation to a scenario.
void apply_mutation(Scenario& scenario, const nlohmann::json& entry);

nlohmann::json to_json(const TrapCandidate& trap);

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;         // 0 picks a free port
  int stream_port = 8081;  // 0 picks a free port
  std::string static_dir;
  int threads = 1;
};

// HTTP API under /api plus the MOT stream on its own TCP port. Stream
// messages are JSON, each preceded by its length as a 4-byte big-endian
// integer.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds both ports and serves on background threads.
  void start();
  void stop();
  int http_port() const { return http_port_; }
  int stream_port() const { return stream_port_; }
  SessionStore& store() { return store_; }

 private:
  struct Impl;
  void accept_streams();

  ServiceOptions options_;
  SessionStore store_;
  std::unique_ptr<Impl> impl_;
  int http_port_ = 0;
  int stream_port_ = 0;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread http_thread_;
  std::thread accept_thread_;
};

}  // namespace atomchip
