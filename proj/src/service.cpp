#include "atomchip/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <list>
#include <random>

#include "atomchip/export.hpp"
#include "atomchip/parallel.hpp"
#include "httplib.h"

namespace atomchip {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Sessions

namespace {

std::string new_token() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  return buf;
}

std::shared_ptr<const SessionState> build_state(Scenario scenario, std::uint64_t revision) {
  validate(scenario);
  auto state = std::make_shared<SessionState>();
  state->revision = revision;
  state->pattern = std::make_shared<const MagnetizationPattern>(build_pattern(scenario));
  state->source = std::make_shared<const FieldSource>(build_source(scenario, *state->pattern));
  state->scenario = std::move(scenario);
  return state;
}

}  // namespace

void apply_mutation(Scenario& scenario, const json& entry) {
  const std::string op = entry.at("op").get<std::string>();
  if (op == "edits") {
    const json& edits = entry.at("edits");
    for (std::size_t i = 0; i < edits.size(); ++i)
      scenario.edits.push_back(edit_from_json(edits[i], "edits[" + std::to_string(i) + "]"));
  } else if (op == "bias") {
    scenario.bias = bias_from_json(entry.at("bias"), "bias");
  } else {
    throw ScenarioError("op", "unknown mutation '" + op + "'");
  }
}

std::string SessionStore::create(Scenario scenario) {
  auto session = std::make_shared<Session>();
  session->initial = scenario;
  session->state = build_state(std::move(scenario), 0);
  const std::string id = new_token();
  std::lock_guard lock(mutex_);
  sessions_[id] = std::move(session);
  return id;
}

std::shared_ptr<SessionStore::Session> SessionStore::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw SessionNotFound(id);
  return it->second;
}

std::shared_ptr<const SessionState> SessionStore::get(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->read);
  return s->state;
}

template <class Mutate>
std::shared_ptr<const SessionState> SessionStore::mutate(const std::string& id, std::optional<std::uint64_t> base,
                                                         json entry, Mutate&& change) {
  auto s = find(id);
  std::lock_guard writer(s->write);
  std::shared_ptr<const SessionState> current;
  {
    std::lock_guard lock(s->read);
    current = s->state;
  }
  if (base && *base != current->revision) throw RevisionConflict(*base, current->revision);
  Scenario next = current->scenario;
  change(next);
  auto state = build_state(std::move(next), current->revision + 1);
  {
    std::lock_guard lock(s->read);
    s->state = state;
    s->log.push_back(std::move(entry));
  }
  return state;
}

std::shared_ptr<const SessionState> SessionStore::append_edits(const std::string& id, const std::vector<EditOp>& edits,
                                                               std::optional<std::uint64_t> base_revision) {
  json list = json::array();
  for (const auto& e : edits) list.push_back(to_json(e));
  return mutate(id, base_revision, {{"op", "edits"}, {"edits", list}}, [&](Scenario& s) {
    s.edits.insert(s.edits.end(), edits.begin(), edits.end());
  });
}

std::shared_ptr<const SessionState> SessionStore::set_bias(const std::string& id, const BiasField& bias,
                                                           std::optional<std::uint64_t> base_revision) {
  return mutate(id, base_revision, {{"op", "bias"}, {"bias", to_json(bias)}}, [&](Scenario& s) { s.bias = bias; });
}

Scenario SessionStore::initial_scenario(const std::string& id) const { return find(id)->initial; }

std::vector<json> SessionStore::mutation_log(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->read);
  return s->log;
}

std::uint64_t SessionStore::next_run(const std::string& id) { return ++find(id)->run; }
std::uint64_t SessionStore::current_run(const std::string& id) const { return find(id)->run.load(); }

json to_json(const TrapCandidate& t) {
  json j = {{"time_s", t.time},
            {"position_m", {t.position.x(), t.position.y(), t.position.z()}},
            {"Bres_T", t.residual_B},
            {"principal_gradients_Tpm", {t.principal_gradients[0], t.principal_gradients[1], t.principal_gradients[2]}},
            {"class", to_string(t.classification)}};
  json jac = json::array();
  for (int r = 0; r < 3; ++r) jac.push_back({t.gradient_tensor(r, 0), t.gradient_tensor(r, 1), t.gradient_tensor(r, 2)});
  j["jacobian_Tpm"] = jac;
  j["depth_T"] = t.depth ? json(*t.depth) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// MOT stream

namespace {

bool write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k <= 0) return false;
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

bool read_all(int fd, char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::recv(fd, data, n, 0);
    if (k <= 0) return false;
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

constexpr std::uint32_t kMaxMessage = 1u << 20;

struct RunSpec {
  SearchRegion region;
  EnsembleSpec ensemble;
  double dt = 10e-6;
  bool stochastic = false;
  bool gravity = true;
  double time_scale = 0.02;  // simulated seconds per wall-clock second
  double frame_interval = 0.05;
  std::uint64_t seed = 1;
};

RunSpec run_from_json(const json& j, const Scenario& scenario) {
  if (!j.is_object()) throw ScenarioError("run", "expected an object");
  RunSpec r;
  r.seed = scenario.seed;
  for (const auto& item : j.items()) {
    const std::string& k = item.key();
    const json& v = item.value();
    const std::string path = "run." + k;
    auto number = [&] {
      if (!v.is_number()) throw ScenarioError(path, "expected a number");
      return v.get<double>();
    };
    auto boolean = [&] {
      if (!v.is_boolean()) throw ScenarioError(path, "expected true or false");
      return v.get<bool>();
    };
    if (k == "region") {
      r.region = region_from_json(v, path);
    } else if (k == "ensemble") {
      r.ensemble = ensemble_from_json(v, path);
    } else if (k == "dt_us") {
      r.dt = number() * 1e-6;
    } else if (k == "stochastic") {
      r.stochastic = boolean();
    } else if (k == "gravity") {
      r.gravity = boolean();
    } else if (k == "time_scale") {
      r.time_scale = number();
    } else if (k == "frame_interval_ms") {
      r.frame_interval = number() * 1e-3;
    } else if (k == "seed") {
      if (!v.is_number_unsigned()) throw ScenarioError(path, "expected a non-negative integer");
      r.seed = v.get<std::uint64_t>();
    } else {
      throw ScenarioError(path, "unknown key");
    }
  }
  if (!j.contains("region")) throw ScenarioError("run.region", "missing");
  if (!j.contains("ensemble")) throw ScenarioError("run.ensemble", "missing");
  if (!(r.dt > 0.0)) throw ScenarioError("run.dt_us", "must be > 0");
  if (!(r.time_scale > 0.0)) throw ScenarioError("run.time_scale", "must be > 0");
  if (!(r.frame_interval >= 1e-3)) throw ScenarioError("run.frame_interval_ms", "must be >= 1");
  if (r.ensemble.count > 100000) throw ScenarioError("run.ensemble.count", "at most 100000 atoms");
  return r;
}

// Outgoing messages in order. Frames are droppable: a new frame replaces
// any frame still waiting, so a slow reader never holds up the simulation.
class Outbox {
 public:
  void push(json message, bool droppable) {
    std::lock_guard lock(m_);
    if (droppable) {
      for (auto it = q_.begin(); it != q_.end();) {
        if (it->second) {
          it = q_.erase(it);
          ++dropped_;
        } else {
          ++it;
        }
      }
    }
    q_.emplace_back(std::move(message), droppable);
    cv_.notify_one();
  }

  std::optional<json> pop(const std::atomic<bool>& closed) {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return !q_.empty() || closed.load(); });
    if (q_.empty()) return std::nullopt;
    json m = std::move(q_.front().first);
    q_.pop_front();
    return m;
  }

  void wake() { cv_.notify_all(); }
  std::uint64_t dropped() const {
    std::lock_guard lock(m_);
    return dropped_;
  }

 private:
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<std::pair<json, bool>> q_;
  std::uint64_t dropped_ = 0;
};

struct Controls {
  std::mutex m;
  bool dirty = false;
  bool pause = false;
  std::optional<Vec3> static_field;
  std::optional<std::optional<BiasModulation>> modulation;
};

class StreamConnection {
 public:
  StreamConnection(int fd, SessionStore& store, int threads) : fd_(fd), store_(store), threads_(threads) {}

  ~StreamConnection() { close(); }

  void serve() {
    writer_ = std::thread([this] { write_loop(); });
    for (;;) {
      unsigned char head[4];
      if (!read_all(fd_, reinterpret_cast<char*>(head), 4)) break;
      const std::uint32_t n = (std::uint32_t(head[0]) << 24) | (std::uint32_t(head[1]) << 16) |
                              (std::uint32_t(head[2]) << 8) | std::uint32_t(head[3]);
      if (n > kMaxMessage) {
        error("message of " + std::to_string(n) + " bytes exceeds the limit");
        std::string sink(4096, '\0');
        std::uint32_t left = n;
        bool ok = true;
        while (left > 0 && ok) {
          const std::uint32_t k = std::min<std::uint32_t>(left, 4096);
          ok = read_all(fd_, sink.data(), k);
          left -= k;
        }
        if (!ok) break;
        continue;
      }
      std::string body(n, '\0');
      if (!read_all(fd_, body.data(), n)) break;
      handle(body);
    }
    close();
  }

  // Stops the simulation and writer; safe to call more than once.
  void close() {
    bool expected = false;
    if (!closed_.compare_exchange_strong(expected, true)) {
      if (writer_.joinable() && writer_.get_id() != std::this_thread::get_id()) writer_.join();
      return;
    }
    stop_sim();
    ::shutdown(fd_, SHUT_RDWR);
    outbox_.wake();
    if (writer_.joinable()) writer_.join();
    ::close(fd_);
  }

  void shutdown_socket() { ::shutdown(fd_, SHUT_RDWR); }
  bool finished() const { return finished_.load(); }
  void mark_finished() { finished_ = true; }

 private:
  void write_loop() {
    while (auto m = outbox_.pop(closed_)) {
      const std::string body = m->dump();
      const std::uint32_t n = static_cast<std::uint32_t>(body.size());
      const unsigned char head[4] = {static_cast<unsigned char>(n >> 24), static_cast<unsigned char>(n >> 16),
                                     static_cast<unsigned char>(n >> 8), static_cast<unsigned char>(n)};
      if (!write_all(fd_, reinterpret_cast<const char*>(head), 4) || !write_all(fd_, body.data(), body.size())) {
        ::shutdown(fd_, SHUT_RDWR);
        return;
      }
    }
  }

  void error(const std::string& message, const std::string& field = "") {
    json e = {{"type", "error"}, {"message", message}};
    if (!field.empty()) e["field"] = field;
    outbox_.push(std::move(e), false);
  }

  void handle(const std::string& body) {
    json msg;
    try {
      msg = json::parse(body);
    } catch (const json::parse_error& e) {
      error(std::string("malformed control: ") + e.what());
      return;
    }
    try {
      if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
        throw ScenarioError("type", "control message needs a string type");
      const std::string type = msg["type"].get<std::string>();
      if (type == "start") {
        start(msg);
      } else if (type == "pause" || type == "resume") {
        with_controls([&](Controls& c) { c.pause = type == "pause"; });
      } else if (type == "set-bias") {
        json doc = {{"static_uT", msg.value("static_uT", json())}};
        const BiasField b = bias_from_json(doc, "set-bias");
        with_controls([&](Controls& c) { c.static_field = b.static_field; });
      } else if (type == "set-modulation") {
        std::optional<BiasModulation> mod;
        if (msg.contains("modulation") && !msg["modulation"].is_null()) {
          json doc = {{"modulation", msg["modulation"]}};
          mod = bias_from_json(doc, "set-modulation").modulation;
        }
        with_controls([&](Controls& c) { c.modulation = mod; });
      } else {
        throw ScenarioError("type", "unknown control '" + type + "' (start, pause, resume, set-bias, set-modulation)");
      }
    } catch (const SpecificationError& e) {
      error(e.what(), e.field());
    } catch (const SessionNotFound& e) {
      error(e.what(), "session");
    } catch (const std::exception& e) {
      error(e.what());
    }
  }

  template <class F>
  void with_controls(F&& f) {
    if (!sim_.joinable() || sim_done_) throw ScenarioError("type", "no simulation is running; send start first");
    std::lock_guard lock(controls_.m);
    f(controls_);
    controls_.dirty = true;
  }

  void start(const json& msg) {
    if (!msg.contains("session") || !msg["session"].is_string()) throw ScenarioError("session", "missing");
    const std::string id = msg["session"].get<std::string>();
    auto state = store_.get(id);
    if (!state->scenario.mot) throw ScenarioError("mot", "the session scenario has no mot section");
    const RunSpec spec = run_from_json(msg.value("run", json::object()), state->scenario);
    validate(spec.region, *state->source);
    stop_sim();
    {
      std::lock_guard lock(controls_.m);
      controls_.dirty = controls_.pause = false;
      controls_.static_field.reset();
      controls_.modulation.reset();
    }
    stop_ = false;
    sim_done_ = false;
    const std::uint64_t run = store_.next_run(id);
    outbox_.push({{"type", "started"}, {"session", id}, {"revision", state->revision}, {"run", run}}, false);
    sim_ = std::thread([this, state, spec, id, run] {
      try {
        simulate(state, spec, id, run);
      } catch (const std::exception& e) {
        error(std::string("simulation stopped: ") + e.what());
      }
      sim_done_ = true;
    });
  }

  void stop_sim() {
    stop_ = true;
    if (sim_.joinable()) sim_.join();
  }

  void simulate(std::shared_ptr<const SessionState> state, const RunSpec spec, const std::string& id,
                std::uint64_t run) {
    using clock = std::chrono::steady_clock;
    const MOTConfig& config = state->scenario.mot->config;
    const AtomSpecies& species = state->scenario.mot->species;
    FieldSource live = *state->source;
    auto model = mot_force_model(config, species, live, spec.gravity);
    const StepLimits limits = step_limits(config, species, live);

    const std::size_t n = static_cast<std::size_t>(spec.ensemble.count);
    std::vector<AtomState> atoms(n);
    std::vector<std::mt19937_64> rngs;
    rngs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      rngs.push_back(atom_rng(spec.seed, i));
      atoms[i] = sample_atom(spec.ensemble, rngs[i]);
      atoms[i].alive = (atoms[i].position.array() >= limits.volume_min.array()).all() &&
                       (atoms[i].position.array() <= limits.volume_max.array()).all();
    }
    std::vector<RecoilKicks> kicks;
    for (std::size_t i = 0; i < n; ++i) kicks.push_back(recoil_kicks(config, species, &rngs[i]));

    const long steps_per_frame = std::max(1L, std::lround(spec.time_scale * spec.frame_interval / spec.dt));
    double t = 0.0;
    long step = 0;
    bool paused = false;
    std::vector<Vec3> traps;
    bool search = true;
    std::uint64_t seq = 0;

    auto update_traps = [&] {
      if (!search) {
        std::vector<Vec3> next;
        for (const auto& p : traps) {
          auto z = refine_zero(live, spec.region, p, t);
          if (!z) {
            search = true;
            break;
          }
          next.push_back(z->position);
        }
        if (!search) traps = std::move(next);
      }
      if (search) {
        traps.clear();
        for (const auto& c : find_zeros(live, spec.region, t, threads_)) {
          if (c.classification == TrapClass::quadrupole_3d) traps.push_back(c.position);
        }
        search = false;
      }
    };

    auto emit = [&] {
      update_traps();
      json pts = json::array();
      std::size_t alive = 0;
      for (const auto& a : atoms) alive += a.alive ? 1 : 0;
      const std::size_t stride = std::max<std::size_t>(1, (alive + 1999) / 2000);
      std::size_t k = 0;
      for (const auto& a : atoms) {
        if (!a.alive) continue;
        if (k++ % stride == 0) pts.push_back({a.position.x(), a.position.y(), a.position.z()});
      }
      json tr = json::array();
      for (const auto& p : traps) tr.push_back({p.x(), p.y(), p.z()});
      const Vec3 b = live.bias.at(t);
      outbox_.push({{"type", "frame"},
                    {"seq", seq++},
                    {"sim_time_s", t},
                    {"paused", paused},
                    {"revision", state->revision},
                    {"bias_uT", {b.x() * 1e6, b.y() * 1e6, b.z() * 1e6}},
                    {"atom_count", n},
                    {"alive", alive},
                    {"atoms_m", pts},
                    {"traps_m", tr},
                    {"dropped", outbox_.dropped()}},
                   true);
    };

    // Controls take effect between integration steps.
    auto apply_controls = [&] {
      std::lock_guard lock(controls_.m);
      if (!controls_.dirty) return;
      controls_.dirty = false;
      bool field_changed = false;
      if (controls_.static_field) {
        live.bias.static_field = *controls_.static_field;
        controls_.static_field.reset();
        field_changed = true;
      }
      if (controls_.modulation) {
        live.bias.modulation = *controls_.modulation;
        controls_.modulation.reset();
        field_changed = true;
      }
      if (field_changed) {
        model = mot_force_model(config, species, live, spec.gravity);
        search = true;
        outbox_.push({{"type", "bias-applied"}, {"sim_time_s", t}, {"bias", to_json(live.bias)}}, false);
      }
      if (controls_.pause != paused) {
        paused = controls_.pause;
        outbox_.push({{"type", paused ? "paused" : "resumed"}, {"sim_time_s", t}}, false);
      }
    };

    emit();
    auto next_frame = clock::now();
    while (!stop_ && !closed_) {
      if (store_.current_run(id) != run) {
        outbox_.push({{"type", "stopped"}, {"reason", "preempted by a newer start"}}, false);
        return;
      }
      next_frame += std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(spec.frame_interval));
      for (long s = 0; s < steps_per_frame && !stop_; ++s) {
        apply_controls();
        if (paused) break;
        parallel_for(n, threads_, [&](std::size_t i) {
          atoms[i] = step_atom(atoms[i], model, t, spec.dt, limits, spec.stochastic ? &kicks[i] : nullptr);
        });
        ++step;
        t = step * spec.dt;
      }
      apply_controls();
      emit();
      // Sleep in short slices so a disconnect or stop is noticed quickly.
      while (!stop_ && !closed_ && clock::now() < next_frame)
        std::this_thread::sleep_for(std::min<clock::duration>(next_frame - clock::now(), std::chrono::milliseconds(20)));
      if (clock::now() > next_frame + std::chrono::seconds(1)) next_frame = clock::now();
    }
  }

  int fd_;
  SessionStore& store_;
  int threads_;
  Outbox outbox_;
  Controls controls_;
  std::thread writer_;
  std::thread sim_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> sim_done_{false};
  std::atomic<bool> closed_{false};
  std::atomic<bool> finished_{false};
};

// ---------------------------------------------------------------------------
// HTTP

json error_body(const std::string& message, const std::string& field = "") {
  json e = {{"message", message}};
  if (!field.empty()) e["field"] = field;
  return {{"error", e}};
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ScenarioError("body", e.what());
  }
}

std::optional<std::uint64_t> base_revision(const json& body) {
  if (!body.contains("base_revision") || body["base_revision"].is_null()) return std::nullopt;
  if (!body["base_revision"].is_number_unsigned()) throw ScenarioError("base_revision", "expected a non-negative integer");
  return body["base_revision"].get<std::uint64_t>();
}

void only_keys(const json& body, std::initializer_list<const char*> keys) {
  if (!body.is_object()) throw ScenarioError("body", "expected an object");
  for (const auto& item : body.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw ScenarioError(item.key(), "unknown key");
  }
}

json session_body(const std::string& id, const SessionState& s) {
  return {{"id", id}, {"revision", s.revision}, {"scenario", to_json(s.scenario)}};
}

template <class Handler>
httplib::Server::Handler guarded(Handler&& h) {
  return [h = std::forward<Handler>(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const SessionNotFound& e) {
      reply(res, 404, error_body(e.what()));
    } catch (const RevisionConflict& e) {
      json body = error_body(e.what(), "base_revision");
      body["revision"] = e.current();
      reply(res, 409, body);
    } catch (const SpecificationError& e) {
      reply(res, 422, error_body(e.what(), e.field()));
    } catch (const DomainError& e) {
      reply(res, 422, error_body(e.what()));
    } catch (const json::exception& e) {
      reply(res, 422, error_body(e.what(), "body"));
    } catch (const NumericError& e) {
      reply(res, 500, error_body(e.what()));
    }
  };
}

}  // namespace

struct Service::Impl {
  httplib::Server http;
  std::mutex connections_mutex;
  std::list<std::pair<std::shared_ptr<StreamConnection>, std::thread>> connections;

  void reap() {
    std::lock_guard lock(connections_mutex);
    for (auto it = connections.begin(); it != connections.end();) {
      if (it->first->finished()) {
        it->second.join();
        it = connections.erase(it);
      } else {
        ++it;
      }
    }
  }
};

Service::Service(ServiceOptions options) : options_(std::move(options)), impl_(std::make_unique<Impl>()) {
  auto& http = impl_->http;
  SessionStore& store = store_;
  const int threads = options_.threads;

  http.Post("/api/session", guarded([&store](const httplib::Request& req, httplib::Response& res) {
              Scenario s = scenario_from_json(parse_body(req));
              const std::string id = store.create(std::move(s));
              reply(res, 201, session_body(id, *store.get(id)));
            }));

  http.Get(R"(/api/session/([0-9a-f]+))", guarded([&store](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             reply(res, 200, session_body(id, *store.get(id)));
           }));

  http.Get(R"(/api/session/([0-9a-f]+)/log)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             auto state = store.get(id);
             reply(res, 200,
                   {{"initial", to_json(store.initial_scenario(id))},
                    {"mutations", store.mutation_log(id)},
                    {"revision", state->revision}});
           }));

  http.Post(R"(/api/session/([0-9a-f]+)/edits)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
              const std::string id = req.matches[1];
              store.get(id);
              const json body = parse_body(req);
              only_keys(body, {"base_revision", "edits"});
              if (!body.contains("edits") || !body["edits"].is_array())
                throw ScenarioError("edits", "expected an array of edits");
              std::vector<EditOp> edits;
              for (std::size_t i = 0; i < body["edits"].size(); ++i)
                edits.push_back(edit_from_json(body["edits"][i], "edits[" + std::to_string(i) + "]"));
              auto state = store.append_edits(id, edits, base_revision(body));
              reply(res, 200, {{"id", id}, {"revision", state->revision}});
            }));

  http.Put(R"(/api/session/([0-9a-f]+)/bias)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             store.get(id);
             const json body = parse_body(req);
             only_keys(body, {"base_revision", "bias"});
             if (!body.contains("bias")) throw ScenarioError("bias", "missing");
             const BiasField bias = bias_from_json(body["bias"], "bias");
             auto state = store.set_bias(id, bias, base_revision(body));
             reply(res, 200, {{"id", id}, {"revision", state->revision}, {"bias", to_json(state->scenario.bias)}});
           }));

  http.Post(R"(/api/session/([0-9a-f]+)/grid)",
            guarded([&store, threads](const httplib::Request& req, httplib::Response& res) {
              const std::string id = req.matches[1];
              auto state = store.get(id);
              const json body = parse_body(req);
              only_keys(body, {"z_um", "x_um", "y_um", "nx", "ny", "time_s", "backend", "format"});
              double z = 0.0;
              const GridSpec grid = plane_from_json(body, "", z);
              const Scenario& s = state->scenario;
              if (grid.size() > s.max_grid_points)
                throw ScenarioError("nx", "grid of " + std::to_string(grid.size()) + " points exceeds the cap of " +
                                              std::to_string(s.max_grid_points));
              if (z < 0.5 * s.film.thickness)
                throw ScenarioError("z_um", "plane must lie at least thickness / 2 above the film");
              double time = 0.0;
              if (body.contains("time_s")) {
                if (!body["time_s"].is_number()) throw ScenarioError("time_s", "expected a number");
                time = body["time_s"].get<double>();
              }
              std::optional<Backend> backend;
              if (body.contains("backend")) backend = backend_from_string(body["backend"].get<std::string>());
              std::string format = body.value("format", "");
              if (format.empty()) format = req.get_header_value("Accept") == "application/octet-stream" ? "binary" : "json";
              if (format != "json" && format != "binary") throw ScenarioError("format", "must be json or binary");

              const FieldGrid g = compute_grid(s, *state->pattern, *state->source, grid, z, time, backend, threads);
              res.set_header("X-Revision", std::to_string(state->revision));
              if (format == "binary") {
                res.status = 200;
                res.set_content(grid_binary(g, time), "application/octet-stream");
                return;
              }
              json bx = json::array(), by = json::array(), bz = json::array();
              for (const auto& b : g.B) {
                bx.push_back(b.x());
                by.push_back(b.y());
                bz.push_back(b.z());
              }
              reply(res, 200,
                    {{"revision", state->revision},
                     {"width", grid.nx},
                     {"height", grid.ny},
                     {"z_m", z},
                     {"x_m", {grid.x_min, grid.x_max}},
                     {"y_m", {grid.y_min, grid.y_max}},
                     {"time_s", time},
                     {"units", "T"},
                     {"Bx", bx},
                     {"By", by},
                     {"Bz", bz}});
            }));

  http.Post(R"(/api/session/([0-9a-f]+)/traps)",
            guarded([&store, threads](const httplib::Request& req, httplib::Response& res) {
              const std::string id = req.matches[1];
              auto state = store.get(id);
              const json body = parse_body(req);
              only_keys(body, {"region", "time_s", "depth"});
              if (!body.contains("region")) throw ScenarioError("region", "missing");
              const SearchRegion region = region_from_json(body["region"], "region");
              validate(region, *state->source);
              // Reuse the directive parser for time and depth box.
              json task = {{"type", "traps"}, {"region", body["region"]}, {"output", "-"}};
              if (body.contains("time_s")) task["time_s"] = body["time_s"];
              if (body.contains("depth")) task["depth"] = body["depth"];
              const auto t = std::get<TrapsTask>(scenario_from_json({{"directives", {task}}}).directives[0]);
              const auto traps = compute_traps(*state->source, t.region, t.time, t.depth, threads);
              json list = json::array();
              for (const auto& c : traps) list.push_back(to_json(c));
              reply(res, 200, {{"revision", state->revision}, {"traps", list}});
            }));

  http.Post(R"(/api/session/([0-9a-f]+)/transport)",
            guarded([&store](const httplib::Request& req, httplib::Response& res) {
              const std::string id = req.matches[1];
              auto state = store.get(id);
              const json body = parse_body(req);
              only_keys(body, {"region", "samples"});
              if (!body.contains("region")) throw ScenarioError("region", "missing");
              const SearchRegion region = region_from_json(body["region"], "region");
              validate(region, *state->source);
              int samples = 16;
              if (body.contains("samples")) {
                if (!body["samples"].is_number_integer() || body["samples"].get<int>() < 1)
                  throw ScenarioError("samples", "expected an integer >= 1");
                samples = body["samples"].get<int>();
              }
              const auto& mod = state->scenario.bias.modulation;
              if (!mod || !(mod->angular_frequency > 0.0))
                throw ScenarioError("bias.modulation", "transport requires a modulated bias");
              const TransportPath path = transport_trajectory(*state->source, region, samples);
              json list = json::array();
              for (const auto& c : path.samples) list.push_back(to_json(c));
              reply(res, 200,
                    {{"revision", state->revision},
                     {"period_s", path.period},
                     {"samples", list},
                     {"lost_at", path.lost_at ? json(*path.lost_at) : json(nullptr)}});
            }));

  http.Get(R"(/api/session/([0-9a-f]+)/faraday)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
             auto state = store.get(req.matches[1]);
             res.status = 200;
             res.set_header("X-Revision", std::to_string(state->revision));
             res.set_content(faraday_pgm(*state->pattern), "image/x-portable-graymap");
           }));

  http.Get("/api/version", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, version_info()); });

  if (!options_.static_dir.empty() && !http.set_mount_point("/", options_.static_dir))
    throw std::runtime_error("static directory not found: " + options_.static_dir);
}

Service::~Service() { stop(); }

void Service::start() {
  auto& http = impl_->http;
  http_port_ = options_.port == 0 ? http.bind_to_any_port(options_.host) : options_.port;
  if (options_.port != 0 && !http.bind_to_port(options_.host, options_.port))
    throw std::runtime_error("cannot bind HTTP port " + std::to_string(options_.port));
  if (http_port_ <= 0) throw std::runtime_error("cannot bind an HTTP port");

  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("cannot create stream socket");
  int yes = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(options_.stream_port));
  if (::inet_pton(AF_INET, options_.host.c_str(), &addr.sin_addr) != 1)
    throw std::runtime_error("bad stream host " + options_.host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0)
    throw std::runtime_error("cannot bind stream port " + std::to_string(options_.stream_port));
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  stream_port_ = ntohs(addr.sin_port);

  running_ = true;
  http_thread_ = std::thread([this] { impl_->http.listen_after_bind(); });
  accept_thread_ = std::thread([this] { accept_streams(); });
  http.wait_until_ready();
}

void Service::accept_streams() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 200) <= 0) {
      impl_->reap();
      continue;
    }
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int yes = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &yes, sizeof yes);
    auto conn = std::make_shared<StreamConnection>(fd, store_, options_.threads);
    std::lock_guard lock(impl_->connections_mutex);
    impl_->connections.emplace_back(conn, std::thread([conn] {
                                      conn->serve();
                                      conn->mark_finished();
                                    }));
  }
}

void Service::stop() {
  if (!running_.exchange(false)) return;
  impl_->http.stop();
  if (http_thread_.joinable()) http_thread_.join();
  if (accept_thread_.joinable()) accept_thread_.join();
  ::close(listen_fd_);
  std::lock_guard lock(impl_->connections_mutex);
  for (auto& [conn, thread] : impl_->connections) conn->shutdown_socket();
  for (auto& [conn, thread] : impl_->connections) thread.join();
  impl_->connections.clear();
}

}  // namespace atomchip
