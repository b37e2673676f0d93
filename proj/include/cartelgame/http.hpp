#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include <httplib.h>
#include <json.hpp>

#include "session.hpp"

namespace cartelgame {

// HTTP front end. Every session owns a mutex; all commands on a session are
// serialized through it, and long-poll readers wait on its condition variable.
//
//   POST /api/sessions                          create (admin token if configured)
//   POST /api/s/{sid}/join                      {"code","name"}
//   GET  /api/s/{sid}/state                     participant or lecturer view
//   POST /api/s/{sid}/bids                      {"tender_id","amount"}
//   POST /api/s/{sid}/chat                      {"text"}
//   GET  /api/s/{sid}/events?since=N&wait_ms=M  notifications after N
//   GET  /api/s/{sid}/dataset                   part 3 CSV
//   GET  /api/s/{sid}/training-data             training CSV
//   POST /api/s/{sid}/classification            submission CSV or {"labels":{...}}
//   GET  /api/s/{sid}/leaderboard               after scoring
//   POST /api/s/{sid}/lecturer/advance
//   POST /api/s/{sid}/lecturer/open-round       {"group","year","round"}
//   POST /api/s/{sid}/lecturer/close-round      {"group","year","round"}
//   POST /api/s/{sid}/lecturer/training-data    CSV body
//   POST /api/s/{sid}/lecturer/score
//   GET  /api/s/{sid}/lecturer/export/{artifact}
//
// Callers authenticate with "Authorization: Bearer <join code or lecturer token>".
class GameServer {
public:
  struct Options {
    std::filesystem::path data_dir;   // empty: sessions live in memory only
    std::string admin_token;          // empty: anyone may create sessions
    int tick_ms = 250;                // countdown check interval
    std::size_t worker_threads = 128;
    std::function<std::int64_t()> clock = [] { return now_ms(); };
    std::ostream* log = nullptr;
  };

  explicit GameServer(Options opts) : opts_(std::move(opts)) {
    http_.set_tcp_nodelay(true);
    // long-poll readers each hold a worker while they wait
    http_.new_task_queue = [n = opts_.worker_threads] { return new httplib::ThreadPool(n); };
    if (!opts_.data_dir.empty()) {
      std::filesystem::create_directories(opts_.data_dir);
      for (const auto& entry : std::filesystem::directory_iterator(opts_.data_dir)) {
        if (entry.path().extension() != ".jsonl") continue;
        auto slot = std::make_unique<Slot>();
        slot->log.emplace(entry.path());
        slot->session.emplace(open_session(*slot->log));
        attach(*slot);
        const auto id = slot->session->config().session_id;
        diag("loaded session " + id + " (" + std::to_string(slot->session->events().size()) + " events)");
        slots_.emplace(id, std::move(slot));
      }
    }
    routes();
  }

  ~GameServer() { stop(); }

  GameServer(const GameServer&) = delete;
  GameServer& operator=(const GameServer&) = delete;

  // Binds and serves on a background thread. Port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? http_.bind_to_any_port(host) : (http_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    running_ = true;
    listener_ = std::thread([this] { http_.listen_after_bind(); });
    ticker_ = std::thread([this] { tick_loop(); });
    http_.wait_until_ready();
    return port_;
  }

  // Blocks until stop() is called or *interrupted becomes true.
  void run(const std::string& host, int port, const std::atomic<bool>* interrupted = nullptr) {
    start(host, port);
    {
      std::unique_lock lock(stop_mu_);
      while (running_ && !(interrupted && *interrupted))
        stop_cv_.wait_for(lock, std::chrono::milliseconds(200));
    }
    stop();
  }

  void stop() {
    {
      std::lock_guard lock(stop_mu_);
      if (!running_) return;
      running_ = false;
    }
    stop_cv_.notify_all();
    {
      std::lock_guard lock(registry_mu_);
      for (auto& [_, slot] : slots_) {
        std::lock_guard slot_lock(slot->mu);
        slot->changed.notify_all();
      }
    }
    http_.stop();
    if (listener_.joinable()) listener_.join();
    if (ticker_.joinable()) ticker_.join();
  }

  int port() const { return port_; }

  // Creates a session directly (CLI and tests).
  json create_session(const SessionConfig& config) {
    std::string dataset;
    if (!config.dataset_path.empty()) {
      std::ifstream in(config.dataset_path);
      if (!in) throw ValidationError("cannot read dataset " + config.dataset_path);
      dataset.assign(std::istreambuf_iterator<char>(in), {});
    }
    std::lock_guard lock(registry_mu_);
    if (slots_.contains(config.session_id))
      throw ValidationError("session '" + config.session_id + "' already exists");
    auto slot = std::make_unique<Slot>();
    if (!opts_.data_dir.empty()) {
      slot->log.emplace(opts_.data_dir / (config.session_id + ".jsonl"));
      if (std::filesystem::exists(slot->log->path()))
        throw ValidationError("session '" + config.session_id + "' already exists on disk");
    }
    slot->session.emplace(Session::create(config, opts_.clock()));
    if (slot->log) slot->log->create(slot->session->events());
    attach(*slot);
    if (!dataset.empty()) slot->session->ingest_training_data(dataset, config.dataset_path, opts_.clock());
    json out = credentials(*slot->session);
    slots_.emplace(config.session_id, std::move(slot));
    diag("created session " + config.session_id);
    return out;
  }

  // Runs fn with exclusive access to a session.
  template <class Fn>
  auto with_session(const std::string& sid, Fn&& fn) {
    Slot& slot = find(sid);
    std::lock_guard lock(slot.mu);
    return fn(*slot.session);
  }

  static json credentials(const Session& s) {
    json codes = json::array();
    for (const auto& seat : s.seats())
      codes.push_back({{"participant_id", seat.participant_id},
                       {"group", seat.group},
                       {"seat", seat.seat},
                       {"join_code", seat.join_code}});
    json out{{"session_id", s.config().session_id}, {"lecturer_token", s.lecturer_token()}, {"participants", codes}};
    if (s.market().allocation().warning) out["warning"] = *s.market().allocation().warning;
    return out;
  }

private:
  struct Slot {
    std::mutex mu;
    std::condition_variable changed;
    std::optional<Session> session;
    std::optional<EventLogFile> log;
  };

  struct Caller {
    bool lecturer = false;
    std::string participant_id;
  };

  void attach(Slot& slot) {
    slot.session->on_commit([&slot](const json& ev) {
      if (slot.log) slot.log->append(ev);
      slot.changed.notify_all();
    });
  }

  Slot& find(const std::string& sid) {
    std::lock_guard lock(registry_mu_);
    auto it = slots_.find(sid);
    if (it == slots_.end()) throw NotFound("unknown session '" + sid + "'");
    return *it->second;
  }

  void diag(const std::string& msg) {
    if (!opts_.log) return;
    std::lock_guard lock(log_mu_);
    *opts_.log << format_utc(opts_.clock()) << ' ' << msg << std::endl;
  }

  struct NotFound : Error {
    using Error::Error;
  };
  struct Unauthorized : Error {
    using Error::Error;
  };

  static std::string bearer(const httplib::Request& req) {
    const auto h = req.get_header_value("Authorization");
    if (h.rfind("Bearer ", 0) != 0) return {};
    return h.substr(7);
  }

  static Caller identify(const Session& s, const httplib::Request& req) {
    const auto token = bearer(req);
    if (token.empty()) throw Unauthorized("missing bearer token");
    if (s.is_lecturer(token)) return {true, {}};
    const SeatInfo* seat = s.seat_by_code(token);
    if (!seat) throw Unauthorized("invalid token");
    if (!seat->name) throw AccessError("join the session first");
    return {false, seat->participant_id};
  }

  static void require_lecturer(const Caller& c) {
    if (!c.lecturer) throw AccessError("lecturer only");
  }

  static Caller require_participant(const Caller& c) {
    if (c.lecturer) throw AccessError("participants only");
    return c;
  }

  static json body_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      auto j = json::parse(req.body);
      if (!j.is_object()) throw ValidationError("request body must be a JSON object");
      return j;
    } catch (const json::parse_error&) {
      throw ValidationError("request body is not valid JSON");
    }
  }

  static int field_int(const json& j, const char* key, std::optional<int> fallback = std::nullopt) {
    if (!j.contains(key)) {
      if (fallback) return *fallback;
      throw ValidationError(std::string("missing field '") + key + "'");
    }
    if (!j.at(key).is_number_integer()) throw ValidationError(std::string("field '") + key + "' must be an integer");
    return j.at(key).get<int>();
  }

  static std::string field_str(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_string())
      throw ValidationError(std::string("field '") + key + "' must be a string");
    return j.at(key).get<std::string>();
  }

  static Money parse_amount(const json& v) {
    if (v.is_string()) return Money::parse(v.get<std::string>());
    if (v.is_number()) return Money::from_double(v.get<double>());
    throw ValidationError("field 'amount' must be a number");
  }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_csv(httplib::Response& res, const std::string& body) {
    res.status = 200;
    res.set_content(body, "text/csv");
  }

  using Handler = std::function<void(Slot&, Session&, const httplib::Request&, httplib::Response&)>;

  // Wraps a per-session handler: resolves the session, serializes access,
  // and maps exceptions onto status codes.
  httplib::Server::Handler guarded(Handler h) {
    return [this, h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        Slot& slot = find(req.matches[1]);
        std::unique_lock lock(slot.mu);
        h(slot, *slot.session, req, res);
      } catch (...) {
        error_response(res);
      }
    };
  }

  static void error_response(httplib::Response& res) {
    try {
      throw;
    } catch (const BlockedError& e) {
      send_json(res, 409, {{"error", e.summary()}, {"blockers", e.blockers()}});
    } catch (const StaleStateError& e) {
      send_json(res, 409, {{"error", e.what()}});
    } catch (const NotFound& e) {
      send_json(res, 404, {{"error", e.what()}});
    } catch (const Unauthorized& e) {
      send_json(res, 401, {{"error", e.what()}});
    } catch (const AccessError& e) {
      send_json(res, 403, {{"error", e.what()}});
    } catch (const ValidationError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const DomainError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const UnallocatableError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  }

  void routes() {
    const std::string S = R"(/api/s/([A-Za-z0-9_-]+))";

    http_.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        if (!opts_.admin_token.empty() && bearer(req) != opts_.admin_token) throw Unauthorized("admin token required");
        auto cfg = SessionConfig::from_json(body_json(req));
        send_json(res, 201, create_session(cfg));
      } catch (...) {
        error_response(res);
      }
    });

    http_.Post(S + "/join", guarded([this](Slot&, Session& s, const httplib::Request& req, httplib::Response& res) {
      const auto body = body_json(req);
      const auto& seat = s.join(field_str(body, "code"), field_str(body, "name"), opts_.clock());
      send_json(res, 200, {{"participant_id", seat.participant_id}, {"group", seat.group}, {"seat", seat.seat}});
    }));

    http_.Get(S + "/state", guarded([](Slot&, Session& s, const httplib::Request& req, httplib::Response& res) {
      const auto c = identify(s, req);
      send_json(res, 200, c.lecturer ? s.lecturer_view() : s.participant_view(c.participant_id));
    }));

    http_.Post(S + "/bids", guarded([this](Slot&, Session& s, const httplib::Request& req, httplib::Response& res) {
      const auto c = require_participant(identify(s, req));
      const auto body = body_json(req);
      if (!body.contains("amount")) throw ValidationError("missing field 'amount'");
      const auto& bid = s.submit_bid(c.participant_id, field_str(body, "tender_id"), parse_amount(body.at("amount")),
                                     opts_.clock());
      json out{{"tender_id", bid.tender_id}, {"bid", bid.bid.str()}, {"cost", bid.cost.str()}};
      if (bid.below_cost()) out["warning"] = "bid is below your cost";
      send_json(res, 201, out);
    }));

    http_.Post(S + "/chat", guarded([this](Slot&, Session& s, const httplib::Request& req, httplib::Response& res) {
      const auto c = require_participant(identify(s, req));
      const auto& m = s.post_chat(c.participant_id, field_str(body_json(req), "text"), opts_.clock());
      send_json(res, 201, {{"at_ms", m.at_ms}});
    }));

    http_.Get(S + "/events", guarded([this](Slot& slot, Session& s, const httplib::Request& req,
                                           httplib::Response& res) {
      const auto c = identify(s, req);
      std::uint64_t since = 0;
      long wait_ms = 0;
      try {
        if (req.has_param("since")) since = std::stoull(req.get_param_value("since"));
        if (req.has_param("wait_ms")) wait_ms = std::clamp(std::stol(req.get_param_value("wait_ms")), 0L, 30000L);
      } catch (const std::exception&) {
        throw ValidationError("since and wait_ms must be non-negative integers");
      }
      const auto who = c.lecturer ? std::nullopt : std::optional<std::string_view>(c.participant_id);
      json items = s.notifications_for(who, since);
      if (items.empty() && wait_ms > 0) {
        // the lock is the slot mutex held by guarded(); wait releases it
        std::unique_lock<std::mutex> relock(slot.mu, std::adopt_lock);
        slot.changed.wait_for(relock, std::chrono::milliseconds(wait_ms), [&] {
          return !running_ || s.notifications().size() > since;
        });
        relock.release();
        items = s.notifications_for(who, since);
      }
      send_json(res, 200, {{"next", s.notifications().size()}, {"events", items}});
    }));

    http_.Get(S + "/dataset", guarded([](Slot&, Session& s, const httplib::Request& req, httplib::Response& res) {
      identify(s, req);
      send_csv(res, s.export_artifact("part3_dataset"));
    }));

    http_.Get(S + "/training-data", guarded([](Slot&, Session& s, const httplib::Request& req,
                                                httplib::Response& res) {
      identify(s, req);
      if (!s.training_data()) throw AccessError("no training data has been published");
      send_csv(res, s.training_csv());
    }));

    http_.Post(S + "/classification", guarded([this](Slot&, Session& s, const httplib::Request& req,
                                                     httplib::Response& res) {
      const auto c = require_participant(identify(s, req));
      StaffSubmission sub;
      if (req.get_header_value("Content-Type").starts_with("application/json")) {
        const auto body = body_json(req);
        if (!body.contains("labels") || !body.at("labels").is_object())
          throw ValidationError("field 'labels' must map IDs to collude/compete");
        sub.participant_id = c.participant_id;
        for (const auto& [id, v] : body.at("labels").items()) {
          int n = 0;
          auto [p, ec] = std::from_chars(id.data(), id.data() + id.size(), n);
          if (ec != std::errc{} || p != id.data() + id.size()) throw ValidationError("bad ID '" + id + "'");
          if (!v.is_string()) throw ValidationError("label for ID " + id + " must be a string");
          sub.labels[n] = parse_response(v.get<std::string>());
        }
      } else {
        sub = read_submission_csv(req.body, c.participant_id);
      }
      const bool replaced = s.submit_classification(sub, opts_.clock());
      send_json(res, replaced ? 200 : 201, {{"labels", sub.labels.size()}, {"replaced", replaced}});
    }));

    http_.Get(S + "/leaderboard", guarded([](Slot&, Session& s, const httplib::Request& req,
                                              httplib::Response& res) {
      identify(s, req);
      send_csv(res, s.export_artifact("leaderboard"));
    }));

    http_.Post(S + "/lecturer/advance", guarded([this](Slot&, Session& s, const httplib::Request& req,
                                                      httplib::Response& res) {
      require_lecturer(identify(s, req));
      const auto p = s.advance(opts_.clock());
      diag(s.config().session_id + " entered " + std::string(to_string(p)));
      send_json(res, 200, {{"phase", std::string(to_string(p))}});
    }));

    auto round_cmd = [this](bool open) {
      return [this, open](Slot&, Session& s, const httplib::Request& req, httplib::Response& res) {
        require_lecturer(identify(s, req));
        const auto body = body_json(req);
        const int g = field_int(body, "group", 0), y = field_int(body, "year"), r = field_int(body, "round");
        const bool changed = open ? s.open_round(g, y, r, opts_.clock()) : s.close_round(g, y, r, opts_.clock());
        if (!changed)
          diag(s.config().session_id + (open ? " repeated open" : " repeated close") + " of year " +
               std::to_string(y) + " round " + std::to_string(r) + " ignored");
        send_json(res, 200, {{"changed", changed}});
      };
    };
    http_.Post(S + "/lecturer/open-round", guarded(round_cmd(true)));
    http_.Post(S + "/lecturer/close-round", guarded(round_cmd(false)));

    http_.Post(S + "/lecturer/training-data", guarded([this](Slot&, Session& s, const httplib::Request& req,
                                                            httplib::Response& res) {
      require_lecturer(identify(s, req));
      const auto& d = s.ingest_training_data(req.body, req.get_param_value("source"), opts_.clock());
      send_json(res, 201, {{"rows", d.size()}, {"columns", d.arity() + 1}, {"suspicious", d.count(1)}});
    }));

    http_.Post(S + "/lecturer/score", guarded([this](Slot&, Session& s, const httplib::Request& req,
                                                    httplib::Response& res) {
      require_lecturer(identify(s, req));
      const bool fresh = s.score(opts_.clock());
      send_json(res, 200, {{"scored", true}, {"changed", fresh}, {"winners", s.leaderboard()->winners}});
    }));

    http_.Get(S + R"(/lecturer/export/([a-z0-9_]+))",
              guarded([](Slot&, Session& s, const httplib::Request& req, httplib::Response& res) {
                require_lecturer(identify(s, req));
                send_csv(res, s.export_artifact(req.matches[2].str()));
              }));
  }

  void tick_loop() {
    while (true) {
      {
        std::unique_lock lock(stop_mu_);
        if (stop_cv_.wait_for(lock, std::chrono::milliseconds(opts_.tick_ms), [this] { return !running_; })) return;
      }
      std::vector<Slot*> all;
      {
        std::lock_guard lock(registry_mu_);
        for (auto& [_, slot] : slots_) all.push_back(slot.get());
      }
      for (Slot* slot : all) {
        std::lock_guard lock(slot->mu);
        try {
          if (int n = slot->session->close_expired(opts_.clock()))
            diag(slot->session->config().session_id + " countdown closed " + std::to_string(n) + " round(s)");
        } catch (const std::exception& e) {
          diag(std::string("countdown close failed: ") + e.what());
        }
      }
    }
  }

  Options opts_;
  httplib::Server http_;
  std::mutex registry_mu_;
  std::map<std::string, std::unique_ptr<Slot>> slots_;
  std::mutex log_mu_;
  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  std::atomic<bool> running_ = false;
  int port_ = -1;
  std::thread listener_;
  std::thread ticker_;
};

}  // namespace cartelgame
