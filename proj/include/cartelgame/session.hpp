#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "authority.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "forest.hpp"
#include "screens.hpp"

namespace cartelgame {

using json = nlohmann::json;

enum class Phase { Lobby = 0, Part1 = 1, Part2 = 2, Part3 = 3, Debrief = 4 };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Lobby: return "lobby";
    case Phase::Part1: return "part1";
    case Phase::Part2: return "part2";
    case Phase::Part3: return "part3";
    case Phase::Debrief: return "debrief";
  }
  return "?";
}

inline Phase parse_phase(std::string_view s) {
  for (int i = 0; i <= 4; ++i)
    if (to_string(static_cast<Phase>(i)) == s) return static_cast<Phase>(i);
  throw DomainError("unknown phase '" + std::string(s) + "'");
}

inline std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

// 2024-01-26T09:30:00.123Z
inline std::string format_utc(std::int64_t ms) {
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms % 1000));
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

struct SessionConfig {
  std::string session_id;
  int class_size = 0;
  std::uint64_t seed = 0;
  int round_seconds = 0;     // 0: rounds close only when the lecturer says so
  std::string dataset_path;  // optional training CSV loaded at creation

  // {"session_id": "...", "class_size": 12, "seed": 42,
  //  "timing": {"round_seconds": 0}, "dataset": "swiss.csv"}
  static SessionConfig from_json(const json& j) {
    SessionConfig c;
    try {
      c.session_id = j.at("session_id").get<std::string>();
      c.class_size = j.at("class_size").get<int>();
      c.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("timing")) c.round_seconds = j.at("timing").value("round_seconds", 0);
      c.dataset_path = j.value("dataset", std::string());
    } catch (const json::exception& e) {
      throw ValidationError(std::string("bad session config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static SessionConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config " + path.string());
    try {
      return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
  }

  void validate() const {
    if (session_id.empty() || session_id.find_first_not_of(
                                  "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_") !=
                                  std::string::npos)
      throw ValidationError("session id must be non-empty and use only letters, digits, '-' and '_'");
    if (round_seconds < 0) throw ValidationError("round_seconds must be >= 0");
    allocate_groups(class_size);  // throws for unallocatable sizes
  }
};

// ---------------------------------------------------------------------------
// Session state

struct SeatInfo {
  std::string participant_id;
  std::string join_code;
  int group = 0;
  int seat = 0;
  std::optional<std::string> name;
};

struct ChatMessage {
  int group = 0;
  std::string participant_id;
  std::string text;
  std::int64_t at_ms = 0;
  int part = 2;
  int year = 0;   // 0 when no round had been opened yet
  int round = 0;
};

// Something pushed to clients. Scope: everyone, one group, or one participant.
struct Notification {
  std::uint64_t index = 0;
  std::optional<int> group;
  std::optional<std::string> participant;
  json payload;
};

// One classroom game, driven entirely by an append-only event log.
//
// Every accepted command becomes exactly one event; apply() is the only code
// that mutates state, and replaying the events from the creation record
// rebuilds the same state. Rejected commands leave no trace in the log.
// Not thread-safe: callers serialize commands per session.
class Session {
public:
  // Creation credentials come from a random source unless given.
  static Session create(const SessionConfig& config, std::int64_t at_ms,
                        std::optional<std::uint64_t> credential_seed = std::nullopt) {
    config.validate();
    std::random_device rd;
    Rng rng(credential_seed ? *credential_seed : (static_cast<std::uint64_t>(rd()) << 32 | rd()));
    const auto alloc = allocate_groups(config.class_size);
    std::set<std::string> used;
    json codes = json::array();
    for (int i = 0; i < config.class_size; ++i) {
      std::string code;
      do {
        code = random_code(rng, 6);
      } while (!used.insert(code).second);
      codes.push_back(code);
    }
    json ev{{"type", "create"},
            {"session_id", config.session_id},
            {"class_size", config.class_size},
            {"seed", config.seed},
            {"timing", {{"round_seconds", config.round_seconds}}},
            {"lecturer_token", random_code(rng, 16)},
            {"join_codes", codes}};
    Session s;
    s.commit(std::move(ev), at_ms);
    return s;
  }

  static Session replay(const std::vector<json>& events) {
    if (events.empty() || events.front().value("type", "") != "create")
      throw ValidationError("event log must start with a create record");
    Session s;
    for (const auto& ev : events) {
      if (ev.value("seq", std::uint64_t{0}) != s.events_.size() + 1)
        throw ValidationError("event log is out of sequence at record " + std::to_string(s.events_.size() + 1));
      json outcome = s.apply(ev);
      if (ev.contains("outcome") && ev.at("outcome") != outcome)
        throw ValidationError("event " + std::to_string(s.events_.size() + 1) + " replays to a different outcome");
      s.events_.push_back(ev);
    }
    return s;
  }

  // Called after each committed event with the event record.
  void on_commit(std::function<void(const json&)> fn) { sink_ = std::move(fn); }

  // ----- queries ---------------------------------------------------------

  const std::vector<json>& events() const { return events_; }
  const SessionConfig& config() const { return config_; }
  Phase phase() const { return phase_; }
  const Market& market() const { return *market_; }
  const std::vector<SeatInfo>& seats() const { return seats_; }
  const std::string& lecturer_token() const { return lecturer_token_; }
  const std::vector<ChatMessage>& chat() const { return chat_; }
  const std::vector<Notification>& notifications() const { return notifications_; }
  const std::optional<Part3Dataset>& part3() const { return part3_; }
  const SubmissionBook& submissions() const { return book_; }
  const std::optional<Leaderboard>& leaderboard() const { return leaderboard_; }
  const std::optional<LabeledDataset>& training_data() const { return training_; }
  const std::string& training_csv() const { return training_csv_; }
  const std::map<std::string, std::int64_t>& deadlines() const { return deadlines_; }

  bool is_lecturer(std::string_view token) const { return !token.empty() && token == lecturer_token_; }

  const SeatInfo* seat_by_code(std::string_view code) const {
    auto it = code_index_.find(std::string(code));
    return it == code_index_.end() ? nullptr : &seats_[it->second];
  }

  const SeatInfo& participant(std::string_view id) const {
    for (const auto& s : seats_)
      if (s.participant_id == id) return s;
    throw DomainError("unknown participant '" + std::string(id) + "'");
  }

  const SeatInfo& seat_of(int group, int seat) const {
    for (const auto& s : seats_)
      if (s.group == group && s.seat == seat) return s;
    throw DomainError("no participant at group " + std::to_string(group) + " seat " + std::to_string(seat));
  }

  // Reasons the current phase cannot be left yet.
  std::vector<std::string> advance_blockers() const {
    std::vector<std::string> out;
    switch (phase_) {
      case Phase::Lobby:
        for (const auto& s : seats_)
          if (!s.name) out.push_back("participant " + s.participant_id + " has not joined");
        break;
      case Phase::Part1:
      case Phase::Part2: {
        const int part = static_cast<int>(phase_);
        for (const auto& t : market_->schedule())
          if (t.part == part && market_->state(t.id) != TenderState::Awarded)
            out.push_back("tender " + t.id + " is " + std::string(to_string(market_->state(t.id))));
        break;
      }
      case Phase::Part3:
        if (book_.submissions().empty()) out.push_back("no classification has been submitted");
        break;
      case Phase::Debrief:
        out.push_back("debrief is the final phase");
        break;
    }
    return out;
  }

  // ----- commands --------------------------------------------------------

  const SeatInfo& join(std::string_view code, std::string name, std::int64_t at_ms) {
    const SeatInfo* seat = seat_by_code(code);
    if (!seat) throw AccessError("unknown join code");
    if (seat->name) return *seat;  // reconnect
    if (phase_ != Phase::Lobby) throw ValidationError("the lobby is closed");
    if (name.empty() || name.size() > 80) throw ValidationError("name must be 1..80 characters");
    commit({{"type", "join"}, {"code", std::string(code)}, {"name", std::move(name)}}, at_ms);
    return *seat_by_code(code);
  }

  Phase advance(std::int64_t at_ms) {
    auto blockers = advance_blockers();
    if (!blockers.empty()) throw BlockedError("cannot leave " + std::string(to_string(phase_)), std::move(blockers));
    const auto next = static_cast<Phase>(static_cast<int>(phase_) + 1);
    commit({{"type", "advance"}, {"to", std::string(to_string(next))}}, at_ms);
    return phase_;
  }

  // group 0 opens the round in every group. Returns false if nothing changed.
  bool open_round(int group, int year, int round, std::int64_t at_ms) {
    const auto ids = round_tenders(group, year, round);
    bool any = false;
    for (const auto& id : ids) any = any || market_->state(id) == TenderState::Scheduled;
    if (!any) {
      for (const auto& id : ids)
        if (market_->state(id) != TenderState::Open) throw ValidationError("tender " + id + " is already closed");
      return false;
    }
    json ev{{"type", "open_round"}, {"group", group}, {"year", year}, {"round", round}};
    if (config_.round_seconds > 0) ev["deadline_ms"] = at_ms + 1000LL * config_.round_seconds;
    commit(std::move(ev), at_ms);
    return true;
  }

  // Closes and awards. Closing again is a no-op that returns false.
  bool close_round(int group, int year, int round, std::int64_t at_ms) {
    const auto ids = round_tenders(group, year, round);
    bool any_open = false;
    for (const auto& id : ids) {
      if (market_->state(id) == TenderState::Scheduled) throw ValidationError("tender " + id + " was never opened");
      any_open = any_open || market_->state(id) == TenderState::Open;
    }
    if (!any_open) return false;
    commit({{"type", "close_round"}, {"group", group}, {"year", year}, {"round", round}}, at_ms);
    return true;
  }

  // Closes every round whose countdown ran out. Returns how many closed.
  int close_expired(std::int64_t at_ms) {
    std::set<std::string> due;
    for (const auto& [id, deadline] : deadlines_)
      if (deadline <= at_ms && market_->state(id) == TenderState::Open) due.insert(id);
    int closed = 0;
    for (const auto& id : due) {
      const auto& t = market_->tender(id);
      closed += close_round(t.group, t.year, t.round, at_ms) ? 1 : 0;
    }
    return closed;
  }

  const BidRecord& submit_bid(std::string_view participant_id, std::string_view tender_id, Money amount,
                              std::int64_t at_ms) {
    const auto& who = participant(participant_id);
    if (phase_ != Phase::Part1 && phase_ != Phase::Part2) throw ValidationError("bidding is closed");
    const auto& t = market_->tender(tender_id);
    if (t.group != who.group) throw AccessError("tender " + t.id + " belongs to another group");
    if (t.part != static_cast<int>(phase_)) throw ValidationError("tender " + t.id + " is not part of this phase");
    if (market_->state(t.id) != TenderState::Open) throw ValidationError("tender " + t.id + " is not open for bidding");
    if (amount < Money{}) throw ValidationError("bid must be >= 0, got " + amount.str());
    if (market_->bid_of(t.id, who.seat)) throw ValidationError("duplicate bid on " + t.id);
    commit({{"type", "bid"}, {"participant", who.participant_id}, {"tender_id", t.id}, {"amount", amount.str()}},
           at_ms);
    return *market_->bid_of(t.id, who.seat);
  }

  const ChatMessage& post_chat(std::string_view participant_id, std::string text, std::int64_t at_ms) {
    const auto& who = participant(participant_id);
    if (phase_ != Phase::Part2) throw ValidationError("chat is only open during part 2");
    if (text.empty() || text.size() > 2000) throw ValidationError("message must be 1..2000 characters");
    commit({{"type", "chat"}, {"participant", who.participant_id}, {"text", std::move(text)}}, at_ms);
    return chat_.back();
  }

  const LabeledDataset& ingest_training_data(std::string csv_text, std::string source, std::int64_t at_ms) {
    if (phase_ == Phase::Debrief) throw ValidationError("the game is over");
    read_training_csv(csv_text);  // validate before logging
    commit({{"type", "training_data"}, {"source", std::move(source)}, {"csv", std::move(csv_text)}}, at_ms);
    return *training_;
  }

  // Returns true when an earlier submission was replaced.
  bool submit_classification(const StaffSubmission& s, std::int64_t at_ms) {
    participant(s.participant_id);
    if (phase_ != Phase::Part3) throw ValidationError("classifications are accepted during part 3 only");
    validate_submission(s, book_.pool());
    json labels = json::object();
    for (const auto& [id, l] : s.labels) labels[std::to_string(id)] = std::string(response_text(l));
    const bool replaced = book_.submissions().contains(s.participant_id);
    commit({{"type", "classification"}, {"participant", s.participant_id}, {"labels", std::move(labels)}}, at_ms);
    return replaced;
  }

  // Freezes the scoreboard. Returns false if it was already scored.
  bool score(std::int64_t at_ms) {
    if (phase_ != Phase::Debrief) throw ValidationError("scoring happens in the debrief phase");
    if (leaderboard_) return false;
    commit({{"type", "score"}}, at_ms);
    return true;
  }

  // ----- derived data ----------------------------------------------------

  std::vector<AwardRecord> award_history() const {
    std::vector<AwardRecord> out;
    for (const auto& t : market_->schedule()) {
      const auto* a = market_->award_of(t.id);
      if (!a || !a->winner_seat) continue;
      out.push_back({t.id, t.part, seat_of(t.group, *a->winner_seat).participant_id, a->margin});
    }
    return out;
  }

  std::vector<ParticipantPoints> participant_points() const {
    std::vector<ParticipantPoints> out;
    for (const auto& s : seats_) out.push_back({s.participant_id, {}, {}});
    for (const auto& t : market_->schedule()) {
      const auto* a = market_->award_of(t.id);
      if (!a || !a->winner_seat) continue;
      const auto& who = seat_of(t.group, *a->winner_seat);
      for (auto& p : out)
        if (p.participant_id == who.participant_id) (t.part == 1 ? p.part1 : p.part2) += a->margin;
    }
    return out;
  }

  // ----- exports ---------------------------------------------------------

  std::string export_artifact(std::string_view artifact) const {
    if (artifact == "schedule") return schedule_csv(market_->schedule());
    if (artifact == "part3_dataset") {
      if (!part3_) throw AccessError("the part 3 dataset is published when part 3 opens");
      return part3_dataset_csv(part3_->rows);
    }
    if (artifact == "submissions") {
      if (phase_ < Phase::Part3) throw AccessError("no submissions before part 3");
      return submissions_csv(book_.submissions());
    }
    if (artifact == "leaderboard") {
      if (!leaderboard_) throw AccessError("the leaderboard exists once the session is scored");
      return leaderboard_csv(*leaderboard_);
    }
    if (artifact == "chatlog") {
      require_debrief("chat log");
      return chatlog_csv();
    }
    if (artifact == "truth") {
      require_debrief("truth map");
      return truth_csv(part3_ ? part3_->truth : std::map<int, TruthEntry>{});
    }
    if (artifact == "bids") {
      require_debrief("bid history");
      return bids_csv();
    }
    throw DomainError("unknown artifact '" + std::string(artifact) +
                      "' (schedule, part3_dataset, submissions, leaderboard, chatlog, truth, bids)");
  }

  // ----- client views ----------------------------------------------------

  // Only what this participant may see: own costs and bids, winners of own
  // group's tenders, own margins, own group's chat.
  json participant_view(std::string_view participant_id) const {
    const auto& me = participant(participant_id);
    json v{{"session_id", config_.session_id},
           {"phase", std::string(to_string(phase_))},
           {"participant_id", me.participant_id},
           {"group", me.group},
           {"seat", me.seat},
           {"village", std::string(to_string(home_village(me.seat)))},
           {"name", me.name.value_or("")},
           {"notification_index", notifications_.size()}};
    json tenders = json::array();
    Money p1, p2;
    for (const auto& t : market_->schedule()) {
      if (t.group != me.group) continue;
      const auto state = market_->state(t.id);
      if (state == TenderState::Scheduled) continue;
      json tj{{"tender_id", t.id},
              {"part", t.part},
              {"year", t.year},
              {"round", t.round},
              {"location", std::string(to_string(t.location))},
              {"contract_type", std::string(to_string(t.contract))},
              {"situation", std::string(to_string(t.situation))},
              {"state", std::string(to_string(state))},
              {"my_cost", market_->cost_of(t, me.seat).str()}};
      if (const auto* b = market_->bid_of(t.id, me.seat)) tj["my_bid"] = b->bid.str();
      if (auto d = deadlines_.find(t.id); d != deadlines_.end() && state == TenderState::Open)
        tj["deadline_ms"] = d->second;
      if (const auto* a = market_->award_of(t.id)) {
        tj["winner"] = a->winner_seat ? json(seat_of(t.group, *a->winner_seat).participant_id) : json(nullptr);
        if (a->winner_seat == me.seat) {
          tj["my_margin"] = a->margin.str();
          (t.part == 1 ? p1 : p2) += a->margin;
        }
      }
      tenders.push_back(std::move(tj));
    }
    v["tenders"] = std::move(tenders);
    v["points"] = {{"part1", p1.str()}, {"part2_provisional", p2.str()}};
    json members = json::array();
    for (const auto& s : seats_)
      if (s.group == me.group)
        members.push_back({{"participant_id", s.participant_id}, {"seat", s.seat}, {"name", s.name.value_or("")}});
    v["group_members"] = std::move(members);
    json chat = json::array();
    for (const auto& m : chat_)
      if (m.group == me.group)
        chat.push_back({{"participant_id", m.participant_id}, {"text", m.text}, {"at_ms", m.at_ms}});
    v["chat"] = std::move(chat);
    v["part3_dataset_available"] = part3_.has_value();
    v["training_data_available"] = training_.has_value();
    if (auto it = book_.submissions().find(me.participant_id); it != book_.submissions().end())
      v["submitted_labels"] = it->second.labels.size();
    if (leaderboard_) v["leaderboard_available"] = true;
    return v;
  }

  json lecturer_view() const {
    json v{{"session_id", config_.session_id},
           {"phase", std::string(to_string(phase_))},
           {"class_size", config_.class_size},
           {"groups", market_->allocation().groups},
           {"events", events_.size()},
           {"advance_blockers", advance_blockers()}};
    if (market_->allocation().warning) v["warning"] = *market_->allocation().warning;
    json seats = json::array();
    for (const auto& s : seats_)
      seats.push_back({{"participant_id", s.participant_id},
                       {"join_code", s.join_code},
                       {"group", s.group},
                       {"seat", s.seat},
                       {"name", s.name ? json(*s.name) : json(nullptr)}});
    v["participants"] = std::move(seats);
    json rounds = json::array();
    for (const auto& t : market_->schedule()) {
      const auto state = market_->state(t.id);
      if (state == TenderState::Scheduled) continue;
      json r{{"tender_id", t.id},
             {"state", std::string(to_string(state))},
             {"bids", market_->bids_for(t.id).size()},
             {"expected_bids", market_->group_size(t.group)}};
      if (const auto* a = market_->award_of(t.id))
        r["winner"] = a->winner_seat ? json(seat_of(t.group, *a->winner_seat).participant_id) : json(nullptr);
      rounds.push_back(std::move(r));
    }
    v["tenders"] = std::move(rounds);
    v["submissions"] = book_.submissions().size();
    if (training_) v["training_rows"] = training_->size();
    if (part3_) {
      v["part3_rows"] = part3_->rows.size();
      v["part3_excluded"] = part3_->excluded;
    }
    v["scored"] = leaderboard_.has_value();
    return v;
  }

  // Notifications after `since` that this caller may see.
  json notifications_for(std::optional<std::string_view> participant_id, std::uint64_t since) const {
    std::optional<int> group;
    if (participant_id) group = participant(*participant_id).group;
    json out = json::array();
    for (const auto& n : notifications_) {
      if (n.index <= since) continue;
      if (participant_id) {
        if (n.group && *n.group != *group) continue;
        if (n.participant && *n.participant != *participant_id) continue;
      }
      json e = n.payload;
      e["index"] = n.index;
      out.push_back(std::move(e));
    }
    return out;
  }

private:
  Session() = default;

  static std::string random_code(Rng& rng, int length) {
    static constexpr std::string_view alphabet = "ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
    std::string s;
    for (int i = 0; i < length; ++i) s += alphabet[rng.below(alphabet.size())];
    return s;
  }

  void require_debrief(const char* what) const {
    if (phase_ != Phase::Debrief) throw AccessError(std::string("the ") + what + " is disclosed at debrief only");
  }

  std::vector<std::string> round_tenders(int group, int year, int round) const {
    if (phase_ != Phase::Part1 && phase_ != Phase::Part2) throw ValidationError("rounds run during parts 1 and 2");
    if (year < 1 || year > kYears || round < 1 || round > kRounds)
      throw DomainError("year and round must lie in 1..4");
    const int part = static_cast<int>(phase_);
    std::vector<std::string> ids;
    if (group == 0) {
      for (int g = 1; g <= market_->allocation().group_count(); ++g) ids.push_back(make_tender_id(g, part, year, round));
    } else {
      market_->group_size(group);
      ids.push_back(make_tender_id(group, part, year, round));
    }
    return ids;
  }

  void commit(json ev, std::int64_t at_ms) {
    ev["seq"] = events_.size() + 1;
    ev["at_ms"] = at_ms;
    json outcome = apply(ev);
    if (!outcome.is_null()) ev["outcome"] = std::move(outcome);
    events_.push_back(std::move(ev));
    if (sink_) sink_(events_.back());
  }

  void notify(std::optional<int> group, std::optional<std::string> participant, json payload) {
    notifications_.push_back({notifications_.size() + 1, group, std::move(participant), std::move(payload)});
  }

  // The single state transition function. Returns the event's computed
  // outcome (award decisions), or null.
  json apply(const json& ev) {
    const auto type = ev.at("type").get<std::string>();
    const auto seq = ev.at("seq").get<std::uint64_t>();
    const auto at = ev.at("at_ms").get<std::int64_t>();
    if (type == "create") {
      if (market_) throw ValidationError("session already created");
      config_.session_id = ev.at("session_id").get<std::string>();
      config_.class_size = ev.at("class_size").get<int>();
      config_.seed = ev.at("seed").get<std::uint64_t>();
      config_.round_seconds = ev.at("timing").value("round_seconds", 0);
      lecturer_token_ = ev.at("lecturer_token").get<std::string>();
      market_.emplace(allocate_groups(config_.class_size), config_.seed);
      const auto& codes = ev.at("join_codes");
      std::size_t i = 0;
      for (int g = 1; g <= market_->allocation().group_count(); ++g) {
        for (int s = 1; s <= market_->group_size(g); ++s, ++i) {
          char id[16];
          std::snprintf(id, sizeof id, "P%02zu", i + 1);
          seats_.push_back({id, codes.at(i).get<std::string>(), g, s, std::nullopt});
          code_index_[seats_.back().join_code] = i;
        }
      }
      return nullptr;
    }
    if (!market_) throw ValidationError("event log lacks a create record");
    if (type == "join") {
      auto& s = seats_.at(code_index_.at(ev.at("code").get<std::string>()));
      s.name = ev.at("name").get<std::string>();
      notify(s.group, std::nullopt, {{"type", "joined"}, {"participant_id", s.participant_id}});
    } else if (type == "advance") {
      phase_ = parse_phase(ev.at("to").get<std::string>());
      if (phase_ == Phase::Part3) open_part3();
      notify(std::nullopt, std::nullopt, {{"type", "phase"}, {"phase", std::string(to_string(phase_))}});
      if (phase_ == Phase::Part3)
        notify(std::nullopt, std::nullopt, {{"type", "dataset_published"}, {"rows", part3_->rows.size()}});
    } else if (type == "open_round") {
      const auto ids = round_tenders(ev.at("group").get<int>(), ev.at("year").get<int>(), ev.at("round").get<int>());
      for (const auto& id : ids) {
        if (!market_->open(id)) continue;
        if (ev.contains("deadline_ms")) deadlines_[id] = ev.at("deadline_ms").get<std::int64_t>();
        const auto& t = market_->tender(id);
        json payload{{"type", "round_open"}, {"tender_id", id}, {"year", t.year}, {"round", t.round}};
        if (ev.contains("deadline_ms")) payload["deadline_ms"] = ev.at("deadline_ms");
        notify(t.group, std::nullopt, std::move(payload));
      }
    } else if (type == "close_round") {
      const auto ids = round_tenders(ev.at("group").get<int>(), ev.at("year").get<int>(), ev.at("round").get<int>());
      json awards = json::array();
      for (const auto& id : ids) {
        if (!market_->close(id)) continue;
        deadlines_.erase(id);
        const auto& a = market_->award(id);
        const auto& t = market_->tender(id);
        json rec{{"tender_id", id}};
        if (a.winner_seat) {
          const auto& winner = seat_of(t.group, *a.winner_seat).participant_id;
          rec["winner"] = winner;
          if (a.tie_draw) {
            rec["tied_seats"] = a.tied_seats;
            rec["tie_draw"] = *a.tie_draw;
          }
          notify(t.group, std::nullopt, {{"type", "award"}, {"tender_id", id}, {"winner", winner}});
          notify(t.group, winner, {{"type", "margin"}, {"tender_id", id}, {"margin", a.margin.str()}});
        } else {
          rec["winner"] = nullptr;
          notify(t.group, std::nullopt, {{"type", "award"}, {"tender_id", id}, {"winner", nullptr}});
        }
        awards.push_back(std::move(rec));
      }
      return awards;
    } else if (type == "bid") {
      const auto& who = participant(ev.at("participant").get<std::string>());
      market_->submit_bid(ev.at("tender_id").get<std::string>(), who.seat,
                          Money::parse(ev.at("amount").get<std::string>()), seq);
    } else if (type == "chat") {
      const auto& who = participant(ev.at("participant").get<std::string>());
      ChatMessage m{who.group, who.participant_id, ev.at("text").get<std::string>(), at, 2, 0, 0};
      // context: the latest round opened in this group
      for (const auto& t : market_->schedule())
        if (t.group == who.group && t.part == 2 && market_->state(t.id) != TenderState::Scheduled) {
          m.year = t.year;
          m.round = t.round;
        }
      chat_.push_back(m);
      notify(who.group, std::nullopt,
             {{"type", "chat"}, {"participant_id", m.participant_id}, {"text", m.text}, {"at_ms", m.at_ms}});
    } else if (type == "training_data") {
      training_csv_ = ev.at("csv").get<std::string>();
      training_ = read_training_csv(training_csv_);
      notify(std::nullopt, std::nullopt, {{"type", "training_data"}, {"rows", training_->size()}});
    } else if (type == "classification") {
      StaffSubmission s{ev.at("participant").get<std::string>(), {}};
      for (const auto& [id, label] : ev.at("labels").items())
        s.labels[std::stoi(id)] = parse_response(label.get<std::string>());
      book_.record(std::move(s));
      notify(std::nullopt, std::nullopt, {{"type", "submission_count"}, {"count", book_.submissions().size()}});
    } else if (type == "score") {
      leaderboard_ = final_leaderboard(
          score_all(participant_points(), award_history(), part3_->truth, book_.submissions()));
      notify(std::nullopt, std::nullopt, {{"type", "leaderboard"}});
    } else {
      throw ValidationError("unknown event type '" + type + "'");
    }
    return nullptr;
  }

  void open_part3() {
    std::vector<TenderBids> pooled;
    for (const auto& t : market_->schedule()) {
      TenderBids tb{t, {}, market_->state(t.id) == TenderState::Awarded};
      for (const auto& b : market_->bids_for(t.id)) tb.bids.push_back(b.bid);
      pooled.push_back(std::move(tb));
    }
    part3_ = prepare_part3_dataset(pooled, derive_seed(config_.seed, 7));
    std::set<int> pool;
    for (const auto& r : part3_->rows) pool.insert(r.id);
    book_ = SubmissionBook(std::move(pool));
  }

  std::string chatlog_csv() const {
    std::ostringstream os;
    os << "time_utc,group_id,part,year,round,participant_id,name,text\n";
    for (const auto& m : chat_) {
      const auto& who = participant(m.participant_id);
      os << format_utc(m.at_ms) << ',' << m.group << ',' << m.part << ',' << m.year << ',' << m.round << ','
         << m.participant_id << ',' << csv::escape(who.name.value_or("")) << ',' << csv::escape(m.text) << '\n';
    }
    return os.str();
  }

  std::string bids_csv() const {
    std::ostringstream os;
    os << "tender_id,group_id,part,year,round,participant_id,seat,cost,bid,below_cost,winner\n";
    for (const auto& t : market_->schedule()) {
      const auto* a = market_->award_of(t.id);
      for (const auto& b : market_->bids_for(t.id)) {
        os << t.id << ',' << t.group << ',' << t.part << ',' << t.year << ',' << t.round << ','
           << seat_of(t.group, b.seat).participant_id << ',' << b.seat << ',' << b.cost.str() << ',' << b.bid.str()
           << ',' << (b.below_cost() ? 1 : 0) << ',' << (a && a->winner_seat == b.seat ? 1 : 0) << '\n';
      }
    }
    return os.str();
  }

  SessionConfig config_;
  Phase phase_ = Phase::Lobby;
  std::optional<Market> market_;
  std::vector<SeatInfo> seats_;
  std::map<std::string, std::size_t> code_index_;
  std::string lecturer_token_;
  std::map<std::string, std::int64_t> deadlines_;
  std::vector<ChatMessage> chat_;
  std::string training_csv_;
  std::optional<LabeledDataset> training_;
  std::optional<Part3Dataset> part3_;
  SubmissionBook book_;
  std::optional<Leaderboard> leaderboard_;
  std::vector<Notification> notifications_;
  std::vector<json> events_;
  std::function<void(const json&)> sink_;
};

// ---------------------------------------------------------------------------
// Event log file: one JSON record per line, appended and flushed per event.

class EventLogFile {
public:
  explicit EventLogFile(std::filesystem::path path) : path_(std::move(path)) {}

  const std::filesystem::path& path() const { return path_; }

  std::vector<json> read() const {
    std::ifstream in(path_);
    if (!in) throw ValidationError("cannot read event log " + path_.string());
    std::vector<json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        out.push_back(json::parse(line));
      } catch (const json::parse_error&) {
        throw ValidationError("event log " + path_.string() + " line " + std::to_string(n) + " is not valid JSON");
      }
    }
    return out;
  }

  void append(const json& ev) {
    if (!out_.is_open()) {
      out_.open(path_, std::ios::app);
      if (!out_) throw Error("cannot append to event log " + path_.string());
    }
    out_ << ev.dump() << '\n';
    out_.flush();
  }

  // Writes the whole log; refuses to overwrite an existing file.
  void create(const std::vector<json>& events) {
    if (std::filesystem::exists(path_)) throw ValidationError("event log " + path_.string() + " already exists");
    for (const auto& ev : events) append(ev);
  }

private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// Loads a session from its log and keeps appending new events to it.
inline Session open_session(EventLogFile& log) {
  Session s = Session::replay(log.read());
  s.on_commit([&log](const json& ev) { log.append(ev); });
  return s;
}

}  // namespace cartelgame
