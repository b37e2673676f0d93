#pragma once

#include <cmath>
#include <cstdint>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "cartelgame/cartelgame.hpp"

namespace cartelgame::testing {

using json = nlohmann::json;

// Scripted bidding.
//
// Competitive: cost plus a 2..15% markup.
// Coordinated: the group rotates a designated winner through the seats; it
// bids 35..50% over its cost, the others cover 4..12% above that price.
struct BotPolicy {
  static int designated_seat(int year, int round, int group_size) {
    return ((year - 1) * kRounds + (round - 1)) % group_size + 1;
  }

  static Money competitive(Money cost, Rng& rng) {
    return cost.scaled_percent(102 + static_cast<std::int64_t>(rng.below(14)));
  }

  static Money agreed_price(Money designated_cost, Rng& rng) {
    return designated_cost.scaled_percent(135 + static_cast<std::int64_t>(rng.below(16)));
  }

  static Money cover(Money agreed, Rng& rng) {
    return agreed.scaled_percent(104 + static_cast<std::int64_t>(rng.below(9)));
  }
};

// Training rows from the same policies on random tenders: label 0 for
// competitive groups, 1 for coordinated ones.
inline std::string policy_training_csv(int tenders_per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::ostringstream os;
  os << "cartel;SPD;CV;RD;RDNORM;DIFFP\n";
  for (int i = 0; i < 2 * tenders_per_class; ++i) {
    const int label = i % 2;
    const int n = 3 + static_cast<int>(rng.below(2));
    const Money fixed = Money::units(static_cast<std::int64_t>(rng.between(50, 100)));
    const auto loc = static_cast<Village>(rng.below(4));
    const auto sit = static_cast<Situation>(rng.below(4));
    const auto ct = static_cast<ContractType>(rng.below(4));
    std::vector<double> bids;
    const int designated = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const Money agreed = BotPolicy::agreed_price(compute_cost(fixed, designated, loc, sit, ct), rng);
    for (int seat = 1; seat <= n; ++seat) {
      const Money cost = compute_cost(fixed, seat, loc, sit, ct);
      Money bid = label == 0 ? BotPolicy::competitive(cost, rng)
                             : (seat == designated ? agreed : BotPolicy::cover(agreed, rng));
      bids.push_back(bid.to_double());
    }
    const auto s = compute_screens(bids);
    os << label;
    for (const auto& v : {s.spd, s.cv, s.rd, s.rdnorm, s.diffp}) os << ';' << (v ? csv::format_real(*v) : "NA");
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// HTTP bots

class ApiClient {
public:
  ApiClient(const std::string& host, int port, std::string token = {}) : cli_(host, port), token_(std::move(token)) {
    cli_.set_read_timeout(60, 0);
    cli_.set_tcp_nodelay(true);
  }

  void set_token(std::string t) { token_ = std::move(t); }

  struct Reply {
    int status = 0;
    std::string body;
    json data() const { return json::parse(body); }
  };

  Reply get(const std::string& path) {
    auto r = cli_.Get(path, headers());
    return unwrap(r, path);
  }

  Reply post(const std::string& path, const json& body) {
    auto r = cli_.Post(path, headers(), body.dump(), "application/json");
    return unwrap(r, path);
  }

  Reply post_text(const std::string& path, const std::string& body, const std::string& type = "text/csv") {
    auto r = cli_.Post(path, headers(), body, type);
    return unwrap(r, path);
  }

  // Throws unless the status is 2xx.
  json ok(const Reply& r) {
    if (r.status < 200 || r.status >= 300)
      throw std::runtime_error("HTTP " + std::to_string(r.status) + ": " + r.body);
    return r.body.empty() || r.body.front() != '{' ? json(r.body) : r.data();
  }

private:
  httplib::Headers headers() const {
    if (token_.empty()) return {};
    return {{"Authorization", "Bearer " + token_}};
  }

  static Reply unwrap(const httplib::Result& r, const std::string& path) {
    if (!r) throw std::runtime_error("request to " + path + " failed: " + httplib::to_string(r.error()));
    return {r->status, r->body};
  }

  httplib::Client cli_;
  std::string token_;
};

struct GameReport {
  std::string session_id;
  std::string lecturer_token;
  std::map<std::string, std::string> exports;  // artifact -> CSV text
  int bids = 0;
  int chats = 0;
  int submissions = 0;
};

// Plays a full session against a running server: join, two bidding parts,
// forest-based classification, debrief, scoring, exports.
inline GameReport play_http_game(const std::string& host, int port, const std::string& session_id, int class_size,
                                 std::uint64_t seed, int trees = 100) {
  ApiClient lecturer(host, port);
  GameReport rep;
  rep.session_id = session_id;
  const auto created = lecturer.ok(lecturer.post(
      "/api/sessions", {{"session_id", session_id}, {"class_size", class_size}, {"seed", seed}}));
  rep.lecturer_token = created.at("lecturer_token").get<std::string>();
  lecturer.set_token(rep.lecturer_token);
  const std::string base = "/api/s/" + session_id;

  struct Bot {
    std::string code, pid;
    int group = 0, seat = 0, group_size = 0;
    std::unique_ptr<ApiClient> api;
    Rng rng{0};
  };
  std::vector<Bot> bots;
  std::map<int, int> sizes;
  for (const auto& p : created.at("participants")) ++sizes[p.at("group").get<int>()];
  for (const auto& p : created.at("participants")) {
    Bot b;
    b.code = p.at("join_code").get<std::string>();
    b.group = p.at("group").get<int>();
    b.seat = p.at("seat").get<int>();
    b.group_size = sizes[b.group];
    b.api = std::make_unique<ApiClient>(host, port, b.code);
    b.rng = Rng(derive_seed(seed, 100 + bots.size()));
    bots.push_back(std::move(b));
  }
  for (auto& b : bots) {
    const auto j = b.api->ok(b.api->post(base + "/join", {{"code", b.code}, {"name", "bot " + b.code}}));
    b.pid = j.at("participant_id").get<std::string>();
  }

  std::mutex mu;
  auto bid_round = [&](int part, int year, int round) {
    lecturer.ok(lecturer.post(base + "/lecturer/open-round", {{"group", 0}, {"year", year}, {"round", round}}));
    // the designated seat announces its price in the group chat
    std::map<int, Money> agreed;
    if (part == 2) {
      for (auto& b : bots) {
        if (b.seat != BotPolicy::designated_seat(year, round, b.group_size)) continue;
        const auto st = b.api->ok(b.api->get(base + "/state"));
        for (const auto& t : st.at("tenders"))
          if (t.at("state") == "open" && t.at("year") == year && t.at("round") == round) {
            agreed[b.group] = BotPolicy::agreed_price(Money::parse(t.at("my_cost").get<std::string>()), b.rng);
            b.api->ok(b.api->post(base + "/chat", {{"text", "I take " + t.at("tender_id").get<std::string>() +
                                                                  " at " + agreed[b.group].str() + ", cover above"}}));
            ++rep.chats;
          }
      }
    }
    std::vector<std::thread> threads;
    for (auto& b : bots) {
      threads.emplace_back([&, bp = &b] {
        const auto st = bp->api->ok(bp->api->get(base + "/state"));
        for (const auto& t : st.at("tenders")) {
          if (t.at("state") != "open" || t.at("year") != year || t.at("round") != round || t.contains("my_bid"))
            continue;
          const Money cost = Money::parse(t.at("my_cost").get<std::string>());
          Money bid;
          {
            std::lock_guard lock(mu);
            if (part == 1) bid = BotPolicy::competitive(cost, bp->rng);
            else if (bp->seat == BotPolicy::designated_seat(year, round, bp->group_size)) bid = agreed.at(bp->group);
            else bid = BotPolicy::cover(agreed.at(bp->group), bp->rng);
          }
          bp->api->ok(bp->api->post(base + "/bids", {{"tender_id", t.at("tender_id")}, {"amount", bid.str()}}));
          std::lock_guard lock(mu);
          ++rep.bids;
        }
      });
    }
    for (auto& t : threads) t.join();
    lecturer.ok(lecturer.post(base + "/lecturer/close-round", {{"group", 0}, {"year", year}, {"round", round}}));
  };

  lecturer.ok(lecturer.post(base + "/lecturer/advance", json::object()));
  for (int part = 1; part <= 2; ++part) {
    for (int y = 1; y <= kYears; ++y)
      for (int r = 1; r <= kRounds; ++r) bid_round(part, y, r);
    lecturer.ok(lecturer.post(base + "/lecturer/advance", json::object()));
  }

  lecturer.ok(lecturer.post_text(base + "/lecturer/training-data?source=policy", policy_training_csv(300, seed)));

  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < bots.size(); ++i) {
    threads.emplace_back([&, i] {
      auto& b = bots[i];
      const auto train = read_training_csv(b.api->ok(b.api->get(base + "/training-data")).get<std::string>());
      const auto dataset = b.api->ok(b.api->get(base + "/dataset")).get<std::string>();
      ForestParams params;
      params.n_trees = trees;
      params.threads = 1;
      const auto forest = fit(train, params, derive_seed(seed, 200 + i));
      const auto table = read_feature_csv(dataset, forest.feature_names);
      // thresholds vary a little between staff members
      const double theta = 0.4 + 0.05 * static_cast<double>(i % 4);
      const auto result = classify(forest, align_features(forest, table.feature_names, table.features), theta);
      StaffSubmission s{b.pid, {}};
      for (std::size_t k = 0; k < table.ids.size(); ++k)
        s.labels[static_cast<int>(table.ids[k])] = result.labels[k] ? Label::Suspicious : Label::NonSuspicious;
      b.api->ok(b.api->post_text(base + "/classification", write_submission_csv(s)));
      std::lock_guard lock(mu);
      ++rep.submissions;
    });
  }
  for (auto& t : threads) t.join();

  lecturer.ok(lecturer.post(base + "/lecturer/advance", json::object()));
  lecturer.ok(lecturer.post(base + "/lecturer/score", json::object()));
  for (const char* a : {"schedule", "part3_dataset", "submissions", "leaderboard", "chatlog", "truth", "bids"})
    rep.exports[a] = lecturer.ok(lecturer.get(base + "/lecturer/export/" + a)).get<std::string>();
  return rep;
}

}  // namespace cartelgame::testing
