#include <gtest/gtest.h>

#include <filesystem>
#include <future>

#include "cartelgame/http.hpp"
#include "support/bots.hpp"

using namespace cartelgame;
using cartelgame::testing::ApiClient;

namespace {

class HttpTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("cartelgame_http_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    start();
  }

  void TearDown() override {
    server_.reset();
    std::filesystem::remove_all(dir_);
  }

  void start(std::string admin = {}) {
    GameServer::Options opts;
    opts.data_dir = dir_;
    opts.admin_token = std::move(admin);
    opts.tick_ms = 20;
    server_ = std::make_unique<GameServer>(std::move(opts));
    port_ = server_->start();
  }

  ApiClient client(std::string token = {}) { return ApiClient("127.0.0.1", port_, std::move(token)); }

  // Creates a session and joins everyone; returns the credentials.
  json lobby(int n, const std::string& sid = "t1", int round_seconds = 0) {
    auto c = client();
    auto created = c.ok(c.post("/api/sessions", {{"session_id", sid},
                                                 {"class_size", n},
                                                 {"seed", 11},
                                                 {"timing", {{"round_seconds", round_seconds}}}}));
    for (const auto& p : created.at("participants")) {
      auto pc = client();
      pc.ok(pc.post("/api/s/" + sid + "/join", {{"code", p.at("join_code")}, {"name", "n"}}));
    }
    return created;
  }

  std::filesystem::path dir_;
  std::unique_ptr<GameServer> server_;
  int port_ = 0;
};

std::string code_of(const json& created, int i) { return created.at("participants")[i].at("join_code"); }

}  // namespace

TEST_F(HttpTest, CreateAndDuplicate) {
  auto c = client();
  auto r = c.post("/api/sessions", {{"session_id", "a"}, {"class_size", 12}, {"seed", 1}});
  ASSERT_EQ(r.status, 201) << r.body;
  EXPECT_EQ(r.data().at("participants").size(), 12u);
  EXPECT_EQ(c.post("/api/sessions", {{"session_id", "a"}, {"class_size", 12}, {"seed", 1}}).status, 400);
  auto five = c.post("/api/sessions", {{"session_id", "b"}, {"class_size", 5}, {"seed", 1}});
  EXPECT_EQ(five.status, 400);
  EXPECT_NE(five.body.find("5"), std::string::npos);
  EXPECT_EQ(c.post_text("/api/sessions", "{not json", "application/json").status, 400);
  auto big = c.ok(c.post("/api/sessions", {{"session_id", "c"}, {"class_size", 33}, {"seed", 1}}));
  EXPECT_TRUE(big.contains("warning"));
}

TEST_F(HttpTest, AdminTokenGuardsCreation) {
  server_.reset();
  start("sekret");
  auto anon = client();
  EXPECT_EQ(anon.post("/api/sessions", {{"session_id", "a"}, {"class_size", 6}, {"seed", 1}}).status, 401);
  auto admin = client("sekret");
  EXPECT_EQ(admin.post("/api/sessions", {{"session_id", "a"}, {"class_size", 6}, {"seed", 1}}).status, 201);
}

TEST_F(HttpTest, AuthAndStatusCodes) {
  auto created = lobby(6);
  const std::string lt = created.at("lecturer_token");
  EXPECT_EQ(client().get("/api/s/t1/state").status, 401);
  EXPECT_EQ(client("wrong").get("/api/s/t1/state").status, 401);
  EXPECT_EQ(client(lt).get("/api/s/nope/state").status, 404);
  auto p = client(code_of(created, 0));
  EXPECT_EQ(p.post("/api/s/t1/lecturer/advance", json::object()).status, 403);
  EXPECT_EQ(p.get("/api/s/t1/lecturer/export/schedule").status, 403);
  auto lecturer = client(lt);
  EXPECT_EQ(lecturer.post("/api/s/t1/bids", {{"tender_id", "G1-P1-Y1-R1"}, {"amount", 100}}).status, 403);
  EXPECT_EQ(lecturer.get("/api/s/t1/lecturer/export/part3_dataset").status, 403);
  EXPECT_EQ(lecturer.get("/api/s/t1/lecturer/export/bogus").status, 400);
  EXPECT_EQ(p.get("/api/s/t1/dataset").status, 403);
  EXPECT_EQ(client().post("/api/s/t1/join", {{"code", "ZZZZZZ"}, {"name", "x"}}).status, 403);
}

TEST_F(HttpTest, BlockedAdvanceListsBlockers) {
  auto c = client();
  auto created = c.ok(c.post("/api/sessions", {{"session_id", "t1"}, {"class_size", 6}, {"seed", 1}}));
  auto lecturer = client(created.at("lecturer_token"));
  auto r = lecturer.post("/api/s/t1/lecturer/advance", json::object());
  ASSERT_EQ(r.status, 409);
  EXPECT_EQ(r.data().at("blockers").size(), 6u);
  // a participant that has not joined cannot act
  EXPECT_EQ(client(code_of(created, 0)).get("/api/s/t1/state").status, 403);
}

TEST_F(HttpTest, BiddingRoundTrip) {
  auto created = lobby(6);
  auto lecturer = client(created.at("lecturer_token"));
  lecturer.ok(lecturer.post("/api/s/t1/lecturer/advance", json::object()));
  auto p = client(code_of(created, 0));
  EXPECT_EQ(p.post("/api/s/t1/bids", {{"tender_id", "G1-P1-Y1-R1"}, {"amount", 120}}).status, 400);
  lecturer.ok(lecturer.post("/api/s/t1/lecturer/open-round", {{"year", 1}, {"round", 1}}));
  auto state = p.ok(p.get("/api/s/t1/state"));
  ASSERT_EQ(state.at("tenders").size(), 1u);
  EXPECT_EQ(state.at("tenders")[0].at("state"), "open");
  auto r = p.post("/api/s/t1/bids", {{"tender_id", "G1-P1-Y1-R1"}, {"amount", "120.5"}});
  ASSERT_EQ(r.status, 201) << r.body;
  EXPECT_EQ(r.data().at("bid"), "120.50");
  EXPECT_EQ(p.post("/api/s/t1/bids", {{"tender_id", "G1-P1-Y1-R1"}, {"amount", 119}}).status, 400);
  EXPECT_EQ(p.post("/api/s/t1/bids", {{"tender_id", "G2-P1-Y1-R1"}, {"amount", 119}}).status, 403);
  EXPECT_EQ(p.post("/api/s/t1/bids", {{"tender_id", "G1-P1-Y1-R1"}}).status, 400);
  EXPECT_EQ(p.post("/api/s/t1/chat", {{"text", "hi"}}).status, 400);
  auto closed = lecturer.ok(lecturer.post("/api/s/t1/lecturer/close-round", {{"year", 1}, {"round", 1}}));
  EXPECT_TRUE(closed.at("changed"));
  closed = lecturer.ok(lecturer.post("/api/s/t1/lecturer/close-round", {{"year", 1}, {"round", 1}}));
  EXPECT_FALSE(closed.at("changed"));
  state = p.ok(p.get("/api/s/t1/state"));
  EXPECT_EQ(state.at("tenders")[0].at("winner"), "P01");
  EXPECT_TRUE(state.at("tenders")[0].contains("my_margin"));
  auto other = client(code_of(created, 1)).ok(client(code_of(created, 1)).get("/api/s/t1/state"));
  EXPECT_FALSE(other.at("tenders")[0].contains("my_margin"));
  EXPECT_EQ(other.dump().find("120.50"), std::string::npos);
}

TEST_F(HttpTest, LongPollWakesOnRoundOpen) {
  auto created = lobby(6);
  auto lecturer = client(created.at("lecturer_token"));
  lecturer.ok(lecturer.post("/api/s/t1/lecturer/advance", json::object()));
  auto p = client(code_of(created, 3));
  const auto since = p.ok(p.get("/api/s/t1/events")).at("next").get<int>();
  auto waiting = std::async(std::launch::async, [&] {
    auto c = client(code_of(created, 3));
    return c.ok(c.get("/api/s/t1/events?since=" + std::to_string(since) + "&wait_ms=5000"));
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  lecturer.ok(lecturer.post("/api/s/t1/lecturer/open-round", {{"group", 2}, {"year", 1}, {"round", 1}}));
  const auto got = waiting.get();
  ASSERT_EQ(got.at("events").size(), 1u);
  EXPECT_EQ(got.at("events")[0].at("type"), "round_open");
  EXPECT_EQ(got.at("events")[0].at("tender_id"), "G2-P1-Y1-R1");
  EXPECT_EQ(p.get("/api/s/t1/events?since=x").status, 400);
}

TEST_F(HttpTest, CountdownClosesRounds) {
  auto created = lobby(6, "t1", 1);
  auto lecturer = client(created.at("lecturer_token"));
  lecturer.ok(lecturer.post("/api/s/t1/lecturer/advance", json::object()));
  lecturer.ok(lecturer.post("/api/s/t1/lecturer/open-round", {{"year", 1}, {"round", 1}}));
  auto p = client(code_of(created, 0));
  p.ok(p.post("/api/s/t1/bids", {{"tender_id", "G1-P1-Y1-R1"}, {"amount", 150}}));
  json state;
  for (int i = 0; i < 100; ++i) {
    state = p.ok(p.get("/api/s/t1/state"));
    if (state.at("tenders")[0].at("state") == "awarded") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  EXPECT_EQ(state.at("tenders")[0].at("state"), "awarded");
}

TEST_F(HttpTest, ClassificationAndTrainingEndpoints) {
  server_->create_session([] {
    SessionConfig c;
    c.session_id = "g";
    c.class_size = 6;
    c.seed = 3;
    return c;
  }());
  const auto credentials = server_->with_session("g", [](Session& s) { return GameServer::credentials(s); });
  auto lecturer = client(credentials.at("lecturer_token"));
  auto bad = lecturer.post_text("/api/s/g/lecturer/training-data", "cartel,SPD,CV,RD,RDNORM,DIFFP\n3,1,1,1,1,1\n");
  EXPECT_EQ(bad.status, 400);
  EXPECT_NE(bad.body.find("line 2"), std::string::npos);
  auto good = lecturer.ok(
      lecturer.post_text("/api/s/g/lecturer/training-data", cartelgame::testing::policy_training_csv(20, 1)));
  EXPECT_EQ(good.at("rows"), 40);
  EXPECT_EQ(good.at("columns"), 6);
  EXPECT_EQ(good.at("suspicious"), 20);
}

TEST_F(HttpTest, SmallGameEndToEndAndRestart) {
  const auto rep = cartelgame::testing::play_http_game("127.0.0.1", port_, "game", 6, 5, 50);
  EXPECT_EQ(rep.bids, 2 * 16 * 6);
  EXPECT_EQ(rep.submissions, 6);
  EXPECT_GT(rep.chats, 0);
  EXPECT_NE(rep.exports.at("leaderboard").find("rank,participant_id"), std::string::npos);

  // participants see the leaderboard once scored, never the truth file
  const auto code = server_->with_session("game", [](Session& s) { return s.seats()[0].join_code; });
  auto p = client(code);
  EXPECT_EQ(p.ok(p.get("/api/s/game/leaderboard")).get<std::string>(), rep.exports.at("leaderboard"));
  EXPECT_EQ(p.get("/api/s/game/lecturer/export/truth").status, 403);

  // a restarted server rebuilds the session from its log
  server_.reset();
  start();
  auto lecturer = client(rep.lecturer_token);
  for (const auto& [artifact, text] : rep.exports)
    EXPECT_EQ(lecturer.ok(lecturer.get("/api/s/game/lecturer/export/" + artifact)).get<std::string>(), text)
        << artifact;
  const auto events = EventLogFile(dir_ / "game.jsonl").read();
  const auto replayed = Session::replay(events);
  EXPECT_EQ(replayed.export_artifact("leaderboard"), rep.exports.at("leaderboard"));
  EXPECT_EQ(replayed.export_artifact("part3_dataset"), rep.exports.at("part3_dataset"));
}
