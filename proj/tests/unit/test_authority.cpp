#include <gtest/gtest.h>

#include "cartelgame/authority.hpp"

using namespace cartelgame;

namespace {

StaffSubmission labels_for(std::string who, int n, const std::set<int>& suspicious) {
  StaffSubmission s{std::move(who), {}};
  for (int id = 1; id <= n; ++id) s.labels[id] = suspicious.contains(id) ? Label::Suspicious : Label::NonSuspicious;
  return s;
}

std::set<int> ids(int n) {
  std::set<int> out;
  for (int i = 1; i <= n; ++i) out.insert(i);
  return out;
}

ConsensusReport votes(int staff, int suspicious) {
  std::vector<StaffSubmission> subs;
  for (int i = 0; i < staff; ++i) subs.push_back(labels_for("p" + std::to_string(i), 1, i < suspicious ? std::set<int>{1} : std::set<int>{}));
  return compute_consensus(subs);
}

}  // namespace

TEST(Submissions, CompleteMapAcceptedIncompleteRejected) {
  SubmissionBook book(ids(3));
  EXPECT_FALSE(book.record(labels_for("a", 3, {})));
  auto partial = labels_for("b", 3, {});
  partial.labels.erase(2);
  try {
    book.record(partial);
    FAIL();
  } catch (const BlockedError& e) {
    ASSERT_EQ(e.blockers().size(), 1u);
    EXPECT_EQ(e.blockers()[0], "1 missing ID(s): 2");
  }
  auto extra = labels_for("b", 4, {});
  EXPECT_THROW(book.record(extra), BlockedError);
  EXPECT_TRUE(book.record(labels_for("a", 3, {1})));
  EXPECT_EQ(book.submissions().size(), 1u);
  EXPECT_EQ(book.submissions().at("a").labels.at(1), Label::Suspicious);
}

TEST(Consensus, BoundaryIsInclusive) {
  EXPECT_TRUE(votes(4, 3).unequivocal.contains(1));
  EXPECT_EQ(votes(4, 3).fraction.at(1), 0.75);
  EXPECT_FALSE(votes(4, 2).unequivocal.contains(1));
  EXPECT_TRUE(votes(12, 9).unequivocal.contains(1));
  EXPECT_FALSE(votes(12, 8).unequivocal.contains(1));
  EXPECT_TRUE(votes(1, 1).unequivocal.contains(1));
  EXPECT_THROW(compute_consensus(std::vector<StaffSubmission>{}), ValidationError);
}

TEST(Revocation, OnlyUnequivocalPartTwoTendersAreRevoked) {
  const std::map<int, TruthEntry> truth{{1, {"G1-P2-Y3-R2", 2}}, {2, {"G1-P1-Y3-R1", 1}}, {3, {"G1-P2-Y1-R1", 2}},
                                        {4, {"G1-P2-Y2-R1", 2}}};
  const std::vector<AwardRecord> awards{{"G1-P2-Y3-R2", 2, "A", Money::units(20)},
                                        {"G1-P1-Y3-R1", 1, "A", Money::units(10)},
                                        {"G1-P2-Y1-R1", 2, "B", Money::units(7)},
                                        {"G1-P2-Y2-R1", 2, "B", -Money::units(3)}};
  ConsensusReport c;
  c.unequivocal = {1, 2, 4};
  const auto r = apply_revocations(c, truth, awards);
  EXPECT_EQ(r.at("A"), Money::units(20));  // the Part-1 tender is untouched
  EXPECT_EQ(r.at("B"), Money{});           // negative margin is not refunded
  c.unequivocal.clear();
  for (const auto& [who, m] : apply_revocations(c, truth, awards)) EXPECT_EQ(m, Money{}) << who;
}

TEST(Scoring, PenaltyFactor) {
  EXPECT_EQ(penalty_percent(0), 100);
  EXPECT_EQ(penalty_percent(8), 60);
  EXPECT_EQ(penalty_percent(20), 0);
  EXPECT_EQ(penalty_percent(25), 0);
}

TEST(Scoring, MedianWithEvenCounts) {
  // class of four: correct counts 10, 12, 14, 20 -> median 13
  EXPECT_EQ(twice_median({20, 10, 14, 12}), 26);
  // class of six: 5, 5, 7, 8, 9, 9 -> median 7.5
  EXPECT_EQ(twice_median({9, 5, 8, 7, 5, 9}), 15);
  EXPECT_EQ(twice_median({3, 1, 2}), 4);
  EXPECT_FALSE(twice_median({}));
}

TEST(Scoring, EligibilityUsesMeetOrSurpass) {
  std::map<int, TruthEntry> truth;
  for (int id = 1; id <= 10; ++id) truth[id] = {"T" + std::to_string(id), id <= 5 ? 1 : 2};
  // correct counts: a=10, b=8, c=7, d=5 -> median 7.5
  std::map<std::string, StaffSubmission> subs{
      {"a", labels_for("a", 10, {6, 7, 8, 9, 10})},
      {"b", labels_for("b", 10, {6, 7, 8})},
      {"c", labels_for("c", 10, {6, 7})},
      {"d", labels_for("d", 10, {})},
  };
  std::vector<ParticipantPoints> pts{{"a", Money::units(1), {}}, {"b", Money::units(50), {}},
                                     {"c", Money::units(100), {}}, {"d", Money::units(1), {}}, {"e", Money::units(70), {}}};
  const auto rows = score_all(pts, {}, truth, subs);
  EXPECT_TRUE(rows[0].eligible);
  EXPECT_TRUE(rows[1].eligible);
  EXPECT_FALSE(rows[2].eligible);
  EXPECT_FALSE(rows[3].eligible);
  EXPECT_FALSE(rows[4].eligible);  // non-submitter
  EXPECT_FALSE(rows[4].submitted);
  EXPECT_EQ(rows[4].penalty_pct, 100);
  EXPECT_EQ(rows[4].final_points, Money::units(70));
  const auto lb = final_leaderboard(rows);
  EXPECT_EQ(lb.winners, std::vector<std::string>{"b"});
  EXPECT_EQ(lb.entries[0].row.participant_id, "b");
  EXPECT_EQ(lb.entries[1].row.participant_id, "a");
  EXPECT_EQ(lb.entries[2].row.participant_id, "c");  // most points, but ineligible
  EXPECT_FALSE(lb.entries[2].rank);
}

TEST(Scoring, EveryoneNonSuspiciousDegeneratesToAllEligible) {
  std::map<int, TruthEntry> truth;
  for (int id = 1; id <= 8; ++id) truth[id] = {"T" + std::to_string(id), id <= 4 ? 1 : 2};
  std::map<std::string, StaffSubmission> subs;
  std::vector<ParticipantPoints> pts;
  std::vector<AwardRecord> awards;
  for (std::string who : {"a", "b", "c"}) {
    subs[who] = labels_for(who, 8, {});
    pts.push_back({who, Money::units(10), Money::units(5)});
    awards.push_back({"T5", 2, who, Money::units(5)});
  }
  for (const auto& r : score_all(pts, awards, truth, subs)) {
    EXPECT_TRUE(r.eligible);
    EXPECT_EQ(r.fp_count, 0);
    EXPECT_EQ(r.part2_revoked, Money{});
    EXPECT_EQ(r.correct_rate(), 0.5);
    EXPECT_EQ(r.final_points, Money::units(15));
  }
}

TEST(Scoring, WorkedExampleFinalPoints) {
  ParticipantPoints a{"A", Money::parse("23.5"), Money::units(60)};
  std::map<int, TruthEntry> truth;
  StaffSubmission s{"A", {}};
  // 8 false positives among 40 competitive tenders, everything else right
  for (int id = 1; id <= 96; ++id) {
    truth[id] = {"T" + std::to_string(id), id <= 48 ? 1 : 2};
    s.labels[id] = (id <= 8 || id > 48) ? Label::Suspicious : Label::NonSuspicious;
  }
  const auto row = score_participant(a, Money::units(40), &s, truth, twice_median({88}));
  EXPECT_EQ(row.fp_count, 8);
  EXPECT_EQ(row.penalty_pct, 60);
  EXPECT_EQ(row.final_points, Money::parse("26.1"));
  EXPECT_TRUE(row.eligible);
  const auto none = score_participant(a, Money::units(40), nullptr, truth, std::nullopt);
  EXPECT_EQ(none.final_points, Money::parse("43.5"));
}

TEST(Scoring, FinalPointsNeverNegative) {
  ParticipantPoints p{"x", -Money::units(30), Money::units(5)};
  const auto row = score_participant(p, {}, nullptr, {}, std::nullopt);
  EXPECT_EQ(row.final_points, Money{});
}

TEST(Leaderboard, CoWinnersOnTies) {
  std::vector<ScoreRow> rows(3);
  rows[0].participant_id = "x";
  rows[1].participant_id = "y";
  rows[2].participant_id = "z";
  for (auto& r : rows) r.eligible = true;
  rows[0].final_points = rows[1].final_points = Money::units(10);
  rows[2].final_points = Money::units(5);
  const auto lb = final_leaderboard(rows);
  EXPECT_EQ(lb.winners, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(*lb.entries[1].rank, 1);
  EXPECT_EQ(*lb.entries[2].rank, 3);
  const auto csv_text = leaderboard_csv(lb);
  EXPECT_EQ(csv_text.substr(0, csv_text.find('\n')),
            "rank,participant_id,part1_points,part2_provisional,part2_revoked,submitted,correct_rate,eligible,"
            "fp_count,penalty_factor,final_points,winner");
}

TEST(SubmissionCsv, ReadsQuotedAndUnquotedForms) {
  const auto s = read_submission_csv("\"ID\",\"predicted.response\"\n1,\"collude\"\n2,\"compete\"\n", "p");
  EXPECT_EQ(s.labels.at(1), Label::Suspicious);
  EXPECT_EQ(s.labels.at(2), Label::NonSuspicious);
  const auto t = read_submission_csv("ID,predicted.response\n1,collude\n2,compete\n", "p");
  EXPECT_EQ(t.labels, s.labels);
  EXPECT_EQ(read_submission_csv(write_submission_csv(s), "p").labels, s.labels);
  EXPECT_THROW(read_submission_csv("ID,predicted.response\n1,Collude\n", "p"), ValidationError);
  EXPECT_THROW(read_submission_csv("ID,response\n1,collude\n", "p"), ValidationError);
  EXPECT_THROW(read_submission_csv("ID,predicted.response\n1,collude\n1,compete\n", "p"), ValidationError);
}
