#pragma once

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "money.hpp"
#include "screens.hpp"

namespace cartelgame {

enum class Label { NonSuspicious = 0, Suspicious = 1 };

inline std::string_view response_text(Label l) { return l == Label::Suspicious ? "collude" : "compete"; }

inline Label parse_response(std::string_view s) {
  if (s == "collude") return Label::Suspicious;
  if (s == "compete") return Label::NonSuspicious;
  throw ValidationError("response must be \"collude\" or \"compete\", got '" + std::string(s) + "'");
}

struct StaffSubmission {
  std::string participant_id;
  std::map<int, Label> labels;  // pooled tender ID -> label
};

// Rejects maps that miss pooled IDs or name unknown ones.
inline void validate_submission(const StaffSubmission& s, const std::set<int>& pool) {
  std::vector<std::string> problems;
  std::string missing, unknown;
  std::size_t n_missing = 0;
  for (int id : pool) {
    if (!s.labels.contains(id)) {
      missing += (n_missing++ ? "," : "") + std::to_string(id);
    }
  }
  std::size_t n_unknown = 0;
  for (const auto& [id, label] : s.labels) {
    if (!pool.contains(id)) unknown += (n_unknown++ ? "," : "") + std::to_string(id);
  }
  if (n_missing) problems.push_back(std::to_string(n_missing) + " missing ID(s): " + missing);
  if (n_unknown) problems.push_back("unknown ID(s): " + unknown);
  if (!problems.empty()) throw BlockedError("submission from " + s.participant_id + " rejected", problems);
}

// One submission per participant; a resubmission replaces the earlier one.
class SubmissionBook {
public:
  SubmissionBook() = default;
  explicit SubmissionBook(std::set<int> pool) : pool_(std::move(pool)) {}

  // Returns true when an earlier submission was replaced.
  bool record(StaffSubmission s) {
    validate_submission(s, pool_);
    auto [it, inserted] = subs_.insert_or_assign(s.participant_id, std::move(s));
    return !inserted;
  }

  const std::set<int>& pool() const { return pool_; }
  const std::map<std::string, StaffSubmission>& submissions() const { return subs_; }

  std::vector<StaffSubmission> list() const {
    std::vector<StaffSubmission> out;
    for (const auto& [_, s] : subs_) out.push_back(s);
    return out;
  }

private:
  std::set<int> pool_;
  std::map<std::string, StaffSubmission> subs_;
};

// ---------------------------------------------------------------------------
// Consensus and revocation

inline constexpr int kConsensusNumerator = 3;  // 75 percent, boundary inclusive
inline constexpr int kConsensusDenominator = 4;

struct ConsensusReport {
  int submissions = 0;
  std::map<int, int> votes;        // suspicious votes per ID
  std::map<int, double> fraction;  // votes / submissions
  std::set<int> unequivocal;
};

inline ConsensusReport compute_consensus(std::span<const StaffSubmission> submissions) {
  if (submissions.empty()) throw ValidationError("consensus needs at least one submission");
  ConsensusReport r;
  r.submissions = static_cast<int>(submissions.size());
  for (const auto& s : submissions) {
    for (const auto& [id, label] : s.labels) r.votes[id] += label == Label::Suspicious ? 1 : 0;
  }
  for (const auto& [id, v] : r.votes) {
    r.fraction[id] = static_cast<double>(v) / r.submissions;
    // integer comparison keeps 3/4 and 9/12 exactly on the boundary
    if (v * kConsensusDenominator >= r.submissions * kConsensusNumerator) r.unequivocal.insert(id);
  }
  return r;
}

// One awarded tender as seen by the scoring step.
struct AwardRecord {
  std::string tender_id;
  int part = 1;
  std::string winner;  // participant id
  Money margin;
};

// Points taken back per participant. Only unequivocal tenders that came from
// Part 2 are revoked; a negative margin is left in place, so revocation
// never raises anyone's total.
inline std::map<std::string, Money> apply_revocations(const ConsensusReport& consensus,
                                                      const std::map<int, TruthEntry>& truth,
                                                      const std::vector<AwardRecord>& awards) {
  std::map<std::string, const AwardRecord*> by_tender;
  for (const auto& a : awards) by_tender[a.tender_id] = &a;
  std::map<std::string, Money> revoked;
  for (const auto& a : awards) revoked.try_emplace(a.winner, Money{});
  for (int id : consensus.unequivocal) {
    auto t = truth.find(id);
    if (t == truth.end() || t->second.part != 2) continue;
    auto a = by_tender.find(t->second.tender_id);
    if (a == by_tender.end()) continue;
    if (a->second->margin > Money{}) revoked[a->second->winner] += a->second->margin;
  }
  return revoked;
}

// ---------------------------------------------------------------------------
// Scoring

inline constexpr int kPenaltyPercentPerFalsePositive = 5;

inline int penalty_percent(int false_positives) {
  return std::max(0, 100 - kPenaltyPercentPerFalsePositive * false_positives);
}

struct ParticipantPoints {
  std::string participant_id;
  Money part1;
  Money part2;  // provisional
};

struct ScoreRow {
  std::string participant_id;
  Money part1_points;
  Money part2_provisional;
  Money part2_revoked;
  bool submitted = false;
  int correct = 0;
  int pooled = 0;
  bool eligible = false;
  int fp_count = 0;
  int penalty_pct = 100;
  Money final_points;

  double correct_rate() const { return pooled ? static_cast<double>(correct) / pooled : 0.0; }
  double penalty_factor() const { return penalty_pct / 100.0; }
};

struct Grading {
  int correct = 0;
  int false_positives = 0;
};

inline Grading grade(const StaffSubmission& s, const std::map<int, TruthEntry>& truth) {
  Grading g;
  for (const auto& [id, t] : truth) {
    auto it = s.labels.find(id);
    if (it == s.labels.end()) continue;
    const bool said_suspicious = it->second == Label::Suspicious;
    if (said_suspicious == t.suspicious()) ++g.correct;
    if (said_suspicious && !t.suspicious()) ++g.false_positives;
  }
  return g;
}

// Twice the median of the correct counts (integer, so "meet or surpass" is exact).
inline std::optional<long> twice_median(std::vector<int> correct) {
  if (correct.empty()) return std::nullopt;
  std::sort(correct.begin(), correct.end());
  const auto n = correct.size();
  if (n % 2 == 1) return 2L * correct[n / 2];
  return static_cast<long>(correct[n / 2 - 1]) + correct[n / 2];
}

// One scoreboard row. Revocations are taken off before the false-positive
// penalty is applied as a single factor; the result is floored at zero.
inline ScoreRow score_participant(const ParticipantPoints& points, Money revoked, const StaffSubmission* submission,
                                  const std::map<int, TruthEntry>& truth, std::optional<long> median_x2) {
  ScoreRow row;
  row.participant_id = points.participant_id;
  row.part1_points = points.part1;
  row.part2_provisional = points.part2;
  row.part2_revoked = revoked;
  row.pooled = static_cast<int>(truth.size());
  if (submission) {
    const auto g = grade(*submission, truth);
    row.submitted = true;
    row.correct = g.correct;
    row.fp_count = g.false_positives;
    row.penalty_pct = penalty_percent(g.false_positives);
    row.eligible = median_x2 && 2L * g.correct >= *median_x2;
  }
  const Money base = points.part1 + points.part2 - revoked;
  row.final_points = std::max(Money{}, base.scaled_percent(row.penalty_pct));
  return row;
}

// Scores everyone. Non-submitters stay on the board but are ineligible,
// unpenalized, and do not count towards consensus or the median.
inline std::vector<ScoreRow> score_all(const std::vector<ParticipantPoints>& participants,
                                       const std::vector<AwardRecord>& awards,
                                       const std::map<int, TruthEntry>& truth,
                                       const std::map<std::string, StaffSubmission>& submissions) {
  std::vector<StaffSubmission> subs;
  std::vector<int> correct;
  for (const auto& [_, s] : submissions) {
    subs.push_back(s);
    correct.push_back(grade(s, truth).correct);
  }
  std::map<std::string, Money> revoked;
  if (!subs.empty()) revoked = apply_revocations(compute_consensus(subs), truth, awards);
  const auto median = twice_median(correct);
  std::vector<ScoreRow> rows;
  for (const auto& p : participants) {
    auto s = submissions.find(p.participant_id);
    auto r = revoked.find(p.participant_id);
    rows.push_back(score_participant(p, r == revoked.end() ? Money{} : r->second,
                                     s == submissions.end() ? nullptr : &s->second, truth, median));
  }
  return rows;
}

struct LeaderboardEntry {
  ScoreRow row;
  std::optional<int> rank;  // eligible participants only
  bool winner = false;
};

struct Leaderboard {
  std::vector<LeaderboardEntry> entries;
  std::vector<std::string> winners;
};

// Eligible participants by final points (descending), then the ineligible
// ones. Everyone tied at the top of the eligible list wins.
inline Leaderboard final_leaderboard(std::vector<ScoreRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ScoreRow& a, const ScoreRow& b) {
    if (a.eligible != b.eligible) return a.eligible;
    if (a.final_points != b.final_points) return a.final_points > b.final_points;
    return a.participant_id < b.participant_id;
  });
  Leaderboard lb;
  int rank = 0;
  std::optional<Money> top;
  Money previous;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    LeaderboardEntry e{rows[i], std::nullopt, false};
    if (rows[i].eligible) {
      if (i == 0 || rows[i].final_points != previous) rank = static_cast<int>(i) + 1;
      previous = rows[i].final_points;
      e.rank = rank;
      if (!top) top = rows[i].final_points;
      if (rows[i].final_points == *top) {
        e.winner = true;
        lb.winners.push_back(rows[i].participant_id);
      }
    }
    lb.entries.push_back(std::move(e));
  }
  return lb;
}

inline std::string leaderboard_csv(const Leaderboard& lb) {
  std::ostringstream os;
  os << "rank,participant_id,part1_points,part2_provisional,part2_revoked,submitted,correct_rate,eligible,"
        "fp_count,penalty_factor,final_points,winner\n";
  for (const auto& e : lb.entries) {
    const auto& r = e.row;
    os << (e.rank ? std::to_string(*e.rank) : std::string()) << ',' << csv::escape(r.participant_id) << ','
       << r.part1_points.str() << ',' << r.part2_provisional.str() << ',' << r.part2_revoked.str() << ','
       << (r.submitted ? 1 : 0) << ',' << csv::format_real(r.correct_rate()) << ',' << (r.eligible ? 1 : 0) << ','
       << r.fp_count << ',' << csv::format_real(r.penalty_factor()) << ',' << r.final_points.str() << ','
       << (e.winner ? 1 : 0) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Submission CSV: ID,predicted.response with "collude"/"compete". Quoted
// (as R's write.csv produces) and unquoted forms are both read.

inline StaffSubmission read_submission_csv(std::string_view text, std::string participant_id) {
  const auto t = csv::parse(text, ',');
  const auto id_col = t.column("ID");
  const auto resp_col = t.column("predicted.response");
  if (!id_col || !resp_col) throw ValidationError("submission header must contain ID and predicted.response");
  StaffSubmission s{std::move(participant_id), {}};
  std::vector<std::string> problems;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto line = std::to_string(t.line_numbers[r]);
    if (row.size() != t.header.size()) {
      problems.push_back("line " + line + ": wrong field count");
      continue;
    }
    int id = 0;
    auto [p, ec] = std::from_chars(row[*id_col].data(), row[*id_col].data() + row[*id_col].size(), id);
    if (ec != std::errc() || p != row[*id_col].data() + row[*id_col].size()) {
      problems.push_back("line " + line + ": bad ID '" + row[*id_col] + "'");
      continue;
    }
    try {
      if (!s.labels.emplace(id, parse_response(row[*resp_col])).second)
        problems.push_back("line " + line + ": duplicate ID " + std::to_string(id));
    } catch (const ValidationError& e) {
      problems.push_back("line " + line + ": " + e.what());
    }
  }
  csv::throw_collected(problems);
  return s;
}

inline std::string write_submission_csv(const StaffSubmission& s) {
  std::ostringstream os;
  os << "\"ID\",\"predicted.response\"\n";
  for (const auto& [id, label] : s.labels) os << id << ",\"" << response_text(label) << "\"\n";
  return os.str();
}

inline std::string submissions_csv(const std::map<std::string, StaffSubmission>& subs) {
  std::ostringstream os;
  os << "participant_id,ID,predicted.response\n";
  for (const auto& [pid, s] : subs)
    for (const auto& [id, label] : s.labels) os << csv::escape(pid) << ',' << id << ',' << response_text(label) << '\n';
  return os.str();
}

}  // namespace cartelgame
