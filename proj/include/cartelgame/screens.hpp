#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "money.hpp"
#include "rng.hpp"

namespace cartelgame {

// Bids of one tender, kept sorted ascending (lowest first).
class BidVector {
public:
  explicit BidVector(std::vector<double> bids, std::string tender_id = {})
      : bids_(std::move(bids)), tender_id_(std::move(tender_id)) {
    if (bids_.size() < 2) throw DomainError("a screen needs at least two bids");
    for (double b : bids_)
      if (!std::isfinite(b) || b <= 0.0) throw DomainError("bids must be finite and positive");
    // stable: equal bids keep their submission order
    std::stable_sort(bids_.begin(), bids_.end());
  }

  std::size_t size() const { return bids_.size(); }
  double operator[](std::size_t rank) const { return bids_[rank]; }
  double lowest() const { return bids_.front(); }
  double second() const { return bids_[1]; }
  double highest() const { return bids_.back(); }
  std::span<const double> sorted() const { return bids_; }
  const std::string& tender_id() const { return tender_id_; }

private:
  std::vector<double> bids_;
  std::string tender_id_;
};

namespace detail {
inline double mean(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Sample standard deviation (n - 1 divisor).
inline double sample_sd(std::span<const double> xs) {
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}
}  // namespace detail

// Coefficient of variation: sd / mean.
inline double cv(const BidVector& b) { return detail::sample_sd(b.sorted()) / detail::mean(b.sorted()); }

// Spread: (highest - lowest) / lowest.
inline double spd(const BidVector& b) { return (b.highest() - b.lowest()) / b.lowest(); }

// Relative gap between the two lowest bids.
inline double diffp(const BidVector& b) { return (b.second() - b.lowest()) / b.lowest(); }

// Gap between the two lowest bids over the sd of the losing bids. Missing
// with fewer than two losing bids or when the losing bids are all equal.
inline std::optional<double> rd(const BidVector& b) {
  if (b.size() < 3) return std::nullopt;
  const double sd_losing = detail::sample_sd(b.sorted().subspan(1));
  if (sd_losing == 0.0) return std::nullopt;
  return (b.second() - b.lowest()) / sd_losing;
}

// Gap between the two lowest bids over the mean gap between adjacent bids.
// Missing when all bids are equal.
inline std::optional<double> rdnorm(const BidVector& b) {
  const auto s = b.sorted();
  double gaps = 0.0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) gaps += s[i + 1] - s[i];
  const double mean_gap = gaps / static_cast<double>(s.size() - 1);
  if (mean_gap == 0.0) return std::nullopt;
  return (b.second() - b.lowest()) / mean_gap;
}

struct ScreenValues {
  std::optional<double> spd, cv, rd, rdnorm, diffp;
};

// All five screens for a raw bid list. Degenerate inputs (fewer than two
// bids, zero lowest bid) leave the affected screens missing instead of
// throwing, so a whole dataset can still be prepared.
inline ScreenValues compute_screens(std::span<const double> bids) {
  ScreenValues v;
  if (bids.size() < 2) return v;
  std::vector<double> sorted(bids.begin(), bids.end());
  std::stable_sort(sorted.begin(), sorted.end());
  if (sorted.front() > 0.0) {
    const BidVector bv(sorted);
    v.spd = spd(bv);
    v.cv = cv(bv);
    v.diffp = diffp(bv);
    v.rd = rd(bv);
    v.rdnorm = rdnorm(bv);
    return v;
  }
  // lowest bid of zero: the ratios against b_1 are undefined
  const double m = detail::mean(sorted);
  if (m > 0.0) v.cv = detail::sample_sd(sorted) / m;
  if (sorted.size() >= 3) {
    const double sd_losing = detail::sample_sd(std::span<const double>(sorted).subspan(1));
    if (sd_losing > 0.0) v.rd = (sorted[1] - sorted[0]) / sd_losing;
  }
  if (sorted.back() > sorted.front())
    v.rdnorm = (sorted[1] - sorted[0]) * static_cast<double>(sorted.size() - 1) / (sorted.back() - sorted.front());
  return v;
}

// ---------------------------------------------------------------------------
// Part-3 dataset

inline constexpr int kMaxRankedBids = 4;

struct ScreenRow {
  int id = 0;
  ScreenValues screens;
  std::array<std::optional<Money>, kMaxRankedBids> ranked_bids;  // lowest first
};

// Where an anonymized row came from. Part 1 rows are competitive, Part 2
// rows collusive.
struct TruthEntry {
  std::string tender_id;
  int part = 0;

  bool suspicious() const { return part == 2; }
};

struct TenderBids {
  Tender tender;
  std::vector<Money> bids;  // submission order
  bool awarded = false;
};

struct Part3Dataset {
  std::vector<ScreenRow> rows;            // ordered by id
  std::map<int, TruthEntry> truth;        // sealed: lecturer/debrief only
  std::vector<std::string> excluded;      // tenders with fewer than two bids
};

// Shuffles the pooled tenders with the anonymization seed and numbers them
// 1..N in shuffled order. Tenders with fewer than two bids carry no screen
// information and are left out of the pool.
inline Part3Dataset prepare_part3_dataset(const std::vector<TenderBids>& tenders, std::uint64_t seed) {
  std::vector<const TenderBids*> pool;
  Part3Dataset out;
  for (const auto& t : tenders) {
    if (!t.awarded) throw StaleStateError("tender " + t.tender.id + " has not been awarded");
    if (t.bids.size() > static_cast<std::size_t>(kMaxRankedBids))
      throw ValidationError("tender " + t.tender.id + " has more than four bids");
    if (t.bids.size() < 2) {
      out.excluded.push_back(t.tender.id);
      continue;
    }
    pool.push_back(&t);
  }
  Rng rng(derive_seed(seed, 3));
  rng.shuffle(pool);
  int next_id = 1;
  for (const TenderBids* t : pool) {
    ScreenRow row;
    row.id = next_id++;
    std::vector<double> values;
    for (Money m : t->bids) values.push_back(m.to_double());
    row.screens = compute_screens(values);
    std::vector<Money> ranked = t->bids;
    std::stable_sort(ranked.begin(), ranked.end());
    for (std::size_t r = 0; r < ranked.size(); ++r) row.ranked_bids[r] = ranked[r];
    out.truth.emplace(row.id, TruthEntry{t->tender.id, t->tender.part});
    out.rows.push_back(std::move(row));
  }
  return out;
}

inline std::string part3_dataset_csv(const std::vector<ScreenRow>& rows) {
  std::ostringstream os;
  os << "ID,SPD,CV,RD,RDNORM,DIFFP,Bid_1,Bid_2,Bid_3,Bid_4\n";
  for (const auto& r : rows) {
    const auto& s = r.screens;
    os << r.id << ',' << csv::format_optional(s.spd) << ',' << csv::format_optional(s.cv) << ','
       << csv::format_optional(s.rd) << ',' << csv::format_optional(s.rdnorm) << ','
       << csv::format_optional(s.diffp);
    for (const auto& b : r.ranked_bids) os << ',' << (b ? b->str() : std::string());
    os << '\n';
  }
  return os.str();
}

inline std::string truth_csv(const std::map<int, TruthEntry>& truth) {
  std::ostringstream os;
  os << "ID,tender_id,part,cartel\n";
  for (const auto& [id, t] : truth) os << id << ',' << t.tender_id << ',' << t.part << ',' << (t.suspicious() ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace cartelgame
