#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "money.hpp"
#include "rng.hpp"

namespace cartelgame {

// ---------------------------------------------------------------------------
// Enumerations of the cost table

enum class Village { North = 0, East = 1, South = 2, West = 3 };
enum class ContractType { Road = 0, Railway = 1, Bus = 2, Civil = 3 };
enum class Situation { A = 0, B = 1, C = 2, D = 3 };

inline constexpr int kMaxSeats = 4;
inline constexpr int kParts = 2;
inline constexpr int kYears = 4;
inline constexpr int kRounds = 4;
inline constexpr int kTendersPerGroup = kParts * kYears * kRounds;
inline constexpr int kMinFixedCost = 50;
inline constexpr int kMaxFixedCost = 100;

namespace detail {
template <typename E>
int checked_index(E e, const char* what) {
  const int i = static_cast<int>(e);
  if (i < 0 || i > 3) throw DomainError(std::string("unknown ") + what + " value " + std::to_string(i));
  return i;
}

inline int checked_seat(int seat) {
  if (seat < 1 || seat > kMaxSeats) throw DomainError("seat must be 1..4, got " + std::to_string(seat));
  return seat - 1;
}
}  // namespace detail

inline std::string_view to_string(Village v) {
  static constexpr std::array<std::string_view, 4> names{"North", "East", "South", "West"};
  return names[detail::checked_index(v, "village")];
}
inline std::string_view to_string(ContractType c) {
  static constexpr std::array<std::string_view, 4> names{"road", "railway", "bus", "civil"};
  return names[detail::checked_index(c, "contract type")];
}
inline std::string_view to_string(Situation s) {
  static constexpr std::array<std::string_view, 4> names{"A", "B", "C", "D"};
  return names[detail::checked_index(s, "capacity situation")];
}

inline Village parse_village(std::string_view s) {
  for (int i = 0; i < 4; ++i)
    if (to_string(static_cast<Village>(i)) == s) return static_cast<Village>(i);
  throw DomainError("unknown village '" + std::string(s) + "'");
}
inline ContractType parse_contract(std::string_view s) {
  for (int i = 0; i < 4; ++i)
    if (to_string(static_cast<ContractType>(i)) == s) return static_cast<ContractType>(i);
  throw DomainError("unknown contract type '" + std::string(s) + "'");
}
inline Situation parse_situation(std::string_view s) {
  for (int i = 0; i < 4; ++i)
    if (to_string(static_cast<Situation>(i)) == s) return static_cast<Situation>(i);
  throw DomainError("unknown capacity situation '" + std::string(s) + "'");
}

// Firm k is based in the k-th village (1 = North ... 4 = West).
inline Village home_village(int seat) { return static_cast<Village>(detail::checked_seat(seat)); }

// ---------------------------------------------------------------------------
// Cost model

// Surcharges in percentage points of the fixed cost, indexed [row][seat-1].
struct CostTable {
  using Rows = std::array<std::array<int, 4>, 4>;

  static constexpr Rows distance_pct{{
      {0, 5, 15, 10},   // North
      {5, 0, 10, 15},   // East
      {15, 10, 0, 5},   // South
      {10, 15, 5, 0},   // West
  }};
  static constexpr Rows capacity_pct{{
      {0, 1, 2, 3},  // A
      {3, 0, 1, 2},  // B
      {2, 3, 0, 1},  // C
      {1, 2, 3, 0},  // D
  }};
  static constexpr Rows contract_pct{{
      {0, 2, 4, 6},  // road
      {2, 0, 6, 4},  // railway
      {4, 6, 0, 2},  // bus
      {6, 4, 2, 0},  // civil
  }};

  static int distance(Village v, int seat) {
    return distance_pct[detail::checked_index(v, "village")][detail::checked_seat(seat)];
  }
  static int capacity(Situation s, int seat) {
    return capacity_pct[detail::checked_index(s, "capacity situation")][detail::checked_seat(seat)];
  }
  static int contract(ContractType c, int seat) {
    return contract_pct[detail::checked_index(c, "contract type")][detail::checked_seat(seat)];
  }
  static int total(Village v, Situation s, ContractType c, int seat) {
    return distance(v, seat) + capacity(s, seat) + contract(c, seat);
  }
};

// fixed_cost * (1 + distance% + capacity% + contract%), exact to the cent.
inline Money compute_cost(Money fixed_cost, int seat, Village location, Situation situation,
                          ContractType contract) {
  if (fixed_cost < Money::units(kMinFixedCost) || fixed_cost > Money::units(kMaxFixedCost))
    throw DomainError("fixed cost must lie in [50, 100], got " + fixed_cost.str());
  return fixed_cost.scaled_percent(100 + CostTable::total(location, situation, contract, seat));
}

// ---------------------------------------------------------------------------
// Group allocation

struct GroupAllocation {
  int class_size = 0;
  std::vector<int> groups;  // sizes, fours first
  std::optional<std::string> warning;

  int group_count() const { return static_cast<int>(groups.size()); }
};

// As many groups of four as possible; the rest in groups of three.
inline GroupAllocation allocate_groups(int class_size) {
  if (class_size < 3)
    throw UnallocatableError("class size " + std::to_string(class_size) + " is below the minimum group of 3");
  int fours = class_size / 4;
  while (fours >= 0 && (class_size - 4 * fours) % 3 != 0) --fours;
  if (fours < 0)
    throw UnallocatableError("class size " + std::to_string(class_size) +
                             " cannot be split into groups of 3 and 4");
  GroupAllocation a;
  a.class_size = class_size;
  a.groups.assign(static_cast<std::size_t>(fours), 4);
  a.groups.insert(a.groups.end(), static_cast<std::size_t>((class_size - 4 * fours) / 3), 3);
  if (class_size > 32)
    a.warning = "class size " + std::to_string(class_size) +
                " exceeds 32; consider splitting into two separate sessions";
  return a;
}

// ---------------------------------------------------------------------------
// Schedule

struct Tender {
  std::string id;
  int part = 1;
  int year = 1;
  int round = 1;
  int group = 1;
  Village location = Village::North;
  ContractType contract = ContractType::Road;
  Situation situation = Situation::A;
  Money fixed_cost;
};

inline std::string make_tender_id(int group, int part, int year, int round) {
  return "G" + std::to_string(group) + "-P" + std::to_string(part) + "-Y" + std::to_string(year) +
         "-R" + std::to_string(round);
}

// 32 tenders per group. Within each (group, part, year) the locations are a
// random permutation, while situations and contract types each follow an
// independent random cyclic rotation over the four rounds.
inline std::vector<Tender> generate_schedule(const GroupAllocation& allocation, std::uint64_t seed) {
  for (int size : allocation.groups)
    if (size != 3 && size != 4) throw DomainError("group sizes must be 3 or 4");
  Rng rng(derive_seed(seed, 1));
  std::vector<Tender> out;
  out.reserve(allocation.groups.size() * kTendersPerGroup);
  for (int g = 1; g <= allocation.group_count(); ++g) {
    for (int part = 1; part <= kParts; ++part) {
      for (int year = 1; year <= kYears; ++year) {
        std::vector<int> locations{0, 1, 2, 3};
        rng.shuffle(locations);
        const auto situation_offset = static_cast<int>(rng.below(4));
        const auto contract_offset = static_cast<int>(rng.below(4));
        for (int round = 1; round <= kRounds; ++round) {
          Tender t;
          t.id = make_tender_id(g, part, year, round);
          t.part = part;
          t.year = year;
          t.round = round;
          t.group = g;
          t.location = static_cast<Village>(locations[round - 1]);
          t.situation = static_cast<Situation>((round - 1 + situation_offset) % 4);
          t.contract = static_cast<ContractType>((round - 1 + contract_offset) % 4);
          t.fixed_cost = Money::units(rng.between(kMinFixedCost, kMaxFixedCost));
          out.push_back(std::move(t));
        }
      }
    }
  }
  return out;
}

inline std::string schedule_csv(const std::vector<Tender>& tenders) {
  std::ostringstream os;
  os << "group_id,part,year,round,location,contract_type,situation,fixed_cost\n";
  for (const auto& t : tenders) {
    os << t.group << ',' << t.part << ',' << t.year << ',' << t.round << ',' << to_string(t.location) << ','
       << to_string(t.contract) << ',' << to_string(t.situation) << ',' << t.fixed_cost.str() << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Bidding and awarding

struct BidRecord {
  std::string tender_id;
  int seat = 0;
  Money cost;
  Money bid;
  std::uint64_t submitted_at = 0;

  bool below_cost() const { return bid < cost; }
};

struct AwardResult {
  std::string tender_id;
  std::optional<int> winner_seat;  // empty when nobody bid
  Money winning_bid;
  Money winner_cost;
  Money margin;                  // winning bid - winner cost; may be negative
  std::vector<int> tied_seats;   // lowest bidders when more than one
  std::optional<std::uint64_t> tie_draw;  // index into tied_seats

  bool awarded() const { return winner_seat.has_value(); }
};

enum class TenderState { Scheduled, Open, Closed, Awarded };

inline std::string_view to_string(TenderState s) {
  switch (s) {
    case TenderState::Scheduled: return "scheduled";
    case TenderState::Open: return "open";
    case TenderState::Closed: return "closed";
    case TenderState::Awarded: return "awarded";
  }
  return "?";
}

struct PartTally {
  int group = 0;
  int part = 0;
  bool provisional = false;  // Part-2 points can still be revoked
  std::map<int, Money> points;
};

// Game state of one session's tenders: schedule, sealed bids and awards.
// Single writer; callers serialize mutations.
class Market {
public:
  Market(GroupAllocation allocation, std::uint64_t seed)
      : allocation_(std::move(allocation)),
        schedule_(generate_schedule(allocation_, seed)),
        tie_rng_(derive_seed(seed, 2)) {
    for (std::size_t i = 0; i < schedule_.size(); ++i) {
      index_.emplace(schedule_[i].id, i);
    }
    states_.assign(schedule_.size(), TenderState::Scheduled);
    bids_.resize(schedule_.size());
    awards_.resize(schedule_.size());
  }

  const GroupAllocation& allocation() const { return allocation_; }
  const std::vector<Tender>& schedule() const { return schedule_; }

  int group_size(int group) const {
    if (group < 1 || group > allocation_.group_count())
      throw DomainError("unknown group " + std::to_string(group));
    return allocation_.groups[static_cast<std::size_t>(group - 1)];
  }

  const Tender& tender(std::string_view id) const { return schedule_[slot(id)]; }
  TenderState state(std::string_view id) const { return states_[slot(id)]; }

  Money cost_of(const Tender& t, int seat) const {
    check_seat(t, seat);
    return compute_cost(t.fixed_cost, seat, t.location, t.situation, t.contract);
  }

  // Returns false when the tender was already open.
  bool open(std::string_view id) {
    auto& s = states_[slot(id)];
    if (s == TenderState::Open) return false;
    if (s != TenderState::Scheduled) throw ValidationError("tender " + std::string(id) + " is already closed");
    s = TenderState::Open;
    return true;
  }

  // Returns false when the tender was already closed or awarded.
  bool close(std::string_view id) {
    auto& s = states_[slot(id)];
    if (s == TenderState::Closed || s == TenderState::Awarded) return false;
    if (s != TenderState::Open) throw ValidationError("tender " + std::string(id) + " was never opened");
    s = TenderState::Closed;
    return true;
  }

  const BidRecord& submit_bid(std::string_view id, int seat, double amount, std::uint64_t at) {
    if (!std::isfinite(amount)) throw ValidationError("bid must be a finite number");
    return submit_bid(id, seat, Money::from_double(amount), at);
  }

  const BidRecord& submit_bid(std::string_view id, int seat, Money amount, std::uint64_t at) {
    const auto i = slot(id);
    const Tender& t = schedule_[i];
    check_seat(t, seat);
    if (states_[i] != TenderState::Open) throw ValidationError("tender " + t.id + " is not open for bidding");
    if (amount < Money{}) throw ValidationError("bid must be >= 0, got " + amount.str());
    for (const auto& b : bids_[i])
      if (b.seat == seat) throw ValidationError("duplicate bid by seat " + std::to_string(seat) + " on " + t.id);
    bids_[i].push_back(BidRecord{t.id, seat, cost_of(t, seat), amount, at});
    return bids_[i].back();
  }

  // Lowest bid wins; equal lowest bids are settled by a uniform draw from
  // the session's tie-break stream.
  const AwardResult& award(std::string_view id) {
    const auto i = slot(id);
    if (states_[i] == TenderState::Awarded) return *awards_[i];
    if (states_[i] != TenderState::Closed) throw StaleStateError("tender " + std::string(id) + " is still open");
    AwardResult r;
    r.tender_id = schedule_[i].id;
    const auto& bids = bids_[i];
    if (!bids.empty()) {
      Money lowest = bids.front().bid;
      for (const auto& b : bids) lowest = std::min(lowest, b.bid);
      std::vector<const BidRecord*> tied;
      for (const auto& b : bids)
        if (b.bid == lowest) tied.push_back(&b);
      std::sort(tied.begin(), tied.end(), [](auto* a, auto* b) { return a->seat < b->seat; });
      const BidRecord* winner = tied.front();
      if (tied.size() > 1) {
        for (auto* b : tied) r.tied_seats.push_back(b->seat);
        r.tie_draw = tie_rng_.below(tied.size());
        winner = tied[*r.tie_draw];
      }
      r.winner_seat = winner->seat;
      r.winning_bid = winner->bid;
      r.winner_cost = winner->cost;
      r.margin = winner->bid - winner->cost;
    }
    awards_[i] = std::move(r);
    states_[i] = TenderState::Awarded;
    return *awards_[i];
  }

  const AwardResult* award_of(std::string_view id) const {
    const auto& a = awards_[slot(id)];
    return a ? &*a : nullptr;
  }

  const std::vector<BidRecord>& bids_for(std::string_view id) const { return bids_[slot(id)]; }

  const BidRecord* bid_of(std::string_view id, int seat) const {
    for (const auto& b : bids_[slot(id)])
      if (b.seat == seat) return &b;
    return nullptr;
  }

  // Sum of margins over won tenders, per seat of the group.
  PartTally tally(int group, int part) const {
    const int size = group_size(group);
    if (part < 1 || part > kParts) throw DomainError("part must be 1 or 2");
    PartTally out{group, part, part == 2, {}};
    for (int s = 1; s <= size; ++s) out.points[s] = Money{};
    for (std::size_t i = 0; i < schedule_.size(); ++i) {
      const auto& t = schedule_[i];
      if (t.group != group || t.part != part) continue;
      if (!awards_[i]) throw StaleStateError("tender " + t.id + " has not been awarded");
      if (awards_[i]->winner_seat) out.points[*awards_[i]->winner_seat] += awards_[i]->margin;
    }
    return out;
  }

private:
  std::size_t slot(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw DomainError("unknown tender '" + std::string(id) + "'");
    return it->second;
  }

  void check_seat(const Tender& t, int seat) const {
    if (seat < 1 || seat > group_size(t.group))
      throw DomainError("seat " + std::to_string(seat) + " is not part of group " + std::to_string(t.group));
  }

  GroupAllocation allocation_;
  std::vector<Tender> schedule_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<TenderState> states_;
  std::vector<std::vector<BidRecord>> bids_;
  std::vector<std::optional<AwardResult>> awards_;
  Rng tie_rng_;
};

}  // namespace cartelgame
