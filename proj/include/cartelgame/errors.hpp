#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cartelgame {

// Base of every error the library throws on a rejected command or bad input.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// An argument outside its enumeration or numeric domain.
class DomainError : public Error {
public:
  using Error::Error;
};

// Input that is well-formed but violates a rule (duplicate bid, bad CSV row...).
class ValidationError : public Error {
public:
  using Error::Error;
};

// Class size that cannot be split into groups of three and four.
class UnallocatableError : public Error {
public:
  using Error::Error;
};

// An operation that needs data from a step that has not finished yet.
class StaleStateError : public Error {
public:
  using Error::Error;
};

// A request refused by the current phase; carries the list of blockers.
class BlockedError : public Error {
public:
  BlockedError(const std::string& what, std::vector<std::string> blockers)
      : Error(what + describe(blockers)), summary_(what), blockers_(std::move(blockers)) {}

  const std::string& summary() const noexcept { return summary_; }
  const std::vector<std::string>& blockers() const noexcept { return blockers_; }

private:
  static std::string describe(const std::vector<std::string>& blockers) {
    std::string out;
    for (std::size_t i = 0; i < blockers.size(); ++i) {
      out += (i == 0 ? ": " : "; ");
      out += blockers[i];
    }
    return out;
  }

  std::string summary_;
  std::vector<std::string> blockers_;
};

// Caller lacks the role or phase needed to see a resource.
class AccessError : public Error {
public:
  using Error::Error;
};

}  // namespace cartelgame
