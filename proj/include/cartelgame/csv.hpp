#pragma once

#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace cartelgame::csv {

struct Table {
  char delimiter = ',';
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  // Index of a named column, or nullopt.
  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
};

// Splits one record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_line(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

// ';' wins if the header has any semicolon outside quotes, otherwise ','.
inline char sniff_delimiter(std::string_view header_line) {
  bool quoted = false;
  for (char c : header_line) {
    if (c == '"') quoted = !quoted;
    if (!quoted && c == ';') return ';';
  }
  return ',';
}

inline Table parse(std::string_view text, std::optional<char> delimiter = std::nullopt) {
  Table t;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool have_header = false;
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") pos = 3;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (!have_header) {
      t.delimiter = delimiter.value_or(sniff_delimiter(line));
      t.header = split_line(line, t.delimiter);
      have_header = true;
    } else {
      t.rows.push_back(split_line(line, t.delimiter));
      t.line_numbers.push_back(line_no);
    }
    if (end == text.size()) break;
  }
  if (!have_header) throw ValidationError("CSV input is empty");
  return t;
}

inline bool is_missing(std::string_view field) {
  return field.empty() || field == "NA" || field == "NaN" || field == "nan";
}

// Parses a real; missing markers become NaN.
inline double parse_real(std::string_view field, std::size_t line_no, std::string_view column) {
  if (is_missing(field)) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* first = field.data();
  if (!field.empty() && field.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw ValidationError("line " + std::to_string(line_no) + ": column " + std::string(column) +
                          " is not a number: '" + std::string(field) + "'");
  }
  return v;
}

// Shortest text that reads back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_real(*v) : std::string();
}

inline std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// Quotes only when the field contains a delimiter, quote, or newline.
inline std::string escape(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  return quote(s);
}

// Throws one ValidationError listing the first problems found.
inline void throw_collected(const std::vector<std::string>& problems) {
  if (problems.empty()) return;
  std::string msg;
  const std::size_t shown = std::min<std::size_t>(problems.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) msg += (i ? "; " : "") + problems[i];
  if (problems.size() > shown) msg += "; ... (" + std::to_string(problems.size() - shown) + " more)";
  throw ValidationError(msg);
}
}  // namespace cartelgame::csv
