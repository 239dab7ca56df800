#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace schemadapt::csv {

// One parsed record plus the 1-based line it started on.
struct Record {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

// RFC-4180 reader: quoted fields, doubled quotes, embedded newlines, CRLF or LF.
// Throws ParseError on an unterminated quote.
std::vector<Record> parse(std::string_view text);

// Quotes a field only when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);
std::string format_row(const std::vector<std::string>& fields);

}  // namespace schemadapt::csv
