#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ppaml::csv {

/// Splits one CSV record. Fields may be double-quoted; a doubled quote inside
/// a quoted field is a literal quote. Returns nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_record(std::string_view line, char delim = ',');

/// Quotes a field only when it contains a delimiter, quote or newline.
std::string escape(std::string_view field, char delim = ',');

/// Reads the next line, stripping a trailing '\r'. Returns false at EOF.
bool read_line(std::istream& in, std::string& line);

std::string join(const std::vector<std::string>& fields, char delim = ',');

} // namespace ppaml::csv
