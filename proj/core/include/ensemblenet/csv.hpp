#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace enet::csv {

std::vector<std::string> split(std::string_view line, char sep = ',');

/// Shortest decimal text that parses back to exactly `v`.
std::string format(double v);

double parse_double(std::string_view s);
long long parse_int(std::string_view s);

/// Reads the next non-empty line that does not start with '#'.
bool next_row(std::istream& is, std::vector<std::string>& fields);

}  // namespace enet::csv
