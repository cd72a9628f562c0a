#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace organsim {

// Rounds to at most `max_decimals` and prints the shortest decimal form that
// keeps at least one fractional digit: 7.29 -> "7.29", 46 -> "46.0".
std::string format_value(double v, int max_decimals);

// Fixed number of decimals: format_fixed(35, 3) -> "35.000".
std::string format_fixed(double v, int decimals);

// Like format_value but drops a zero fraction: 10.0 -> "10", 9.5 -> "9.5".
std::string format_compact(double v, int max_decimals = 2);

double round_to(double v, int decimals);

// Strict parse of a complete decimal literal (leading/trailing blanks allowed).
std::optional<double> parse_number(std::string_view text);
std::optional<long long> parse_integer(std::string_view text);

std::string_view trim(std::string_view s);
std::string_view trim_right(std::string_view s);
std::vector<std::string_view> split_lines(std::string_view text);

// Greedy word wrap at `width` columns (indent included). Wrapped lines keep
// their trailing blank, matching the prompt figures; the last line keeps one
// only if `text` ends with a blank.
std::vector<std::string> wrap_words(std::string_view text, std::string_view indent,
                                    std::size_t width);

}  // namespace organsim
