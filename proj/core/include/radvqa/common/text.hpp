#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace radvqa::text {

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);

/// Splits on ASCII whitespace, dropping empty pieces.
std::vector<std::string> split_ws(std::string_view s);

/// Lowercased alphanumeric word runs (apostrophes and hyphens split words).
std::vector<std::string> words(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Decodes UTF-8 into code points; invalid bytes decode as U+FFFD.
std::vector<char32_t> utf8_decode(std::string_view s);
void utf8_append(std::string& out, char32_t cp);

bool is_unicode_space(char32_t cp);
bool is_punctuation(char32_t cp);

/// Reads a whole file; throws radvqa::DataError when unreadable.
std::string read_file(const std::string& path);
/// Writes atomically (temp file + rename), creating parent directories.
void write_file(const std::string& path, std::string_view contents);

}  // namespace radvqa::text
