#pragma once
// Small shared helpers: stable hashing, text normalization, file IO.

#include <cstdint>
#include <string>
#include <vector>

namespace kgf {

uint64_t fnv1a64(const std::string& data);
std::string hex64(uint64_t value);

std::string to_lower(const std::string& s);
// Lowercase + collapse runs of whitespace to single spaces + trim ends.
std::string normalize_text(const std::string& s);
// normalize_text, then split on non-alphanumeric boundaries.
std::vector<std::string> tokenize(const std::string& s);

std::vector<std::string> split(const std::string& s, char sep);

std::string read_file(const std::string& path);
// Writes to path + ".tmp" then renames, so readers never see partial content.
void write_file_atomic(const std::string& path, const std::string& content);

bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

}  // namespace kgf
