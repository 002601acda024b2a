#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace biasaudit {

std::string read_text_file(const std::filesystem::path& path);

// Lines split on '\n'; a trailing '\r' is stripped, a trailing empty line is
// dropped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it into place, so a concurrent
// reader never observes a partially written file.
void atomic_write_text(const std::filesystem::path& path, const std::string& content);

// Flat little-endian float32 array files used by embedding banks.
void write_f32_array(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_f32_array(const std::filesystem::path& path);

std::string hex64(std::uint64_t value);

}  // namespace biasaudit
