#pragma once

// On-disk dataset layout:
//
//   <root>/<split>/<video_id>/frames/NNNNN.png
//   <root>/<split>/<video_id>/maps/NNNNN.png
//   <root>/<split>/<video_id>/fixations/NNNNN.png
//
// File numbers are 1-based; in memory, frame indices are 0-based.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace salfom::layout {

inline constexpr const char* kFramesDir = "frames";
inline constexpr const char* kMapsDir = "maps";
inline constexpr const char* kFixationsDir = "fixations";
inline constexpr const char* kMetaFile = "meta.json";

std::string frame_file_name(std::int64_t index);
// 0-based index of "NNNNN.png", or nullopt for anything else.
std::optional<std::int64_t> parse_frame_file_name(const std::filesystem::path& path);
// Frame files of a directory sorted by index; empty when the directory is missing.
std::vector<std::pair<std::int64_t, std::filesystem::path>> list_frame_files(const std::filesystem::path& dir);
// Immediate subdirectories, sorted by name.
std::vector<std::string> list_subdirectories(const std::filesystem::path& dir);

}  // namespace salfom::layout
