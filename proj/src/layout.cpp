#include "salfom/layout.hpp"

#include <algorithm>
#include <cstdio>

namespace salfom::layout {

std::string frame_file_name(std::int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05lld.png", static_cast<long long>(index + 1));
    return buf;
}

std::optional<std::int64_t> parse_frame_file_name(const std::filesystem::path& path) {
    if (path.extension() != ".png") return std::nullopt;
    const std::string stem = path.stem().string();
    if (stem.size() < 5 || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        return std::nullopt;
    }
    const auto number = std::stoll(stem);
    if (number < 1) return std::nullopt;
    return number - 1;
}

std::vector<std::pair<std::int64_t, std::filesystem::path>> list_frame_files(const std::filesystem::path& dir) {
    std::vector<std::pair<std::int64_t, std::filesystem::path>> files;
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) return files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        if (auto idx = parse_frame_file_name(entry.path())) files.emplace_back(*idx, entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<std::string> list_subdirectories(const std::filesystem::path& dir) {
    std::vector<std::string> names;
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) return names;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_directory()) names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace salfom::layout
