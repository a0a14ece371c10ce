#pragma once

#include <cstdint>
#include <vector>

namespace salfom {

// H x W nonnegative predicted map, row-major.
struct SaliencyMap {
    std::int64_t height = 0, width = 0;
    std::vector<double> data;
    bool normalized = false;  // entries sum to 1 when set

    std::int64_t size() const { return height * width; }
    double at(std::int64_t y, std::int64_t x) const { return data[y * width + x]; }
    // finite, nonnegative, and summing to 1 within 1e-6 when normalized
    void validate() const;
};

// Continuous fixation-density map.
struct GroundTruthMap {
    std::int64_t height = 0, width = 0;
    std::vector<double> data;

    std::int64_t size() const { return height * width; }
    // finite, nonnegative and not all zero
    void validate() const;
};

struct FixationMap {
    std::int64_t height = 0, width = 0;
    std::vector<std::uint8_t> data;  // 1 at fixated pixels
    std::int64_t fixation_count = 0;

    static FixationMap from_mask(std::int64_t height, std::int64_t width, std::vector<std::uint8_t> mask);
    static FixationMap from_points(std::int64_t height, std::int64_t width,
                                   const std::vector<std::pair<std::int64_t, std::int64_t>>& yx);
    std::int64_t size() const { return height * width; }
    std::vector<std::int64_t> fixated_indices() const;
};

// Bilinear (half-pixel) resize of a row-major single-channel map.
std::vector<double> resize_map(const std::vector<double>& src, std::int64_t src_h, std::int64_t src_w,
                               std::int64_t dst_h, std::int64_t dst_w);

}  // namespace salfom
