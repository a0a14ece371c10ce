#pragma once

// PNG reading and writing.  Pixel values are exchanged as doubles in [0, 1].

#include <cstdint>
#include <filesystem>
#include <vector>

#include "salfom/maps.hpp"

namespace salfom::image {

struct Image {
    std::int64_t height = 0, width = 0, channels = 0;
    std::vector<double> data;  // row-major, interleaved channels (RGB order)
};

// Throws IoError naming the file when it cannot be decoded.
Image read_rgb(const std::filesystem::path& path);
Image read_gray(const std::filesystem::path& path);
GroundTruthMap read_density(const std::filesystem::path& path);
// Any nonzero pixel is a fixation.
FixationMap read_fixations(const std::filesystem::path& path);

// Values are clamped to [0, 1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Image& img);
void write_gray8(const std::filesystem::path& path, std::int64_t height, std::int64_t width,
                 const std::vector<std::uint8_t>& pixels);

// Bilinear resize (half-pixel centers) of an interleaved image.
Image resize(const Image& img, std::int64_t height, std::int64_t width);

// Maps [0, 1] intensities to RGB through a perceptual colormap.
Image colorize(const std::vector<double>& values, std::int64_t height, std::int64_t width);

}  // namespace salfom::image
