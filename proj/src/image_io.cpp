#include "salfom/image_io.hpp"

#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "salfom/error.hpp"

namespace salfom::image {

namespace {

cv::Mat load(const std::filesystem::path& path, int flags) {
    if (!std::filesystem::is_regular_file(path)) throw IoError("missing image file: " + path.string());
    cv::Mat m;
    try {
        m = cv::imread(path.string(), flags);
    } catch (const cv::Exception& ex) {
        throw IoError("cannot decode image " + path.string() + ": " + ex.what());
    }
    if (m.empty()) throw IoError("cannot decode image: " + path.string());
    return m;
}

// 8- or 16-bit matrix to [0,1] doubles, BGR swapped to RGB.
Image to_image(const cv::Mat& src) {
    cv::Mat m = src;
    if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
    const double scale = m.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
    cv::Mat d;
    m.convertTo(d, CV_64F, scale);
    Image img;
    img.height = d.rows;
    img.width = d.cols;
    img.channels = d.channels();
    img.data.resize(static_cast<std::size_t>(img.height * img.width * img.channels));
    for (int y = 0; y < d.rows; ++y) {
        const double* row = d.ptr<double>(y);
        std::copy(row, row + d.cols * d.channels(), img.data.begin() + y * d.cols * d.channels());
    }
    return img;
}

cv::Mat to_mat8(const Image& img) {
    const int type = img.channels == 3 ? CV_8UC3 : CV_8UC1;
    cv::Mat m(static_cast<int>(img.height), static_cast<int>(img.width), type);
    for (std::int64_t y = 0; y < img.height; ++y) {
        auto* row = m.ptr<std::uint8_t>(static_cast<int>(y));
        for (std::int64_t i = 0; i < img.width * img.channels; ++i) {
            const double v = std::clamp(img.data[y * img.width * img.channels + i], 0.0, 1.0);
            row[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    if (img.channels == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
    return m;
}

void save(const std::filesystem::path& path, const cv::Mat& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), m);
    } catch (const cv::Exception& ex) {
        throw IoError("cannot write image " + path.string() + ": " + ex.what());
    }
    if (!ok) throw IoError("cannot write image: " + path.string());
}

}  // namespace

Image read_rgb(const std::filesystem::path& path) {
    return to_image(load(path, cv::IMREAD_COLOR));
}

Image read_gray(const std::filesystem::path& path) {
    return to_image(load(path, cv::IMREAD_GRAYSCALE));
}

GroundTruthMap read_density(const std::filesystem::path& path) {
    Image img = read_gray(path);
    GroundTruthMap g;
    g.height = img.height;
    g.width = img.width;
    g.data = std::move(img.data);
    return g;
}

FixationMap read_fixations(const std::filesystem::path& path) {
    cv::Mat m = load(path, cv::IMREAD_GRAYSCALE);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(m.rows) * m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < m.cols; ++x) mask[static_cast<std::size_t>(y) * m.cols + x] = row[x] ? 1 : 0;
    }
    return FixationMap::from_mask(m.rows, m.cols, std::move(mask));
}

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw ShapeError("PNG output needs 1 or 3 channels");
    if (static_cast<std::int64_t>(img.data.size()) != img.height * img.width * img.channels) {
        throw ShapeError("image data does not match its dims");
    }
    save(path, to_mat8(img));
}

void write_gray8(const std::filesystem::path& path, std::int64_t height, std::int64_t width,
                 const std::vector<std::uint8_t>& pixels) {
    if (static_cast<std::int64_t>(pixels.size()) != height * width) {
        throw ShapeError("gray image data does not match its dims");
    }
    cv::Mat m(static_cast<int>(height), static_cast<int>(width), CV_8UC1);
    std::copy(pixels.begin(), pixels.end(), m.ptr<std::uint8_t>(0));
    save(path, m);
}

Image resize(const Image& img, std::int64_t height, std::int64_t width) {
    if (img.height == height && img.width == width) return img;
    cv::Mat src(static_cast<int>(img.height), static_cast<int>(img.width),
                CV_64FC(static_cast<int>(img.channels)), const_cast<double*>(img.data.data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
               cv::INTER_LINEAR);
    Image out;
    out.height = height;
    out.width = width;
    out.channels = img.channels;
    out.data.assign(dst.ptr<double>(0), dst.ptr<double>(0) + height * width * img.channels);
    return out;
}

Image colorize(const std::vector<double>& values, std::int64_t height, std::int64_t width) {
    Image gray{height, width, 1, values};
    cv::Mat m = to_mat8(gray);
    cv::Mat color;
    cv::applyColorMap(m, color, cv::COLORMAP_JET);
    return to_image(color);
}

}  // namespace salfom::image
