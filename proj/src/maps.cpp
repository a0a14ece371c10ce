#include "salfom/maps.hpp"

#include <cmath>

#include "salfom/error.hpp"
#include "salfom/ops.hpp"

namespace salfom {

void SaliencyMap::validate() const {
    if (static_cast<std::int64_t>(data.size()) != size() || size() == 0) {
        throw ShapeError("saliency map data does not match its dims");
    }
    double total = 0.0;
    for (double v : data) {
        if (!std::isfinite(v) || v < 0.0) {
            throw PreconditionError("saliency map entries must be finite and nonnegative");
        }
        total += v;
    }
    if (normalized && std::abs(total - 1.0) > 1e-6) {
        throw PreconditionError("normalized saliency map does not sum to 1");
    }
}

void GroundTruthMap::validate() const {
    if (static_cast<std::int64_t>(data.size()) != size() || size() == 0) {
        throw ShapeError("ground-truth map data does not match its dims");
    }
    bool any = false;
    for (double v : data) {
        if (!std::isfinite(v) || v < 0.0) {
            throw PreconditionError("ground-truth entries must be finite and nonnegative");
        }
        any = any || v > 0.0;
    }
    if (!any) throw DegenerateInputError("ground-truth map is all zero");
}

FixationMap FixationMap::from_mask(std::int64_t height, std::int64_t width,
                                   std::vector<std::uint8_t> mask) {
    if (static_cast<std::int64_t>(mask.size()) != height * width) {
        throw ShapeError("fixation mask does not match its dims");
    }
    FixationMap fx;
    fx.height = height;
    fx.width = width;
    for (auto& m : mask) {
        m = m ? 1 : 0;
        fx.fixation_count += m;
    }
    fx.data = std::move(mask);
    return fx;
}

FixationMap FixationMap::from_points(std::int64_t height, std::int64_t width,
                                     const std::vector<std::pair<std::int64_t, std::int64_t>>& yx) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(height * width), 0);
    for (auto [y, x] : yx) {
        if (y < 0 || y >= height || x < 0 || x >= width) throw ShapeError("fixation outside map");
        mask[y * width + x] = 1;
    }
    return from_mask(height, width, std::move(mask));
}

std::vector<std::int64_t> FixationMap::fixated_indices() const {
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(fixation_count));
    for (std::int64_t i = 0; i < size(); ++i) {
        if (data[i]) idx.push_back(i);
    }
    return idx;
}

std::vector<double> resize_map(const std::vector<double>& src, std::int64_t src_h, std::int64_t src_w,
                               std::int64_t dst_h, std::int64_t dst_w) {
    if (src_h == dst_h && src_w == dst_w) return src;
    NoGradGuard no_grad;
    Tensor t = Tensor::from({1, src_h, src_w, 1}, src);
    Tensor r = ops::resize_bilinear(t, dst_h, dst_w);
    return {r.data().begin(), r.data().end()};
}

}  // namespace salfom
