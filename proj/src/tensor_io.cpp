#include "salfom/tensor_io.hpp"

#include <bit>
#include <istream>
#include <limits>
#include <ostream>

#include "salfom/error.hpp"

namespace salfom::io {

namespace {

template <typename U>
void write_le(std::ostream& os, U v) {
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    os.write(bytes, sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
    unsigned char bytes[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
        throw FormatError("unexpected end of tensor data");
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }

namespace {

void write_header(std::ostream& os, const std::array<std::uint32_t, 4>& dims, DType dtype,
                  std::size_t count) {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    if (n != count) throw ShapeError("tensor block: payload size does not match dims");
    os.write(kTensorMagic.data(), static_cast<std::streamsize>(kTensorMagic.size()));
    write_u32(os, kTensorVersion);
    for (auto d : dims) write_u32(os, d);
    write_u32(os, static_cast<std::uint32_t>(dtype));
}

}  // namespace

void write_tensor_block(std::ostream& os, const std::array<std::uint32_t, 4>& dims, DType dtype,
                        std::span<const double> values) {
    write_header(os, dims, dtype, values.size());
    if (dtype == DType::f32) {
        for (double v : values) write_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
        for (double v : values) write_le(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw IoError("failed writing tensor block");
}

void write_tensor_block(std::ostream& os, const std::array<std::uint32_t, 4>& dims,
                        std::span<const float> values) {
    write_header(os, dims, DType::f32, values.size());
    for (float v : values) write_le(os, std::bit_cast<std::uint32_t>(v));
    if (!os) throw IoError("failed writing tensor block");
}

TensorBlock read_tensor_block(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::string_view(magic, sizeof(magic)) != kTensorMagic) {
        throw FormatError("bad tensor magic (expected SFOMFEAT)");
    }
    const auto version = read_u32(is);
    if (version != kTensorVersion) {
        throw FormatError("unsupported tensor format version " + std::to_string(version));
    }
    TensorBlock block;
    std::uint64_t count = 1;
    for (auto& d : block.dims) {
        d = read_u32(is);
        count *= d;
    }
    const auto tag = read_u32(is);
    if (tag != static_cast<std::uint32_t>(DType::f32) && tag != static_cast<std::uint32_t>(DType::f64)) {
        throw FormatError("unknown tensor dtype tag " + std::to_string(tag));
    }
    block.dtype = static_cast<DType>(tag);
    if (count > (std::uint64_t{1} << 34)) throw FormatError("tensor block dims are implausibly large");
    block.values.resize(static_cast<std::size_t>(count));
    try {
        if (block.dtype == DType::f32) {
            for (auto& v : block.values) v = std::bit_cast<float>(read_le<std::uint32_t>(is));
        } else {
            for (auto& v : block.values) v = std::bit_cast<double>(read_le<std::uint64_t>(is));
        }
    } catch (const FormatError&) {
        throw FormatError("truncated tensor payload");
    }
    return block;
}

std::array<std::uint32_t, 4> pad_dims(std::span<const std::int64_t> shape) {
    if (shape.size() > 4) throw ShapeError("tensor blocks hold at most 4 dims");
    std::array<std::uint32_t, 4> dims{1, 1, 1, 1};
    const auto off = 4 - shape.size();
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] < 0 || shape[i] > std::numeric_limits<std::uint32_t>::max()) {
            throw ShapeError("dimension does not fit in u32");
        }
        dims[off + i] = static_cast<std::uint32_t>(shape[i]);
    }
    return dims;
}

}  // namespace salfom::io
