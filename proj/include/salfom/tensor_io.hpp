#pragma once

// Binary tensor block shared by feature files and checkpoints:
//   magic "SFOMFEAT" | u32 version | u32 d0,d1,d2,d3 | u32 dtype | payload
// All integers and payload values are little-endian, payload row-major.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace salfom::io {

inline constexpr std::string_view kTensorMagic = "SFOMFEAT";
inline constexpr std::uint32_t kTensorVersion = 1;

enum class DType : std::uint32_t { f32 = 1, f64 = 2 };

struct TensorBlock {
    std::array<std::uint32_t, 4> dims{};
    DType dtype = DType::f32;
    std::vector<double> values;  // f32 payloads are widened exactly
};

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);

void write_tensor_block(std::ostream& os, const std::array<std::uint32_t, 4>& dims, DType dtype,
                        std::span<const double> values);
void write_tensor_block(std::ostream& os, const std::array<std::uint32_t, 4>& dims,
                        std::span<const float> values);
// Throws FormatError on bad magic, version, dtype or a short payload.
TensorBlock read_tensor_block(std::istream& is);

// Pads a rank <= 4 shape with leading ones.
std::array<std::uint32_t, 4> pad_dims(std::span<const std::int64_t> shape);

}  // namespace salfom::io
