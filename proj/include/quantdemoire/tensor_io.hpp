#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "quantdemoire/tensor.hpp"

namespace qdm {

enum class DType : std::uint8_t { F32 = 0, F16 = 1, I32 = 2, U8 = 3 };

std::size_t dtype_size(DType dtype) noexcept;

/// Typed payload of a QDT1 container: 'Q','D','T','1', u8 dtype, u8 ndim (1..8), u16 zero,
/// ndim x u32 dims, then the row-major little-endian payload.
struct TensorBlob {
    DType dtype = DType::F32;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;

    std::size_t numel() const noexcept;

    static TensorBlob from_tensor(const Tensor& t);
    static TensorBlob from_i32(std::vector<std::uint32_t> dims, std::span<const std::int32_t> v);
    static TensorBlob from_u8(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> v);
    static TensorBlob from_f16_bits(std::vector<std::uint32_t> dims,
                                    std::span<const std::uint16_t> v);

    /// Widens any dtype to float32.
    Tensor to_tensor() const;
    std::vector<std::int32_t> to_i32() const;
    std::vector<std::uint8_t> to_u8() const;
    std::vector<std::uint16_t> to_f16_bits() const;

    friend bool operator==(const TensorBlob&, const TensorBlob&) = default;
};

std::vector<std::uint8_t> encode_blob(const TensorBlob& blob);
/// Decodes one blob starting at bytes[0]; `consumed` receives its encoded length.
TensorBlob decode_blob(std::span<const std::uint8_t> bytes, std::size_t& consumed);

void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Binary P6 PPM with maxval 255, as a [1,3,H,W] tensor in [0,1].
Tensor read_ppm(const std::filesystem::path& path);
/// Writes round(clip(v,0,1)*255) with ties-to-even. Accepts [1,3,H,W] or [3,H,W].
void write_ppm(const Tensor& t, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const Tensor& t);
Tensor decode_ppm(std::span<const std::uint8_t> bytes);

// Little-endian helpers shared by the container formats.
namespace le {
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
std::uint16_t get_u16(const std::uint8_t* p) noexcept;
std::uint32_t get_u32(const std::uint8_t* p) noexcept;
float get_f32(const std::uint8_t* p) noexcept;
}  // namespace le

}  // namespace qdm
