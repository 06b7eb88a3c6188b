#include "quantdemoire/tensor_io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "quantdemoire/error.hpp"
#include "quantdemoire/half.hpp"
#include "quantdemoire/rng.hpp"

namespace qdm {

namespace le {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint16_t get_u16(const std::uint8_t* p) noexcept {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) noexcept {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const std::uint8_t* p) noexcept { return std::bit_cast<float>(get_u32(p)); }

}  // namespace le

std::size_t dtype_size(DType dtype) noexcept {
    switch (dtype) {
        case DType::F32: return 4;
        case DType::F16: return 2;
        case DType::I32: return 4;
        case DType::U8: return 1;
    }
    return 0;
}

std::size_t TensorBlob::numel() const noexcept {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

namespace {

std::vector<std::uint32_t> to_u32_dims(const Dims& dims) {
    require(!dims.empty() && dims.size() <= 8, ErrorKind::InvalidArgument,
            "QDT1 supports 1..8 dims");
    std::vector<std::uint32_t> out;
    for (auto d : dims) {
        require(d > 0 && d <= 0xffffffffLL, ErrorKind::DimsOverflow, "dim does not fit in u32");
        out.push_back(static_cast<std::uint32_t>(d));
    }
    return out;
}

void check_count(const TensorBlob& b, std::size_t n) {
    require(!b.dims.empty() && b.dims.size() <= 8, ErrorKind::InvalidArgument,
            "QDT1 supports 1..8 dims");
    require(b.numel() == n, ErrorKind::ShapeMismatch, "blob dims do not match value count");
}

}  // namespace

TensorBlob TensorBlob::from_tensor(const Tensor& t) {
    TensorBlob b;
    b.dtype = DType::F32;
    b.dims = to_u32_dims(t.dims());
    b.payload.reserve(t.numel() * 4);
    for (float v : t.data()) le::put_f32(b.payload, v);
    return b;
}

TensorBlob TensorBlob::from_i32(std::vector<std::uint32_t> dims, std::span<const std::int32_t> v) {
    TensorBlob b;
    b.dtype = DType::I32;
    b.dims = std::move(dims);
    check_count(b, v.size());
    for (auto x : v) le::put_u32(b.payload, static_cast<std::uint32_t>(x));
    return b;
}

TensorBlob TensorBlob::from_u8(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> v) {
    TensorBlob b;
    b.dtype = DType::U8;
    b.dims = std::move(dims);
    check_count(b, v.size());
    b.payload.assign(v.begin(), v.end());
    return b;
}

TensorBlob TensorBlob::from_f16_bits(std::vector<std::uint32_t> dims,
                                     std::span<const std::uint16_t> v) {
    TensorBlob b;
    b.dtype = DType::F16;
    b.dims = std::move(dims);
    check_count(b, v.size());
    for (auto x : v) le::put_u16(b.payload, x);
    return b;
}

Tensor TensorBlob::to_tensor() const {
    Dims d(dims.begin(), dims.end());
    const std::size_t n = numel();
    std::vector<float> v(n);
    const std::uint8_t* p = payload.data();
    for (std::size_t i = 0; i < n; ++i) {
        switch (dtype) {
            case DType::F32: v[i] = le::get_f32(p + 4 * i); break;
            case DType::F16: v[i] = half_bits_to_float(le::get_u16(p + 2 * i)); break;
            case DType::I32: v[i] = static_cast<float>(static_cast<std::int32_t>(le::get_u32(p + 4 * i))); break;
            case DType::U8: v[i] = static_cast<float>(p[i]); break;
        }
    }
    return Tensor(std::move(d), std::move(v));
}

std::vector<std::int32_t> TensorBlob::to_i32() const {
    require(dtype == DType::I32, ErrorKind::Format, "blob is not i32");
    std::vector<std::int32_t> v(numel());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<std::int32_t>(le::get_u32(payload.data() + 4 * i));
    return v;
}

std::vector<std::uint8_t> TensorBlob::to_u8() const {
    require(dtype == DType::U8, ErrorKind::Format, "blob is not u8");
    return payload;
}

std::vector<std::uint16_t> TensorBlob::to_f16_bits() const {
    require(dtype == DType::F16, ErrorKind::Format, "blob is not f16");
    std::vector<std::uint16_t> v(numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = le::get_u16(payload.data() + 2 * i);
    return v;
}

std::vector<std::uint8_t> encode_blob(const TensorBlob& blob) {
    require(!blob.dims.empty() && blob.dims.size() <= 8, ErrorKind::InvalidArgument,
            "QDT1 supports 1..8 dims");
    require(blob.payload.size() == blob.numel() * dtype_size(blob.dtype), ErrorKind::ShapeMismatch,
            "blob payload size does not match dims");
    std::vector<std::uint8_t> out = {'Q', 'D', 'T', '1'};
    out.push_back(static_cast<std::uint8_t>(blob.dtype));
    out.push_back(static_cast<std::uint8_t>(blob.dims.size()));
    le::put_u16(out, 0);
    for (auto d : blob.dims) le::put_u32(out, d);
    out.insert(out.end(), blob.payload.begin(), blob.payload.end());
    return out;
}

TensorBlob decode_blob(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
    if (bytes.size() < 8) fail(ErrorKind::Truncated, "QDT1 header truncated");
    if (!(bytes[0] == 'Q' && bytes[1] == 'D' && bytes[2] == 'T' && bytes[3] == '1'))
        fail(ErrorKind::BadMagic, "expected QDT1 magic");
    TensorBlob b;
    const std::uint8_t dt = bytes[4];
    if (dt > 3) fail(ErrorKind::Format, "unknown QDT1 dtype " + std::to_string(dt));
    b.dtype = static_cast<DType>(dt);
    const std::size_t ndim = bytes[5];
    if (ndim < 1 || ndim > 8) fail(ErrorKind::Format, "QDT1 ndim must be 1..8");
    if (le::get_u16(bytes.data() + 6) != 0) fail(ErrorKind::Format, "QDT1 reserved field not zero");
    const std::size_t header = 8 + 4 * ndim;
    if (bytes.size() < header) fail(ErrorKind::Truncated, "QDT1 dims truncated");
    // Payload byte count must stay below 2^48 to rule out overflow and absurd allocations.
    constexpr unsigned __int128 kLimit = static_cast<unsigned __int128>(1) << 48;
    unsigned __int128 count = dtype_size(b.dtype);
    for (std::size_t i = 0; i < ndim; ++i) {
        const std::uint32_t d = le::get_u32(bytes.data() + 8 + 4 * i);
        if (d == 0) fail(ErrorKind::Format, "QDT1 dims must be positive");
        b.dims.push_back(d);
        count *= d;
        if (count > kLimit) fail(ErrorKind::DimsOverflow, "QDT1 dims product overflows");
    }
    const auto nbytes = static_cast<std::size_t>(count);
    if (bytes.size() - header < nbytes) fail(ErrorKind::Truncated, "QDT1 payload truncated");
    b.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                     bytes.begin() + static_cast<std::ptrdiff_t>(header + nbytes));
    consumed = header + nbytes;
    return b;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
    write_file_bytes(path, encode_blob(TensorBlob::from_tensor(t)));
}

Tensor read_tensor(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t consumed = 0;
    TensorBlob b = decode_blob(bytes, consumed);
    if (consumed != bytes.size()) fail(ErrorKind::Format, "trailing bytes after QDT1 payload");
    return b.to_tensor();
}

// PPM

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#')
        tok.push_back(static_cast<char>(bytes[pos++]));
    if (tok.empty()) fail(ErrorKind::Truncated, "PPM header truncated");
    return tok;
}

std::int64_t ppm_int(const std::string& tok) {
    std::int64_t v = 0;
    for (char c : tok) {
        if (c < '0' || c > '9') fail(ErrorKind::Format, "PPM header: bad integer '" + tok + "'");
        v = v * 10 + (c - '0');
        if (v > (1 << 24)) fail(ErrorKind::Format, "PPM header: value too large");
    }
    return v;
}

}  // namespace

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    if (ppm_token(bytes, pos) != "P6") fail(ErrorKind::Format, "only binary P6 PPM is supported");
    const std::int64_t w = ppm_int(ppm_token(bytes, pos));
    const std::int64_t h = ppm_int(ppm_token(bytes, pos));
    const std::int64_t maxval = ppm_int(ppm_token(bytes, pos));
    if (maxval != 255) fail(ErrorKind::Format, "PPM maxval must be 255");
    if (w <= 0 || h <= 0) fail(ErrorKind::Format, "PPM dimensions must be positive");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail(ErrorKind::Truncated, "PPM header truncated");
    ++pos;  // single whitespace before raster
    const auto n = static_cast<std::size_t>(w * h);
    if (bytes.size() - pos < 3 * n) fail(ErrorKind::Truncated, "PPM raster truncated");
    Tensor t = Tensor::nchw(1, 3, h, w);
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) t.plane(0, c)[i] = static_cast<float>(bytes[pos + 3 * i + c]) / 255.0f;
    return t;
}

Tensor read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_ppm(const Tensor& t) {
    std::int64_t h = 0, w = 0;
    if (t.ndim() == 4 && t.dim(0) == 1 && t.dim(1) == 3) {
        h = t.dim(2);
        w = t.dim(3);
    } else if (t.ndim() == 3 && t.dim(0) == 3) {
        h = t.dim(1);
        w = t.dim(2);
    } else {
        fail(ErrorKind::ShapeMismatch, "write_ppm expects [1,3,H,W] or [3,H,W], got " + shape_string(t.dims()));
    }
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    const auto n = static_cast<std::size_t>(h * w);
    out.reserve(out.size() + 3 * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            float v = t[c * n + i];
            v = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
            out.push_back(static_cast<std::uint8_t>(round_half_even(static_cast<double>(v) * 255.0)));
        }
    return out;
}

void write_ppm(const Tensor& t, const std::filesystem::path& path) { write_file_bytes(path, encode_ppm(t)); }

}  // namespace qdm
