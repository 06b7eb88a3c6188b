#pragma once

#include <cstdint>

namespace qdm {

/// IEEE binary16 narrowing with round-to-nearest-even. Overflow saturates to infinity.
std::uint16_t float_to_half_bits(float value) noexcept;
float half_bits_to_float(std::uint16_t bits) noexcept;

/// Rounds a float to the nearest representable binary16 value.
inline float round_to_half(float value) noexcept {
    return half_bits_to_float(float_to_half_bits(value));
}

}  // namespace qdm
