#pragma once

#include <cstddef>
#include <numbers>

namespace bpsl {

/// Speed of sound shared by the forward simulator and the backward model, m/s.
inline constexpr double kSpeedOfSound = 343.0;

inline constexpr std::size_t kFrameLength = 3840;  // 80 ms at 48 kHz
inline constexpr std::size_t kPadLength = 8192;

inline constexpr double kPi = std::numbers::pi;

}  // namespace bpsl
