#pragma once

namespace wfleak {

inline constexpr const char* kVersion = "1.0.0";

// Bumped whenever the serialized feature layout changes shape or order.
inline constexpr int kLayoutVersion = 1;

} // namespace wfleak
