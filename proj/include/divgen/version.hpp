#pragma once

namespace divgen {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace divgen
