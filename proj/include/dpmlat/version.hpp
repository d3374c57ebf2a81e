#pragma once

namespace dpmlat {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dpmlat
