#pragma once

namespace s2t {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace s2t
