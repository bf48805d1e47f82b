#pragma once

namespace basis {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace basis
