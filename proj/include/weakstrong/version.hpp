#pragma once

namespace weakstrong {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace weakstrong
