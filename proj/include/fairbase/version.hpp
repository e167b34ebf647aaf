#pragma once

namespace fairbase {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fairbase
