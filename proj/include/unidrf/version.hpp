#pragma once

namespace unidrf {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace unidrf
