#pragma once

namespace pnpttt {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pnpttt
