#pragma once

namespace sphsde {
inline constexpr const char* kVersion = "0.1.0";
}
