#pragma once

namespace lsn {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace lsn
