#pragma once

#include <cstddef>

namespace snsteg {

/// Reads SNSTEG_THREADS (default 1) and applies it to the linear-algebra backend.
/// Values other than positive integers raise ConfigError.
std::size_t configure_threads();

}  // namespace snsteg
