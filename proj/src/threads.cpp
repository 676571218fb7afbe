#include "snsteg/threads.hpp"

#include <Eigen/Core>

#include <cstdlib>
#include <string>

#include "snsteg/tensor.hpp"

namespace snsteg {

std::size_t configure_threads() {
    std::size_t n = 1;
    if (const char* env = std::getenv("SNSTEG_THREADS"); env && *env) {
        const std::string v = env;
        if (v.find_first_not_of("0123456789") != std::string::npos || std::stoul(v) == 0)
            throw ConfigError("SNSTEG_THREADS must be a positive integer, got '" + v + "'");
        n = std::stoul(v);
    }
    // Only has an effect when Eigen is built with OpenMP; the default build is single-threaded.
    Eigen::setNbThreads(static_cast<int>(n));
    return n;
}

}  // namespace snsteg
