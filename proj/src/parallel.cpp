#include "eqemu/parallel.hpp"

#include <cstdlib>
#include <string>

namespace eqemu {

std::size_t worker_count() {
    if (const char* env = std::getenv("EQEMU_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace eqemu
