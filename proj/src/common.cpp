#include "mfclab/common.hpp"

#include <cstdlib>

namespace mfclab {

int thread_count() {
    static const int n = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw < 1) hw = 1;
        if (const char* env = std::getenv("MFCLAB_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return std::min(v, hw);
        }
        return hw;
    }();
    return n;
}

}  // namespace mfclab
