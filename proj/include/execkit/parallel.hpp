#pragma once

#include <exception>
#include <limits>

namespace execkit {

/// Every data-parallel kernel has a serial reference path. Both paths must
/// produce bit-identical results; tests compare them directly.
enum class ExecMode { Serial, Parallel };

/// Applies EXECKIT_THREADS (if set) to the OpenMP runtime and returns the
/// resulting maximum thread count.
int configure_threads_from_env();

int max_threads();

/// Exceptions cannot leave an OpenMP region. Loop bodies run through
/// guard(); the error of the lowest failing index is rethrown afterwards,
/// so serial and parallel runs report the same failure.
class FirstError {
public:
    template <class F>
    void guard(long index, F&& body) noexcept {
        try {
            body();
        } catch (...) {
#pragma omp critical(execkit_first_error)
            if (index < index_) {
                index_ = index;
                error_ = std::current_exception();
            }
        }
    }
    void rethrow() const {
        if (error_) std::rethrow_exception(error_);
    }

private:
    std::exception_ptr error_;
    long index_ = std::numeric_limits<long>::max();
};

}  // namespace execkit
