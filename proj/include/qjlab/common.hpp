#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace qjlab {

using cx = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;

/* Bad or inconsistent user-facing configuration. CLI maps this to exit code 2. */
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/* A solver or integrator left its validity envelope. CLI maps this to exit code 3. */
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace qjlab
