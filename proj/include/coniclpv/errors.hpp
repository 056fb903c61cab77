#pragma once

#include <stdexcept>
#include <string>

namespace coniclpv {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dimension or symmetry violations on matrix arguments.
struct ShapeError : Error {
    using Error::Error;
};

/// Argument outside its admissible domain (parameter box, window, fractions).
struct DomainError : Error {
    using Error::Error;
};

/// Malformed input data (unordered times, bad spec fields).
struct InputError : Error {
    using Error::Error;
};

/// A simulated state left the configured blow-up threshold.
struct DivergenceError : Error {
    DivergenceError(const std::string& what, double t)
        : Error(what), escape_time(t) {}
    double escape_time;
};

/// The feedback loop's feedthrough relation is (near-)singular.
struct WellPosednessError : Error {
    using Error::Error;
};

/// A certificate does not cover the parameter values a trajectory visits.
struct CoverageError : Error {
    using Error::Error;
};

/// Sector arithmetic hit a zero bound (1/a or 1/b undefined).
struct SingularConeError : Error {
    using Error::Error;
};

/// Complementary cone came out inverted (a_c >= b_c).
struct DeltaTooLargeError : Error {
    using Error::Error;
};

/// A parameter region failed the conic/nonconic classification it was
/// declared with (conic index infeasible, or alpha reached zero).
struct RegionClassError : Error {
    using Error::Error;
};

/// Loop trace signals violate the interconnection relations.
struct InconsistentTraceError : Error {
    using Error::Error;
};

/// Gain estimate preconditions failed (Q not negative definite, zeta <= 0).
struct EstimateError : Error {
    using Error::Error;
};

/// Nominal-cone design could not reach a nonnegative residual.
struct DesignInfeasibleError : Error {
    DesignInfeasibleError(const std::string& what, double best)
        : Error(what), best_residual(best) {}
    double best_residual;
};

/// Configuration file failed schema validation.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace coniclpv
