#pragma once

#include <stdexcept>
#include <string>

namespace grmoe {

// Error taxonomy. Every failure mode in the library maps onto one of these;
// callers that want exit-code discipline catch Error at the top level.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Factorization input lost full column rank (pivot norm below threshold).
struct RankDeficient : Error {
    explicit RankDeficient(const std::string& msg) : Error(msg) {}
};

// Shapes disagree (matrix products, frame banks, batch wiring).
struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& msg) : Error(msg) {}
};

// Non-finite values or loss of precision where finiteness is contractual.
struct NumericalError : Error {
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

// Caller passed a value outside the documented domain of an operation.
struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

// A mathematical function was evaluated outside its domain of validity.
struct OutOfDomain : Error {
    explicit OutOfDomain(const std::string& msg) : Error(msg) {}
};

// An iterative solver exhausted its iteration budget before reaching tolerance.
struct ConvergenceFailure : Error {
    explicit ConvergenceFailure(const std::string& msg) : Error(msg) {}
};

// A bound's hypothesis does not hold for the supplied instance.
struct AssumptionViolated : Error {
    explicit AssumptionViolated(const std::string& msg) : Error(msg) {}
};

// Bisection calibration of a synthetic task failed to bracket the target.
struct CalibrationFailure : Error {
    explicit CalibrationFailure(const std::string& msg) : Error(msg) {}
};

// Training produced a non-finite loss.
struct Diverged : Error {
    explicit Diverged(const std::string& msg) : Error(msg) {}
};

}  // namespace grmoe
