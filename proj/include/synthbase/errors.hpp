#pragma once

#include <stdexcept>
#include <string>

namespace synthbase {

/// Root of every domain error raised by the library. The CLI maps these to
/// exit code 1; anything else escaping a command is a bug.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define SYNTHBASE_DEFINE_ERROR(Name)            \
    class Name : public Error {                 \
    public:                                     \
        using Error::Error;                     \
    }

// Shared
SYNTHBASE_DEFINE_ERROR(DimensionError);
SYNTHBASE_DEFINE_ERROR(ConfigError);

// panel_store
SYNTHBASE_DEFINE_ERROR(SchemaError);
SYNTHBASE_DEFINE_ERROR(CoverageError);
SYNTHBASE_DEFINE_ERROR(FractionError);
SYNTHBASE_DEFINE_ERROR(CalendarError);

/// A missing half-hour row or an empty cell in the load series.
class GapError : public Error {
public:
    GapError(std::string building, std::string instant)
        : Error("gap in load series at " + instant + " (building " + building + ")"),
          building_(std::move(building)),
          instant_(std::move(instant)) {}

    const std::string& building() const noexcept { return building_; }
    const std::string& instant() const noexcept { return instant_; }

private:
    std::string building_;
    std::string instant_;
};

// scm_solver
SYNTHBASE_DEFINE_ERROR(SingularSystemError);

class NonConvergenceError : public Error {
public:
    NonConvergenceError(double last_objective, int iterations)
        : Error("projected gradient did not converge after " + std::to_string(iterations) +
                " iterations (objective " + std::to_string(last_objective) + ")"),
          last_objective_(last_objective),
          iterations_(iterations) {}

    double last_objective() const noexcept { return last_objective_; }
    int iterations() const noexcept { return iterations_; }

private:
    double last_objective_;
    int iterations_;
};

// augmentation
SYNTHBASE_DEFINE_ERROR(DegenerateSeriesError);
SYNTHBASE_DEFINE_ERROR(InsufficientHistoryError);
SYNTHBASE_DEFINE_ERROR(ModeError);

// nonlinear_scm
SYNTHBASE_DEFINE_ERROR(DivergenceError);
SYNTHBASE_DEFINE_ERROR(ShapeError);

// bess_lp and the simplex solver
SYNTHBASE_DEFINE_ERROR(InfeasibleWarmupError);
SYNTHBASE_DEFINE_ERROR(UnboundedError);
SYNTHBASE_DEFINE_ERROR(InfeasibleError);
SYNTHBASE_DEFINE_ERROR(CycleGuardError);
SYNTHBASE_DEFINE_ERROR(VerificationError);

// benchmarks
SYNTHBASE_DEFINE_ERROR(DesignError);
SYNTHBASE_DEFINE_ERROR(EmptyClusterError);
SYNTHBASE_DEFINE_ERROR(ConvergenceError);

#undef SYNTHBASE_DEFINE_ERROR

}  // namespace synthbase
