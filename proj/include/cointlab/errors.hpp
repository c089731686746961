#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cointlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IngestError : Error { using Error::Error; };
struct ConflictError : Error { using Error::Error; };
struct EmptyPanelError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct ScheduleError : Error { using Error::Error; };
struct DimensionError : Error { using Error::Error; };
struct TestError : Error { using Error::Error; };
struct SpecError : Error { using Error::Error; };
struct ConstraintError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

struct NumericalError : Error {
    NumericalError(std::size_t column, const std::string& what)
        : Error("column " + std::to_string(column) + ": " + what), column(column) {}
    std::size_t column;
};

struct NonConvergenceError : Error {
    NonConvergenceError(std::size_t rank, const std::string& what)
        : Error(what), final_rank(rank) {}
    std::size_t final_rank;
};

}  // namespace cointlab
