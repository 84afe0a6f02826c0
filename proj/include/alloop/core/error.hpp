#pragma once

#include <stdexcept>
#include <string>

namespace alloop {

// Base of every error raised by the library. Subclasses name the failing
// subsystem so callers can route them (the loop records action errors and
// continues; workspace corruption aborts).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GeometryError : public Error { using Error::Error; };
class ConfigurationError : public Error { using Error::Error; };
class LabelingError : public Error { using Error::Error; };
class PredictionError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };
class StatisticsError : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };
class PackingError : public Error { using Error::Error; };
class LatticeMismatchError : public Error { using Error::Error; };
class SetupError : public Error { using Error::Error; };
class FitError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class WorkspaceError : public Error { using Error::Error; };
class ConsistencyError : public WorkspaceError { using WorkspaceError::WorkspaceError; };

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace alloop
