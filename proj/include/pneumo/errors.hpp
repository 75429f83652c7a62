#ifndef PNEUMO_ERRORS_HPP
#define PNEUMO_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pneumo {

// Error categories map onto the CLI exit-code contract:
// usage/data -> 2, corrupt checkpoint -> 3, io -> 4.
enum class ErrorCategory { Usage, Data, Model, Io };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), category_(cat) {}

    ErrorCategory category() const { return category_; }

    const char* prefix() const {
        switch (category_) {
        case ErrorCategory::Usage: return "usage";
        case ErrorCategory::Data:  return "data";
        case ErrorCategory::Model: return "model";
        case ErrorCategory::Io:    return "io";
        }
        return "error";
    }

    int exit_code() const {
        switch (category_) {
        case ErrorCategory::Usage: return 2;
        case ErrorCategory::Data:  return 2;
        case ErrorCategory::Model: return 3;
        case ErrorCategory::Io:    return 4;
        }
        return 1;
    }

private:
    ErrorCategory category_;
};

// Inconsistent tensor shapes or dimensions.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(ErrorCategory::Usage, msg) {}
};

// Out-of-range parameter values (dropout rate, ratios, labels, ...).
class ValueError : public Error {
public:
    explicit ValueError(const std::string& msg) : Error(ErrorCategory::Usage, msg) {}
};

// Malformed text inputs (manifests, ontologies, config files, CSV).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error(ErrorCategory::Data, msg) {}
};

// Missing or unusable data (empty manifests, undecodable images, ...).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(ErrorCategory::Data, msg) {}
};

// Corrupt or unreadable checkpoints.
class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error(ErrorCategory::Model, msg) {}
};

// Filesystem failures.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(ErrorCategory::Io, msg) {}
};

// References to undeclared concepts, is-a cycles, missing target concepts.
class OntologyError : public Error {
public:
    explicit OntologyError(const std::string& msg) : Error(ErrorCategory::Data, msg) {}
};

} // namespace pneumo

#endif
