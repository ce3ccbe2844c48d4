#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace redundancy {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input does not satisfy a documented invariant (shapes, labels, configs).
class ValidationError : public Error {
public:
    using Error::Error;
};

class ParameterError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// A prune plan that would delete a protected or absent block.
class PlanError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// A metric whose value is undefined for the given input (zero-norm rows,
// all-zero matrices). `argument` is 0 or 1 for the metric operand, `row`
// is -1 when the whole matrix is degenerate.
class DegenerateInputError : public ValidationError {
public:
    DegenerateInputError(const std::string& what, int argument, long row)
        : ValidationError(what), argument_(argument), row_(row) {}

    int argument() const noexcept { return argument_; }
    long row() const noexcept { return row_; }

private:
    int argument_;
    long row_;
};

class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
public:
    VersionMismatchError(const std::string& what, unsigned found)
        : FormatError(what), found_(found) {}
    unsigned found() const noexcept { return found_; }

private:
    unsigned found_;
};

// `layer` is -1 when the header or label block is cut short.
class TruncatedError : public FormatError {
public:
    TruncatedError(const std::string& what, long layer)
        : FormatError(what), layer_(layer) {}
    long layer() const noexcept { return layer_; }

private:
    long layer_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::size_t step)
        : Error(what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

} // namespace redundancy
