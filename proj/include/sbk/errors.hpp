#pragma once

#include <stdexcept>
#include <string>

namespace sbk {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/axis incompatibilities.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Bad configuration values (rates out of range, invalid JSON fields, ...).
class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& msg) : Error(msg) {}
};

// API misuse: preconditions violated by the caller.
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf encountered, or a numeric procedure failed.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// A metric is mathematically undefined on the given input.
class MetricUndefinedError : public Error {
public:
    explicit MetricUndefinedError(const std::string& msg) : Error(msg) {}
};

// Container/file format problems, each flavor distinct.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};
class VersionError : public FormatError {
public:
    explicit VersionError(const std::string& msg) : FormatError(msg) {}
};
class TruncatedError : public FormatError {
public:
    explicit TruncatedError(const std::string& msg) : FormatError(msg) {}
};
class ChecksumError : public FormatError {
public:
    explicit ChecksumError(const std::string& msg) : FormatError(msg) {}
};

} // namespace sbk
