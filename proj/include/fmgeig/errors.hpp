#pragma once

#include <stdexcept>
#include <string>

namespace fmgeig {

/// Bad arguments to any library entry point (wrong dimension, mismatched levels, ...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A requested structure would exceed the configured memory budget.
class ResourceError : public std::runtime_error {
public:
    ResourceError(const std::string& what, int level)
        : std::runtime_error(what), level_(level) {}
    int level() const noexcept { return level_; }

private:
    int level_;
};

/// Element-level failure during assembly (degenerate cell, missing quadrature).
class AssemblyError : public std::runtime_error {
public:
    AssemblyError(const std::string& what, long cell = -1)
        : std::runtime_error(what), cell_(cell) {}
    long cell() const noexcept { return cell_; }

private:
    long cell_;
};

/// A solver failed to reach its contract. `residual` is the best value achieved.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, double residual = -1.0, int level = -1)
        : std::runtime_error(what), residual_(residual), level_(level) {}
    double residual() const noexcept { return residual_; }
    int level() const noexcept { return level_; }

private:
    double residual_;
    int level_;
};

/// Invalid experiment configuration; `field` is the dotted path of the offending key.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& field, const std::string& msg)
        : std::runtime_error(field + ": " + msg), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace fmgeig
