#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sphsde {

// Precondition violated by an argument (zero axis, non-unit input, t < 0, ...).
class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

// Invalid run or parameter configuration, detected before any stepping.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Base for failures of a numerical procedure on valid input.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class NonconvergenceError : public NumericalError {
  public:
    NonconvergenceError(const std::string& what, double residual, std::size_t sweeps)
        : NumericalError(what), residual_(residual), sweeps_(sweeps) {}

    double residual() const noexcept { return residual_; }
    std::size_t sweeps() const noexcept { return sweeps_; }

  private:
    double residual_;
    std::size_t sweeps_;
};

// Cayley step with a singular (I - M/2).
class StepRejection : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

// |(U^{n+1} + U^{n-1}) / 2| fell to the regularization floor.
class DegenerateMidpointError : public NumericalError {
  public:
    DegenerateMidpointError(const std::string& what, double midpoint_norm)
        : NumericalError(what), midpoint_norm_(midpoint_norm) {}

    double midpoint_norm() const noexcept { return midpoint_norm_; }

  private:
    double midpoint_norm_;
};

class SpectralAnomalyError : public NumericalError {
  public:
    SpectralAnomalyError(const std::string& what, double re, double im)
        : NumericalError(what), re_(re), im_(im) {}

    double real_part() const noexcept { return re_; }
    double imag_part() const noexcept { return im_; }

  private:
    double re_;
    double im_;
};

// A step inside a path failed; carries the path and step that failed.
class PathError : public NumericalError {
  public:
    PathError(const std::string& what, std::size_t path, std::size_t step)
        : NumericalError(what), path_(path), step_(step) {}

    std::size_t path() const noexcept { return path_; }
    std::size_t step() const noexcept { return step_; }

  private:
    std::size_t path_;
    std::size_t step_;
};

class DegenerateProjectionError : public DomainError {
  public:
    using DomainError::DomainError;
};

class NotImplementedError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

class AbsentOutputError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

}  // namespace sphsde
