#pragma once

#include <stdexcept>
#include <string>

namespace icgpr {

// Every exception thrown by this library carries a stable machine-readable
// code alongside the human-readable message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// Bad files, schemas, flags, or data that fails validation. CLI exit code 2.
class InputError : public Error {
public:
    using Error::Error;
};

// Numeric or pipeline failures on otherwise well-formed input. CLI exit code 3.
class ComputationError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// dataset ingestion
// ---------------------------------------------------------------------------

class MissingColumnError final : public InputError {
public:
    explicit MissingColumnError(std::string column)
        : InputError("missing_column",
                     "required column '" + column + "' not found in CSV header"),
          column(std::move(column)) {}

    std::string column;
};

class EmptyDatasetError final : public InputError {
public:
    EmptyDatasetError() : InputError("empty_dataset", "dataset contains no cycles") {}
};

class DatasetFormatError final : public InputError {
public:
    explicit DatasetFormatError(const std::string& message)
        : InputError("dataset_format", message) {}
};

class NonMonotonicTimeError final : public InputError {
public:
    explicit NonMonotonicTimeError(int cycle)
        : InputError("non_monotonic_time",
                     "time is not strictly increasing in cycle " + std::to_string(cycle)),
          cycle_index(cycle) {}

    int cycle_index;
};

class NegativeCapacityError final : public InputError {
public:
    NegativeCapacityError(int cycle, double value)
        : InputError("negative_capacity",
                     "cycle " + std::to_string(cycle) + " has non-positive discharge capacity " +
                         std::to_string(value)),
          cycle_index(cycle) {}

    int cycle_index;
};

class VoltageOutOfRangeError final : public InputError {
public:
    VoltageOutOfRangeError(int cycle, double value)
        : InputError("voltage_out_of_range",
                     "cycle " + std::to_string(cycle) + " has voltage " + std::to_string(value) +
                         " outside the (0, 10) V sanity window"),
          cycle_index(cycle) {}

    int cycle_index;
};

class SegmentTooShortError final : public InputError {
public:
    SegmentTooShortError(int cycle, std::size_t n_samples)
        : InputError("segment_too_short",
                     "cycle " + std::to_string(cycle) + " constant-current run has only " +
                         std::to_string(n_samples) + " samples (need >= 20)"),
          cycle_index(cycle) {}

    int cycle_index;
};

class NonPositiveReferenceError final : public InputError {
public:
    explicit NonPositiveReferenceError(double q_ref)
        : InputError("non_positive_reference",
                     "reference capacity must be positive, got " + std::to_string(q_ref)) {}
};

class InvalidConfigError final : public InputError {
public:
    explicit InvalidConfigError(const std::string& message)
        : InputError("invalid_config", message) {}
};

class NotEnoughCyclesError final : public InputError {
public:
    explicit NotEnoughCyclesError(const std::string& message)
        : InputError("not_enough_cycles", message) {}
};

// ---------------------------------------------------------------------------
// incremental-capacity analysis
// ---------------------------------------------------------------------------

class DegenerateVoltageRangeError final : public ComputationError {
public:
    DegenerateVoltageRangeError(double span_V, double dv_V)
        : ComputationError("degenerate_voltage_range",
                           "rectified voltage span " + std::to_string(span_V) +
                               " V is too small for resampling at dv = " + std::to_string(dv_V) +
                               " V") {}
};

class WindowTooLargeError final : public ComputationError {
public:
    WindowTooLargeError(int window, std::size_t length)
        : ComputationError("window_too_large",
                           "moving-average window " + std::to_string(window) +
                               " exceeds signal length " + std::to_string(length)) {}
};

class KernelTooLongError final : public ComputationError {
public:
    KernelTooLongError(int kernel_len, std::size_t length)
        : ComputationError("kernel_too_long",
                           "filter kernel length " + std::to_string(kernel_len) +
                               " exceeds signal length " + std::to_string(length)) {}
};

class GridCoverageError final : public ComputationError {
public:
    GridCoverageError(double want_low, double want_high, double have_low, double have_high)
        : ComputationError("grid_does_not_cover_window",
                           "curve grid covers only [" + std::to_string(have_low) + ", " +
                               std::to_string(have_high) + "] V of the requested [" +
                               std::to_string(want_low) + ", " + std::to_string(want_high) +
                               "] V feature window") {}
};

// ---------------------------------------------------------------------------
// Gaussian process regression
// ---------------------------------------------------------------------------

class DimensionMismatchError final : public ComputationError {
public:
    DimensionMismatchError(const std::string& where, std::size_t expected, std::size_t got)
        : ComputationError("dimension_mismatch",
                           where + ": expected dimension " + std::to_string(expected) +
                               ", got " + std::to_string(got)) {}
};

class FactorizationError final : public ComputationError {
public:
    explicit FactorizationError(double max_jitter)
        : ComputationError("factorization_failure",
                           "covariance matrix is numerically indefinite even with jitter up to " +
                               std::to_string(max_jitter)) {}
};

class ConstantFeatureError final : public ComputationError {
public:
    explicit ConstantFeatureError(int dimension)
        : ComputationError("constant_feature",
                           "feature " + std::to_string(dimension) +
                               " is constant across all training rows"),
          dimension(dimension) {}

    int dimension;
};

class AllRestartsFailedError final : public ComputationError {
public:
    explicit AllRestartsFailedError(int restarts)
        : ComputationError("all_restarts_failed",
                           "all " + std::to_string(restarts) +
                               " optimizer restarts failed to factorize the covariance") {}
};

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

class LengthMismatchError final : public ComputationError {
public:
    LengthMismatchError(std::size_t a, std::size_t b)
        : ComputationError("length_mismatch",
                           "vector lengths differ: " + std::to_string(a) + " vs " +
                               std::to_string(b)) {}
};

class EmptyInputError final : public ComputationError {
public:
    explicit EmptyInputError(const std::string& what)
        : ComputationError("empty_input", what + " must not be empty") {}
};

}  // namespace icgpr
