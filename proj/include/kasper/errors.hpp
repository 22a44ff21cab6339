#pragma once

#include <stdexcept>
#include <string>

namespace kasper {

// Base class for all recoverable errors raised by the library.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input file/table is structurally wrong (missing column, bad sidecar, ...).
struct schema_error : error {
    explicit schema_error(const std::string& msg) : error(msg) {}
};

// No usable rows at all.
struct empty_input_error : error {
    explicit empty_input_error(const std::string& msg) : error(msg) {}
};

// Too few rows/samples for the requested operation.
struct insufficient_data_error : error {
    explicit insufficient_data_error(const std::string& msg) : error(msg) {}
};

// An argument is outside its documented domain.
struct parameter_error : error {
    explicit parameter_error(const std::string& msg) : error(msg) {}
};

// Matrix/vector dimensions do not line up.
struct shape_error : error {
    explicit shape_error(const std::string& msg) : error(msg) {}
};

// NaN/Inf produced where a finite value is required.
struct numeric_fault : error {
    explicit numeric_fault(const std::string& msg) : error(msg) {}
};

// Degenerate input (e.g. all samples identical where spread is needed).
struct degenerate_input_error : error {
    explicit degenerate_input_error(const std::string& msg) : error(msg) {}
};

struct io_error : error {
    explicit io_error(const std::string& msg) : error(msg) {}
};

// Checkpoint content digest does not validate.
struct digest_error : error {
    explicit digest_error(const std::string& msg) : error(msg) {}
};

// Checkpoint format version is not supported.
struct version_error : error {
    explicit version_error(const std::string& msg) : error(msg) {}
};

// A value violates a cross-call contract (e.g. probabilities off the simplex).
struct contract_error : error {
    explicit contract_error(const std::string& msg) : error(msg) {}
};

}  // namespace kasper
