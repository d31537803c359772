#pragma once

#include <stdexcept>
#include <string>

namespace cdo {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension or size disagreement between operands.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid argument value (empty ranges, bad thresholds, malformed polylines).
struct ParamError : Error {
    using Error::Error;
};

// Data violating a documented invariant (non-finite entries, non-binary
// mask values, existence bits disagreeing with mask contents).
struct ValidationError : Error {
    using Error::Error;
};

// Malformed on-disk content; the message names the offending file.
struct FormatError : Error {
    using Error::Error;
};

// Filesystem failure (unreadable/unwritable path).
struct IoError : Error {
    using Error::Error;
};

// Synthetic scene generation failed to satisfy its constraints.
struct GenerationError : Error {
    using Error::Error;
};

}  // namespace cdo
