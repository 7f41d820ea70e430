#pragma once

#include <stdexcept>
#include <string>

namespace lowbit {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or size mismatch between tensor operands.
struct ShapeError : Error {
    using Error::Error;
};

// Malformed input bytes (IDX stream, model container, config file).
struct FormatError : Error {
    using Error::Error;
};

// Projection could not produce a usable code assignment.
struct DegenerateCodesError : Error {
    using Error::Error;
};

// Training loss became non-finite.
struct DivergenceError : Error {
    using Error::Error;
};

// Bad command line / config value.
struct ConfigError : Error {
    using Error::Error;
};

} // namespace lowbit
