#pragma once

#include <stdexcept>
#include <string>

namespace embias {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem-level failure: missing file, unreadable stream, short write.
class IoError : public Error {
public:
    using Error::Error;
};

/// Structurally invalid input data: bad header, malformed row, duplicate token.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A token was not found in the embedding vocabulary.
class OovError : public Error {
public:
    explicit OovError(std::string token)
        : Error("out-of-vocabulary token: '" + token + "'"), token_(std::move(token)) {}

    const std::string& token() const noexcept { return token_; }

private:
    std::string token_;
};

/// Precondition violation on caller-supplied arguments or options.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Numerical failure inside the optimizer, e.g. a non-finite objective.
class SolverError : public Error {
public:
    using Error::Error;
};

}  // namespace embias
