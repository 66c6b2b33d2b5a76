#pragma once

#include <stdexcept>
#include <string>

namespace projnet {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or argument mismatch in a numeric operation.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Invalid network spec, run config, or CLI usage.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure (missing directory, unreadable file).
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed NTEN or JSON content.
class FormatError : public Error {
public:
    using Error::Error;
};

class TransferError : public Error {
public:
    using Error::Error;
};

/// Statistical test cannot be computed (too few nonzero differences).
class InsufficientData : public Error {
public:
    using Error::Error;
};

/// Two reports cannot be paired sample-by-sample.
class PairingError : public Error {
public:
    using Error::Error;
};

}  // namespace projnet
