#pragma once

#include <stdexcept>
#include <string>

namespace crisisfuse {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not fit the operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A forward pass produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// The caller broke an API precondition (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Hyperparameter out of its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Class label or index outside its vocabulary.
class LabelError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Ingest file lacks required columns.
class SchemaError : public Error {
public:
    using Error::Error;
};

class DuplicateError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad user-supplied input (missing file, wrong raster, absent modality).
class InputError : public Error {
public:
    using Error::Error;
};

/// Stored tensors or manifests do not match the model being built.
class IncompatibilityError : public Error {
public:
    using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace crisisfuse
