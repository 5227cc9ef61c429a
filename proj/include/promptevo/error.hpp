// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace promptevo
{

class Error: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or seed universe (CLI exit 2).
class ConfigError: public Error
{
  public:
    using Error::Error;
};

/// A caller broke an operation precondition.
class PreconditionError: public Error
{
  public:
    using Error::Error;
};

class InvariantError: public Error
{
  public:
    using Error::Error;
};

/// A handle (prompt, image) no longer refers to a live object.
class StaleHandleError: public Error
{
  public:
    using Error::Error;
};

class InputError: public Error
{
  public:
    using Error::Error;
};

/// Retries against a backend were exhausted (CLI exit 3, run is resumable).
class BackendUnavailable: public Error
{
  public:
    using Error::Error;
};

/// Thrown by backends for failures worth retrying.
class TransientBackendError: public Error
{
  public:
    using Error::Error;
};

/// A mock script had no rule for a request.
class ScriptGapError: public Error
{
  public:
    using Error::Error;
};

class MutationFailure: public Error
{
  public:
    using Error::Error;
};

class ParseError: public Error
{
  public:
    using Error::Error;
};

class SynthesisError: public Error
{
  public:
    using Error::Error;
};

/// The tool executor cannot be reached; solvers fall back to single-pass.
class ToolchainDisabled: public Error
{
  public:
    using Error::Error;
};

class LoadError: public Error
{
  public:
    using Error::Error;
};

class ChecksumError: public Error
{
  public:
    using Error::Error;
};

} // namespace promptevo
