// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace kestrel
{

class Error: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Caller broke an operation's contract (empty input, out-of-range budget).
class PreconditionError: public Error
{
  public:
    using Error::Error;
};

/// Invalid or incomplete configuration. The CLI maps this to exit code 2.
class ConfigError: public Error
{
  public:
    using Error::Error;
};

/// A structural invariant was violated at runtime (leakage guard, trajectory legality).
class InvariantError: public Error
{
  public:
    using Error::Error;
};

class LoadError: public Error
{
  public:
    using Error::Error;
};

class ProviderError: public Error
{
  public:
    ProviderError(std::string const& what, bool retryable): Error(what), _retryable(retryable) {}

    [[nodiscard]] bool retryable() const noexcept { return _retryable; }

  private:
    bool _retryable;
};

/// Scripted provider ran out of entries or saw a request its script did not expect.
class ReplayError: public ProviderError
{
  public:
    explicit ReplayError(std::string const& what): ProviderError(what, false) {}
};

class RoutingError: public Error
{
  public:
    using Error::Error;
};

/// A tool backend could not run at all (sandbox missing, endpoint down).
class BackendError: public Error
{
  public:
    using Error::Error;
};

} // namespace kestrel
