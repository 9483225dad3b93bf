#pragma once

#include <stdexcept>
#include <string>

namespace rfspmd {

// Base for every error raised by the library. Engines map the subclasses
// onto process exit codes (see tools/rf_main.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller input: precondition violations, malformed files, bad options.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Truncated or malformed tree buffer.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// Transport failure: connection lost, spawn failed, I/O error.
class TransportError : public Error {
 public:
  using Error::Error;
};

// SPMD discipline violated: mismatched collective, sequence gap, timeout,
// config divergence between ranks, use after finalize.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfspmd
