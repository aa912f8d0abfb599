// Copyright (c) maskarbiter authors
//
// Exception hierarchy shared by every module. Each error kind maps to one
// stable CLI exit code (see tools/maskarbiter.cpp).

#pragma once

#include <stdexcept>
#include <string>

namespace maskarbiter {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// mask-core
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};
class InvalidMask : public Error {
 public:
  using Error::Error;
};
class MalformedRle : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};
class MalformedFile : public Error {
 public:
  using Error::Error;
};

// arbiter
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// experts
class BackendUnavailable : public Error {
 public:
  using Error::Error;
};
class ProtocolViolation : public Error {
 public:
  using Error::Error;
};
class Timeout : public Error {
 public:
  using Error::Error;
};

// evaluation
class MalformedManifest : public Error {
 public:
  using Error::Error;
};
class MissingClassName : public Error {
 public:
  using Error::Error;
};

// synth
class InvalidConfig : public Error {
 public:
  using Error::Error;
};
class UnknownClassName : public Error {
 public:
  using Error::Error;
};
class PointOutsideObjects : public Error {
 public:
  using Error::Error;
};

}  // namespace maskarbiter
