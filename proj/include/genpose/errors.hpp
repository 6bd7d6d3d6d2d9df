#pragma once

#include <stdexcept>
#include <string>

namespace genpose {

// Root of every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class BehindCamera : public Error {
 public:
  using Error::Error;
};

class InvalidState : public Error {
 public:
  using Error::Error;
};

// Non-finite value encountered while integrating or training.
class Diverged : public Error {
 public:
  using Error::Error;
};

class CandidateDegenerate : public Error {
 public:
  using Error::Error;
};

class UnderConstrained : public Error {
 public:
  using Error::Error;
};

class DegenerateConfiguration : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace genpose
