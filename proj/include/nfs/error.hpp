#pragma once

#include <stdexcept>
#include <string>

namespace nfs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/op shape violations; messages carry expected vs actual shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside its mathematical domain (e.g. lambda outside (0,1)).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace nfs
