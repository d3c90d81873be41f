#pragma once

#include <stdexcept>
#include <string>

namespace goalnca {

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grid or tensor sizes that are illegal or do not agree with each other.
class dimension_error : public error {
 public:
  using error::error;
};

class goal_error : public error {
 public:
  using error::error;
};

class config_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

}  // namespace goalnca
