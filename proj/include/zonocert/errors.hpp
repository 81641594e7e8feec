#pragma once

#include <stdexcept>
#include <string>

namespace zonocert {

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NoMode : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyReachSet : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InfeasibleTerminal : public std::runtime_error {
 public:
  InfeasibleTerminal(const std::string& what, double deficit)
      : std::runtime_error(what), deficit_(deficit) {}
  double deficit() const { return deficit_; }

 private:
  double deficit_;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace zonocert
