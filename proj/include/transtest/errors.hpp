#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace transtest {

//! Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

//! Inverse transform argument outside the image of the forward map.
class DomainError : public Error {
public:
  enum class Side { Lower, Upper };

  DomainError(const std::string& what, double bound, Side side)
    : Error(what), bound_(bound), side_(side) {}

  double bound() const noexcept { return bound_; }
  Side side() const noexcept { return side_; }

private:
  double bound_;
  Side side_;
};

class EmptyNeighborhood : public Error {
public:
  using Error::Error;
};

class SingularDesign : public Error {
public:
  using Error::Error;
};

class DegenerateData : public Error {
public:
  using Error::Error;
};

class DegenerateVariance : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

//! Malformed input data (unparsable cell, NaN, ragged row).
class DataError : public Error {
public:
  using Error::Error;
};

//! Iterative fit that hit its iteration cap; carries the last iterate.
class NoConvergence : public Error {
public:
  NoConvergence(const std::string& what, std::vector<double> last)
    : Error(what), last_(std::move(last)) {}

  const std::vector<double>& last_iterate() const noexcept { return last_; }

private:
  std::vector<double> last_;
};

} // namespace transtest
