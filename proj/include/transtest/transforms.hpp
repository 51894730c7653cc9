#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "errors.hpp"

namespace transtest {

enum class Family { YeoJohnson, BoxCox };

inline std::string to_string(Family f)
{
  return f == Family::YeoJohnson ? "yeo-johnson" : "box-cox";
}

//! Image of the forward map for a fixed parameter; bounds may be infinite.
struct TransformRange {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  bool contains(double z) const noexcept { return z > lower && z < upper; }
  bool bounded() const noexcept { return std::isfinite(lower) || std::isfinite(upper); }
};

//! Strictly increasing parametric response transformation.
//!
//! Power branches are evaluated as expm1(t*log1p(y))/t so that parameters
//! close to (but not within 1e-10 of) the logarithmic seams keep full
//! precision; within 1e-10 the logarithmic branch is used directly.
class TransformFamily {
public:
  static constexpr double seam_eps = 1e-10;

  explicit TransformFamily(Family family = Family::YeoJohnson,
                           double lower = -1.0,
                           double upper = 2.0)
    : family_(family), lower_(lower), upper_(upper)
  {
    if (!(lower <= upper))
      throw ConfigError("transform parameter domain is empty");
  }

  Family family() const noexcept { return family_; }
  double param_lower() const noexcept { return lower_; }
  double param_upper() const noexcept { return upper_; }

  double forward(double theta, double y) const
  {
    if (family_ == Family::BoxCox) {
      if (!(y > 0.0))
        throw DomainError("Box-Cox transform requires y > 0", 0.0, DomainError::Side::Lower);
      if (std::abs(theta) < seam_eps)
        return std::log(y);
      return std::expm1(theta * std::log(y)) / theta;
    }
    if (y >= 0.0) {
      if (std::abs(theta) < seam_eps)
        return std::log1p(y);
      return std::expm1(theta * std::log1p(y)) / theta;
    }
    const double t = 2.0 - theta;
    if (std::abs(t) < seam_eps)
      return -std::log1p(-y);
    return -std::expm1(t * std::log1p(-y)) / t;
  }

  TransformRange range(double theta) const noexcept
  {
    TransformRange r;
    if (family_ == Family::BoxCox) {
      if (theta > seam_eps)
        r.lower = -1.0 / theta;
      else if (theta < -seam_eps)
        r.upper = -1.0 / theta;
      return r;
    }
    if (theta < 0.0 && std::abs(theta) >= seam_eps)
      r.upper = -1.0 / theta;
    if (theta > 2.0 && std::abs(2.0 - theta) >= seam_eps)
      r.lower = 1.0 / (2.0 - theta);
    return r;
  }

  //! Closed-form branch inversion; throws DomainError carrying the violated bound.
  double inverse(double theta, double z) const
  {
    const TransformRange r = range(theta);
    if (!(z < r.upper))
      throw DomainError("inverse transform argument above range", r.upper, DomainError::Side::Upper);
    if (!(z > r.lower))
      throw DomainError("inverse transform argument below range", r.lower, DomainError::Side::Lower);

    if (family_ == Family::BoxCox) {
      if (std::abs(theta) < seam_eps)
        return std::exp(z);
      return std::exp(std::log1p(theta * z) / theta);
    }
    if (z >= 0.0) {
      if (std::abs(theta) < seam_eps)
        return std::expm1(z);
      return std::expm1(std::log1p(theta * z) / theta);
    }
    const double t = 2.0 - theta;
    if (std::abs(t) < seam_eps)
      return -std::expm1(-z);
    return -std::expm1(std::log1p(-t * z) / t);
  }

  //! Derivative in y; strictly positive wherever forward is defined.
  double d_dy(double theta, double y) const
  {
    if (family_ == Family::BoxCox) {
      if (!(y > 0.0))
        throw DomainError("Box-Cox transform requires y > 0", 0.0, DomainError::Side::Lower);
      return std::exp((theta - 1.0) * std::log(y));
    }
    if (y >= 0.0)
      return std::exp((theta - 1.0) * std::log1p(y));
    return std::exp((1.0 - theta) * std::log1p(-y));
  }

  double log_d_dy(double theta, double y) const
  {
    if (family_ == Family::BoxCox) {
      if (!(y > 0.0))
        throw DomainError("Box-Cox transform requires y > 0", 0.0, DomainError::Side::Lower);
      return (theta - 1.0) * std::log(y);
    }
    return y >= 0.0 ? (theta - 1.0) * std::log1p(y) : (1.0 - theta) * std::log1p(-y);
  }

private:
  Family family_;
  double lower_;
  double upper_;
};

} // namespace transtest
