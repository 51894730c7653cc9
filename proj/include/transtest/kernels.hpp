#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "errors.hpp"

namespace transtest {

enum class KernelType { Epanechnikov, Gaussian };

inline std::string to_string(KernelType k)
{
  return k == KernelType::Epanechnikov ? "epanechnikov" : "gaussian";
}

struct KernelMoments {
  double int_k2;       // integral of K^2
  double int_kk2;      // integral of (K*K)^2
};

//! Product kernel on R^d built from a symmetric univariate density.
struct Kernel {
  KernelType type = KernelType::Epanechnikov;
  int dim = 1;

  static Kernel epanechnikov(int d = 1) { return {KernelType::Epanechnikov, d}; }
  static Kernel gaussian(int d = 1) { return {KernelType::Gaussian, d}; }

  double support_radius() const noexcept
  {
    return type == KernelType::Epanechnikov ? 1.0 : std::numeric_limits<double>::infinity();
  }

  bool compact() const noexcept { return type == KernelType::Epanechnikov; }

  double eval1(double u) const noexcept
  {
    if (type == KernelType::Epanechnikov)
      return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    return std::exp(-0.5 * u * u) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  }

  //! (K*K)(u) in closed form; the Epanechnikov convolution has support [-2, 2].
  double selfconv1(double u) const noexcept
  {
    if (type == KernelType::Epanechnikov) {
      const double a = std::abs(u);
      if (a > 2.0)
        return 0.0;
      const double t = 2.0 - a;
      return 3.0 / 160.0 * t * t * t * (a * a + 6.0 * a + 4.0);
    }
    return std::exp(-0.25 * u * u) * (0.5 * std::numbers::inv_sqrtpi);
  }

  template <class Vec>
  double eval(const Vec& u) const
  {
    double r = 1.0;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      r *= eval1(u[k]);
      if (r == 0.0)
        break;
    }
    return r;
  }

  template <class Vec>
  double selfconv(const Vec& u) const
  {
    double r = 1.0;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      r *= selfconv1(u[k]);
      if (r == 0.0)
        break;
    }
    return r;
  }

  //! K_h(u) = K(u/h)/h^d.
  template <class Vec>
  double scaled(const Vec& u, double h) const
  {
    double r = 1.0;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      r *= eval1(u[k] / h) / h;
      if (r == 0.0)
        break;
    }
    return r;
  }

  KernelMoments moments() const noexcept
  {
    double k2, kk2;
    if (type == KernelType::Epanechnikov) {
      k2 = 0.6;
      kk2 = 167.0 / 385.0;
    } else {
      k2 = 0.5 * std::numbers::inv_sqrtpi;
      kk2 = 0.5 * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    }
    return {std::pow(k2, dim), std::pow(kk2, dim)};
  }
};

inline double kernel_eval(const Kernel& k, const Eigen::VectorXd& u) { return k.eval(u); }
inline double kernel_selfconv(const Kernel& k, const Eigen::VectorXd& u) { return k.selfconv(u); }
inline KernelMoments kernel_moments(const Kernel& k) { return k.moments(); }

} // namespace transtest
