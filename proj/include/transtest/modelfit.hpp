#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include "errors.hpp"
#include "kernels.hpp"
#include "smoothing.hpp"
#include "transforms.hpp"

namespace transtest {

//! Raw observations: covariates (n x d) and responses (n).
struct Sample {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Eigen::Index size() const noexcept { return y.size(); }
  Eigen::Index dim() const noexcept { return x.cols(); }

  void validate() const
  {
    if (x.rows() != y.size())
      throw ConfigError("covariate rows and response length differ");
    if (y.size() == 0 || x.cols() == 0)
      throw ConfigError("sample is empty");
  }
};

inline Eigen::VectorXd transform_all(const TransformFamily& tf, double theta, const Eigen::VectorXd& y)
{
  Eigen::VectorXd z(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    z[i] = tf.forward(theta, y[i]);
  return z;
}

//! Parametric regression class m(x, beta) with its beta-gradient.
struct RegressionFamily {
  using RowRef = Eigen::Ref<const Eigen::RowVectorXd>;

  std::string name;
  Eigen::Index q = 0;
  std::function<double(RowRef, const Eigen::VectorXd&)> eval;
  std::function<Eigen::VectorXd(RowRef, const Eigen::VectorXd&)> gradient;
  bool linear_in_beta = false;
  Eigen::VectorXd default_init;

  //! beta_0 + sum_k beta_k x_k.
  static RegressionFamily linear(Eigen::Index d)
  {
    RegressionFamily f;
    f.name = d == 1 ? "linear1d" : "linear";
    f.q = d + 1;
    f.eval = [](RowRef x, const Eigen::VectorXd& b) {
      return b[0] + x.dot(b.tail(b.size() - 1).transpose());
    };
    f.gradient = [q = f.q](RowRef x, const Eigen::VectorXd&) {
      Eigen::VectorXd g(q);
      g[0] = 1.0;
      g.tail(q - 1) = x.transpose();
      return g;
    };
    f.linear_in_beta = true;
    f.default_init = Eigen::VectorXd::Zero(f.q);
    return f;
  }

  static RegressionFamily linear1d() { return linear(1); }

  Eigen::VectorXd evaluate(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta) const
  {
    Eigen::VectorXd m(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      m[i] = eval(X.row(i), beta);
    return m;
  }

  Eigen::MatrixXd jacobian(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta) const
  {
    Eigen::MatrixXd J(X.rows(), q);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      J.row(i) = gradient(X.row(i), beta).transpose();
    return J;
  }
};

inline double sum_of_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& z,
                             const RegressionFamily& fam, const Eigen::VectorXd& beta)
{
  return (z - fam.evaluate(X, beta)).squaredNorm();
}

//! Gauss-Newton with step halving; stops when |J^T r| < 1e-8.
inline Eigen::VectorXd gauss_newton(const Eigen::MatrixXd& X, const Eigen::VectorXd& z,
                                    const RegressionFamily& fam, Eigen::VectorXd beta,
                                    int max_iter = 200, double grad_tol = 1e-8)
{
  double sse = sum_of_squares(X, z, fam, beta);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd r = z - fam.evaluate(X, beta);
    const Eigen::MatrixXd J = fam.jacobian(X, beta);
    if ((J.transpose() * r).norm() < grad_tol)
      return beta;
    const Eigen::VectorXd step = J.colPivHouseholderQr().solve(r);
    double t = 1.0;
    bool improved = false;
    for (int half = 0; half < 40; ++half, t *= 0.5) {
      const Eigen::VectorXd trial = beta + t * step;
      const double s = sum_of_squares(X, z, fam, trial);
      if (std::isfinite(s) && s < sse) {
        beta = trial;
        sse = s;
        improved = true;
        break;
      }
    }
    // No descent left at working precision.
    if (!improved)
      return beta;
  }
  const Eigen::VectorXd r = z - fam.evaluate(X, beta);
  if ((fam.jacobian(X, beta).transpose() * r).norm() < grad_tol)
    return beta;
  throw NoConvergence("Gauss-Newton did not converge in 200 iterations",
                      std::vector<double>(beta.data(), beta.data() + beta.size()));
}

//! Least-squares fit of m(., beta) to already transformed responses z.
inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& z,
                                     const RegressionFamily& fam, const Eigen::VectorXd& init)
{
  if (X.rows() < fam.q)
    throw ConfigError("least squares requires n >= q");
  if (init.size() != fam.q)
    throw ConfigError("initial parameter has wrong length");
  if (!fam.linear_in_beta)
    return gauss_newton(X, z, fam, init);

  const Eigen::MatrixXd D = fam.jacobian(X, init);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  if (qr.rank() < fam.q)
    throw SingularDesign("regression design is rank deficient");
  // m is affine in beta: m(x, b) = m(x, 0) + D b.
  const Eigen::VectorXd offset = fam.evaluate(X, Eigen::VectorXd::Zero(fam.q));
  return qr.solve(z - offset);
}

inline Eigen::VectorXd least_squares_beta(double theta, const Sample& s, const RegressionFamily& fam,
                                          const Eigen::VectorXd& init,
                                          const TransformFamily& tf = TransformFamily())
{
  return least_squares(s.x, transform_all(tf, theta, s.y), fam, init);
}

enum class BandwidthPolicy { PerTheta, Once };

//! Settings of the profile-likelihood estimator of the transformation parameter.
struct ProfileConfig {
  TransformFamily transform{};
  double lower = -1.0;
  double upper = 2.0;
  Estimator smoother = Estimator::LocalLinear;
  BandwidthSpec smoother_bandwidth = BandwidthSpec::cv();
  Kernel kernel = Kernel::epanechnikov();
  double density_floor = 1e-10;
  //! Drop each residual's own kernel term from its density estimate.
  bool density_leave_one_out = false;
  double tolerance = 1e-6;
  BandwidthPolicy policy = BandwidthPolicy::PerTheta;
  int coarse_points = 16;

  void validate() const
  {
    if (!(lower <= upper))
      throw ConfigError("theta search interval is empty");
    if (!(density_floor > 0.0))
      throw ConfigError("density floor must be positive");
    if (!(tolerance > 0.0))
      throw ConfigError("optimizer tolerance must be positive");
    if (coarse_points < 2)
      throw ConfigError("coarse grid needs at least two points");
  }
};

namespace detail {

//! Epanechnikov/Gaussian KDE of `values` evaluated at each of its own points.
inline Eigen::VectorXd self_density(const Eigen::VectorXd& values, double h, const Kernel& k1,
                                    bool leave_one_out = false)
{
  const Eigen::Index n = values.size();
  std::vector<double> sorted(values.data(), values.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const double radius = k1.support_radius() * h;
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = values[i];
    auto lo = std::isfinite(radius) ? std::lower_bound(sorted.begin(), sorted.end(), x - radius)
                                    : sorted.begin();
    double s = 0.0;
    for (auto it = lo; it != sorted.end(); ++it) {
      if (std::isfinite(radius) && *it > x + radius)
        break;
      s += k1.eval1((x - *it) / h);
    }
    if (leave_one_out)
      out[i] = n > 1 ? (s - k1.eval1(0.0)) / (static_cast<double>(n - 1) * h) : 0.0;
    else
      out[i] = s / (static_cast<double>(n) * h);
  }
  return out;
}

inline double profile_loglik_at(double theta, const Sample& s, const ProfileConfig& cfg, double h)
{
  const Eigen::VectorXd z = transform_all(cfg.transform, theta, s.y);
  const Eigen::VectorXd m = fitted_values(cfg.smoother, s.x, z, h, cfg.kernel);
  const Eigen::VectorXd e = z - m;
  if (e.maxCoeff() - e.minCoeff() <= 0.0)
    throw DegenerateData("all profile residuals are identical");
  const double he = normal_reference_bandwidth(e);
  const Eigen::VectorXd f = self_density(e, he, Kernel::epanechnikov(), cfg.density_leave_one_out);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i)
    ll += std::log(std::max(f[i], cfg.density_floor)) + cfg.transform.log_d_dy(theta, s.y[i]);
  return ll;
}

inline double smoother_bandwidth_at(double theta, const Sample& s, const ProfileConfig& cfg)
{
  const Eigen::VectorXd z = transform_all(cfg.transform, theta, s.y);
  return cfg.smoother_bandwidth.resolve(s.x, z, cfg.smoother, cfg.kernel);
}

} // namespace detail

//! Profile log-likelihood of theta: residual KDE log-density plus log-Jacobian.
inline double profile_loglik(double theta, const Sample& s, const ProfileConfig& cfg)
{
  s.validate();
  cfg.validate();
  return detail::profile_loglik_at(theta, s, cfg, detail::smoother_bandwidth_at(theta, s, cfg));
}

//! Maximiser of the profile likelihood over [lower, upper].
//!
//! A coarse grid locates the best basin, then Brent's method refines on the
//! bracket formed by the neighbouring grid points.
inline double estimate_theta(const Sample& s, const ProfileConfig& cfg)
{
  s.validate();
  cfg.validate();
  if (s.size() < 10)
    throw ConfigError("theta estimation requires n >= 10");
  if (cfg.upper - cfg.lower <= cfg.tolerance)
    return cfg.lower;

  std::optional<double> once_h;
  if (cfg.policy == BandwidthPolicy::Once)
    once_h = detail::smoother_bandwidth_at(0.5 * (cfg.lower + cfg.upper), s, cfg);
  auto objective = [&](double theta) {
    const double h = once_h ? *once_h : detail::smoother_bandwidth_at(theta, s, cfg);
    return detail::profile_loglik_at(theta, s, cfg, h);
  };

  const int g = cfg.coarse_points;
  std::vector<double> grid(static_cast<std::size_t>(g));
  double best_val = -std::numeric_limits<double>::infinity();
  int best = 0;
  for (int i = 0; i < g; ++i) {
    grid[static_cast<std::size_t>(i)] = cfg.lower + (cfg.upper - cfg.lower) * i / (g - 1);
    const double v = objective(grid[static_cast<std::size_t>(i)]);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  const double a = grid[static_cast<std::size_t>(std::max(best - 1, 0))];
  const double b = grid[static_cast<std::size_t>(std::min(best + 1, g - 1))];
  const int bits = std::clamp(static_cast<int>(std::ceil(-std::log2(cfg.tolerance))) + 1, 8, 52);
  std::uintmax_t max_iter = 100;
  const auto [x, neg] = boost::math::tools::brent_find_minima(
    [&](double t) { return -objective(t); }, a, b, bits, max_iter);
  return -neg >= best_val ? x : grid[static_cast<std::size_t>(best)];
}

//! Estimated transformation model.
struct FittedModel {
  double theta = 1.0;
  Eigen::VectorXd beta;
  Eigen::VectorXd z;              // transformed responses
  Eigen::VectorXd residuals;      // parametric: z - m(X, beta)
  Eigen::VectorXd np_residuals;   // nonparametric: z - smoother(X)
  double sigma2 = 0.0;            // mean squared parametric residual
  double smoother_h = 0.0;
};

//! Model fit with the transformation parameter held at theta.
inline FittedModel fit_at(double theta, const Sample& s, const RegressionFamily& fam,
                          const ProfileConfig& cfg)
{
  s.validate();
  FittedModel fm;
  fm.theta = theta;
  fm.z = transform_all(cfg.transform, theta, s.y);
  const Eigen::VectorXd init = fam.default_init.size() == fam.q ? fam.default_init
                                                                 : Eigen::VectorXd::Zero(fam.q);
  fm.beta = least_squares(s.x, fm.z, fam, init);
  fm.residuals = fm.z - fam.evaluate(s.x, fm.beta);
  fm.sigma2 = fm.residuals.squaredNorm() / static_cast<double>(s.size());
  fm.smoother_h = cfg.smoother_bandwidth.resolve(s.x, fm.z, cfg.smoother, cfg.kernel);
  fm.np_residuals = fm.z - fitted_values(cfg.smoother, s.x, fm.z, fm.smoother_h, cfg.kernel);
  return fm;
}

inline FittedModel fit(const Sample& s, const RegressionFamily& fam, const ProfileConfig& cfg)
{
  return fit_at(estimate_theta(s, cfg), s, fam, cfg);
}

} // namespace transtest
