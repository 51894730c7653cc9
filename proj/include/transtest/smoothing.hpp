#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "kernels.hpp"

namespace transtest {

enum class Estimator { NadarayaWatson, LocalLinear };

inline std::string to_string(Estimator e)
{
  return e == Estimator::NadarayaWatson ? "nadaraya-watson" : "local-linear";
}

//! Candidate lookup for compactly supported product kernels.
//!
//! Rows are sorted on the first coordinate; a query visits only rows whose
//! first coordinate lies within the kernel support. Non-compact kernels visit
//! every row.
class NeighborIndex {
public:
  NeighborIndex() = default;

  explicit NeighborIndex(const Eigen::MatrixXd& X) : order_(static_cast<std::size_t>(X.rows()))
  {
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return X(a, 0) < X(b, 0); });
    key_.resize(order_.size());
    for (std::size_t r = 0; r < order_.size(); ++r)
      key_[r] = X(order_[r], 0);
  }

  template <class Fn>
  void visit(double x0, double radius, Fn&& fn) const
  {
    if (!std::isfinite(radius)) {
      for (std::size_t r = 0; r < order_.size(); ++r)
        fn(order_[r]);
      return;
    }
    auto lo = std::lower_bound(key_.begin(), key_.end(), x0 - radius);
    for (auto it = lo; it != key_.end() && *it <= x0 + radius; ++it)
      fn(order_[static_cast<std::size_t>(it - key_.begin())]);
  }

private:
  std::vector<Eigen::Index> order_;
  std::vector<double> key_;
};

namespace detail {

enum class FitStatus { Ok, Empty, Singular };

struct LocalResult {
  FitStatus status;
  double value;
};

inline double condition_2x2(double a, double b, double c)
{
  const double mean = 0.5 * (a + c);
  const double rad = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  const double lmin = mean - rad;
  const double lmax = mean + rad;
  if (!(lmin > 0.0))
    return std::numeric_limits<double>::infinity();
  return lmax / lmin;
}

constexpr double max_condition = 1e12;

//! Local constant or local linear fit at x, optionally leaving out one row.
template <class Row>
LocalResult local_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& Z, double h, const Row& x,
                      const Kernel& k, Estimator est, const NeighborIndex& index,
                      Eigen::Index exclude = -1)
{
  const Eigen::Index d = X.cols();
  const double radius = k.support_radius() * h;

  if (est == Estimator::NadarayaWatson) {
    double num = 0.0, den = 0.0;
    index.visit(x[0], radius, [&](Eigen::Index i) {
      if (i == exclude)
        return;
      double w = 1.0;
      for (Eigen::Index c = 0; c < d && w != 0.0; ++c)
        w *= k.eval1((X(i, c) - x[c]) / h);
      num += w * Z[i];
      den += w;
    });
    if (!(den > 0.0))
      return {FitStatus::Empty, 0.0};
    return {FitStatus::Ok, num / den};
  }

  if (d == 1) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
    index.visit(x[0], radius, [&](Eigen::Index i) {
      if (i == exclude)
        return;
      const double u = (X(i, 0) - x[0]) / h;
      const double w = k.eval1(u);
      if (w == 0.0)
        return;
      s0 += w;
      s1 += w * u;
      s2 += w * u * u;
      t0 += w * Z[i];
      t1 += w * u * Z[i];
    });
    if (!(s0 > 0.0))
      return {FitStatus::Empty, 0.0};
    if (condition_2x2(s0, s1, s2) > max_condition)
      return {FitStatus::Singular, 0.0};
    return {FitStatus::Ok, (s2 * t0 - s1 * t1) / (s0 * s2 - s1 * s1)};
  }

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(d + 1, d + 1);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd row(d + 1);
  double mass = 0.0;
  index.visit(x[0], radius, [&](Eigen::Index i) {
    if (i == exclude)
      return;
    double w = 1.0;
    row[0] = 1.0;
    for (Eigen::Index c = 0; c < d && w != 0.0; ++c) {
      const double u = (X(i, c) - x[c]) / h;
      row[c + 1] = u;
      w *= k.eval1(u);
    }
    if (w == 0.0)
      return;
    mass += w;
    M.selfadjointView<Eigen::Lower>().rankUpdate(row, w);
    b += w * Z[i] * row;
  });
  if (!(mass > 0.0))
    return {FitStatus::Empty, 0.0};
  M = M.selfadjointView<Eigen::Lower>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmin > 0.0) || lmax / lmin > max_condition)
    return {FitStatus::Singular, 0.0};
  return {FitStatus::Ok, M.ldlt().solve(b)[0]};
}

inline void check_shapes(const Eigen::MatrixXd& X, const Eigen::VectorXd& Z)
{
  if (X.rows() != Z.size())
    throw ConfigError("covariate rows and response length differ");
  if (X.rows() == 0 || X.cols() == 0)
    throw ConfigError("empty covariate matrix");
}

} // namespace detail

//! Kernel density estimate (1/n) sum_i K_h(x - data_i).
inline double kde(const Eigen::MatrixXd& data, double h, const Eigen::VectorXd& x, const Kernel& k)
{
  if (data.rows() == 0)
    throw ConfigError("kde requires at least one observation");
  if (!(h > 0.0))
    throw ConfigError("bandwidth must be positive");
  double s = 0.0;
  Eigen::VectorXd u(data.cols());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    u = data.row(i).transpose() - x;
    s += k.scaled(u, h);
  }
  return s / static_cast<double>(data.rows());
}

inline double nadaraya_watson(const Eigen::MatrixXd& X, const Eigen::VectorXd& Z, double h,
                              const Eigen::VectorXd& x, const Kernel& k)
{
  detail::check_shapes(X, Z);
  const auto r = detail::local_fit(X, Z, h, x, k, Estimator::NadarayaWatson, NeighborIndex(X));
  if (r.status != detail::FitStatus::Ok)
    throw EmptyNeighborhood("no observation within the kernel support");
  return r.value;
}

//! Intercept of the kernel-weighted least-squares fit of Z on (1, X - x).
inline double local_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& Z, double h,
                           const Eigen::VectorXd& x, const Kernel& k)
{
  detail::check_shapes(X, Z);
  const auto r = detail::local_fit(X, Z, h, x, k, Estimator::LocalLinear, NeighborIndex(X));
  if (r.status != detail::FitStatus::Ok)
    throw SingularDesign("local linear normal matrix is numerically singular");
  return r.value;
}

//! Configured smoother with local linear falling back to Nadaraya-Watson.
inline double smooth(Estimator est, const Eigen::MatrixXd& X, const Eigen::VectorXd& Z, double h,
                     const Eigen::VectorXd& x, const Kernel& k)
{
  if (est == Estimator::LocalLinear) {
    detail::check_shapes(X, Z);
    const auto r = detail::local_fit(X, Z, h, x, k, Estimator::LocalLinear, NeighborIndex(X));
    if (r.status == detail::FitStatus::Ok)
      return r.value;
  }
  return nadaraya_watson(X, Z, h, x, k);
}

//! Smoother evaluated at every row of X (the row itself included).
inline Eigen::VectorXd fitted_values(Estimator est, const Eigen::MatrixXd& X,
                                     const Eigen::VectorXd& Z, double h, const Kernel& k)
{
  detail::check_shapes(X, Z);
  const NeighborIndex index(X);
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    auto r = detail::local_fit(X, Z, h, X.row(i), k, est, index);
    if (r.status == detail::FitStatus::Singular)
      r = detail::local_fit(X, Z, h, X.row(i), k, Estimator::NadarayaWatson, index);
    if (r.status != detail::FitStatus::Ok)
      throw EmptyNeighborhood("no observation within the kernel support");
    out[i] = r.value;
  }
  return out;
}

//! Leave-one-out squared prediction error; failed predictions cost (Z_i - mean)^2.
inline double loo_cv_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& Z, Estimator est,
                           double h, const Kernel& k, const NeighborIndex& index)
{
  const double zbar = Z.mean();
  double score = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    auto r = detail::local_fit(X, Z, h, X.row(i), k, est, index, i);
    if (r.status == detail::FitStatus::Singular)
      r = detail::local_fit(X, Z, h, X.row(i), k, Estimator::NadarayaWatson, index, i);
    const double err = r.status == detail::FitStatus::Ok ? Z[i] - r.value : Z[i] - zbar;
    score += err * err;
  }
  return score;
}

struct CvResult {
  double bandwidth;
  std::vector<double> grid;
  std::vector<double> scores;
};

//! Grid search of the leave-one-out criterion; the smallest h wins ties.
inline CvResult cv_search(const Eigen::MatrixXd& X, const Eigen::VectorXd& Z, Estimator est,
                          std::vector<double> grid, const Kernel& k = Kernel::epanechnikov())
{
  detail::check_shapes(X, Z);
  if (grid.empty())
    throw ConfigError("bandwidth grid is empty");
  if (X.rows() < 3)
    throw ConfigError("cross validation requires n >= 3");
  for (double h : grid)
    if (!(h > 0.0))
      throw ConfigError("bandwidth grid must be positive");
  std::sort(grid.begin(), grid.end());

  const NeighborIndex index(X);
  CvResult res{grid.front(), grid, {}};
  res.scores.reserve(grid.size());
  double best = std::numeric_limits<double>::infinity();
  for (double h : grid) {
    const double s = loo_cv_score(X, Z, est, h, k, index);
    res.scores.push_back(s);
    if (s < best) {
      best = s;
      res.bandwidth = h;
    }
  }
  return res;
}

inline double cv_bandwidth(const Eigen::MatrixXd& X, const Eigen::VectorXd& Z, Estimator est,
                           const std::vector<double>& grid, const Kernel& k = Kernel::epanechnikov())
{
  return cv_search(X, Z, est, grid, k).bandwidth;
}

//! 20 log-spaced bandwidths from 5% to 100% of the widest covariate range.
inline std::vector<double> default_cv_grid(const Eigen::MatrixXd& X, int points = 20)
{
  double range = 0.0;
  for (Eigen::Index c = 0; c < X.cols(); ++c)
    range = std::max(range, X.col(c).maxCoeff() - X.col(c).minCoeff());
  if (!(range > 0.0))
    throw DegenerateData("covariates have zero range");
  std::vector<double> grid(static_cast<std::size_t>(points));
  const double lo = std::log(0.05 * range);
  const double hi = std::log(range);
  for (int i = 0; i < points; ++i)
    grid[static_cast<std::size_t>(i)] =
      points == 1 ? range : std::exp(lo + (hi - lo) * i / (points - 1));
  return grid;
}

inline double normal_reference_bandwidth(double sd, double n)
{
  if (!(sd > 0.0))
    throw DegenerateData("normal reference rule needs positive standard deviation");
  return 2.34 * sd * std::pow(n, -0.2);
}

//! Epanechnikov-rescaled Silverman rule 2.34 * sd * n^(-1/5).
inline double normal_reference_bandwidth(const Eigen::VectorXd& v)
{
  if (v.size() < 2)
    throw ConfigError("normal reference rule requires n >= 2");
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
  return normal_reference_bandwidth(sd, static_cast<double>(v.size()));
}

struct FixedBandwidth {
  double h;
};
struct CrossValidation {
  std::vector<double> grid; // empty: default_cv_grid
};
struct NormalReference {};

//! How a bandwidth is obtained, with an optional multiplier applied afterwards.
struct BandwidthSpec {
  std::variant<FixedBandwidth, CrossValidation, NormalReference> mode = CrossValidation{};
  double multiplier = 1.0;

  static BandwidthSpec fixed(double h) { return {FixedBandwidth{h}, 1.0}; }
  static BandwidthSpec cv(double mult = 1.0) { return {CrossValidation{}, mult}; }
  static BandwidthSpec normal_reference() { return {NormalReference{}, 1.0}; }

  void validate() const
  {
    if (!(multiplier > 0.0))
      throw ConfigError("bandwidth multiplier must be positive");
    if (auto f = std::get_if<FixedBandwidth>(&mode); f && !(f->h > 0.0))
      throw ConfigError("fixed bandwidth must be positive");
    if (auto c = std::get_if<CrossValidation>(&mode))
      for (double h : c->grid)
        if (!(h > 0.0))
          throw ConfigError("bandwidth grid must be positive");
  }

  //! Resolve on data (X, Z). Normal reference uses the first covariate column.
  double resolve(const Eigen::MatrixXd& X, const Eigen::VectorXd& Z, Estimator est,
                 const Kernel& k = Kernel::epanechnikov()) const
  {
    validate();
    double h = 0.0;
    if (auto f = std::get_if<FixedBandwidth>(&mode)) {
      h = f->h;
    } else if (auto c = std::get_if<CrossValidation>(&mode)) {
      h = cv_bandwidth(X, Z, est, c->grid.empty() ? default_cv_grid(X) : c->grid, k);
    } else {
      h = normal_reference_bandwidth(Eigen::VectorXd(X.col(0)));
    }
    return h * multiplier;
  }
};

} // namespace transtest
