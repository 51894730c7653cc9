#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "kernels.hpp"
#include "modelfit.hpp"
#include "parallel.hpp"
#include "report.hpp"
#include "resampling.hpp"
#include "smoothing.hpp"

namespace transtest {

//! Which lack-of-fit functional: the L2-distance statistic T or the U-statistic V.
enum class LofStatistic { T, V };

inline std::string to_string(LofStatistic s) { return s == LofStatistic::T ? "T" : "V"; }

struct LofConfig {
  Kernel kernel = Kernel::epanechnikov();
  //! Resolved on (X, Z) with the Nadaraya-Watson smoother.
  BandwidthSpec bandwidth = BandwidthSpec::cv();
  double alpha = 0.10;
  BootstrapPlan plan{};
  //! Settings for re-estimating theta inside the transformation wild bootstrap.
  ProfileConfig profile{};

  void validate() const
  {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw ConfigError("alpha must lie in (0,1)");
    bandwidth.validate();
    plan.validate();
  }
};

struct LofNuisance {
  double sigma2 = 0.0;
  double s_hat = 0.0;
  double sigma_hat = 0.0;   // Zheng's variance estimator
  double sigma_tilde = 0.0; // 2 sigma^4 s int K^2
  double b_h = 0.0;
  double v_hat = 0.0;       // 2 sigma^4 s int (K*K)^2
};

//! Pairwise kernel weights for a fixed design and bandwidth.
//!
//! Holds every pair (i < j) within the support of K*K together with
//! K_h, (K*K)_h and K^2 at (X_i - X_j) / h, so that T, V and Zheng's
//! variance estimator cost one pass over the pair list per residual vector.
class LofEngine {
public:
  LofEngine(const Eigen::MatrixXd& X, const Kernel& kernel, double h)
    : kernel_(kernel), h_(h), n_(X.rows()), d_(X.cols())
  {
    if (!(h > 0.0))
      throw ConfigError("bandwidth must be positive");
    if (n_ < 1)
      throw ConfigError("lack-of-fit statistics need a nonempty sample");
    kernel_.dim = static_cast<int>(d_);
    hd_ = std::pow(h_, static_cast<double>(d_));
    k0_ = std::pow(kernel_.eval1(0.0), static_cast<double>(d_)) / hd_;
    kk0_ = std::pow(kernel_.selfconv1(0.0), static_cast<double>(d_)) / hd_;

    const NeighborIndex index(X);
    const double radius = 2.0 * kernel_.support_radius() * h_;
    for (Eigen::Index i = 0; i < n_; ++i) {
      index.visit(X(i, 0), radius, [&](Eigen::Index j) {
        if (j <= i)
          return;
        double kw = 1.0, kk = 1.0;
        for (Eigen::Index c = 0; c < d_; ++c) {
          const double u = (X(i, c) - X(j, c)) / h_;
          kw *= kernel_.eval1(u);
          kk *= kernel_.selfconv1(u);
        }
        if (kk == 0.0 && kw == 0.0)
          return;
        pairs_.push_back({i, j, kw / hd_, kk / hd_, kw * kw});
      });
    }
  }

  double bandwidth() const noexcept { return h_; }
  Eigen::Index size() const noexcept { return n_; }
  Eigen::Index dim() const noexcept { return d_; }
  const Kernel& kernel() const noexcept { return kernel_; }

  //! (h^{d/2}/n) sum_{i,j} (K*K)_h(X_i - X_j) e_i e_j, diagonal included.
  double t(const Eigen::VectorXd& e) const
  {
    double off = 0.0;
    for (const auto& p : pairs_)
      off += p.kk * e[p.i] * e[p.j];
    return std::sqrt(hd_) / static_cast<double>(n_) * (kk0_ * e.squaredNorm() + 2.0 * off);
  }

  //! (n(n-1))^{-1} sum_{i != j} K_h(X_i - X_j) e_i e_j.
  double v(const Eigen::VectorXd& e) const
  {
    require_pairs();
    double off = 0.0;
    for (const auto& p : pairs_)
      off += p.kw * e[p.i] * e[p.j];
    return 2.0 * off / (static_cast<double>(n_) * static_cast<double>(n_ - 1));
  }

  //! 2/(n(n-1)h^d) sum_{i != j} K^2((X_i - X_j)/h) e_i^2 e_j^2.
  double sigma_hat(const Eigen::VectorXd& e) const
  {
    require_pairs();
    double off = 0.0;
    for (const auto& p : pairs_)
      off += p.k2 * e[p.i] * e[p.i] * e[p.j] * e[p.j];
    return 2.0 * 2.0 * off / (static_cast<double>(n_) * static_cast<double>(n_ - 1) * hd_);
  }

  //! n^{-2} sum_{i,j} K_h(X_j - X_i), diagonal included.
  double s_hat() const
  {
    double off = 0.0;
    for (const auto& p : pairs_)
      off += p.kw;
    const double n = static_cast<double>(n_);
    return (n * k0_ + 2.0 * off) / (n * n);
  }

  //! n h^{d/2} V / sqrt(Sigma_hat); zero when the variance estimate vanishes.
  double v_standardized(const Eigen::VectorXd& e) const
  {
    const double s = sigma_hat(e);
    const double num = static_cast<double>(n_) * std::sqrt(hd_) * v(e);
    if (!(s > 0.0))
      return num == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), num);
    return num / std::sqrt(s);
  }

  LofNuisance nuisance(const Eigen::VectorXd& e, double sigma2) const
  {
    const auto mom = kernel_.moments();
    LofNuisance nu;
    nu.sigma2 = sigma2;
    nu.s_hat = s_hat();
    nu.sigma_hat = sigma_hat(e);
    nu.sigma_tilde = 2.0 * sigma2 * sigma2 * nu.s_hat * mom.int_k2;
    nu.b_h = sigma2 * mom.int_k2 / std::sqrt(hd_);
    nu.v_hat = 2.0 * sigma2 * sigma2 * nu.s_hat * mom.int_kk2;
    return nu;
  }

private:
  void require_pairs() const
  {
    if (n_ < 2)
      throw ConfigError("V and its variance estimate need n >= 2");
  }

  struct Pair {
    Eigen::Index i, j;
    double kw, kk, k2;
  };

  Kernel kernel_;
  double h_;
  Eigen::Index n_, d_;
  double hd_ = 1.0;
  double k0_ = 0.0;
  double kk0_ = 0.0;
  std::vector<Pair> pairs_;
};

//! Reference value of T from its integral form n h^{1/2} int (n^{-1} sum_i K_h(x - X_i) e_i)^2 dx.
//!
//! One-dimensional designs only. The covariate range widened by 2h is cut into
//! `intervals` equal cells; cells are further split at the kernel breakpoints
//! X_i +- h (compact kernels) and each piece gets a 3-point Gauss-Legendre rule.
inline double t_stat_quadrature(const Eigen::VectorXd& e, const Eigen::MatrixXd& X, const Kernel& k,
                                double h, int intervals = 2000)
{
  if (X.cols() != 1)
    throw ConfigError("quadrature reference is implemented for d = 1 only");
  if (intervals < 1)
    throw ConfigError("quadrature needs at least one interval");
  const Eigen::Index n = X.rows();
  const double a = X.col(0).minCoeff() - 2.0 * h;
  const double b = X.col(0).maxCoeff() + 2.0 * h;
  const double step = (b - a) / intervals;
  auto f = [&](double x) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      s += k.eval1((x - X(i, 0)) / h) / h * e[i];
    s /= static_cast<double>(n);
    return s * s;
  };
  std::vector<double> breaks;
  if (k.compact())
    for (Eigen::Index i = 0; i < n; ++i) {
      breaks.push_back(X(i, 0) - h);
      breaks.push_back(X(i, 0) + h);
    }
  std::sort(breaks.begin(), breaks.end());

  const double node = std::sqrt(0.6);
  auto gauss3 = [&](double lo, double hi) {
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    return half * (5.0 * f(mid - half * node) + 8.0 * f(mid) + 5.0 * f(mid + half * node)) / 9.0;
  };
  double total = 0.0;
  auto next = breaks.begin();
  for (int c = 0; c < intervals; ++c) {
    double lo = a + c * step;
    const double hi = c + 1 == intervals ? b : a + (c + 1) * step;
    while (next != breaks.end() && *next <= lo)
      ++next;
    for (; next != breaks.end() && *next < hi; ++next) {
      total += gauss3(lo, *next);
      lo = *next;
    }
    total += gauss3(lo, hi);
  }
  return static_cast<double>(n) * std::sqrt(h) * total;
}

//! Lack-of-fit testing for one fitted transformation model.
//!
//! Resolves the bandwidth once on (X, Z) and keeps the pair weights; every
//! calibration scheme reuses them, including the bootstrap replicates.
class LackOfFitTest {
public:
  LackOfFitTest(const FittedModel& fm, const Sample& sample, const RegressionFamily& fam,
                const LofConfig& cfg)
    : fm_(fm), sample_(sample), fam_(fam), cfg_(cfg),
      h_(cfg.bandwidth.resolve(sample.x, fm.z, Estimator::NadarayaWatson,
                               Kernel{cfg.kernel.type, static_cast<int>(sample.dim())})),
      engine_(sample.x, cfg.kernel, h_)
  {
    cfg_.validate();
    sample_.validate();
    if (fm_.residuals.size() != sample_.size())
      throw ConfigError("fitted model does not match the sample");
  }

  double bandwidth() const noexcept { return h_; }
  const LofEngine& engine() const noexcept { return engine_; }

  double t_stat() const { return engine_.t(fm_.residuals); }
  double v_stat() const { return engine_.v(fm_.residuals); }
  LofNuisance nuisance() const { return engine_.nuisance(fm_.residuals, fm_.sigma2); }

  //! The value compared with bootstrap replicates: raw T, or V standardized by its own Sigma_hat.
  double bootstrap_statistic(LofStatistic which, const Eigen::VectorXd& e) const
  {
    return which == LofStatistic::T ? engine_.t(e) : engine_.v_standardized(e);
  }

  TestReport asym(LofStatistic which) const
  {
    TestReport r = base_report(which, Method::Asym);
    const LofNuisance nu = nuisance();
    if (which == LofStatistic::T) {
      if (!(nu.v_hat > 0.0))
        throw DegenerateVariance("asymptotic variance estimate of T is zero");
      r.standardized = (r.value - nu.b_h) / std::sqrt(nu.v_hat);
    } else {
      if (!(nu.sigma_hat > 0.0))
        throw DegenerateVariance("asymptotic variance estimate of V is zero");
      r.standardized = static_cast<double>(sample_.size()) *
                       std::sqrt(std::pow(h_, static_cast<double>(sample_.dim()))) * r.value /
                       std::sqrt(nu.sigma_hat);
    }
    calibrate_asymptotic(r);
    return r;
  }

  //! Run one calibration scheme for both statistics on shared bootstrap samples.
  std::pair<TestReport, TestReport> run_both(const BootstrapPlan& plan) const
  {
    plan.validate();
    if (plan.method == Method::Asym)
      return {asym(LofStatistic::T), asym(LofStatistic::V)};

    TestReport rt = base_report(LofStatistic::T, plan.method);
    TestReport rv = base_report(LofStatistic::V, plan.method);
    rt.seed = rv.seed = plan.seed;
    rt.standardized = bootstrap_statistic(LofStatistic::T, fm_.residuals);
    rv.standardized = bootstrap_statistic(LofStatistic::V, fm_.residuals);

    const auto B = static_cast<std::size_t>(plan.replications);
    std::vector<double> tstar(B), vstar(B);
    std::vector<int> failed(B, 0), redrawn(B, 0), clamped(B, 0);
    Replicator rep = make_replicator(plan);
    parallel_for(
      B,
      [&](std::size_t b) {
        for (int attempt = 0; attempt <= 3; ++attempt) {
          try {
            Counters cnt;
            const Eigen::VectorXd e = rep(b, attempt, cnt);
            tstar[b] = engine_.t(e);
            vstar[b] = engine_.v_standardized(e);
            redrawn[b] += cnt.redrawn;
            clamped[b] += cnt.clamped;
            return;
          } catch (const Error&) {
          }
        }
        tstar[b] = vstar[b] = std::numeric_limits<double>::quiet_NaN();
        failed[b] = 1;
      },
      plan.threads);

    for (TestReport* r : {&rt, &rv}) {
      r->failed_replications = sum(failed);
      r->redrawn_observations = sum(redrawn);
      r->clamped_observations = sum(clamped);
    }
    calibrate_bootstrap(rt, tstar);
    calibrate_bootstrap(rv, vstar);
    return {std::move(rt), std::move(rv)};
  }

  TestReport run(LofStatistic which, const BootstrapPlan& plan) const
  {
    auto both = run_both(plan);
    return which == LofStatistic::T ? std::move(both.first) : std::move(both.second);
  }

  TestReport run(LofStatistic which) const { return run(which, cfg_.plan); }

private:
  struct Counters {
    int redrawn = 0;
    int clamped = 0;
  };
  using Replicator = std::function<Eigen::VectorXd(std::size_t, int, Counters&)>;

  static int sum(const std::vector<int>& v)
  {
    int s = 0;
    for (int x : v)
      s += x;
    return s;
  }

  static StreamSeed replicate_seed(const BootstrapPlan& plan, std::size_t b, int attempt, Purpose p)
  {
    return {plan.seed, static_cast<std::uint64_t>(b) | (static_cast<std::uint64_t>(attempt) << 40), p};
  }

  TestReport base_report(LofStatistic which, Method m) const
  {
    TestReport r;
    r.test = "lof";
    r.statistic = to_string(which);
    r.method = m;
    r.alpha = cfg_.alpha;
    r.theta = fm_.theta;
    r.h = h_;
    r.value = which == LofStatistic::T ? t_stat() : v_stat();
    const LofNuisance nu = nuisance();
    r.nuisance = {{"sigma2", nu.sigma2},           {"s_hat", nu.s_hat},
                  {"Sigma_hat", nu.sigma_hat},     {"Sigma_tilde", nu.sigma_tilde},
                  {"b_h", nu.b_h},                 {"V_hat", nu.v_hat}};
    return r;
  }

  Eigen::VectorXd np_residuals() const
  {
    const Kernel k{cfg_.kernel.type, static_cast<int>(sample_.dim())};
    return fm_.z - fitted_values(Estimator::NadarayaWatson, sample_.x, fm_.z, h_, k);
  }

  Replicator make_replicator(const BootstrapPlan& plan) const
  {
    const MultiplierLaw law = plan.effective_law();
    const Eigen::VectorXd e = fm_.residuals;
    const Eigen::Index n = sample_.size();

    switch (plan.method) {
    case Method::Mb:
    case Method::Cmb: {
      const bool centered = plan.method == Method::Cmb;
      return [=](std::size_t b, int attempt, Counters&) {
        Stream s(replicate_seed(plan, b, attempt, Purpose::Multipliers));
        Eigen::VectorXd u = e.cwiseProduct(draw_multipliers(law, n, s));
        if (centered)
          u.array() -= u.mean();
        return u;
      };
    }
    case Method::Swb: {
      const Eigen::VectorXd mfit = fam_.evaluate(sample_.x, fm_.beta);
      const Eigen::VectorXd eps = np_residuals();
      return [=, this](std::size_t b, int attempt, Counters&) {
        Stream s(replicate_seed(plan, b, attempt, Purpose::Multipliers));
        const Eigen::VectorXd zstar = mfit + eps.cwiseProduct(draw_multipliers(law, n, s));
        const Eigen::VectorXd bstar = least_squares(sample_.x, zstar, fam_, fm_.beta);
        return Eigen::VectorXd(zstar - fam_.evaluate(sample_.x, bstar));
      };
    }
    case Method::Twb: {
      const Eigen::VectorXd mfit = fam_.evaluate(sample_.x, fm_.beta);
      const SmoothedResample resampler{np_residuals(), plan.a_n};
      return [=, this](std::size_t b, int attempt, Counters& cnt) {
        Stream s(replicate_seed(plan, b, attempt, Purpose::Resample));
        const TransformFamily& tf = cfg_.profile.transform;
        const TransformRange range = tf.range(fm_.theta);
        Sample boot{sample_.x, Eigen::VectorXd(n)};
        for (Eigen::Index i = 0; i < n; ++i) {
          double target = mfit[i] + resampler.draw(s);
          for (int tries = 0; tries < 100 && !range.contains(target); ++tries) {
            target = mfit[i] + resampler.draw(s);
            ++cnt.redrawn;
          }
          if (!range.contains(target)) {
            target = clamp_into(range, target);
            ++cnt.clamped;
          }
          boot.y[i] = tf.inverse(fm_.theta, target);
        }
        const double theta_star = estimate_theta(boot, cfg_.profile);
        const Eigen::VectorXd zstar = transform_all(tf, theta_star, boot.y);
        const Eigen::VectorXd bstar = least_squares(sample_.x, zstar, fam_, fm_.beta);
        return Eigen::VectorXd(zstar - fam_.evaluate(sample_.x, bstar));
      };
    }
    case Method::Asym:
      break;
    }
    throw ConfigError("no replicate generator for the asymptotic method");
  }

  static double clamp_into(const TransformRange& r, double z)
  {
    if (!(z < r.upper))
      return r.upper - 1e-8 * (1.0 + std::abs(r.upper));
    return r.lower + 1e-8 * (1.0 + std::abs(r.lower));
  }

  FittedModel fm_;
  Sample sample_;
  RegressionFamily fam_;
  LofConfig cfg_;
  double h_;
  LofEngine engine_;
};

namespace detail {

inline LofEngine lof_engine(const FittedModel& fm, const Eigen::MatrixXd& X, const LofConfig& cfg)
{
  const Kernel k{cfg.kernel.type, static_cast<int>(X.cols())};
  return LofEngine(X, k, cfg.bandwidth.resolve(X, fm.z, Estimator::NadarayaWatson, k));
}

} // namespace detail

inline double t_stat(const FittedModel& fm, const Eigen::MatrixXd& X, const LofConfig& cfg)
{
  return detail::lof_engine(fm, X, cfg).t(fm.residuals);
}

inline double v_stat(const FittedModel& fm, const Eigen::MatrixXd& X, const LofConfig& cfg)
{
  return detail::lof_engine(fm, X, cfg).v(fm.residuals);
}

inline LofNuisance lof_nuisance(const FittedModel& fm, const Eigen::MatrixXd& X, const LofConfig& cfg)
{
  return detail::lof_engine(fm, X, cfg).nuisance(fm.residuals, fm.sigma2);
}

inline TestReport lof_test_asym(const FittedModel& fm, const Sample& s, const RegressionFamily& fam,
                                const LofConfig& cfg, LofStatistic which)
{
  return LackOfFitTest(fm, s, fam, cfg).asym(which);
}

inline TestReport lof_test(const FittedModel& fm, const Sample& s, const RegressionFamily& fam,
                           const LofConfig& cfg, LofStatistic which)
{
  return LackOfFitTest(fm, s, fam, cfg).run(which);
}

} // namespace transtest
