#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
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

//! Covariates split into the conditioning block W (n x p) and the tested block V (n x q).
struct SigSample {
  Eigen::MatrixXd w;
  Eigen::MatrixXd v;
  Eigen::VectorXd y;

  Eigen::Index size() const noexcept { return y.size(); }
  Eigen::Index p() const noexcept { return w.cols(); }
  Eigen::Index q() const noexcept { return v.cols(); }

  void validate() const
  {
    if (w.rows() != y.size() || v.rows() != y.size())
      throw ConfigError("W, V and Y must have the same number of rows");
    if (w.cols() < 1 || v.cols() < 1)
      throw ConfigError("significance testing needs p >= 1 and q >= 1");
  }

  Eigen::MatrixXd x() const
  {
    Eigen::MatrixXd X(w.rows(), w.cols() + v.cols());
    X << w, v;
    return X;
  }

  Sample full() const { return {x(), y}; }
};

//! Which functional is reported as the observed statistic for mb/cmb.
enum class SigObserved { Tilde, Full };

struct SigConfig {
  KernelType k = KernelType::Epanechnikov;
  KernelType l = KernelType::Epanechnikov;
  //! Cross validation resolves h on the full-covariate smoother; the multiplier scales it.
  BandwidthSpec h = BandwidthSpec::cv();
  //! Cross validation resolves g on the W-only smoother.
  BandwidthSpec g = BandwidthSpec::cv();
  double psi_var = 0.10;
  double alpha = 0.05;
  BootstrapPlan plan{};
  SigObserved observed = SigObserved::Tilde;
  ProfileConfig profile{};

  void validate() const
  {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw ConfigError("alpha must lie in (0,1)");
    if (!(psi_var > 0.0))
      throw ConfigError("psi variance must be positive");
    h.validate();
    g.validate();
    plan.validate();
  }
};

//! Centred normal density with variance v, as a product over coordinates.
inline double psi(double t, double v)
{
  return std::exp(-0.5 * t * t / v) / std::sqrt(2.0 * std::numbers::pi * v);
}

//! Precomputed weight matrices for the significance statistics at fixed (h, g).
class SigEngine {
public:
  SigEngine(const Eigen::MatrixXd& W, const Eigen::MatrixXd& V, double h, double g, KernelType k,
            KernelType l, double psi_var)
    : n_(W.rows()), p_(W.cols()), h_(h), g_(g)
  {
    if (!(h > 0.0) || !(g > 0.0))
      throw ConfigError("bandwidths must be positive");
    if (n_ < 2)
      throw ConfigError("significance statistics need n >= 2");
    const Kernel K{k, static_cast<int>(p_)};
    const Kernel L{l, static_cast<int>(p_)};
    lg_.setZero(n_, n_);
    wt_.setZero(n_, n_);
    Eigen::VectorXd dw(p_);
    for (Eigen::Index i = 0; i < n_; ++i) {
      for (Eigen::Index j = i + 1; j < n_; ++j) {
        dw = W.row(i) - W.row(j);
        const double lv = L.scaled(dw, g_);
        lg_(i, j) = lg_(j, i) = lv;
        const double kv = K.scaled(dw, h_);
        if (kv != 0.0) {
          double ps = 1.0;
          for (Eigen::Index c = 0; c < V.cols(); ++c)
            ps *= psi(V(i, c) - V(j, c), psi_var);
          wt_(i, j) = wt_(j, i) = kv * ps;
        }
      }
    }
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(p_);
    lg0_ = L.scaled(zero, g_);
    fhat_ = (lg_.rowwise().sum().array() + lg0_) / static_cast<double>(n_);
  }

  Eigen::Index size() const noexcept { return n_; }
  double h() const noexcept { return h_; }
  double g() const noexcept { return g_; }
  const Eigen::VectorXd& density() const noexcept { return fhat_; }

  //! Nadaraya-Watson fit of Z on W with kernel L and bandwidth g, own point included.
  Eigen::VectorXd m0(const Eigen::VectorXd& z) const { return z - m0_residuals(z); }

  //! Z - m0(W), formed from differences so that constant Z gives exact zeros.
  Eigen::VectorXd m0_residuals(const Eigen::VectorXd& z) const
  {
    const Eigen::VectorXd den = lg_.rowwise().sum().array() + lg0_;
    return differences(z).rowwise().sum().cwiseQuotient(den);
  }

  //! Exact distinct-index quadruple sum, via row sums and A A^T.
  double i_stat(const Eigen::VectorXd& z) const
  {
    const Eigen::MatrixXd A = differences(z);
    const Eigen::VectorXd S = A.rowwise().sum();
    const Eigen::MatrixXd P = A * A.transpose();
    const double n = static_cast<double>(n_);
    double total = 0.0;
    for (Eigen::Index j = 0; j < n_; ++j)
      for (Eigen::Index i = 0; i < n_; ++i) {
        const double w = wt_(i, j);
        if (w == 0.0)
          continue;
        total += w * ((S[i] - A(i, j)) * (S[j] - A(j, i)) - P(i, j));
      }
    return std::pow(h_, 0.5 * static_cast<double>(p_)) / (n * n * n) * total;
  }

  //! Exact distinct-index six-fold variance sum.
  //!
  //! For each pair (i, j) the inner sum over four distinct indices outside
  //! {i, j} is expanded over the 15 set partitions of {k, k', l, l'} with
  //! Moebius weights, using power sums of a_i = A(i, .) and a_j = A(j, .).
  double tau2(const Eigen::VectorXd& z) const
  {
    const Eigen::MatrixXd A = differences(z);
    const Eigen::MatrixXd A2 = A.cwiseAbs2();
    const Eigen::VectorXd S = A.rowwise().sum();
    const Eigen::VectorXd Q = A2.rowwise().sum();
    const Eigen::MatrixXd P11 = A * A.transpose();
    const Eigen::MatrixXd P21 = A2 * A.transpose();
    const Eigen::MatrixXd P22 = A2 * A2.transpose();
    const double n = static_cast<double>(n_);
    double total = 0.0;
    for (Eigen::Index j = 0; j < n_; ++j)
      for (Eigen::Index i = 0; i < n_; ++i) {
        const double w = wt_(i, j);
        if (w == 0.0)
          continue;
        const double m10 = S[i] - A(i, j);
        const double m01 = S[j] - A(j, i);
        const double m20 = Q[i] - A(i, j) * A(i, j);
        const double m02 = Q[j] - A(j, i) * A(j, i);
        const double m11 = P11(i, j);
        const double m21 = P21(i, j);
        const double m12 = P21(j, i);
        const double m22 = P22(i, j);
        const double g = m10 * m10 * m01 * m01 - m20 * m01 * m01 - m02 * m10 * m10 -
                         4.0 * m11 * m10 * m01 + m20 * m02 + 2.0 * m11 * m11 + 4.0 * m21 * m01 +
                         4.0 * m12 * m10 - 6.0 * m22;
        total += w * w * g;
      }
    const double n3 = n * n * n;
    return 2.0 * std::pow(h_, static_cast<double>(p_)) / (n3 * n3) * total;
  }

  //! (h^{p/2}/n) sum_{i != j} K_h psi f_i f_j e_i e_j.
  double i_tilde(const Eigen::VectorXd& e) const
  {
    const Eigen::VectorXd fe = fhat_.cwiseProduct(e);
    return std::pow(h_, 0.5 * static_cast<double>(p_)) / static_cast<double>(n_) *
           fe.dot(wt_ * fe);
  }

private:
  Eigen::MatrixXd differences(const Eigen::VectorXd& z) const
  {
    Eigen::MatrixXd A = z.replicate(1, n_) - z.transpose().replicate(n_, 1);
    return A.cwiseProduct(lg_);
  }

  Eigen::Index n_, p_;
  double h_, g_;
  double lg0_ = 0.0;
  Eigen::MatrixXd lg_; // L_g(W_i - W_k), zero diagonal
  Eigen::MatrixXd wt_; // K_h(W_i - W_j) psi(V_i - V_j), zero diagonal
  Eigen::VectorXd fhat_;
};

//! Covariate-significance test of V given W for one transformation estimate.
class SignificanceTest {
public:
  SignificanceTest(double theta, const SigSample& s, const SigConfig& cfg)
    : theta_(theta), sample_(s), cfg_(cfg)
  {
    sample_.validate();
    cfg_.validate();
    x_ = sample_.x();
    z_ = transform_all(cfg_.profile.transform, theta_, sample_.y);

    const Kernel kx{cfg_.k, static_cast<int>(x_.cols())};
    const Kernel lw{cfg_.l, static_cast<int>(sample_.p())};
    g_ = cfg_.g.resolve(sample_.w, z_, Estimator::NadarayaWatson, lw);
    if (std::holds_alternative<CrossValidation>(cfg_.h.mode)) {
      BandwidthSpec unscaled = cfg_.h;
      unscaled.multiplier = 1.0;
      h_cv_ = unscaled.resolve(x_, z_, Estimator::NadarayaWatson, kx);
      h_ = *h_cv_ * cfg_.h.multiplier;
    } else {
      h_ = cfg_.h.resolve(x_, z_, Estimator::NadarayaWatson, kx);
    }
    engine_.emplace(sample_.w, sample_.v, h_, g_, cfg_.k, cfg_.l, cfg_.psi_var);
    e_ = engine_->m0_residuals(z_);
    m0_ = z_ - e_;

    if (sample_.p() > 5)
      advisories_.push_back("p > 5: the bandwidth conditions cannot all hold");
    if (h_ / g_ >= 1.0)
      advisories_.push_back("h/g >= 1: bandwidth h should be of smaller order than g");
  }

  double h() const noexcept { return h_; }
  double g() const noexcept { return g_; }
  const SigEngine& engine() const { return *engine_; }
  const Eigen::VectorXd& transformed() const noexcept { return z_; }
  const Eigen::VectorXd& residuals() const noexcept { return e_; }

  double i_stat() const { return engine_->i_stat(z_); }
  double tau2_hat() const { return engine_->tau2(z_); }
  double i_tilde() const { return engine_->i_tilde(e_); }

  TestReport asym() const
  {
    TestReport r = base_report("I", Method::Asym);
    r.value = i_stat();
    const double t2 = tau2_hat();
    r.nuisance["tau2_hat"] = t2;
    if (!(t2 > 0.0))
      throw DegenerateVariance("variance estimate tau^2 is zero");
    r.standardized = r.value / std::sqrt(t2);
    calibrate_asymptotic(r);
    return r;
  }

  TestReport run(const BootstrapPlan& plan) const
  {
    plan.validate();
    if (plan.method == Method::Asym)
      return asym();

    const bool tilde_replicates = plan.method == Method::Mb || plan.method == Method::Cmb;
    const bool tilde_observed = tilde_replicates && cfg_.observed == SigObserved::Tilde;
    TestReport r = base_report(tilde_observed ? "Itilde" : "I", plan.method);
    r.seed = plan.seed;
    r.value = tilde_observed ? i_tilde() : i_stat();
    r.standardized = r.value;

    const auto B = static_cast<std::size_t>(plan.replications);
    std::vector<double> stars(B);
    std::vector<int> failed(B, 0), redrawn(B, 0), clamped(B, 0);
    const auto rep = make_replicator(plan);
    parallel_for(
      B,
      [&](std::size_t b) {
        for (int attempt = 0; attempt <= 3; ++attempt) {
          try {
            stars[b] = rep(b, attempt, redrawn[b], clamped[b]);
            return;
          } catch (const Error&) {
          }
        }
        stars[b] = std::numeric_limits<double>::quiet_NaN();
        failed[b] = 1;
      },
      plan.threads);
    for (std::size_t b = 0; b < B; ++b) {
      r.failed_replications += failed[b];
      r.redrawn_observations += redrawn[b];
      r.clamped_observations += clamped[b];
    }
    calibrate_bootstrap(r, stars);
    return r;
  }

  TestReport run() const { return run(cfg_.plan); }

private:
  using Replicator = std::function<double(std::size_t, int, int&, int&)>;

  static StreamSeed replicate_seed(const BootstrapPlan& plan, std::size_t b, int attempt, Purpose p)
  {
    return {plan.seed, static_cast<std::uint64_t>(b) | (static_cast<std::uint64_t>(attempt) << 40), p};
  }

  TestReport base_report(const std::string& stat, Method m) const
  {
    TestReport r;
    r.test = "sig";
    r.statistic = stat;
    r.method = m;
    r.alpha = cfg_.alpha;
    r.theta = theta_;
    r.h = h_;
    r.g = g_;
    r.nuisance["psi_var"] = cfg_.psi_var;
    r.advisories = advisories_;
    return r;
  }

  //! Full-covariate Nadaraya-Watson fit with the cross-validated bandwidth.
  Eigen::VectorXd full_fit() const
  {
    const Kernel kx{KernelType::Epanechnikov, static_cast<int>(x_.cols())};
    const double hm =
      h_cv_ ? *h_cv_ : BandwidthSpec::cv().resolve(x_, z_, Estimator::NadarayaWatson, kx);
    return fitted_values(Estimator::NadarayaWatson, x_, z_, hm, kx);
  }

  Replicator make_replicator(const BootstrapPlan& plan) const
  {
    const MultiplierLaw law = plan.effective_law();
    const Eigen::Index n = sample_.size();
    const SigEngine& eng = *engine_;

    switch (plan.method) {
    case Method::Mb:
    case Method::Cmb: {
      const bool centered = plan.method == Method::Cmb;
      const Eigen::VectorXd e = e_;
      return [=, &eng](std::size_t b, int attempt, int&, int&) {
        Stream s(replicate_seed(plan, b, attempt, Purpose::Multipliers));
        Eigen::VectorXd u = e.cwiseProduct(draw_multipliers(law, n, s));
        if (centered)
          u.array() -= u.mean();
        return eng.i_tilde(u);
      };
    }
    case Method::Swb: {
      const Eigen::VectorXd eps = z_ - full_fit();
      const Eigen::VectorXd m0 = m0_;
      return [=, &eng](std::size_t b, int attempt, int&, int&) {
        Stream s(replicate_seed(plan, b, attempt, Purpose::Multipliers));
        const Eigen::VectorXd zstar = m0 + eps.cwiseProduct(draw_multipliers(law, n, s));
        return eng.i_stat(zstar);
      };
    }
    case Method::Twb: {
      const SmoothedResample resampler{z_ - full_fit(), plan.a_n};
      const Eigen::VectorXd m0 = m0_;
      return [=, this, &eng](std::size_t b, int attempt, int& redrawn, int& clamped) {
        Stream s(replicate_seed(plan, b, attempt, Purpose::Resample));
        const TransformFamily& tf = cfg_.profile.transform;
        const TransformRange range = tf.range(theta_);
        Sample boot{x_, Eigen::VectorXd(n)};
        for (Eigen::Index i = 0; i < n; ++i) {
          double target = m0[i] + resampler.draw(s);
          for (int tries = 0; tries < 100 && !range.contains(target); ++tries) {
            target = m0[i] + resampler.draw(s);
            ++redrawn;
          }
          if (!range.contains(target)) {
            target = !(target < range.upper) ? range.upper - 1e-8 * (1.0 + std::abs(range.upper))
                                             : range.lower + 1e-8 * (1.0 + std::abs(range.lower));
            ++clamped;
          }
          boot.y[i] = tf.inverse(theta_, target);
        }
        const double theta_star = estimate_theta(boot, cfg_.profile);
        return eng.i_stat(transform_all(tf, theta_star, boot.y));
      };
    }
    case Method::Asym:
      break;
    }
    throw ConfigError("no replicate generator for the asymptotic method");
  }

  double theta_;
  SigSample sample_;
  SigConfig cfg_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd z_;
  double h_ = 0.0;
  double g_ = 0.0;
  std::optional<double> h_cv_;
  std::optional<SigEngine> engine_;
  Eigen::VectorXd m0_;
  Eigen::VectorXd e_;
  std::vector<std::string> advisories_;
};

inline double i_stat(double theta, const SigSample& s, const SigConfig& cfg)
{
  return SignificanceTest(theta, s, cfg).i_stat();
}

inline double tau2_hat(double theta, const SigSample& s, const SigConfig& cfg)
{
  return SignificanceTest(theta, s, cfg).tau2_hat();
}

inline double i_tilde_stat(double theta, const SigSample& s, const SigConfig& cfg)
{
  return SignificanceTest(theta, s, cfg).i_tilde();
}

inline TestReport sig_test(double theta, const SigSample& s, const SigConfig& cfg)
{
  return SignificanceTest(theta, s, cfg).run();
}

} // namespace transtest
