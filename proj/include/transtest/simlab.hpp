#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "errors.hpp"
#include "lackoffit.hpp"
#include "modelfit.hpp"
#include "parallel.hpp"
#include "report.hpp"
#include "resampling.hpp"
#include "significance.hpp"
#include "transforms.hpp"

namespace transtest {

enum class Deviation { Zero, Square, Exp, Sin };

inline std::string to_string(Deviation d)
{
  switch (d) {
  case Deviation::Zero: return "zero";
  case Deviation::Square: return "square";
  case Deviation::Exp: return "exp";
  case Deviation::Sin: return "sin";
  }
  return "?";
}

inline Deviation parse_deviation(const std::string& s)
{
  if (s == "zero" || s == "0") return Deviation::Zero;
  if (s == "square" || s == "x2") return Deviation::Square;
  if (s == "exp") return Deviation::Exp;
  if (s == "sin") return Deviation::Sin;
  throw ConfigError("unknown deviation '" + s + "'");
}

//! Lack-of-fit design: Lambda_theta0(Y) = 3 + 5X + c*Delta(X) + eps.
struct LofScenario {
  double theta0 = 0.0;
  Eigen::Index n = 200;
  Deviation deviation = Deviation::Zero;
  double amplitude = 0.0;
  //! When set, the amplitude is scaled by n^{-1/2} h^{-1/4} (local alternative at bandwidth h).
  std::optional<double> local_h;

  double effective_amplitude() const
  {
    if (!local_h)
      return amplitude;
    return amplitude / std::sqrt(static_cast<double>(n)) * std::pow(*local_h, -0.25);
  }

  double delta(double x) const
  {
    const double c = effective_amplitude();
    switch (deviation) {
    case Deviation::Zero: return 0.0;
    case Deviation::Square: return c * x * x;
    case Deviation::Exp: return c * std::exp(x);
    case Deviation::Sin: return c * std::sin(2.0 * std::numbers::pi * x);
    }
    return 0.0;
  }

  std::string label() const
  {
    if (deviation == Deviation::Zero || amplitude == 0.0)
      return "0";
    std::ostringstream os;
    os << amplitude;
    switch (deviation) {
    case Deviation::Square: return os.str() + "X^2";
    case Deviation::Exp: return os.str() + "exp(X)";
    case Deviation::Sin: return os.str() + "sin(2piX)";
    default: return os.str();
    }
  }
};

//! Standard normal truncated to [-3, 3], by rejection.
inline double truncated_normal(Stream& s)
{
  for (;;) {
    const double e = s.normal();
    if (std::abs(e) <= 3.0)
      return e;
  }
}

inline Sample gen_lof(const LofScenario& sc, Stream& stream,
                      const TransformFamily& tf = TransformFamily(), Eigen::VectorXd* errors = nullptr)
{
  if (sc.n < 1)
    throw ConfigError("sample size must be positive");
  Sample s{Eigen::MatrixXd(sc.n, 1), Eigen::VectorXd(sc.n)};
  if (errors)
    errors->resize(sc.n);
  for (Eigen::Index i = 0; i < sc.n; ++i) {
    const double x = stream.uniform();
    const double eps = truncated_normal(stream);
    s.x(i, 0) = x;
    s.y[i] = tf.inverse(sc.theta0, 3.0 + 5.0 * x + sc.delta(x) + eps);
    if (errors)
      (*errors)[i] = eps;
  }
  return s;
}

//! Significance designs on (W, V) uniform on the unit square, standard normal errors.
struct SigScenario {
  int model = 1; // 1..7
  Eigen::Index n = 100;
  double theta0 = 1.0;
  //! When set, the V-dependent part is scaled by n^{-1/2} h^{-1/4} (local alternative).
  std::optional<double> local_h;

  double delta_scale() const
  {
    if (!local_h)
      return 1.0;
    return 1.0 / std::sqrt(static_cast<double>(n)) * std::pow(*local_h, -0.25);
  }

  //! Right-hand side of the model equation.
  double rhs(double w, double v, double eps) const
  {
    const double c = delta_scale();
    switch (model) {
    case 1: return 1.0 + w + eps;
    case 2: return w + c * v + eps;
    case 3: return 3.0 + 2.0 * w + c * 0.25 * std::sin(2.0 * std::numbers::pi * v) + eps;
    case 4: return 1.0 + w + c * std::sin(5.0 * v) + eps;
    case 5: return 3.0 + 2.0 * w + 5.0 * v * v * eps;
    case 6: return 1.0 + w + c * v * v + eps;
    case 7: return 1.0 + w + c * std::exp(v * v) + eps;
    default: throw ConfigError("significance model id must be 1..7");
    }
  }

  std::string label() const { return "(5." + std::to_string(model) + ")"; }
};

inline SigSample gen_sig(const SigScenario& sc, Stream& stream,
                         const TransformFamily& tf = TransformFamily(), Eigen::VectorXd* errors = nullptr)
{
  if (sc.model < 1 || sc.model > 7)
    throw ConfigError("significance model id must be 1..7");
  SigSample s{Eigen::MatrixXd(sc.n, 1), Eigen::MatrixXd(sc.n, 1), Eigen::VectorXd(sc.n)};
  if (errors)
    errors->resize(sc.n);
  for (Eigen::Index i = 0; i < sc.n; ++i) {
    const double w = stream.uniform();
    const double v = stream.uniform();
    const double eps = stream.normal();
    s.w(i, 0) = w;
    s.v(i, 0) = v;
    s.y[i] = tf.inverse(sc.theta0, sc.rhs(w, v, eps));
    if (errors)
      (*errors)[i] = eps;
  }
  return s;
}

//! mu_n = E[Delta(X)^2 f_X(X)] = integral of Delta^2 f_X^2 over [a, b].
inline double theoretical_shift_lof(const std::function<double(double)>& delta,
                                    const std::function<double(double)>& density, double a = 0.0,
                                    double b = 1.0)
{
  auto f = [&](double x) {
    const double d = delta(x);
    const double fx = density(x);
    return d * d * fx * fx;
  };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 15, 1e-12);
}

struct McEstimate {
  double value;
  double se;
};

//! Monte Carlo value of E[d(w,V1) d(w,V2) psi(V1 - V2)] for uniform W, V on [0,1].
inline McEstimate theoretical_shift_sig(const std::function<double(double, double)>& d, double psi_var,
                                        std::size_t draws, Stream& stream)
{
  double mean = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    const double w = stream.uniform();
    const double v1 = stream.uniform();
    const double v2 = stream.uniform();
    const double x = d(w, v1) * d(w, v2) * psi(v1 - v2, psi_var);
    const double delta = x - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta * (x - mean);
  }
  const double var = draws > 1 ? m2 / static_cast<double>(draws - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(draws))};
}

//! Aggregated Monte Carlo rejection frequency for one (statistic, method) cell.
struct McReport {
  std::string scenario;
  std::string test;
  std::string statistic;
  Method method = Method::Asym;
  double rate = 0.0;
  double se = 0.0;
  int runs = 0;
  int failures = 0;
  int replications = 0;
  std::uint64_t seed = 0;
  double mean_h = 0.0;
  double wall_clock = 0.0;

  static double binomial_se(double rate, int runs)
  {
    return runs > 0 ? std::sqrt(rate * (1.0 - rate) / runs) : 0.0;
  }
};

struct LofMcSpec {
  LofScenario scenario{};
  std::vector<Method> methods{Method::Cmb};
  int runs = 200;
  BootstrapPlan plan{};
  //! Replications for the transformation wild bootstrap; <= 0 reuses plan.replications.
  int twb_replications = 0;
  LofConfig config{};
  RegressionFamily family = RegressionFamily::linear1d();
  //! Fit at the true parameter instead of estimating it.
  bool theta_known = false;
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

struct SigMcSpec {
  SigScenario scenario{};
  std::vector<Method> methods{Method::Cmb};
  int runs = 200;
  BootstrapPlan plan{};
  int twb_replications = 0;
  SigConfig config{};
  bool theta_known = false;
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

namespace detail {

inline std::uint64_t run_seed(std::uint64_t seed, std::size_t run, Purpose p)
{
  return StreamSeed{seed, static_cast<std::uint64_t>(run), p}.key();
}

struct RunOutcome {
  bool ok = false;
  double h = 0.0;
  std::vector<char> rejects; // per output cell
};

inline std::vector<McReport> aggregate(const std::vector<RunOutcome>& outs, std::vector<McReport> cells)
{
  for (std::size_t c = 0; c < cells.size(); ++c) {
    int ok = 0, rej = 0, fail = 0;
    double hsum = 0.0;
    for (const auto& o : outs) {
      if (!o.ok) {
        ++fail;
        continue;
      }
      ++ok;
      hsum += o.h;
      rej += o.rejects[c];
    }
    cells[c].runs = ok;
    cells[c].failures = fail;
    cells[c].rate = ok ? static_cast<double>(rej) / ok : 0.0;
    cells[c].se = McReport::binomial_se(cells[c].rate, ok);
    cells[c].mean_h = ok ? hsum / ok : 0.0;
  }
  return cells;
}

} // namespace detail

//! Lack-of-fit Monte Carlo: one cell per (statistic T/V, method), in methods order, T first.
inline std::vector<McReport> run_mc(const LofMcSpec& spec)
{
  if (spec.runs < 1)
    throw ConfigError("Monte Carlo needs at least one run");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t m = spec.methods.size();
  std::vector<detail::RunOutcome> outs(static_cast<std::size_t>(spec.runs));

  parallel_for(
    outs.size(),
    [&](std::size_t r) {
      auto& out = outs[r];
      out.rejects.assign(2 * m, 0);
      try {
        Stream data(spec.seed, r, Purpose::Data);
        const Sample s = gen_lof(spec.scenario, data, spec.config.profile.transform);
        const FittedModel fm = spec.theta_known
                                 ? fit_at(spec.scenario.theta0, s, spec.family, spec.config.profile)
                                 : fit(s, spec.family, spec.config.profile);
        const LackOfFitTest test(fm, s, spec.family, spec.config);
        out.h = test.bandwidth();
        for (std::size_t k = 0; k < m; ++k) {
          BootstrapPlan plan = spec.plan;
          plan.method = spec.methods[k];
          plan.threads = 1;
          plan.seed = detail::run_seed(spec.seed, r, Purpose::Bootstrap) + k;
          if (plan.method == Method::Twb && spec.twb_replications > 0)
            plan.replications = spec.twb_replications;
          const auto [rt, rv] = test.run_both(plan);
          out.rejects[k] = rt.reject;
          out.rejects[m + k] = rv.reject;
        }
        out.ok = true;
      } catch (const Error&) {
        out.ok = false;
      }
    },
    spec.threads);

  std::vector<McReport> cells;
  for (const char* stat : {"T", "V"})
    for (Method meth : spec.methods) {
      McReport c;
      std::ostringstream name;
      name << "lof theta0=" << spec.scenario.theta0 << " n=" << spec.scenario.n
           << " delta=" << spec.scenario.label();
      c.scenario = name.str();
      c.test = "lof";
      c.statistic = stat;
      c.method = meth;
      c.replications = meth == Method::Asym ? 0
                       : (meth == Method::Twb && spec.twb_replications > 0) ? spec.twb_replications
                                                                           : spec.plan.replications;
      c.seed = spec.seed;
      cells.push_back(c);
    }
  cells = detail::aggregate(outs, std::move(cells));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (auto& c : cells)
    c.wall_clock = secs;
  return cells;
}

//! Significance Monte Carlo: one cell per method, in methods order.
inline std::vector<McReport> run_mc(const SigMcSpec& spec)
{
  if (spec.runs < 1)
    throw ConfigError("Monte Carlo needs at least one run");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t m = spec.methods.size();
  std::vector<detail::RunOutcome> outs(static_cast<std::size_t>(spec.runs));

  parallel_for(
    outs.size(),
    [&](std::size_t r) {
      auto& out = outs[r];
      out.rejects.assign(m, 0);
      try {
        Stream data(spec.seed, r, Purpose::Data);
        const SigSample s = gen_sig(spec.scenario, data, spec.config.profile.transform);
        const double theta = spec.theta_known ? spec.scenario.theta0
                                              : estimate_theta(s.full(), spec.config.profile);
        const SignificanceTest test(theta, s, spec.config);
        out.h = test.h();
        for (std::size_t k = 0; k < m; ++k) {
          BootstrapPlan plan = spec.plan;
          plan.method = spec.methods[k];
          plan.threads = 1;
          plan.seed = detail::run_seed(spec.seed, r, Purpose::Bootstrap) + k;
          if (plan.method == Method::Twb && spec.twb_replications > 0)
            plan.replications = spec.twb_replications;
          out.rejects[k] = test.run(plan).reject;
        }
        out.ok = true;
      } catch (const Error&) {
        out.ok = false;
      }
    },
    spec.threads);

  std::vector<McReport> cells;
  for (Method meth : spec.methods) {
    McReport c;
    c.scenario = "sig model=" + spec.scenario.label() + " n=" + std::to_string(spec.scenario.n);
    c.test = "sig";
    c.statistic = (meth == Method::Mb || meth == Method::Cmb) &&
                      spec.config.observed == SigObserved::Tilde
                    ? "Itilde"
                    : "I";
    c.method = meth;
    c.replications = meth == Method::Asym ? 0
                     : (meth == Method::Twb && spec.twb_replications > 0) ? spec.twb_replications
                                                                         : spec.plan.replications;
    c.seed = spec.seed;
    cells.push_back(c);
  }
  cells = detail::aggregate(outs, std::move(cells));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (auto& c : cells)
    c.wall_clock = secs;
  return cells;
}

//! The thirteen alternatives of the lack-of-fit tables, null first.
inline std::vector<LofScenario> lof_table_rows(double theta0, Eigen::Index n = 200)
{
  std::vector<LofScenario> rows;
  rows.push_back({theta0, n, Deviation::Zero, 0.0, {}});
  for (double c : {2.0, 3.0, 4.0, 5.0})
    rows.push_back({theta0, n, Deviation::Square, c, {}});
  for (double c : {2.0, 3.0, 4.0, 5.0})
    rows.push_back({theta0, n, Deviation::Exp, c, {}});
  for (double c : {0.25, 0.5, 0.75, 1.0})
    rows.push_back({theta0, n, Deviation::Sin, c, {}});
  return rows;
}

} // namespace transtest
