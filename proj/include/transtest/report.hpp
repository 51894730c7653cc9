#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "errors.hpp"
#include "resampling.hpp"

namespace transtest {

enum class Method { Asym, Swb, Twb, Mb, Cmb };

inline std::string to_string(Method m)
{
  switch (m) {
  case Method::Asym: return "asym";
  case Method::Swb: return "swb";
  case Method::Twb: return "twb";
  case Method::Mb: return "mb";
  case Method::Cmb: return "cmb";
  }
  return "?";
}

inline Method parse_method(const std::string& s)
{
  if (s == "asym") return Method::Asym;
  if (s == "swb") return Method::Swb;
  if (s == "twb") return Method::Twb;
  if (s == "mb") return Method::Mb;
  if (s == "cmb") return Method::Cmb;
  throw ConfigError("unknown calibration method '" + s + "'");
}

//! Calibration scheme and its resampling settings.
struct BootstrapPlan {
  Method method = Method::Cmb;
  int replications = 500;
  //! Law of the wild-bootstrap U_i (swb) or the multipliers xi_i (mb, cmb).
  //! Unset: Mammen two-point for swb, Rademacher for mb and cmb.
  std::optional<MultiplierLaw> law;
  double a_n = 0.1;
  std::uint64_t seed = 0;
  //! Worker threads for replicates; 0 uses the process default.
  unsigned threads = 0;

  MultiplierLaw effective_law() const
  {
    if (law)
      return *law;
    return method == Method::Swb ? MultiplierLaw::MammenTwoPoint : MultiplierLaw::Rademacher;
  }

  void validate() const
  {
    if (method != Method::Asym && replications < 1)
      throw ConfigError("bootstrap plan needs at least one replication");
    if (!(a_n >= 0.0))
      throw ConfigError("smoothing constant a_n must be nonnegative");
  }
};

//! Outcome of one specification test.
struct TestReport {
  std::string test;            // "lof" or "sig"
  std::string statistic;       // T, V, I or Itilde
  Method method = Method::Asym;
  double value = 0.0;          // raw statistic
  double standardized = 0.0;   // the quantity compared against the reference law
  double alpha = 0.05;
  double p_value = 1.0;
  double critical_value = 0.0;
  bool reject = false;
  double theta = 1.0;
  double h = 0.0;
  std::optional<double> g;
  std::map<std::string, double> nuisance;
  int replications = 0;
  int effective_replications = 0;
  int failed_replications = 0;
  int redrawn_observations = 0;
  int clamped_observations = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> advisories;
  std::vector<double> replicate_statistics;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_upper_p(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

inline double normal_quantile(double p)
{
  if (!(p > 0.0 && p < 1.0))
    throw ConfigError("normal quantile needs p in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

//! Fill p-value, critical value and decision from replicate statistics.
//!
//! p = (1 + #{stat* >= stat}) / (B_eff + 1); NaN replicates are dropped.
inline void calibrate_bootstrap(TestReport& r, const std::vector<double>& replicates)
{
  std::vector<double> ok;
  ok.reserve(replicates.size());
  for (double v : replicates)
    if (!std::isnan(v))
      ok.push_back(v);
  r.replications = static_cast<int>(replicates.size());
  r.effective_replications = static_cast<int>(ok.size());
  std::size_t exceed = 0;
  for (double v : ok)
    if (v >= r.standardized)
      ++exceed;
  r.p_value = (1.0 + static_cast<double>(exceed)) / (static_cast<double>(ok.size()) + 1.0);
  if (!ok.empty()) {
    std::sort(ok.begin(), ok.end());
    const auto k = static_cast<std::size_t>(
      std::clamp(std::ceil((1.0 - r.alpha) * static_cast<double>(ok.size())) - 1.0, 0.0,
                 static_cast<double>(ok.size() - 1)));
    r.critical_value = ok[k];
  } else {
    r.critical_value = std::numeric_limits<double>::quiet_NaN();
  }
  r.reject = r.p_value < r.alpha;
  r.replicate_statistics = replicates;
}

inline void calibrate_asymptotic(TestReport& r)
{
  r.p_value = normal_upper_p(r.standardized);
  r.critical_value = normal_quantile(1.0 - r.alpha);
  r.reject = r.p_value < r.alpha;
}

} // namespace transtest
