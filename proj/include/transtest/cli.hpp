#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "lackoffit.hpp"
#include "modelfit.hpp"
#include "significance.hpp"
#include "simlab.hpp"

namespace transtest {

//! Every command-line setting; also the keys accepted in a --config file.
struct CliOptions {
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::string method = "cmb";
  int boot = 500;
  int twb_boot = 100;
  std::optional<double> theta0;
  std::optional<double> alpha;
  std::optional<double> h;
  std::optional<double> g;
  double psi_var = 0.10;
  double h_scale = 1.0;
  std::string statistic = "T";
  std::string observed = "tilde";
  bool replicates = false;
  std::string input;
  std::string out;
  std::string json;

  // simulate
  int table = 1;
  int runs = 200;
  std::optional<int> n;
  std::vector<std::string> methods;
  std::vector<int> rows;
  bool theta_known = false;
  bool timing = false;

  // gen
  std::string kind = "lof";
  std::optional<int> model;
  std::string deviation = "zero";
  double amplitude = 0.0;
};

namespace detail {

inline std::string format_rate(const McReport& m)
{
  if (m.runs == 0)
    return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", m.rate);
  return buf;
}

inline std::string format_double(double v)
{
  std::ostringstream os;
  write_double(os, v);
  return os.str();
}

//! Writes to --out when given, otherwise to the fallback stream.
class Sink {
public:
  Sink(const std::string& path, std::ostream& fallback) : os_(&fallback)
  {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_)
        throw DataError("cannot open '" + path + "' for writing");
      os_ = &file_;
    }
  }
  std::ostream& stream() { return *os_; }

private:
  std::ofstream file_;
  std::ostream* os_;
};

inline CsvTable load_table(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open '" + path + "'");
  try {
    return read_csv(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline BootstrapPlan plan_from(const CliOptions& o, Method method)
{
  BootstrapPlan p;
  p.method = method;
  p.replications = method == Method::Twb && o.twb_boot > 0 ? o.twb_boot : o.boot;
  p.seed = o.seed;
  p.threads = o.threads;
  return p;
}

inline BandwidthSpec bandwidth_from(std::optional<double> fixed, double scale)
{
  BandwidthSpec b = fixed ? BandwidthSpec::fixed(*fixed) : BandwidthSpec::cv();
  b.multiplier = scale;
  return b;
}

inline LofConfig lof_config(const CliOptions& o)
{
  LofConfig c;
  c.bandwidth = bandwidth_from(o.h, o.h_scale);
  if (o.alpha)
    c.alpha = *o.alpha;
  return c;
}

inline SigConfig sig_config(const CliOptions& o)
{
  SigConfig c;
  c.h = bandwidth_from(o.h, o.h_scale);
  if (o.g)
    c.g = BandwidthSpec::fixed(*o.g);
  c.psi_var = o.psi_var;
  if (o.alpha)
    c.alpha = *o.alpha;
  c.observed = o.observed == "full" ? SigObserved::Full : SigObserved::Tilde;
  return c;
}

inline void emit_json(std::ostream& os, const nlohmann::ordered_json& j) { os << j.dump(2) << '\n'; }

inline int cmd_test_lof(const CliOptions& o, std::ostream& out)
{
  const Sample s = sample_from_table(load_table(o.input));
  LofConfig cfg = lof_config(o);
  const RegressionFamily fam = RegressionFamily::linear(static_cast<int>(s.dim()));
  const FittedModel fm = o.theta0 ? fit_at(*o.theta0, s, fam, cfg.profile) : fit(s, fam, cfg.profile);
  const LackOfFitTest test(fm, s, fam, cfg);
  const LofStatistic which = o.statistic == "V" ? LofStatistic::V : LofStatistic::T;
  const TestReport r = test.run(which, plan_from(o, parse_method(o.method)));
  Sink sink(o.out, out);
  emit_json(sink.stream(), to_json(r, o.replicates));
  return 0;
}

inline int cmd_test_sig(const CliOptions& o, std::ostream& out)
{
  const SigSample s = sig_sample_from_table(load_table(o.input));
  const SigConfig cfg = sig_config(o);
  const double theta = o.theta0 ? *o.theta0 : estimate_theta(s.full(), cfg.profile);
  const SignificanceTest test(theta, s, cfg);
  const TestReport r = test.run(plan_from(o, parse_method(o.method)));
  Sink sink(o.out, out);
  emit_json(sink.stream(), to_json(r, o.replicates));
  return 0;
}

inline int cmd_bandwidth(const CliOptions& o, std::ostream& out)
{
  const CsvTable t = load_table(o.input);
  nlohmann::ordered_json j;
  j["schema_version"] = "1";
  const ProfileConfig prof{};
  if (!t.header.empty() && t.header.front() == "w1") {
    const SigSample s = sig_sample_from_table(t);
    const double theta = o.theta0 ? *o.theta0 : estimate_theta(s.full(), prof);
    const Eigen::VectorXd z = transform_all(prof.transform, theta, s.y);
    const Eigen::MatrixXd x = s.x();
    j["kind"] = "sig";
    j["theta"] = theta;
    j["h_cv"] = BandwidthSpec::cv().resolve(x, z, Estimator::NadarayaWatson,
                                            Kernel{KernelType::Epanechnikov, static_cast<int>(x.cols())});
    j["g_cv"] = BandwidthSpec::cv().resolve(s.w, z, Estimator::NadarayaWatson,
                                            Kernel{KernelType::Epanechnikov, static_cast<int>(s.p())});
    j["h_normal_reference_w1"] = normal_reference_bandwidth(Eigen::VectorXd(s.w.col(0)));
    j["h_normal_reference_v1"] = normal_reference_bandwidth(Eigen::VectorXd(s.v.col(0)));
  } else {
    const Sample s = sample_from_table(t);
    const double theta = o.theta0 ? *o.theta0 : estimate_theta(s, prof);
    const Eigen::VectorXd z = transform_all(prof.transform, theta, s.y);
    const Kernel k{KernelType::Epanechnikov, static_cast<int>(s.dim())};
    j["kind"] = "lof";
    j["theta"] = theta;
    j["h_cv"] = BandwidthSpec::cv().resolve(s.x, z, Estimator::NadarayaWatson, k);
    j["smoother_h_cv"] = BandwidthSpec::cv().resolve(s.x, z, Estimator::LocalLinear, k);
    j["h_normal_reference_x1"] = normal_reference_bandwidth(Eigen::VectorXd(s.x.col(0)));
  }
  Sink sink(o.out, out);
  emit_json(sink.stream(), j);
  return 0;
}

inline int cmd_gen(const CliOptions& o, std::ostream& out)
{
  if (!o.n || *o.n < 1)
    throw ConfigError("gen needs --n with a positive sample size");
  Stream stream(o.seed, 0, Purpose::Data);
  CsvTable t;
  if (o.kind == "sig") {
    SigScenario sc{o.model.value_or(1), *o.n, o.theta0.value_or(1.0), {}};
    t = to_table(gen_sig(sc, stream));
  } else if (o.kind == "lof") {
    LofScenario sc{o.theta0.value_or(0.0), *o.n, parse_deviation(o.deviation), o.amplitude, {}};
    t = to_table(gen_lof(sc, stream));
  } else {
    throw ConfigError("--kind must be lof or sig");
  }
  Sink sink(o.out, out);
  write_csv(sink.stream(), t);
  return 0;
}

//! One cell of a simulated table: row label, column label and its Monte Carlo report.
struct TableCell {
  std::string row;
  std::string column;
  McReport report;
};

struct SimTable {
  std::vector<std::string> columns;
  std::vector<std::string> row_labels;
  std::vector<std::vector<std::string>> values;
  std::vector<TableCell> cells;
};

inline bool wanted_row(const CliOptions& o, int index)
{
  if (o.rows.empty())
    return true;
  for (int r : o.rows)
    if (r == index)
      return true;
  return false;
}

inline std::vector<Method> wanted_methods(const CliOptions& o, const std::vector<Method>& layout)
{
  if (o.methods.empty())
    return layout;
  std::vector<Method> keep;
  for (Method m : layout)
    for (const auto& s : o.methods)
      if (parse_method(s) == m)
        keep.push_back(m);
  if (keep.empty())
    throw ConfigError("--methods selects no column of this table");
  return keep;
}

inline SimTable simulate_lof_table(const CliOptions& o, double theta0)
{
  const std::vector<Method> methods =
    wanted_methods(o, {Method::Swb, Method::Twb, Method::Mb, Method::Cmb, Method::Asym});
  SimTable t;
  for (const char* stat : {"T", "V"})
    for (Method m : methods)
      t.columns.push_back(std::string(stat) + "_" + to_string(m));
  const auto rows = lof_table_rows(o.theta0.value_or(theta0), o.n.value_or(200));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!wanted_row(o, static_cast<int>(r)))
      continue;
    LofMcSpec spec;
    spec.scenario = rows[r];
    spec.methods = methods;
    spec.runs = o.runs;
    spec.plan.replications = o.boot;
    spec.twb_replications = o.twb_boot;
    spec.config = lof_config(o);
    if (!o.alpha)
      spec.config.alpha = 0.10;
    spec.theta_known = o.theta_known;
    spec.seed = o.seed;
    spec.threads = o.threads;
    const auto cells = run_mc(spec);
    t.row_labels.push_back(rows[r].label());
    std::vector<std::string> line;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      line.push_back(format_rate(cells[c]));
      t.cells.push_back({rows[r].label(), t.columns[c], cells[c]});
    }
    t.values.push_back(std::move(line));
  }
  return t;
}

//! Significance tables: each column is one (configuration, method) pair.
struct SigColumn {
  std::string prefix;
  std::function<void(SigMcSpec&)> configure;
};

inline SimTable simulate_sig_table(const CliOptions& o, const std::vector<SigColumn>& groups,
                                   const std::vector<Method>& layout, bool mean_h_column)
{
  const std::vector<Method> methods = wanted_methods(o, layout);
  SimTable t;
  for (const auto& g : groups)
    for (Method m : methods)
      t.columns.push_back(g.prefix + "_" + to_string(m));
  if (mean_h_column)
    t.columns.push_back("mean_h_cv");
  for (int model = 1; model <= 7; ++model) {
    if (!wanted_row(o, model - 1) || (o.model && *o.model != model))
      continue;
    const std::string label = SigScenario{model}.label();
    std::vector<std::string> line;
    std::optional<double> mean_h;
    for (const auto& g : groups) {
      SigMcSpec spec;
      spec.scenario = {model, o.n.value_or(100), o.theta0.value_or(1.0), {}};
      spec.methods = methods;
      spec.runs = o.runs;
      spec.plan.replications = o.boot;
      spec.twb_replications = o.twb_boot;
      spec.config = sig_config(o);
      if (!o.alpha)
        spec.config.alpha = 0.05;
      spec.theta_known = o.theta_known;
      spec.seed = o.seed;
      spec.threads = o.threads;
      g.configure(spec);
      const auto cells = run_mc(spec);
      if (!mean_h && !cells.empty())
        mean_h = cells.front().mean_h;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        line.push_back(format_rate(cells[c]));
        t.cells.push_back({label, g.prefix + "_" + to_string(cells[c].method), cells[c]});
      }
    }
    if (mean_h_column)
      line.push_back(format_double(mean_h.value_or(0.0)));
    t.row_labels.push_back(label);
    t.values.push_back(std::move(line));
  }
  return t;
}

inline SimTable simulate_table(const CliOptions& o)
{
  switch (o.table) {
  case 1: return simulate_lof_table(o, 0.0);
  case 2: return simulate_lof_table(o, 0.5);
  case 3: return simulate_lof_table(o, 1.0);
  case 5: {
    std::vector<SigColumn> groups;
    for (int n : {75, 100})
      if (!o.n || *o.n == n)
        groups.push_back({"n" + std::to_string(n), [n](SigMcSpec& s) { s.scenario.n = n; }});
    if (groups.empty())
      groups.push_back({"n" + std::to_string(*o.n), [](SigMcSpec&) {}});
    return simulate_sig_table(o, groups, {Method::Mb, Method::Cmb, Method::Swb, Method::Twb}, false);
  }
  case 6: {
    auto scaled = [](double m) { return [m](SigMcSpec& s) { s.config.h = BandwidthSpec::cv(m); }; };
    std::vector<SigColumn> groups{{"cv", scaled(1.0)},
                                  {"2cv", scaled(2.0)},
                                  {"0.5cv", scaled(0.5)},
                                  {"h0.2", [](SigMcSpec& s) { s.config.h = BandwidthSpec::fixed(0.2); }}};
    return simulate_sig_table(o, groups, {Method::Mb, Method::Cmb}, true);
  }
  case 7: {
    std::vector<SigColumn> groups;
    for (double v : {0.05, 0.1, 0.2}) {
      std::ostringstream name;
      name << "v" << v;
      groups.push_back({name.str(), [v](SigMcSpec& s) { s.config.psi_var = v; }});
    }
    return simulate_sig_table(o, groups, {Method::Mb, Method::Cmb}, false);
  }
  default: throw ConfigError("--table must be one of 1, 2, 3, 5, 6, 7");
  }
}

inline int cmd_simulate(const CliOptions& o, std::ostream& out)
{
  if (o.runs < 1)
    throw ConfigError("--runs must be positive");
  const SimTable t = simulate_table(o);
  {
    Sink sink(o.out, out);
    auto& os = sink.stream();
    os << (o.table <= 3 ? "alternative" : "model");
    for (const auto& c : t.columns)
      os << ',' << c;
    os << '\n';
    for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
      os << t.row_labels[r];
      for (const auto& v : t.values[r])
        os << ',' << v;
      os << '\n';
    }
  }
  const std::string sidecar = !o.json.empty() ? o.json : (o.out.empty() ? "" : o.out + ".json");
  if (!sidecar.empty()) {
    nlohmann::ordered_json j;
    j["schema_version"] = "1";
    j["table"] = o.table;
    j["runs"] = o.runs;
    j["boot"] = o.boot;
    j["twb_boot"] = o.twb_boot;
    j["seed"] = o.seed;
    auto cells = nlohmann::ordered_json::array();
    for (const auto& c : t.cells) {
      nlohmann::ordered_json cj;
      cj["row"] = c.row;
      cj["column"] = c.column;
      const auto report = to_json(c.report, o.timing);
      for (const auto& [k, v] : report.items())
        if (k != "schema_version")
          cj[k] = v;
      cells.push_back(std::move(cj));
    }
    j["cells"] = std::move(cells);
    std::ofstream f(sidecar, std::ios::binary);
    if (!f)
      throw DataError("cannot open '" + sidecar + "' for writing");
    emit_json(f, j);
  }
  return 0;
}

} // namespace detail

//! Command-line entry point. Exit codes: 0 success, 1 usage, 2 data, 3 numerical failure.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr)
{
  CLI::App app{"Specification tests for transformation regression models"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read settings from a TOML or INI file");
  CliOptions o;

  app.add_option("--seed", o.seed, "Master random seed (64-bit unsigned)");
  app.add_option("--threads", o.threads, "Worker threads (0: TRANSTEST_THREADS or hardware)");
  app.add_option("--out", o.out, "Output file (default: standard output)");

  auto add_test_options = [&](CLI::App* c) {
    c->add_option("input", o.input, "Dataset CSV")->required();
    c->add_option("--method", o.method, "Calibration")
      ->check(CLI::IsMember({"asym", "swb", "twb", "mb", "cmb"}));
    c->add_option("--boot", o.boot, "Bootstrap replications")->check(CLI::PositiveNumber);
    c->add_option("--twb-boot", o.twb_boot, "Replications for twb (0: use --boot)");
    c->add_option("--theta0", o.theta0, "Fix the transformation parameter instead of estimating it");
    c->add_option("--alpha", o.alpha, "Nominal level");
    c->add_option("--h", o.h, "Fixed bandwidth h (default: cross validation)");
    c->add_option("--h-scale", o.h_scale, "Multiplier applied to h")->check(CLI::PositiveNumber);
    c->add_flag("--replicates", o.replicates, "Include bootstrap replicate statistics in the report");
  };

  auto* test = app.add_subcommand("test", "Run one specification test on a CSV dataset");
  test->require_subcommand(1);
  test->fallthrough();
  auto* lof = test->add_subcommand("lof", "Lack-of-fit test of the linear model");
  add_test_options(lof);
  lof->add_option("--statistic", o.statistic, "T or V")->check(CLI::IsMember({"T", "V"}));
  lof->fallthrough();
  auto* sig = test->add_subcommand("sig", "Significance test of the V covariates");
  add_test_options(sig);
  sig->add_option("--g", o.g, "Fixed bandwidth g (default: cross validation)");
  sig->add_option("--psi-var", o.psi_var, "Variance of the weight density psi")->check(CLI::PositiveNumber);
  sig->add_option("--observed", o.observed, "Observed statistic for mb/cmb")
    ->check(CLI::IsMember({"tilde", "full"}));
  sig->fallthrough();

  auto* sim = app.add_subcommand("simulate", "Monte Carlo rejection rates in a table layout");
  sim->fallthrough();
  sim->add_option("--table", o.table, "Table layout: 1, 2, 3 (lack of fit), 5, 6, 7 (significance)")
    ->check(CLI::IsMember({1, 2, 3, 5, 6, 7}));
  sim->add_option("--runs", o.runs, "Monte Carlo runs per cell")->check(CLI::PositiveNumber);
  sim->add_option("--boot", o.boot, "Bootstrap replications")->check(CLI::PositiveNumber);
  sim->add_option("--twb-boot", o.twb_boot, "Replications for twb (0: use --boot)");
  sim->add_option("--theta0", o.theta0, "Override the table's transformation parameter");
  sim->add_option("--alpha", o.alpha, "Nominal level (default: 0.10 lack of fit, 0.05 significance)");
  sim->add_option("--n", o.n, "Sample size override")->check(CLI::PositiveNumber);
  sim->add_option("--h", o.h, "Fixed bandwidth h");
  sim->add_option("--g", o.g, "Fixed bandwidth g");
  sim->add_option("--h-scale", o.h_scale, "Multiplier applied to h")->check(CLI::PositiveNumber);
  sim->add_option("--psi-var", o.psi_var, "Variance of psi")->check(CLI::PositiveNumber);
  sim->add_option("--model", o.model, "Only this significance model (1-7)")->check(CLI::Range(1, 7));
  sim->add_option("--methods", o.methods, "Subset of method columns")
    ->delimiter(',')
    ->check(CLI::IsMember({"asym", "swb", "twb", "mb", "cmb"}));
  sim->add_option("--rows", o.rows, "Subset of row indices, 0-based")->delimiter(',');
  sim->add_flag("--theta-known", o.theta_known, "Fit at the true parameter instead of estimating it");
  sim->add_option("--json", o.json, "JSON sidecar path (default: <out>.json when --out is set)");
  sim->add_flag("--timing", o.timing, "Record wall-clock seconds in the sidecar");

  auto* bw = app.add_subcommand("bandwidth", "Cross-validation and reference bandwidths of a dataset");
  bw->fallthrough();
  bw->add_option("input", o.input, "Dataset CSV")->required();
  bw->add_option("--theta0", o.theta0, "Transformation parameter (default: estimated)");

  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset CSV");
  gen->fallthrough();
  gen->add_option("--kind", o.kind, "lof or sig")->check(CLI::IsMember({"lof", "sig"}));
  gen->add_option("--n", o.n, "Sample size")->required()->check(CLI::PositiveNumber);
  gen->add_option("--theta0", o.theta0, "Transformation parameter (default 0 for lof, 1 for sig)");
  gen->add_option("--model", o.model, "Significance model 1-7")->check(CLI::Range(1, 7));
  gen->add_option("--deviation", o.deviation, "zero, square, exp or sin");
  gen->add_option("--amplitude", o.amplitude, "Deviation amplitude c");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*lof)
      return detail::cmd_test_lof(o, out);
    if (*sig)
      return detail::cmd_test_sig(o, out);
    if (*sim)
      return detail::cmd_simulate(o, out);
    if (*bw)
      return detail::cmd_bandwidth(o, out);
    if (*gen)
      return detail::cmd_gen(o, out);
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 3;
  }
  return 1;
}

} // namespace transtest
