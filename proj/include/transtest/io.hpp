#pragma once

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"
#include "modelfit.hpp"
#include "report.hpp"
#include "significance.hpp"
#include "simlab.hpp"

namespace transtest {

//! Numeric CSV table with a header row.
struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd data;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos)
      return out;
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline void write_double(std::ostream& os, double v)
{
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  os.write(buf, res.ptr - buf);
}

inline nlohmann::ordered_json number(double v)
{
  if (!std::isfinite(v))
    return nullptr;
  return v;
}

} // namespace detail

//! Parse a header plus numeric rows. Row numbers in errors count data rows from 1.
inline CsvTable read_csv(std::istream& in)
{
  CsvTable t;
  std::string line;
  if (!std::getline(in, line))
    throw DataError("CSV input is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
    line.erase(0, 3);
  for (auto f : detail::split_commas(line)) {
    const auto name = detail::trim(f);
    if (name.empty())
      throw DataError("CSV header has an empty column name");
    t.header.emplace_back(name);
  }
  const std::size_t cols = t.header.size();

  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty())
      continue;
    ++rows;
    const auto fields = detail::split_commas(line);
    if (fields.size() != cols)
      throw DataError("CSV row " + std::to_string(rows) + ": expected " + std::to_string(cols) +
                      " fields, found " + std::to_string(fields.size()));
    for (std::size_t c = 0; c < cols; ++c) {
      const auto f = detail::trim(fields[c]);
      double v = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size())
        throw DataError("CSV row " + std::to_string(rows) + ", column '" + t.header[c] +
                        "': cannot parse '" + std::string(f) + "'");
      if (!std::isfinite(v))
        throw DataError("CSV row " + std::to_string(rows) + ", column '" + t.header[c] +
                        "': value is not finite");
      values.push_back(v);
    }
  }
  if (rows == 0)
    throw DataError("CSV input has no data rows");
  t.data = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
    values.data(), rows, static_cast<Eigen::Index>(cols));
  return t;
}

inline void write_csv(std::ostream& os, const CsvTable& t)
{
  for (std::size_t c = 0; c < t.header.size(); ++c)
    os << (c ? "," : "") << t.header[c];
  os << '\n';
  for (Eigen::Index i = 0; i < t.data.rows(); ++i) {
    for (Eigen::Index c = 0; c < t.data.cols(); ++c) {
      if (c)
        os << ',';
      detail::write_double(os, t.data(i, c));
    }
    os << '\n';
  }
}

inline CsvTable to_table(const Sample& s)
{
  CsvTable t;
  for (Eigen::Index c = 0; c < s.x.cols(); ++c)
    t.header.push_back("x" + std::to_string(c + 1));
  t.header.push_back("y");
  t.data.resize(s.size(), s.x.cols() + 1);
  t.data << s.x, s.y;
  return t;
}

inline CsvTable to_table(const SigSample& s)
{
  CsvTable t;
  for (Eigen::Index c = 0; c < s.p(); ++c)
    t.header.push_back("w" + std::to_string(c + 1));
  for (Eigen::Index c = 0; c < s.q(); ++c)
    t.header.push_back("v" + std::to_string(c + 1));
  t.header.push_back("y");
  t.data.resize(s.size(), s.p() + s.q() + 1);
  t.data << s.w, s.v, s.y;
  return t;
}

namespace detail {

inline bool numbered(const std::string& name, char prefix, std::size_t k)
{
  return name == std::string(1, prefix) + std::to_string(k);
}

inline void require_response_last(const CsvTable& t)
{
  if (t.header.size() < 2 || t.header.back() != "y")
    throw DataError("CSV header must end with the response column 'y'");
}

} // namespace detail

//! Sample from a table with header x1,...,xd,y.
inline Sample sample_from_table(const CsvTable& t)
{
  detail::require_response_last(t);
  const std::size_t d = t.header.size() - 1;
  for (std::size_t c = 0; c < d; ++c)
    if (!detail::numbered(t.header[c], 'x', c + 1))
      throw DataError("lack-of-fit CSV header must be x1,...,xd,y; found '" + t.header[c] + "'");
  return {t.data.leftCols(static_cast<Eigen::Index>(d)), t.data.col(static_cast<Eigen::Index>(d))};
}

//! Sample from a table with header w1,...,wp,v1,...,vq,y.
inline SigSample sig_sample_from_table(const CsvTable& t)
{
  detail::require_response_last(t);
  std::size_t p = 0;
  while (p < t.header.size() - 1 && detail::numbered(t.header[p], 'w', p + 1))
    ++p;
  std::size_t q = 0;
  while (p + q < t.header.size() - 1 && detail::numbered(t.header[p + q], 'v', q + 1))
    ++q;
  if (p == 0 || q == 0 || p + q + 1 != t.header.size())
    throw DataError("significance CSV header must be w1,...,wp,v1,...,vq,y");
  const auto P = static_cast<Eigen::Index>(p), Q = static_cast<Eigen::Index>(q);
  return {t.data.leftCols(P), t.data.middleCols(P, Q), t.data.col(P + Q)};
}

//! Flat JSON object mirroring a TestReport; non-finite numbers become null.
inline nlohmann::ordered_json to_json(const TestReport& r, bool include_replicates = false)
{
  nlohmann::ordered_json j;
  j["schema_version"] = "1";
  j["test"] = r.test;
  j["statistic"] = r.statistic;
  j["method"] = to_string(r.method);
  j["value"] = detail::number(r.value);
  j["standardized"] = detail::number(r.standardized);
  j["alpha"] = r.alpha;
  j["p_value"] = detail::number(r.p_value);
  j["critical_value"] = detail::number(r.critical_value);
  j["reject"] = r.reject;
  j["theta"] = detail::number(r.theta);
  j["h"] = detail::number(r.h);
  j["g"] = r.g ? detail::number(*r.g) : nlohmann::ordered_json(nullptr);
  for (const auto& [k, v] : r.nuisance)
    j["nuisance_" + k] = detail::number(v);
  j["replications"] = r.replications;
  j["effective_replications"] = r.effective_replications;
  j["failed_replications"] = r.failed_replications;
  j["redrawn_observations"] = r.redrawn_observations;
  j["clamped_observations"] = r.clamped_observations;
  j["seed"] = r.seed;
  j["advisories"] = r.advisories;
  if (include_replicates) {
    auto arr = nlohmann::ordered_json::array();
    for (double v : r.replicate_statistics)
      arr.push_back(detail::number(v));
    j["replicate_statistics"] = std::move(arr);
  }
  return j;
}

//! JSON object for one Monte Carlo cell; wall-clock time only on request.
inline nlohmann::ordered_json to_json(const McReport& m, bool include_timing = false)
{
  nlohmann::ordered_json j;
  j["schema_version"] = "1";
  j["scenario"] = m.scenario;
  j["test"] = m.test;
  j["statistic"] = m.statistic;
  j["method"] = to_string(m.method);
  j["rate"] = m.rate;
  j["se"] = m.se;
  j["runs"] = m.runs;
  j["failures"] = m.failures;
  j["replications"] = m.replications;
  j["seed"] = m.seed;
  j["mean_h"] = m.mean_h;
  if (include_timing)
    j["wall_clock_seconds"] = m.wall_clock;
  return j;
}

} // namespace transtest
