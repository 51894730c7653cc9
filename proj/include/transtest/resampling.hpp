#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "errors.hpp"

namespace transtest {

enum class MultiplierLaw { MammenTwoPoint, Rademacher, StandardNormal };

inline std::string to_string(MultiplierLaw law)
{
  switch (law) {
  case MultiplierLaw::MammenTwoPoint: return "mammen";
  case MultiplierLaw::Rademacher: return "rademacher";
  case MultiplierLaw::StandardNormal: return "normal";
  }
  return "?";
}

//! What a stream is used for; part of the stream identity.
enum class Purpose : std::uint64_t {
  Data = 1,
  Multipliers = 2,
  Resample = 3,
  Noise = 4,
  Bootstrap = 5,
  Run = 6,
  Oracle = 7,
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

} // namespace detail

//! Identity of a random stream: (master seed, replicate index, purpose).
struct StreamSeed {
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  Purpose purpose = Purpose::Data;

  //! Counter-based hash of the triple; equal triples give equal keys.
  std::uint64_t key() const noexcept
  {
    std::uint64_t h = detail::splitmix64(seed);
    h = detail::splitmix64(h ^ detail::splitmix64(index + 0x632be59bd9b4e019ULL));
    h = detail::splitmix64(h ^ (static_cast<std::uint64_t>(purpose) * 0xd1b54a32d192ed03ULL));
    return h;
  }
};

//! A reproducible random stream materialised from a StreamSeed.
class Stream {
public:
  explicit Stream(const StreamSeed& s) : engine_(s.key()) {}
  Stream(std::uint64_t seed, std::uint64_t index, Purpose purpose)
    : Stream(StreamSeed{seed, index, purpose}) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  std::size_t index_below(std::size_t n)
  {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::uint64_t bits() { return engine_(); }

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline double draw_multiplier(MultiplierLaw law, Stream& stream)
{
  switch (law) {
  case MultiplierLaw::MammenTwoPoint: {
    static const double s5 = std::sqrt(5.0);
    static const double p_low = (s5 + 1.0) / (2.0 * s5);
    return stream.uniform() < p_low ? (1.0 - s5) / 2.0 : (1.0 + s5) / 2.0;
  }
  case MultiplierLaw::Rademacher:
    return (stream.bits() >> 63) ? 1.0 : -1.0;
  case MultiplierLaw::StandardNormal:
    return stream.normal();
  }
  return 0.0;
}

//! n iid draws with mean 0 and variance 1 from the given law.
inline Eigen::VectorXd draw_multipliers(MultiplierLaw law, Eigen::Index n, Stream& stream)
{
  if (n < 1)
    throw ConfigError("multiplier count must be positive");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    v[i] = draw_multiplier(law, stream);
  return v;
}

//! Residuals with replacement plus a_n times standard normal noise.
struct SmoothedResample {
  Eigen::VectorXd source;
  double a_n = 0.1;

  double draw(Stream& stream) const
  {
    const auto j = static_cast<Eigen::Index>(stream.index_below(static_cast<std::size_t>(source.size())));
    return source[j] + a_n * stream.normal();
  }
};

inline Eigen::VectorXd smoothed_resample(const SmoothedResample& cfg, Eigen::Index n, Stream& stream)
{
  if (cfg.source.size() == 0)
    throw ConfigError("resampling source is empty");
  if (!(cfg.a_n >= 0.0))
    throw ConfigError("smoothing constant must be nonnegative");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    v[i] = cfg.draw(stream);
  return v;
}

} // namespace transtest
