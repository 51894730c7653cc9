#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "transtest/transforms.hpp"

using transtest::DomainError;
using transtest::Family;
using transtest::TransformFamily;

namespace {

const TransformFamily yj;

std::vector<double> theta_grid()
{
  std::vector<double> g;
  for (int i = 0; i <= 30; ++i)
    g.push_back(-1.0 + 3.0 * i / 30.0);
  return g;
}

std::vector<double> y_grid()
{
  std::vector<double> g;
  for (int i = 0; i <= 80; ++i)
    g.push_back(-10.0 + 20.0 * i / 80.0);
  return g;
}

} // namespace

TEST(YeoJohnson, ForwardExamples)
{
  const double e = std::numbers::e;
  EXPECT_DOUBLE_EQ(yj.forward(1.0, 3.7), 3.7);
  EXPECT_NEAR(yj.forward(0.0, e - 1.0), 1.0, 1e-15);
  EXPECT_NEAR(yj.forward(2.0, 1.0 - e), -1.0, 1e-15);
  EXPECT_NEAR(yj.forward(0.5, 3.0), 2.0, 1e-15);
}

TEST(YeoJohnson, InverseExamples)
{
  EXPECT_DOUBLE_EQ(yj.inverse(1.0, -2.5), -2.5);
  EXPECT_NEAR(yj.inverse(0.0, 1.0), std::numbers::e - 1.0, 1e-15);
}

TEST(YeoJohnson, InverseOutsideRangeCarriesBound)
{
  // Oracle: the forward map at theta = -0.5 never reaches 2 for y up to 1e12.
  double sup = -1e300;
  for (double y = 0.0; y <= 1e12; y = y * 10.0 + 1.0)
    sup = std::max(sup, yj.forward(-0.5, y));
  ASSERT_LT(sup, 2.0);

  try {
    yj.inverse(-0.5, 2.1);
    FAIL() << "expected DomainError";
  } catch (const DomainError& err) {
    EXPECT_DOUBLE_EQ(err.bound(), 2.0);
    EXPECT_EQ(err.side(), DomainError::Side::Upper);
  }
  EXPECT_THROW(yj.inverse(2.5, -2.5), DomainError);
  EXPECT_NO_THROW(yj.inverse(2.5, -1.9));
}

TEST(YeoJohnson, RangeBounds)
{
  EXPECT_DOUBLE_EQ(yj.range(-0.5).upper, 2.0);
  EXPECT_TRUE(std::isinf(yj.range(-0.5).lower));
  EXPECT_DOUBLE_EQ(yj.range(2.5).lower, 1.0 / (2.0 - 2.5));
  EXPECT_FALSE(yj.range(0.0).bounded());
  EXPECT_FALSE(yj.range(1.3).bounded());
  EXPECT_FALSE(yj.range(2.0).bounded());
}

TEST(YeoJohnson, DerivativeExamples)
{
  EXPECT_DOUBLE_EQ(yj.d_dy(1.0, -4.2), 1.0);
  EXPECT_DOUBLE_EQ(yj.d_dy(1.0, 17.0), 1.0);
  EXPECT_NEAR(yj.d_dy(0.0, 1.0), 0.5, 1e-15);
  const double fd = (yj.forward(0.3, -0.5 + 1e-6) - yj.forward(0.3, -0.5 - 1e-6)) / 2e-6;
  EXPECT_NEAR(fd, std::pow(1.5, 0.7), 1e-6);
  EXPECT_NEAR(yj.d_dy(0.3, -0.5), std::pow(1.5, 0.7), 1e-14);
}

TEST(YeoJohnson, MonotoneOnGrid)
{
  const auto ys = y_grid();
  for (double t : theta_grid())
    for (std::size_t i = 1; i < ys.size(); ++i)
      EXPECT_LT(yj.forward(t, ys[i - 1]), yj.forward(t, ys[i])) << "theta=" << t;
}

TEST(YeoJohnson, SeamContinuity)
{
  // |d forward / d theta| grows like (1+|y|)^2 log(1+|y|), so the 1e-6
  // tolerance at a 1e-8 offset only holds for moderate |y|.
  for (double y : y_grid()) {
    if (std::abs(y) > 5.0)
      continue;
    EXPECT_NEAR(yj.forward(1e-8, y), yj.forward(0.0, y), 1e-6);
    EXPECT_NEAR(yj.forward(-1e-8, y), yj.forward(0.0, y), 1e-6);
    EXPECT_NEAR(yj.forward(2.0 + 1e-8, y), yj.forward(2.0, y), 1e-6);
    EXPECT_NEAR(yj.forward(2.0 - 1e-8, y), yj.forward(2.0, y), 1e-6);
  }
}

TEST(YeoJohnson, RoundTrip)
{
  for (double t : theta_grid())
    for (double y : y_grid()) {
      const double back = yj.inverse(t, yj.forward(t, y));
      EXPECT_NEAR(back, y, 1e-9 * std::max(1.0, std::abs(y))) << "theta=" << t << " y=" << y;
    }
}

TEST(YeoJohnson, DerivativeMatchesFiniteDifference)
{
  for (double t : theta_grid())
    for (double y : y_grid()) {
      if (std::abs(y) < 1e-5)
        continue; // central difference straddles the branch seam
      const double fd = (yj.forward(t, y + 1e-6) - yj.forward(t, y - 1e-6)) / 2e-6;
      const double d = yj.d_dy(t, y);
      EXPECT_GT(d, 0.0);
      EXPECT_NEAR(fd / d, 1.0, 1e-5) << "theta=" << t << " y=" << y;
    }
}

TEST(BoxCox, BasicsAndDomain)
{
  const TransformFamily bc(Family::BoxCox);
  EXPECT_NEAR(bc.forward(0.0, std::numbers::e), 1.0, 1e-15);
  EXPECT_NEAR(bc.forward(2.0, 3.0), 4.0, 1e-15);
  EXPECT_THROW(bc.forward(0.5, 0.0), DomainError);
  EXPECT_THROW(bc.forward(0.5, -1.0), DomainError);
  EXPECT_THROW(bc.inverse(0.5, -2.5), DomainError);
  for (double t : {-1.0, -0.3, 0.0, 0.4, 1.0, 2.0})
    for (double y : {0.01, 0.5, 1.0, 3.0, 40.0}) {
      EXPECT_NEAR(bc.inverse(t, bc.forward(t, y)), y, 1e-9 * std::max(1.0, y));
      const double fd = (bc.forward(t, y + 1e-7) - bc.forward(t, y - 1e-7)) / 2e-7;
      EXPECT_NEAR(fd / bc.d_dy(t, y), 1.0, 1e-5);
    }
}
