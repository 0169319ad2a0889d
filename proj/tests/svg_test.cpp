#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "hpa/svg.hpp"

namespace {

std::string render(const std::vector<hpa::Panel>& panels) {
  std::ostringstream out;
  hpa::write_svg(out, panels);
  return out.str();
}

bool contains(const std::string& s, const std::string& needle) {
  return s.find(needle) != std::string::npos;
}

TEST(Svg, FixedViewBoxPerPanel) {
  EXPECT_EQ(render({{"a", {}, false}}).rfind("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 240\"", 0), 0u);
  EXPECT_TRUE(contains(render({{"a", {}, false}, {"b", {}, true}}), "viewBox=\"0 0 640 480\""));
}

TEST(Svg, PointsMapLinearlyIntoPlotArea) {
  // Plot area x in [60, 510], y in [30, 210] for the first panel and
  // [270, 450] for the second; values map from [min, max] or [0, 1].
  const auto s = render({{"r", {{"a", {0.0, 1.0, 0.5}}}, false},
                         {"f", {{"x", {1.0, 0.0}}, {"y", {0.0, 1.0}}}, true}});
  EXPECT_TRUE(contains(s, "points=\"60.00,210.00 285.00,30.00 510.00,120.00\""));
  EXPECT_TRUE(contains(s, "points=\"60.00,270.00 510.00,450.00\""));
  EXPECT_TRUE(contains(s, "points=\"60.00,450.00 510.00,270.00\""));
  EXPECT_TRUE(contains(s, ">episode 2</text>"));
}

TEST(Svg, UnitRangeClampsAndNanSitsOnAxis) {
  const auto s = render({{"f", {{"x", {2.0, NAN}}}, true}});
  EXPECT_TRUE(contains(s, "points=\"60.00,30.00 510.00,210.00\""));
}

TEST(Svg, FlatSeriesGetsPaddedRange) {
  const auto s = render({{"r", {{"a", {3.0, 3.0}}}, false}});
  EXPECT_TRUE(contains(s, ">2.50</text>"));
  EXPECT_TRUE(contains(s, ">3.50</text>"));
  EXPECT_TRUE(contains(s, "points=\"60.00,120.00 510.00,120.00\""));
}

TEST(Svg, EscapesLabels) {
  const auto s = render({{"a<b & \"c\"", {{"x>y", {1.0}}}, false}});
  EXPECT_TRUE(contains(s, "a&lt;b &amp; &quot;c&quot;"));
  EXPECT_TRUE(contains(s, "x&gt;y"));
}

TEST(Svg, ByteStable) {
  const std::vector<hpa::Panel> p{{"r", {{"a", {0.1, 0.7, 0.3}}}, false}};
  EXPECT_EQ(render(p), render(p));
}

}  // namespace
