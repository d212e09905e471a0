#include "geocell/geodesy.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "geocell/errors.hpp"
#include "geocell/rng.hpp"

using namespace geocell;

namespace {

CellIndex random_cell(Rng& rng, const RegionLayout& layout) {
  const std::int64_t top = max_band_index(layout);
  const std::int64_t band =
      static_cast<std::int64_t>(
          rng.uniform_index(static_cast<std::uint64_t>(2 * top + 1))) -
      top;
  const StepRange range = band_step_range(band, layout);
  const std::int64_t span = range.last - range.first + 1;
  const std::int64_t step =
      range.first + static_cast<std::int64_t>(
                        rng.uniform_index(static_cast<std::uint64_t>(span)));
  return {band, step};
}

}  // namespace

TEST_CASE("band latitudes are spaced one cell apart") {
  RegionLayout layout;
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const std::int64_t band = random_cell(rng, layout).band_i;
    if (band + 1 > max_band_index(layout)) continue;
    const double gap =
        band_latitude(band + 1, layout) - band_latitude(band, layout);
    // The subtraction of two radian values near 1 loses ~1e-16 rad, which
    // is ~1e-9 m on the ground; test with an absolute bound.
    CHECK(std::abs(gap * layout.earth_radius_r - layout.cell_size_l) < 1e-8);
  }
  CHECK(band_latitude(0, layout) == 0.0);
}

TEST_CASE("bands beyond the latitude cutoff are rejected") {
  RegionLayout layout;
  const std::int64_t top = max_band_index(layout);
  CHECK(band_latitude(top, layout) <= max_abs_latitude_rad());
  CHECK_THROWS_AS(band_latitude(top + 1, layout), RangeError);
  CHECK_THROWS_AS(band_latitude(-top - 1, layout), RangeError);
}

TEST_CASE("cell centers map back to their own cell") {
  RegionLayout layout;
  Rng rng(7);
  for (int i = 0; i < 20000; ++i) {
    const CellIndex cell = random_cell(rng, layout);
    CHECK(cell_of_point(cell_center(cell, layout), layout) == cell);
  }
  const std::int64_t top = max_band_index(layout);
  for (const std::int64_t band : {std::int64_t{0}, top, -top}) {
    const StepRange range = band_step_range(band, layout);
    for (const std::int64_t step : {range.first, range.last}) {
      const CellIndex cell{band, step};
      CHECK(cell_of_point(cell_center(cell, layout), layout) == cell);
    }
  }
}

TEST_CASE("interior points belong to the surrounding cell") {
  RegionLayout layout;
  Rng rng(13);
  const double l_over_r = layout.cell_size_l / layout.earth_radius_r;
  for (int i = 0; i < 5000; ++i) {
    const CellIndex cell = random_cell(rng, layout);
    const double u = rng.uniform(-0.45, 0.45);
    const double v = rng.uniform(-0.45, 0.45);
    const double lat = (static_cast<double>(cell.band_i) + u) * l_over_r;
    const double lambda =
        layout.cell_size_l /
        (layout.earth_radius_r * std::cos(band_latitude(cell.band_i, layout)));
    const double lon =
        wrap_longitude((static_cast<double>(cell.step_j) + v) * lambda);
    CHECK(cell_of_point({lat, lon}, layout) == cell);
  }
}

TEST_CASE("step counts cover the circle with at most one overlap") {
  RegionLayout layout;
  Rng rng(17);
  const double two_pi = 2.0 * std::acos(-1.0);
  for (int i = 0; i < 200; ++i) {
    const std::int64_t band = random_cell(rng, layout).band_i;
    const double lambda =
        layout.cell_size_l /
        (layout.earth_radius_r * std::cos(band_latitude(band, layout)));
    const double count = static_cast<double>(band_step_count(band, layout));
    CHECK((count - 1.0) * lambda < two_pi);
    CHECK((count + 1.0) * lambda > two_pi);
  }
}

TEST_CASE("out-of-range steps wrap around the band") {
  RegionLayout layout;
  for (const std::int64_t band : {std::int64_t{0}, std::int64_t{-250000}}) {
    const StepRange range = band_step_range(band, layout);
    const std::int64_t count = band_step_count(band, layout);
    CHECK(range.last - range.first + 1 == count);
    const GeoPoint wrapped = cell_center({band, range.last + 1}, layout);
    const GeoPoint canonical = cell_center({band, range.first}, layout);
    CHECK(wrapped.lat == canonical.lat);
    // Centers are a linear map of the step index, so stepping once past the
    // end lands one full band circumference (count * lambda) east of the
    // first center: just past it by the seam overlap.
    const double lambda =
        layout.cell_size_l /
        (layout.earth_radius_r * std::cos(band_latitude(band, layout)));
    const double overlap =
        static_cast<double>(count) * lambda - 2.0 * std::acos(-1.0);
    CHECK(std::abs(wrap_longitude(wrapped.lon - canonical.lon) - overlap) <
          1e-12);
    CHECK(std::abs(overlap) < lambda);
  }
}

TEST_CASE("boxed cell listing is ordered and contains interior points") {
  RegionLayout layout;
  const GeoPoint lo{deg_to_rad(44.0), deg_to_rad(7.0)};
  const GeoPoint hi{deg_to_rad(44.01), deg_to_rad(7.02)};
  const std::vector<CellIndex> cells = cells_in_box(layout, lo, hi);
  REQUIRE(!cells.empty());

  for (std::size_t i = 1; i < cells.size(); ++i) CHECK(cells[i - 1] < cells[i]);

  for (const CellIndex& cell : cells) {
    const GeoPoint c = cell_center(cell, layout);
    CHECK(c.lat >= lo.lat);
    CHECK(c.lat <= hi.lat);
    CHECK(c.lon >= lo.lon);
    CHECK(c.lon <= hi.lon);
  }

  std::set<CellIndex> present(cells.begin(), cells.end());
  Rng rng(23);
  const double margin_lat = 2.0 * layout.cell_size_l / layout.earth_radius_r;
  const double margin_lon = margin_lat / std::cos(hi.lat);
  for (int i = 0; i < 500; ++i) {
    const GeoPoint p{rng.uniform(lo.lat + margin_lat, hi.lat - margin_lat),
                     rng.uniform(lo.lon + margin_lon, hi.lon - margin_lon)};
    CHECK(present.count(cell_of_point(p, layout)) == 1);
  }
}

TEST_CASE("boxes spanning the antimeridian work") {
  RegionLayout layout;
  const GeoPoint lo{deg_to_rad(-10.0), deg_to_rad(179.99)};
  const GeoPoint hi{deg_to_rad(-9.99), deg_to_rad(-179.99)};
  const std::vector<CellIndex> cells = cells_in_box(layout, lo, hi);
  REQUIRE(!cells.empty());

  bool some_east = false;
  bool some_west = false;
  for (const CellIndex& cell : cells) {
    const GeoPoint c = cell_center(cell, layout);
    const bool in_east = c.lon >= lo.lon;
    const bool in_west = c.lon <= hi.lon;
    CHECK((in_east || in_west));
    some_east = some_east || in_east;
    some_west = some_west || in_west;
  }
  CHECK(some_east);
  CHECK(some_west);

  std::set<CellIndex> present(cells.begin(), cells.end());
  Rng rng(29);
  const double margin_lat = 2.0 * layout.cell_size_l / layout.earth_radius_r;
  for (int i = 0; i < 200; ++i) {
    const double lat =
        rng.uniform(lo.lat + margin_lat, hi.lat - margin_lat);
    const double lon = wrap_longitude(
        rng.uniform(lo.lon + 2e-6, lo.lon + deg_to_rad(0.02) - 2e-6));
    CHECK(present.count(cell_of_point({lat, lon}, layout)) == 1);
  }
}

TEST_CASE("empty boxes yield no cells") {
  RegionLayout layout;
  const GeoPoint lo{deg_to_rad(10.0), deg_to_rad(10.0)};
  const GeoPoint hi{deg_to_rad(9.999), deg_to_rad(10.001)};
  CHECK(cells_in_box(layout, lo, hi).empty());
}

TEST_CASE("geodesic distance matches arc lengths") {
  const double r = kDefaultEarthRadiusM;
  const GeoPoint a{0.0, 0.3};
  const GeoPoint b{0.0, 0.3 + 1e-3};
  CHECK(geodesic_distance(a, b) == doctest::Approx(r * 1e-3).epsilon(1e-9));

  const GeoPoint c{0.2, -1.0};
  const GeoPoint d{0.2 + 2e-3, -1.0};
  CHECK(geodesic_distance(c, d) == doctest::Approx(r * 2e-3).epsilon(1e-9));

  CHECK(geodesic_distance(a, a) == 0.0);
  CHECK(geodesic_distance({0.0, 0.0}, {0.0, std::acos(-1.0)}) ==
        doctest::Approx(r * std::acos(-1.0)).epsilon(1e-9));

  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    const GeoPoint p{rng.uniform(-1.4, 1.4), rng.uniform(-3.1, 3.1)};
    const GeoPoint q{rng.uniform(-1.4, 1.4), rng.uniform(-3.1, 3.1)};
    const GeoPoint m{rng.uniform(-1.4, 1.4), rng.uniform(-3.1, 3.1)};
    CHECK(geodesic_distance(p, q) ==
          doctest::Approx(geodesic_distance(q, p)).epsilon(1e-12));
    CHECK(geodesic_distance(p, q) <=
          geodesic_distance(p, m) + geodesic_distance(m, q) + 1e-6);
  }
}

TEST_CASE("distance crosses the antimeridian seam") {
  const double r = kDefaultEarthRadiusM;
  const double pi = std::acos(-1.0);
  const GeoPoint east{0.0, pi - 1e-4};
  const GeoPoint west{0.0, -pi + 1e-4};
  CHECK(geodesic_distance(east, west) ==
        doctest::Approx(r * 2e-4).epsilon(1e-9));
}

TEST_CASE("trapezoid ratio measures the sphere's side shrink") {
  RegionLayout layout;
  const double half = 0.5 * layout.cell_size_l / layout.earth_radius_r;
  Rng rng(37);
  for (int i = 0; i < 300; ++i) {
    const std::int64_t band = random_cell(rng, layout).band_i;
    const double center = band_latitude(band, layout);
    const double near = std::cos(std::abs(center) - half);
    const double far = std::cos(std::abs(center) + half);
    const double expected = std::min(near, far) / std::max(near, far);
    CHECK(trapezoid_ratio(band, layout) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(trapezoid_ratio(0, layout) == 1.0);

  const std::int64_t top = max_band_index(layout);
  double worst = 1.0;
  for (std::int64_t band = -top; band <= top; ++band)
    worst = std::min(worst, trapezoid_ratio(band, layout));
  CHECK(worst == trapezoid_ratio(top, layout));
  CHECK(worst > 1.0 - 6.3e-4);
}

TEST_CASE("longitude wrapping lands in the canonical interval") {
  const double pi = std::acos(-1.0);
  CHECK(wrap_longitude(0.5) == 0.5);
  CHECK(wrap_longitude(pi) == -pi);
  CHECK(wrap_longitude(-pi) == -pi);
  CHECK(wrap_longitude(2.0 * pi + 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(wrap_longitude(-2.0 * pi - 0.5) ==
        doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("mercator projection fixes the equator and origin") {
  const double r = kDefaultEarthRadiusM;
  CHECK(mercator_project({0.0, 0.0}, r).x == 0.0);
  // tan(pi/4) rounds a hair under 1, so the origin's y is ~1e-16 * r.
  CHECK(std::abs(mercator_project({0.0, 0.0}, r).y) < 1e-8);
  CHECK(mercator_project({0.0, 0.25}, r).x == doctest::Approx(r * 0.25));
  const double y = mercator_project({0.5, 0.0}, r).y;
  CHECK(y == doctest::Approx(r * std::log(std::tan(0.25 * std::acos(-1.0) +
                                                   0.25))));
}

TEST_CASE("mercator cells shrink on the ground away from the equator") {
  MercatorLayout m;
  CHECK(mercator_cell_metric_size(0.0, m) ==
        doctest::Approx(m.projected_cell_size).epsilon(1e-12));
  const double lat = deg_to_rad(60.0);
  CHECK(mercator_cell_metric_size(lat, m) ==
        doctest::Approx(m.projected_cell_size * std::cos(lat)).epsilon(1e-12));
  CHECK(mercator_cell_of_point({0.0, 0.1}, m) ==
        mercator_cell_of_point({0.0, 0.1}, m));
}

TEST_CASE("cell csv lists indices with nine-digit centers") {
  RegionLayout layout;
  const std::vector<CellIndex> cells = {
      {-100000, 42}, {0, 0}, {250000, -9000}};
  const auto path =
      std::filesystem::temp_directory_path() / "geocell_cells_test.csv";
  write_cell_csv(path, cells, layout);

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "band_i,step_j,lat_deg,lon_deg");
  for (const CellIndex& cell : cells) {
    REQUIRE(std::getline(in, line));
    std::istringstream row(line);
    std::string field;
    std::getline(row, field, ',');
    CHECK(std::stoll(field) == cell.band_i);
    std::getline(row, field, ',');
    CHECK(std::stoll(field) == cell.step_j);
    const GeoPoint center = cell_center(cell, layout);
    std::getline(row, field, ',');
    CHECK(std::stod(field) ==
          doctest::Approx(rad_to_deg(center.lat)).epsilon(1e-7));
    std::getline(row, field, ',');
    CHECK(std::stod(field) ==
          doctest::Approx(rad_to_deg(center.lon)).epsilon(1e-7));
  }
  CHECK(!std::getline(in, line));
  std::filesystem::remove(path);
}

TEST_CASE("cell indices order by band then step") {
  CHECK(CellIndex{1, 5} < CellIndex{2, 0});
  CHECK(CellIndex{1, 5} < CellIndex{1, 6});
  CHECK(CellIndex{-2, 100} < CellIndex{-1, -100});
  CHECK(CellIndex{3, 3} == CellIndex{3, 3});

  std::unordered_set<CellIndex, CellIndexHash> set;
  Rng rng(41);
  RegionLayout layout;
  for (int i = 0; i < 1000; ++i) set.insert(random_cell(rng, layout));
  CHECK(set.size() > 990);
}

TEST_CASE("degree conversions invert each other") {
  CHECK(deg_to_rad(180.0) == doctest::Approx(std::acos(-1.0)).epsilon(1e-15));
  CHECK(rad_to_deg(deg_to_rad(42.42)) ==
        doctest::Approx(42.42).epsilon(1e-14));
}
