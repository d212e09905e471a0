#include "geocell/geodesy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "geocell/errors.hpp"

namespace geocell {

namespace {

// Slack for index computations from floating-point coordinates, in units of
// one cell. 1e-9 cells is well below a micrometer for any supported layout.
constexpr double kIndexEps = 1e-9;

void check_layout(const RegionLayout& layout) {
  if (!(layout.cell_size_l > 0.0)) {
    throw ValidationError("cell_size_l must be positive");
  }
  if (!(layout.earth_radius_r > 0.0)) {
    throw ValidationError("earth_radius_r must be positive");
  }
}

}  // namespace

double deg_to_rad(double deg) { return deg * M_PI / 180.0; }
double rad_to_deg(double rad) { return rad * 180.0 / M_PI; }

double max_abs_latitude_rad() { return deg_to_rad(kMaxAbsLatitudeDeg); }

double wrap_longitude(double lon) {
  if (lon >= -M_PI && lon < M_PI) return lon;
  double w = std::remainder(lon, 2.0 * M_PI);  // [-pi, pi]
  if (w >= M_PI) w -= 2.0 * M_PI;
  if (w < -M_PI) w += 2.0 * M_PI;
  return w;
}

double band_latitude(std::int64_t band_i, const RegionLayout& layout) {
  check_layout(layout);
  const double lat = static_cast<double>(band_i) * layout.cell_size_l /
                     layout.earth_radius_r;
  if (std::abs(lat) >= max_abs_latitude_rad()) {
    throw RangeError("band " + std::to_string(band_i) +
                     " lies beyond the supported latitude range");
  }
  return lat;
}

std::int64_t max_band_index(const RegionLayout& layout) {
  check_layout(layout);
  const double bands = max_abs_latitude_rad() * layout.earth_radius_r /
                       layout.cell_size_l;
  std::int64_t i = static_cast<std::int64_t>(std::floor(bands));
  // The cutoff itself is excluded.
  while (static_cast<double>(i) * layout.cell_size_l / layout.earth_radius_r >=
         max_abs_latitude_rad()) {
    --i;
  }
  return i;
}

std::int64_t band_step_count(std::int64_t band_i, const RegionLayout& layout) {
  const StepRange r = band_step_range(band_i, layout);
  return r.last - r.first + 1;
}

StepRange band_step_range(std::int64_t band_i, const RegionLayout& layout) {
  const double phi = band_latitude(band_i, layout);
  const double step_angle =
      layout.cell_size_l / (layout.earth_radius_r * std::cos(phi));
  // Centers j*step_angle in [-pi, pi).
  StepRange r;
  r.first = static_cast<std::int64_t>(std::ceil(-M_PI / step_angle - kIndexEps));
  r.last = static_cast<std::int64_t>(std::ceil(M_PI / step_angle - kIndexEps)) - 1;
  return r;
}

GeoPoint cell_center(const CellIndex& cell, const RegionLayout& layout) {
  const double phi = band_latitude(cell.band_i, layout);
  const double step_angle =
      layout.cell_size_l / (layout.earth_radius_r * std::cos(phi));
  GeoPoint p;
  p.lat = phi;
  p.lon = wrap_longitude(static_cast<double>(cell.step_j) * step_angle);
  return p;
}

CellIndex cell_of_point(const GeoPoint& p, const RegionLayout& layout) {
  check_layout(layout);
  if (std::abs(p.lat) >= max_abs_latitude_rad()) {
    throw RangeError("latitude beyond the supported range");
  }
  const double band_units =
      p.lat * layout.earth_radius_r / layout.cell_size_l;
  // Half-open band interval [phi_i - l/2r, phi_i + l/2r), north edge excluded.
  const std::int64_t band_i =
      static_cast<std::int64_t>(std::floor(band_units + 0.5));

  const double phi = static_cast<double>(band_i) * layout.cell_size_l /
                     layout.earth_radius_r;
  const double step_angle =
      layout.cell_size_l / (layout.earth_radius_r * std::cos(phi));
  const double lon = wrap_longitude(p.lon);
  std::int64_t step_j =
      static_cast<std::int64_t>(std::floor(lon / step_angle + 0.5));
  const StepRange range = band_step_range(band_i, layout);
  const std::int64_t count = range.last - range.first + 1;
  // Near the antimeridian seam the nearest step can fall just outside the
  // canonical range; wrap it onto the opposite side of the band.
  if (step_j > range.last) step_j -= count;
  if (step_j < range.first) step_j += count;
  return CellIndex{band_i, step_j};
}

std::vector<CellIndex> cells_in_box(const RegionLayout& layout,
                                    const GeoPoint& min, const GeoPoint& max) {
  check_layout(layout);
  if (min.lat > max.lat) return {};
  const double lat_cap = max_abs_latitude_rad();
  const double lat_lo = std::max(min.lat, -lat_cap);
  const double lat_hi = std::min(max.lat, lat_cap);
  if (lat_lo > lat_hi) return {};

  const double l_over_r = layout.cell_size_l / layout.earth_radius_r;
  std::int64_t band_lo =
      static_cast<std::int64_t>(std::ceil(lat_lo / l_over_r - kIndexEps));
  std::int64_t band_hi =
      static_cast<std::int64_t>(std::floor(lat_hi / l_over_r + kIndexEps));
  const std::int64_t band_cap = max_band_index(layout);
  band_lo = std::max(band_lo, -band_cap);
  band_hi = std::min(band_hi, band_cap);

  const double lon_lo = wrap_longitude(min.lon);
  const double lon_hi = wrap_longitude(max.lon);
  const bool wraps = lon_lo > lon_hi;

  std::vector<CellIndex> cells;
  for (std::int64_t i = band_lo; i <= band_hi; ++i) {
    const double phi = static_cast<double>(i) * l_over_r;
    const double step_angle = l_over_r / std::cos(phi);
    const StepRange range = band_step_range(i, layout);

    const auto steps_in = [&](double lo, double hi,
                              std::vector<std::int64_t>& out) {
      std::int64_t j0 =
          static_cast<std::int64_t>(std::ceil(lo / step_angle - kIndexEps));
      std::int64_t j1 =
          static_cast<std::int64_t>(std::floor(hi / step_angle + kIndexEps));
      j0 = std::max(j0, range.first);
      j1 = std::min(j1, range.last);
      for (std::int64_t j = j0; j <= j1; ++j) out.push_back(j);
    };

    std::vector<std::int64_t> steps;
    if (!wraps) {
      steps_in(lon_lo, lon_hi, steps);
    } else {
      // Union of the two non-wrapping halves on either side of the seam.
      steps_in(lon_lo, M_PI, steps);
      steps_in(-M_PI, lon_hi, steps);
      std::sort(steps.begin(), steps.end());
      steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    }
    for (std::int64_t j : steps) cells.push_back(CellIndex{i, j});
  }
  return cells;
}

double geodesic_distance(const GeoPoint& a, const GeoPoint& b, double radius) {
  const double dlat = b.lat - a.lat;
  const double dlon = b.lon - a.lon;
  const double sl = std::sin(0.5 * dlat);
  const double so = std::sin(0.5 * dlon);
  const double h = sl * sl + std::cos(a.lat) * std::cos(b.lat) * so * so;
  return 2.0 * radius * std::asin(std::min(1.0, std::sqrt(h)));
}

double trapezoid_ratio(std::int64_t band_i, const RegionLayout& layout) {
  const double phi = band_latitude(band_i, layout);
  const double half = 0.5 * layout.cell_size_l / layout.earth_radius_r;
  const double ca = std::cos(phi - half);
  const double cb = std::cos(phi + half);
  const double lo = std::min(ca, cb);
  const double hi = std::max(ca, cb);
  return lo / hi;
}

double mercator_cell_metric_size(double lat, const MercatorLayout& m) {
  if (!(m.projected_cell_size > 0.0)) {
    throw ValidationError("projected_cell_size must be positive");
  }
  if (std::abs(lat) >= max_abs_latitude_rad()) {
    throw RangeError("latitude beyond the supported range");
  }
  return m.projected_cell_size * std::cos(lat);
}

ProjectedPoint mercator_project(const GeoPoint& p, double radius) {
  ProjectedPoint out;
  out.x = radius * wrap_longitude(p.lon);
  out.y = radius * std::log(std::tan(0.25 * M_PI + 0.5 * p.lat));
  return out;
}

CellIndex mercator_cell_of_point(const GeoPoint& p, const MercatorLayout& m) {
  if (!(m.projected_cell_size > 0.0)) {
    throw ValidationError("projected_cell_size must be positive");
  }
  if (std::abs(p.lat) >= max_abs_latitude_rad()) {
    throw RangeError("latitude beyond the supported range");
  }
  const ProjectedPoint q = mercator_project(p, m.earth_radius_r);
  // Grid aligned so that cell (0, 0) is centered on the projected origin.
  const std::int64_t col = static_cast<std::int64_t>(
      std::floor(q.x / m.projected_cell_size + 0.5));
  const std::int64_t row = static_cast<std::int64_t>(
      std::floor(q.y / m.projected_cell_size + 0.5));
  return CellIndex{row, col};
}

void write_cell_csv(const std::filesystem::path& path,
                    const std::vector<CellIndex>& cells,
                    const RegionLayout& layout) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "band_i,step_j,lat_deg,lon_deg\n";
  char line[128];
  for (const CellIndex& c : cells) {
    const GeoPoint p = cell_center(c, layout);
    std::snprintf(line, sizeof(line), "%lld,%lld,%.9f,%.9f\n",
                  static_cast<long long>(c.band_i),
                  static_cast<long long>(c.step_j), rad_to_deg(p.lat),
                  rad_to_deg(p.lon));
    out << line;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace geocell
