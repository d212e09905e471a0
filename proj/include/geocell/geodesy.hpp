#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace geocell {

inline constexpr double kDefaultEarthRadiusM = 6371000.0;

// Latitude cutoff shared with common web maps. Bands beyond it are rejected.
inline constexpr double kMaxAbsLatitudeDeg = 85.06;

double max_abs_latitude_rad();

// Geographic point on the spherical earth model. Latitude and longitude in
// radians; longitude normalized to [-pi, pi).
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

// Wraps a longitude into [-pi, pi).
double wrap_longitude(double lon);

// Consistent-scale cell layout: the sphere is cut into latitude bands of
// l meters, and each band into l-meter longitude steps, so every cell is a
// north-aligned l x l square centered at (band latitude, step longitude).
struct RegionLayout {
  double cell_size_l = 30.0;
  double earth_radius_r = kDefaultEarthRadiusM;
};

// Integer address of one cell: latitude band and longitude step. Steps wrap
// around the globe, with the seam at the antimeridian.
struct CellIndex {
  std::int64_t band_i = 0;
  std::int64_t step_j = 0;

  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

struct CellIndexHash {
  std::size_t operator()(const CellIndex& c) const noexcept {
    const std::uint64_t a = static_cast<std::uint64_t>(c.band_i);
    const std::uint64_t b = static_cast<std::uint64_t>(c.step_j);
    std::uint64_t x = a * 0x9e3779b97f4a7c15ULL ^ (b + 0x7f4a7c15u);
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return static_cast<std::size_t>(x);
  }
};

// Baseline layout: a regular grid in EPSG:3857 projected coordinates. The
// cell size is given in projected meters, which match ground meters only at
// the equator.
struct MercatorLayout {
  double projected_cell_size = 30.0;
  double earth_radius_r = kDefaultEarthRadiusM;
};

// Center latitude of band i. Throws RangeError if the band lies beyond the
// supported latitude range.
double band_latitude(std::int64_t band_i, const RegionLayout& layout);

// Largest valid band index for the layout (bands are symmetric around 0).
std::int64_t max_band_index(const RegionLayout& layout);

// Number of longitude steps in band i. Steps do not divide the circle
// exactly; the band's last cell may overlap its first by less than one cell
// width at the antimeridian seam.
std::int64_t band_step_count(std::int64_t band_i, const RegionLayout& layout);

// Canonical step range [first, last] of band i, covering center longitudes
// in [-pi, pi).
struct StepRange {
  std::int64_t first = 0;
  std::int64_t last = -1;
};
StepRange band_step_range(std::int64_t band_i, const RegionLayout& layout);

// Center coordinates of a cell. step_j outside the canonical range is
// wrapped around the band first.
GeoPoint cell_center(const CellIndex& cell, const RegionLayout& layout);

// Cell whose l x l square contains p. Band intervals are half-open with the
// north edge excluded; step intervals half-open with the east edge excluded,
// so the cells partition the sphere below the latitude cutoff.
CellIndex cell_of_point(const GeoPoint& p, const RegionLayout& layout);

// All cells whose centers lie in the closed box [min, max]. A box with
// min.lon > max.lon spans the antimeridian. Ordered by (band, step)
// ascending; empty boxes yield an empty sequence.
std::vector<CellIndex> cells_in_box(const RegionLayout& layout,
                                    const GeoPoint& min, const GeoPoint& max);

// Great-circle distance in meters (haversine on the sphere of radius r).
double geodesic_distance(const GeoPoint& a, const GeoPoint& b,
                         double radius = kDefaultEarthRadiusM);

// Ratio of the shorter to the longer of a cell's two east-west sides in
// band i, computed from the circumferences at the band's edge latitudes.
// 1 means a perfect square; values below 1 measure the trapezoid shape
// error introduced by the sphere.
double trapezoid_ratio(std::int64_t band_i, const RegionLayout& layout);

// Ground size in meters of a Mercator-layout cell at the given latitude.
double mercator_cell_metric_size(double lat, const MercatorLayout& m);

// Regular-grid index of p in EPSG:3857 projected coordinates.
CellIndex mercator_cell_of_point(const GeoPoint& p, const MercatorLayout& m);

// Forward EPSG:3857 projection (x = r*lon, y = r*ln tan(pi/4 + lat/2)).
struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
};
ProjectedPoint mercator_project(const GeoPoint& p, double radius);

// Writes cells as CSV "band_i,step_j,lat_deg,lon_deg" with 9 decimal
// digits. Throws IoError on failure.
void write_cell_csv(const std::filesystem::path& path,
                    const std::vector<CellIndex>& cells,
                    const RegionLayout& layout);

double deg_to_rad(double deg);
double rad_to_deg(double rad);

}  // namespace geocell
