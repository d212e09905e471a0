#include "geocell/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "geocell/errors.hpp"
#include "geocell/rng.hpp"

namespace geocell {

namespace {

constexpr double kMaxRegionAreaM2 = 100.0e6;

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Uniform [0, 1) value at one lattice corner.
double corner_value(std::uint64_t seed, std::int64_t gx, std::int64_t gy) {
  std::uint64_t h = splitmix64(seed ^ static_cast<std::uint64_t>(gx));
  h = splitmix64(h ^ static_cast<std::uint64_t>(gy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double octave_value(std::uint64_t seed, double x, double y,
                    double wavelength) {
  const double fx = x / wavelength;
  const double fy = y / wavelength;
  const double gx = std::floor(fx);
  const double gy = std::floor(fy);
  const std::int64_t ix = static_cast<std::int64_t>(gx);
  const std::int64_t iy = static_cast<std::int64_t>(gy);
  const double u = smoothstep(fx - gx);
  const double v = smoothstep(fy - gy);
  const double c00 = corner_value(seed, ix, iy);
  const double c10 = corner_value(seed, ix + 1, iy);
  const double c01 = corner_value(seed, ix, iy + 1);
  const double c11 = corner_value(seed, ix + 1, iy + 1);
  const double top = c00 + (c10 - c00) * u;
  const double bot = c01 + (c11 - c01) * u;
  return top + (bot - top) * v;
}

void check_world(const SyntheticWorld& world) {
  if (world.octaves < 1) throw ValidationError("octaves must be >= 1");
  if (!(world.base_wavelength_m > 0.0))
    throw ValidationError("base_wavelength_m must be positive");
  if (!(world.gain > 0.0)) throw ValidationError("gain must be positive");
  if (!(world.resolution_m > 0.0))
    throw ValidationError("resolution_m must be positive");
  if (world.photometric_noise_sigma < 0.0)
    throw ValidationError("photometric_noise_sigma must be >= 0");
  if (world.street_pixels < 2)
    throw ValidationError("street_pixels must be >= 2");
  if (world.region_min.lat >= world.region_max.lat ||
      wrap_longitude(world.region_max.lon - world.region_min.lon) <= 0.0)
    throw ValidationError("world region is empty");
}

struct RegionExtent {
  double east_m;
  double north_m;
};

RegionExtent region_extent(const SyntheticWorld& world) {
  RegionExtent e;
  e.north_m = (world.region_max.lat - world.region_min.lat) *
              kDefaultEarthRadiusM;
  e.east_m = wrap_longitude(world.region_max.lon - world.region_min.lon) *
             kDefaultEarthRadiusM * std::cos(world.region_max.lat);
  return e;
}

bool in_region(const SyntheticWorld& world, const GeoPoint& pos) {
  if (pos.lat < world.region_min.lat || pos.lat > world.region_max.lat)
    return false;
  const double span =
      wrap_longitude(world.region_max.lon - world.region_min.lon);
  const double off = wrap_longitude(pos.lon - world.region_min.lon);
  return off >= 0.0 && off <= span;
}

}  // namespace

double world_noise(const SyntheticWorld& world, int channel, double east_m,
                   double south_m) {
  double sum = 0.0;
  double norm = 0.0;
  double amplitude = 1.0;
  double wavelength = world.base_wavelength_m;
  for (int o = 0; o < world.octaves; ++o) {
    const std::uint64_t salt =
        mix_seed(world.seed, 0x5eed0000u + 257u * static_cast<unsigned>(o) +
                                 static_cast<unsigned>(channel));
    sum += amplitude * octave_value(salt, east_m, south_m, wavelength);
    norm += amplitude;
    amplitude *= world.gain;
    wavelength *= 0.5;
  }
  return sum / norm;
}

GeoRaster synth_aerial(const SyntheticWorld& world) {
  check_world(world);
  const RegionExtent extent = region_extent(world);
  if (extent.east_m * extent.north_m > kMaxRegionAreaM2)
    throw ResourceError("world region exceeds 100 km^2");

  GeoRaster raster;
  raster.anchor = GeoPoint{world.region_max.lat, world.region_min.lon};
  raster.resolution = world.resolution_m;
  raster.width = static_cast<std::int64_t>(
      std::ceil(extent.east_m / world.resolution_m));
  raster.height = static_cast<std::int64_t>(
      std::ceil(extent.north_m / world.resolution_m));
  raster.data.resize(static_cast<std::size_t>(raster.width) * raster.height *
                     3u);

  std::size_t at = 0;
  for (std::int64_t py = 0; py < raster.height; ++py) {
    const double south = (static_cast<double>(py) + 0.5) * world.resolution_m;
    for (std::int64_t px = 0; px < raster.width; ++px) {
      const double east = (static_cast<double>(px) + 0.5) * world.resolution_m;
      for (int c = 0; c < 3; ++c) {
        const double v = world_noise(world, c, east, south);
        raster.data[at++] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return raster;
}

PatchSpec street_view_spec(const SyntheticWorld& world, const GeoPoint& pos,
                           double heading) {
  const double east = kStreetLeadM * std::sin(heading);
  const double north = kStreetLeadM * std::cos(heading);
  PatchSpec spec;
  spec.center.lat = pos.lat + north / kDefaultEarthRadiusM;
  spec.center.lon =
      pos.lon + east / (kDefaultEarthRadiusM * std::cos(pos.lat));
  spec.sidelength_d = kStreetExtentM;
  // extract_patch rotates counterclockwise; compass headings run clockwise.
  spec.orientation_theta = -heading;
  spec.pixels = world.street_pixels;
  return spec;
}

Image synth_street_view(const GeoRaster& aerial, const SyntheticWorld& world,
                        const GeoPoint& pos, double heading,
                        std::uint64_t rng_seed) {
  check_world(world);
  if (!in_region(world, pos))
    throw CoverageError("street view position lies outside the world region");

  Image image = extract_patch(aerial, street_view_spec(world, pos, heading));
  if (world.photometric_noise_sigma > 0.0) {
    Rng rng(rng_seed);
    for (float& v : image.values) {
      const double noisy =
          static_cast<double>(v) +
          world.photometric_noise_sigma * rng.normal();
      v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
  }
  return image;
}

Image synth_street_view(const SyntheticWorld& world, const GeoPoint& pos,
                        double heading, std::uint64_t rng_seed) {
  return synth_street_view(synth_aerial(world), world, pos, heading, rng_seed);
}

std::vector<PhotoRecord> scatter_photos(const SyntheticWorld& world,
                                        std::size_t count,
                                        const std::string& id_prefix,
                                        std::uint64_t seed) {
  check_world(world);
  // The street crop reaches at most lead + half the window diagonal from
  // the camera; 40 m of margin keeps it on the raster with slack.
  const double margin_m = 40.0;
  const double r = kDefaultEarthRadiusM;
  const double margin_lat = margin_m / r;
  const double max_abs_lat =
      std::max(std::abs(world.region_min.lat), std::abs(world.region_max.lat));
  const double margin_lon = margin_m / (r * std::cos(max_abs_lat));
  const double lat_lo = world.region_min.lat + margin_lat;
  const double lat_hi = world.region_max.lat - margin_lat;
  const double lon_lo = world.region_min.lon + margin_lon;
  const double lon_hi = world.region_max.lon - margin_lon;
  if (!(lat_lo < lat_hi) || !(lon_lo < lon_hi))
    throw ValidationError("region too small for the street-view margin");

  constexpr std::int64_t kTimeLo = 1514764800;  // 2018-01-01T00:00:00Z
  constexpr std::int64_t kTimeHi = 1640995200;  // 2022-01-01T00:00:00Z

  Rng rng(seed);
  std::vector<PhotoRecord> photos(count);
  char suffix[24];
  for (std::size_t i = 0; i < count; ++i) {
    PhotoRecord& rec = photos[i];
    std::snprintf(suffix, sizeof(suffix), "%05zu", i);
    rec.id = id_prefix + suffix;
    rec.location.lat = rng.uniform(lat_lo, lat_hi);
    rec.location.lon = rng.uniform(lon_lo, lon_hi);
    rec.synthetic = true;
    rec.pose_pos = rec.location;
    rec.pose_heading = rng.uniform(0.0, 2.0 * M_PI);
    rec.captured_at =
        kTimeLo + static_cast<std::int64_t>(
                      rng.uniform_index(static_cast<std::uint64_t>(kTimeHi - kTimeLo)));
  }
  return photos;
}

}  // namespace geocell
