#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geocell/dataset.hpp"
#include "geocell/raster.hpp"

namespace geocell {

// Street views are fixed-size ground crops: a 40 m window centered 10 m
// ahead of the camera along its heading.
inline constexpr double kStreetExtentM = 40.0;
inline constexpr double kStreetLeadM = 10.0;

// Procedural world: multi-octave value noise over a geographic box, plus
// photometric noise for simulated ground photos. Pure in (seed, parameters),
// so every sample can be re-rendered bit-identically.
struct SyntheticWorld {
  std::uint64_t seed = 1;
  GeoPoint region_min;  // southwest corner, radians
  GeoPoint region_max;  // northeast corner, radians
  int octaves = 3;
  double base_wavelength_m = 192.0;
  double gain = 0.5;
  double resolution_m = 0.5;
  double photometric_noise_sigma = 0.02;
  std::int64_t street_pixels = 64;
};

// Noise field value in [0, 1) at raster-local metric coordinates (east_m
// right, south_m down from the top-left corner).
double world_noise(const SyntheticWorld& world, int channel, double east_m,
                   double south_m);

// Renders the world's aerial raster at world.resolution_m. The raster anchor
// is the northwest corner of the region. Throws ResourceError when the
// region exceeds 100 km².
GeoRaster synth_aerial(const SyntheticWorld& world);

// Ground photo at pos with the given heading (radians clockwise from
// north): heading-up crop of the aerial raster, kStreetExtentM wide,
// centered kStreetLeadM ahead, with additive Gaussian noise of
// world.photometric_noise_sigma clamped to [0, 1]. Throws CoverageError
// when pos lies outside the region.
Image synth_street_view(const GeoRaster& aerial, const SyntheticWorld& world,
                        const GeoPoint& pos, double heading,
                        std::uint64_t rng_seed);

// Convenience overload that renders the raster first. Intended for small
// worlds; render once and use the raster overload in loops.
Image synth_street_view(const SyntheticWorld& world, const GeoPoint& pos,
                        double heading, std::uint64_t rng_seed);

// The patch window synth_street_view reads, exposed for geometry tests.
PatchSpec street_view_spec(const SyntheticWorld& world, const GeoPoint& pos,
                           double heading);

// Uniformly scattered synthetic photos with random headings and capture
// times, ids "<prefix>00000" on. Positions keep a margin inside the region
// so every street crop stays on the raster. Throws ValidationError when the
// region is too small for the margin.
std::vector<PhotoRecord> scatter_photos(const SyntheticWorld& world,
                                        std::size_t count,
                                        const std::string& id_prefix,
                                        std::uint64_t seed);

}  // namespace geocell
