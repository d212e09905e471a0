#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "geocell/geodesy.hpp"

namespace geocell {

// Georeferenced north-up RGB raster with square pixels. The anchor is the
// geographic location of the top-left pixel center; longitude spacing is
// derived from the metric resolution at the anchor latitude.
struct GeoRaster {
  GeoPoint anchor;
  double resolution = 0.5;  // meters per pixel
  std::int64_t width = 0;
  std::int64_t height = 0;
  double earth_radius = kDefaultEarthRadiusM;
  std::vector<std::uint8_t> data;  // width*height*3, row-major RGB

  bool valid() const {
    return resolution > 0.0 && width > 0 && height > 0 &&
           data.size() == static_cast<std::size_t>(width) *
                              static_cast<std::size_t>(height) * 3u;
  }
};

// Normalized image: values in [0, 1], three channels, row-major with
// interleaved RGB.
struct Image {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<float> values;  // width*height*3

  static Image zeros(std::int64_t w, std::int64_t h) {
    Image im;
    im.width = w;
    im.height = h;
    im.values.assign(static_cast<std::size_t>(w) * h * 3u, 0.0f);
    return im;
  }
  float& at(std::int64_t x, std::int64_t y, int c) {
    return values[(static_cast<std::size_t>(y) * width + x) * 3u + c];
  }
  float at(std::int64_t x, std::int64_t y, int c) const {
    return values[(static_cast<std::size_t>(y) * width + x) * 3u + c];
  }
};

// A square ground window to extract: center, metric side length, orientation
// (0 = north-up, positive = counterclockwise) and output size in pixels.
struct PatchSpec {
  GeoPoint center;
  double sidelength_d = 76.8;
  double orientation_theta = 0.0;
  std::int64_t pixels = 384;
};

// Side lengths d_i = 2^i * d0 for i in [0, n).
std::vector<double> lod_sidelengths(int n, double d0);

// Patch specs for every level of detail of one cell: common center and
// orientation, equal pixel counts, doubling side lengths.
std::vector<PatchSpec> patch_specs_for_cell(const CellIndex& cell,
                                            const RegionLayout& layout, int n,
                                            double d0, std::int64_t pixels,
                                            double theta);

// Same, for an arbitrary window center (training cells are offset and
// rotated relative to the grid).
std::vector<PatchSpec> patch_specs_at(const GeoPoint& center, double theta,
                                      int n, double d0, std::int64_t pixels);

// Extracts an oriented window by bilinear resampling. Output pixel centers
// are mapped through the patch rotation and a local tangent-plane
// meters-to-degrees conversion at the patch center. Samples outside the
// raster extent contribute black. Throws CoverageError when the patch
// footprint misses the raster entirely.
Image extract_patch(const GeoRaster& src, const PatchSpec& spec);

// Fraction of output samples whose bilinear support lies fully inside the
// raster extent, for the given spec.
double patch_coverage(const GeoRaster& src, const PatchSpec& spec);

// Raster container I/O: headerless binary RGB8 rows in <path>, plus a
// "key=value" sidecar in <path>.meta holding anchor_lat_deg, anchor_lon_deg,
// resolution_m, width, height.
void save_raster(const GeoRaster& raster, const std::filesystem::path& path);
GeoRaster load_raster(const std::filesystem::path& path);

// PPM (P6) dumps for visual inspection, and loading for file-backed photos.
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

}  // namespace geocell
