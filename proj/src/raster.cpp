#include "geocell/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "geocell/errors.hpp"

namespace geocell {

namespace {

struct PixelCoord {
  double x;
  double y;
};

// Raster pixel-center coordinates of a geographic point (radians). Row 0 /
// column 0 centers sit exactly at the anchor.
PixelCoord to_pixel(const GeoRaster& src, double lat, double lon) {
  const double lat_scale = src.earth_radius / src.resolution;
  const double lon_scale =
      src.earth_radius * std::cos(src.anchor.lat) / src.resolution;
  PixelCoord p;
  p.y = (src.anchor.lat - lat) * lat_scale;
  p.x = wrap_longitude(lon - src.anchor.lon) * lon_scale;
  return p;
}

inline bool tap_inside(const GeoRaster& src, std::int64_t x, std::int64_t y) {
  return x >= 0 && y >= 0 && x < src.width && y < src.height;
}

inline void fetch(const GeoRaster& src, std::int64_t x, std::int64_t y,
                  float rgb[3]) {
  if (!tap_inside(src, x, y)) {
    rgb[0] = rgb[1] = rgb[2] = 0.0f;
    return;
  }
  const std::size_t base =
      (static_cast<std::size_t>(y) * src.width + x) * 3u;
  rgb[0] = src.data[base + 0] / 255.0f;
  rgb[1] = src.data[base + 1] / 255.0f;
  rgb[2] = src.data[base + 2] / 255.0f;
}

// Geographic location of one output sample: patch-local right/up offsets in
// meters, rotated counterclockwise by theta, then meters to radians on the
// tangent plane at the patch center.
void sample_location(const PatchSpec& spec, double earth_radius, double u,
                     double v, double* lat, double* lon) {
  const double c = std::cos(spec.orientation_theta);
  const double s = std::sin(spec.orientation_theta);
  const double east = u * c - v * s;
  const double north = u * s + v * c;
  *lat = spec.center.lat + north / earth_radius;
  *lon = spec.center.lon + east / (earth_radius * std::cos(spec.center.lat));
}

void check_spec(const PatchSpec& spec) {
  if (spec.sidelength_d <= 0.0)
    throw ValidationError("patch side length must be positive");
  if (spec.pixels <= 0) throw ValidationError("patch pixels must be positive");
}

}  // namespace

std::vector<double> lod_sidelengths(int n, double d0) {
  if (n <= 0) throw ValidationError("level count must be positive");
  if (d0 <= 0.0) throw ValidationError("base side length must be positive");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[i] = std::ldexp(d0, i);
  return out;
}

std::vector<PatchSpec> patch_specs_at(const GeoPoint& center, double theta,
                                      int n, double d0, std::int64_t pixels) {
  const std::vector<double> sides = lod_sidelengths(n, d0);
  std::vector<PatchSpec> specs(sides.size());
  for (std::size_t i = 0; i < sides.size(); ++i) {
    specs[i].center = center;
    specs[i].sidelength_d = sides[i];
    specs[i].orientation_theta = theta;
    specs[i].pixels = pixels;
  }
  return specs;
}

std::vector<PatchSpec> patch_specs_for_cell(const CellIndex& cell,
                                            const RegionLayout& layout, int n,
                                            double d0, std::int64_t pixels,
                                            double theta) {
  return patch_specs_at(cell_center(cell, layout), theta, n, d0, pixels);
}

Image extract_patch(const GeoRaster& src, const PatchSpec& spec) {
  if (!src.valid()) throw ValidationError("raster is empty or inconsistent");
  check_spec(spec);

  Image out = Image::zeros(spec.pixels, spec.pixels);
  const double step = spec.sidelength_d / static_cast<double>(spec.pixels);
  const double half = 0.5 * spec.sidelength_d;
  bool any_inside = false;

  for (std::int64_t py = 0; py < spec.pixels; ++py) {
    const double v = half - (static_cast<double>(py) + 0.5) * step;
    for (std::int64_t px = 0; px < spec.pixels; ++px) {
      const double u = (static_cast<double>(px) + 0.5) * step - half;
      double lat, lon;
      sample_location(spec, src.earth_radius, u, v, &lat, &lon);
      const PixelCoord pc = to_pixel(src, lat, lon);

      const double fx = pc.x;
      const double fy = pc.y;
      const std::int64_t x0 =
          static_cast<std::int64_t>(std::floor(fx));
      const std::int64_t y0 =
          static_cast<std::int64_t>(std::floor(fy));
      const double dx = fx - static_cast<double>(x0);
      const double dy = fy - static_cast<double>(y0);

      float c00[3], c10[3], c01[3], c11[3];
      fetch(src, x0, y0, c00);
      fetch(src, x0 + 1, y0, c10);
      fetch(src, x0, y0 + 1, c01);
      fetch(src, x0 + 1, y0 + 1, c11);
      any_inside =
          any_inside || tap_inside(src, x0, y0) ||
          tap_inside(src, x0 + 1, y0) || tap_inside(src, x0, y0 + 1) ||
          tap_inside(src, x0 + 1, y0 + 1);

      const double w00 = (1.0 - dx) * (1.0 - dy);
      const double w10 = dx * (1.0 - dy);
      const double w01 = (1.0 - dx) * dy;
      const double w11 = dx * dy;
      for (int ch = 0; ch < 3; ++ch) {
        out.at(px, py, ch) = static_cast<float>(
            w00 * c00[ch] + w10 * c10[ch] + w01 * c01[ch] + w11 * c11[ch]);
      }
    }
  }

  if (!any_inside)
    throw CoverageError("patch footprint lies outside the raster");
  return out;
}

double patch_coverage(const GeoRaster& src, const PatchSpec& spec) {
  if (!src.valid()) throw ValidationError("raster is empty or inconsistent");
  check_spec(spec);

  const double step = spec.sidelength_d / static_cast<double>(spec.pixels);
  const double half = 0.5 * spec.sidelength_d;
  std::int64_t covered = 0;
  for (std::int64_t py = 0; py < spec.pixels; ++py) {
    const double v = half - (static_cast<double>(py) + 0.5) * step;
    for (std::int64_t px = 0; px < spec.pixels; ++px) {
      const double u = (static_cast<double>(px) + 0.5) * step - half;
      double lat, lon;
      sample_location(spec, src.earth_radius, u, v, &lat, &lon);
      const PixelCoord pc = to_pixel(src, lat, lon);
      const std::int64_t x0 =
          static_cast<std::int64_t>(std::floor(pc.x));
      const std::int64_t y0 =
          static_cast<std::int64_t>(std::floor(pc.y));
      if (tap_inside(src, x0, y0) && tap_inside(src, x0 + 1, y0) &&
          tap_inside(src, x0, y0 + 1) && tap_inside(src, x0 + 1, y0 + 1)) {
        ++covered;
      }
    }
  }
  const double total =
      static_cast<double>(spec.pixels) * static_cast<double>(spec.pixels);
  return static_cast<double>(covered) / total;
}

void save_raster(const GeoRaster& raster, const std::filesystem::path& path) {
  if (!raster.valid()) throw ValidationError("raster is empty or inconsistent");

  std::ofstream data(path, std::ios::binary | std::ios::trunc);
  if (!data) throw IoError("cannot open " + path.string() + " for writing");
  data.write(reinterpret_cast<const char*>(raster.data.data()),
             static_cast<std::streamsize>(raster.data.size()));
  if (!data) throw IoError("short write to " + path.string());
  data.close();

  std::filesystem::path meta_path = path;
  meta_path += ".meta";
  std::ofstream meta(meta_path, std::ios::trunc);
  if (!meta)
    throw IoError("cannot open " + meta_path.string() + " for writing");
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "anchor_lat_deg=%.12f\nanchor_lon_deg=%.12f\n"
                "resolution_m=%.9f\nwidth=%lld\nheight=%lld\n",
                rad_to_deg(raster.anchor.lat), rad_to_deg(raster.anchor.lon),
                raster.resolution, static_cast<long long>(raster.width),
                static_cast<long long>(raster.height));
  meta << buf;
  if (!meta) throw IoError("short write to " + meta_path.string());
}

GeoRaster load_raster(const std::filesystem::path& path) {
  std::filesystem::path meta_path = path;
  meta_path += ".meta";
  std::ifstream meta(meta_path);
  if (!meta) throw IoError("cannot open " + meta_path.string());

  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("malformed sidecar line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto need = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end())
      throw IoError(std::string("sidecar missing key ") + key);
    return it->second;
  };

  GeoRaster raster;
  try {
    raster.anchor.lat = deg_to_rad(std::stod(need("anchor_lat_deg")));
    raster.anchor.lon = deg_to_rad(std::stod(need("anchor_lon_deg")));
    raster.resolution = std::stod(need("resolution_m"));
    raster.width = std::stoll(need("width"));
    raster.height = std::stoll(need("height"));
  } catch (const std::invalid_argument&) {
    throw IoError("unparsable numeric value in " + meta_path.string());
  }
  if (raster.resolution <= 0.0 || raster.width <= 0 || raster.height <= 0)
    throw IoError("invalid raster geometry in " + meta_path.string());

  const std::uintmax_t expect =
      static_cast<std::uintmax_t>(raster.width) *
      static_cast<std::uintmax_t>(raster.height) * 3u;
  std::ifstream data(path, std::ios::binary);
  if (!data) throw IoError("cannot open " + path.string());
  raster.data.resize(expect);
  data.read(reinterpret_cast<char*>(raster.data.data()),
            static_cast<std::streamsize>(expect));
  if (static_cast<std::uintmax_t>(data.gcount()) != expect)
    throw IoError("raster data truncated: " + path.string());
  return raster;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  if (image.width <= 0 || image.height <= 0 ||
      image.values.size() != static_cast<std::size_t>(image.width) *
                                 static_cast<std::size_t>(image.height) * 3u)
    throw ValidationError("image is empty or inconsistent");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * 3u);
  for (std::int64_t y = 0; y < image.height; ++y) {
    for (std::int64_t x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(x, y, c), 0.0f, 1.0f);
        row[static_cast<std::size_t>(x) * 3u + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("short write to " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  const auto next_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };

  if (next_token() != "P6") throw IoError("not a P6 image: " + path.string());
  std::int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(next_token());
    h = std::stoll(next_token());
    maxval = std::stoll(next_token());
  } catch (const std::invalid_argument&) {
    throw IoError("malformed header in " + path.string());
  }
  if (w <= 0 || h <= 0) throw IoError("bad dimensions in " + path.string());
  if (maxval != 255)
    throw IoError("unsupported max value in " + path.string());

  const std::size_t count = static_cast<std::size_t>(w) * h * 3u;
  std::vector<std::uint8_t> bytes(count);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count)
    throw IoError("pixel data truncated: " + path.string());

  Image im;
  im.width = w;
  im.height = h;
  im.values.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    im.values[i] = bytes[i] / 255.0f;
  return im;
}

}  // namespace geocell
