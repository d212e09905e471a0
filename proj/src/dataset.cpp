#include "geocell/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "geocell/errors.hpp"

#include <json.hpp>

namespace geocell {

namespace {

using nlohmann::json;

// Days since 1970-01-01 of a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy =
      (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
      static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int* y, int* m, int* d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  *d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  *m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
  *y = static_cast<int>(yy + (*m <= 2));
}

bool days_in_month_ok(int y, int m, int d) {
  static const int lengths[12] = {31, 28, 31, 30, 31, 30,
                                  31, 31, 30, 31, 30, 31};
  if (m < 1 || m > 12 || d < 1) return false;
  int cap = lengths[m - 1];
  const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
  if (m == 2 && leap) cap = 29;
  return d <= cap;
}

bool parse_fixed_int(const std::string& s, std::size_t pos, std::size_t len,
                     int* out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t i = 0; i < len; ++i) {
    const char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  *out = v;
  return true;
}

std::string format_rfc3339(std::int64_t unix_seconds) {
  const CalendarTime t = calendar_utc(unix_seconds);
  std::int64_t rem = unix_seconds - days_from_civil(t.year, t.month, t.day) *
                                        86400;
  const int mi = static_cast<int>((rem % 3600) / 60);
  const int se = static_cast<int>(rem % 60);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", t.year,
                t.month, t.day, t.hour, mi, se);
  return buf;
}

// One manifest line to a record. Returns false on any malformed content.
bool parse_record(const std::string& line, PhotoRecord* out) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return false;
  if (!j.contains("id") || !j["id"].is_string()) return false;
  if (!j.contains("lat") || !j["lat"].is_number()) return false;
  if (!j.contains("lon") || !j["lon"].is_number()) return false;

  PhotoRecord rec;
  rec.id = j["id"].get<std::string>();
  if (rec.id.empty()) return false;
  const double lat_deg = j["lat"].get<double>();
  const double lon_deg = j["lon"].get<double>();
  if (!std::isfinite(lat_deg) || !std::isfinite(lon_deg) ||
      std::abs(lat_deg) > 90.0)
    return false;
  rec.location = GeoPoint{deg_to_rad(lat_deg), wrap_longitude(deg_to_rad(lon_deg))};

  if (j.contains("captured_at")) {
    if (!j["captured_at"].is_string()) return false;
    rec.captured_at = parse_rfc3339(j["captured_at"].get<std::string>());
    if (!rec.captured_at) return false;
  }

  const bool has_image = j.contains("image");
  const bool has_synth = j.contains("synthetic");
  if (has_image == has_synth) return false;
  if (has_image) {
    if (!j["image"].is_string()) return false;
    rec.image_path = j["image"].get<std::string>();
    if (rec.image_path.empty()) return false;
  } else {
    const json& s = j["synthetic"];
    if (!s.is_object()) return false;
    if (!s.contains("heading_deg") || !s["heading_deg"].is_number())
      return false;
    rec.synthetic = true;
    rec.pose_heading = deg_to_rad(s["heading_deg"].get<double>());
    rec.pose_pos = rec.location;
    if (s.contains("lat") && s.contains("lon")) {
      if (!s["lat"].is_number() || !s["lon"].is_number()) return false;
      rec.pose_pos = GeoPoint{deg_to_rad(s["lat"].get<double>()),
                              wrap_longitude(deg_to_rad(s["lon"].get<double>()))};
    }
  }
  *out = std::move(rec);
  return true;
}

}  // namespace

std::optional<std::int64_t> parse_rfc3339(const std::string& text) {
  int y, mo, d, h, mi, se;
  if (!parse_fixed_int(text, 0, 4, &y)) return std::nullopt;
  if (text.size() < 20 || text[4] != '-' || text[7] != '-') return std::nullopt;
  if (std::tolower(text[10]) != 't') return std::nullopt;
  if (text[13] != ':' || text[16] != ':') return std::nullopt;
  if (!parse_fixed_int(text, 5, 2, &mo) || !parse_fixed_int(text, 8, 2, &d) ||
      !parse_fixed_int(text, 11, 2, &h) || !parse_fixed_int(text, 14, 2, &mi) ||
      !parse_fixed_int(text, 17, 2, &se))
    return std::nullopt;
  if (!days_in_month_ok(y, mo, d)) return std::nullopt;
  if (h > 23 || mi > 59 || se > 60) return std::nullopt;
  if (se == 60) se = 59;  // fold leap seconds

  std::size_t pos = 19;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    std::size_t digits = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      ++pos;
      ++digits;
    }
    if (digits == 0) return std::nullopt;
  }
  if (pos >= text.size()) return std::nullopt;

  std::int64_t offset = 0;
  if (std::tolower(text[pos]) == 'z') {
    if (pos + 1 != text.size()) return std::nullopt;
  } else if (text[pos] == '+' || text[pos] == '-') {
    int oh, om;
    if (pos + 6 != text.size() || text[pos + 3] != ':') return std::nullopt;
    if (!parse_fixed_int(text, pos + 1, 2, &oh) ||
        !parse_fixed_int(text, pos + 4, 2, &om))
      return std::nullopt;
    if (oh > 23 || om > 59) return std::nullopt;
    offset = static_cast<std::int64_t>(oh) * 3600 + om * 60;
    if (text[pos] == '-') offset = -offset;
  } else {
    return std::nullopt;
  }

  return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se - offset;
}

CalendarTime calendar_utc(std::int64_t unix_seconds) {
  std::int64_t days = unix_seconds / 86400;
  std::int64_t rem = unix_seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  CalendarTime t;
  civil_from_days(days, &t.year, &t.month, &t.day);
  t.hour = static_cast<int>(rem / 3600);
  return t;
}

ManifestData load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  ManifestData data;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    PhotoRecord rec;
    if (!parse_record(line, &rec)) {
      ++data.skipped_lines;
      continue;
    }
    if (!seen.insert(rec.id).second)
      throw ValidationError("duplicate photo id: " + rec.id);
    data.records.push_back(std::move(rec));
  }
  if (data.records.empty())
    throw EmptyDatasetError("manifest holds no valid records: " +
                            path.string());
  return data;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<PhotoRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const PhotoRecord& rec : records) {
    json j;
    j["id"] = rec.id;
    j["lat"] = rad_to_deg(rec.location.lat);
    j["lon"] = rad_to_deg(rec.location.lon);
    if (rec.captured_at) j["captured_at"] = format_rfc3339(*rec.captured_at);
    if (rec.synthetic) {
      j["synthetic"] = {{"lat", rad_to_deg(rec.pose_pos.lat)},
                        {"lon", rad_to_deg(rec.pose_pos.lon)},
                        {"heading_deg", rad_to_deg(rec.pose_heading)}};
    } else {
      j["image"] = rec.image_path;
    }
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

DedupPartition dedup_partition(const std::vector<PhotoRecord>& photos,
                               const RegionLayout& layout_5m) {
  DedupPartition partition;
  for (std::size_t i = 0; i < photos.size(); ++i) {
    partition[cell_of_point(photos[i].location, layout_5m)].push_back(i);
  }
  return partition;
}

std::vector<std::size_t> sample_batch(Rng& rng, const DedupPartition& partition,
                                      std::size_t b) {
  if (partition.size() < b)
    throw InsufficientDataError(
        "batch needs " + std::to_string(b) + " occupied cells, have " +
        std::to_string(partition.size()));

  std::vector<const std::vector<std::size_t>*> cells;
  cells.reserve(partition.size());
  for (const auto& [cell, ids] : partition) cells.push_back(&ids);

  // Partial Fisher-Yates: the first b entries are a uniform ordered sample.
  std::vector<std::size_t> order(cells.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t pick =
        k + static_cast<std::size_t>(rng.uniform_index(order.size() - k));
    std::swap(order[k], order[pick]);
  }

  std::vector<std::size_t> batch(b);
  for (std::size_t k = 0; k < b; ++k) {
    const std::vector<std::size_t>& ids = *cells[order[k]];
    batch[k] = ids[rng.uniform_index(ids.size())];
  }
  return batch;
}

TrainingPair make_training_pair(const PhotoRecord& photo, Rng& rng, double l,
                                double l_delta) {
  if (l_delta < 0.0) throw ValidationError("l_delta must be >= 0");
  if (!(l > 2.0 * l_delta))
    throw ValidationError("cell size must exceed twice the margin");
  const double t_max = 0.5 * l - l_delta;

  TrainingPair pair;
  pair.photo = photo;
  pair.cell_theta = rng.uniform(0.0, 2.0 * M_PI);
  pair.offset_t[0] = rng.uniform(-t_max, t_max);
  pair.offset_t[1] = rng.uniform(-t_max, t_max);

  // The photo sits at offset (right, up) in the rotated cell frame; the
  // center is therefore displaced the opposite way in world coordinates.
  const double c = std::cos(pair.cell_theta);
  const double s = std::sin(pair.cell_theta);
  const double east = pair.offset_t[0] * c - pair.offset_t[1] * s;
  const double north = pair.offset_t[0] * s + pair.offset_t[1] * c;
  const double r = kDefaultEarthRadiusM;
  pair.cell_center.lat = photo.location.lat - north / r;
  pair.cell_center.lon = wrap_longitude(
      photo.location.lon - east / (r * std::cos(photo.location.lat)));
  return pair;
}

BatchMask negative_mask(const std::vector<TrainingPair>& pairs,
                        const MaskConfig& config) {
  const std::size_t b = pairs.size();
  if (b < 2) throw ValidationError("mask needs a batch of at least 2");

  BatchMask mask;
  mask.size = b;
  mask.flags.assign(b * b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) continue;
      double dist;
      if (!config.boundary_distance) {
        dist = geodesic_distance(pairs[i].photo.location,
                                 pairs[j].cell_center, config.earth_radius);
      } else {
        const GeoPoint& center = pairs[j].cell_center;
        const double de =
            wrap_longitude(pairs[i].photo.location.lon - center.lon) *
            config.earth_radius * std::cos(center.lat);
        const double dn =
            (pairs[i].photo.location.lat - center.lat) * config.earth_radius;
        const double c = std::cos(pairs[j].cell_theta);
        const double s = std::sin(pairs[j].cell_theta);
        const double u = c * de + s * dn;
        const double v = -s * de + c * dn;
        const double half = 0.5 * config.cell_size_l;
        const double ex = std::max(0.0, std::abs(u) - half);
        const double ey = std::max(0.0, std::abs(v) - half);
        dist = std::hypot(ex, ey);
      }
      mask.flags[i * b + j] = dist >= config.min_distance_m ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace geocell
