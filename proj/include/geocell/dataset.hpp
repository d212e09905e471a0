#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geocell/geodesy.hpp"
#include "geocell/rng.hpp"

namespace geocell {

// One ground photo. Synthetic records carry a camera pose instead of an
// image path and are rendered on demand from the world raster.
struct PhotoRecord {
  std::string id;
  GeoPoint location;
  std::optional<std::int64_t> captured_at;  // unix seconds, UTC
  std::string image_path;                   // file-backed records
  bool synthetic = false;
  GeoPoint pose_pos;       // camera position for synthetic records
  double pose_heading = 0.0;  // radians clockwise from north
};

struct ManifestData {
  std::vector<PhotoRecord> records;
  std::size_t skipped_lines = 0;
};

// Reads a JSON-lines manifest: one object per line with `id`, `lat`, `lon`
// (degrees), optional `captured_at` (RFC 3339), and either `image` (path)
// or `synthetic` ({lat, lon, heading_deg}). Malformed lines are counted and
// skipped. Throws IoError if unreadable, ValidationError on duplicate ids,
// EmptyDatasetError when no line parses.
ManifestData load_manifest(const std::filesystem::path& path);

// Writes records in the same JSON-lines layout, one per line, stable order.
void write_manifest(const std::filesystem::path& path,
                    const std::vector<PhotoRecord>& records);

// RFC 3339 timestamp to unix seconds ("2019-06-01T12:30:00Z", offsets and
// fractional seconds accepted, fraction discarded). Returns nullopt when the
// string does not parse.
std::optional<std::int64_t> parse_rfc3339(const std::string& text);

// Calendar fields of a unix timestamp (UTC), for grouped reports.
struct CalendarTime {
  int year;
  int month;
  int day;
  int hour;
};
CalendarTime calendar_utc(std::int64_t unix_seconds);

// Photos grouped by deduplication cell, keyed in deterministic index order.
// Values are indices into the photo sequence the partition was built from.
using DedupPartition = std::map<CellIndex, std::vector<std::size_t>>;

// Assigns every photo to its deduplication cell (nominally a 5 m layout).
DedupPartition dedup_partition(const std::vector<PhotoRecord>& photos,
                               const RegionLayout& layout_5m);

// Samples b distinct cells uniformly without replacement, then one uniform
// photo from each, in shuffled order. Throws InsufficientDataError when the
// partition has fewer than b cells.
std::vector<std::size_t> sample_batch(Rng& rng, const DedupPartition& partition,
                                      std::size_t b);

// A photo paired with its augmented positive cell: the cell is rotated by
// cell_theta and positioned so the photo sits at offset_t in the rotated
// cell frame (right, up), with |offset_t|_inf <= 0.5*l - l_delta.
struct TrainingPair {
  PhotoRecord photo;
  GeoPoint cell_center;
  double cell_theta = 0.0;
  std::array<double, 2> offset_t = {0.0, 0.0};
};

// Draws theta ~ U[0, 2pi) and offset components ~ U[-t_max, t_max] with
// t_max = 0.5*l - l_delta, then places the cell center so the photo lands at
// that offset. Requires l > 2*l_delta.
TrainingPair make_training_pair(const PhotoRecord& photo, Rng& rng, double l,
                                double l_delta);

// b x b flags marking which photo/cell pairings act as negatives in the
// contrastive loss. The diagonal is always false.
struct BatchMask {
  std::size_t size = 0;
  std::vector<char> flags;  // row-major

  bool at(std::size_t i, std::size_t j) const {
    return flags[i * size + j] != 0;
  }
};

struct MaskConfig {
  double min_distance_m = 100.0;
  // Measure to the nearest point of the rotated cell square instead of its
  // center.
  bool boundary_distance = false;
  double cell_size_l = 30.0;
  double earth_radius = kDefaultEarthRadiusM;
};

// mask[i][j] = i != j AND photo_i is at least min_distance_m away from
// pair j's cell.
BatchMask negative_mask(const std::vector<TrainingPair>& pairs,
                        const MaskConfig& config = {});

}  // namespace geocell
