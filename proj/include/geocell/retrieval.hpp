#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geocell/dataset.hpp"
#include "geocell/geodesy.hpp"
#include "geocell/hnsw.hpp"
#include "geocell/model.hpp"
#include "geocell/training.hpp"

namespace geocell {

struct DbRecord {
  CellIndex cell;
  bool covered = true;
  std::vector<float> embedding;
};

// Reference database: one single-precision embedding per search region
// cell, in (band, step) ascending order.
struct EmbeddingDatabase {
  double cell_size_l = 30.0;
  double earth_radius_r = kDefaultEarthRadiusM;
  std::uint32_t embed_dim = 0;
  std::vector<DbRecord> records;

  RegionLayout layout() const { return {cell_size_l, earth_radius_r}; }
};

// Embeds every cell of the box with north-up LOD patches. Cells whose
// finest patch touches no raster data keep a cleared coverage flag and the
// embedding of blank images. Throws EmptyDatasetError when the box holds no
// cells.
EmbeddingDatabase build_database(const ModelParams& params,
                                 const ModelConfig& config,
                                 const ImageSource& source,
                                 const RegionLayout& layout,
                                 const GeoPoint& box_min,
                                 const GeoPoint& box_max, int threads = 1);

// File format GCDB: version, layout parameters, then fixed-width records.
// Round-trips byte-identically.
void save_database(const std::filesystem::path& path,
                   const EmbeddingDatabase& db);
EmbeddingDatabase load_database(const std::filesystem::path& path);

struct ScoredCell {
  CellIndex cell;
  double score = 0.0;
};
using RetrievalResult = std::vector<ScoredCell>;

// Exact top-n by dot product over the full database, ties by (band, step)
// ascending. n beyond the record count returns every record.
RetrievalResult knn_exact(const EmbeddingDatabase& db, const Embedding& query,
                          std::size_t n);

// Navigable-graph index over a database the caller keeps alive.
struct GraphIndex {
  const EmbeddingDatabase* db = nullptr;
  HnswIndex graph;
};

GraphIndex build_graph_index(const EmbeddingDatabase& db,
                             const HnswConfig& config = {});

// Approximate top-n with beam width ef_search; requires ef_search >= n.
// Ties ordered like knn_exact.
RetrievalResult knn_graph(const GraphIndex& index, const Embedding& query,
                          std::size_t n, std::size_t ef_search);

struct QueryEmbedding {
  PhotoRecord photo;
  Embedding embedding;
};

// Fraction of queries for which any of the top-n cells has its center
// strictly closer than radius_m to the photo location.
double recall_at_n_within(const EmbeddingDatabase& db,
                          const std::vector<QueryEmbedding>& queries,
                          std::size_t n, double radius_m = 50.0);
double recall_at_n_within(const GraphIndex& index,
                          const std::vector<QueryEmbedding>& queries,
                          std::size_t n, std::size_t ef_search,
                          double radius_m = 50.0);

enum class GroupKey { kYear, kHour };

struct GroupRecall {
  std::string group;  // "2019", "14", or "unknown"
  std::size_t count = 0;
  double recall = 0.0;
  bool below_min = false;
};

// Recall of precomputed rankings split by capture year or hour of day.
// Queries without a timestamp land in "unknown". Rows are ordered by
// numeric key with "unknown" last; groups smaller than min_count are
// flagged, not dropped.
std::vector<GroupRecall> grouped_recall(
    const std::vector<RetrievalResult>& results,
    const std::vector<QueryEmbedding>& queries, const RegionLayout& layout,
    GroupKey key, std::size_t n, double radius_m = 50.0,
    std::size_t min_count = 1);

// Scores of the covered cells inside the box, as CSV rows
// band_i,step_j,lat_deg,lon_deg,score.
void write_score_grid(const std::filesystem::path& path,
                      const EmbeddingDatabase& db, const Embedding& query,
                      const GeoPoint& box_min, const GeoPoint& box_max);

// Per-query rankings as CSV query_id,rank,band_i,step_j,score,dist_m,hit.
void write_results_csv(const std::filesystem::path& path,
                       const std::vector<QueryEmbedding>& queries,
                       const std::vector<RetrievalResult>& results,
                       const RegionLayout& layout, double radius_m = 50.0);

// Query embedding file (magic GCQE): photo identity, location, optional
// timestamp, single-precision embedding. Round-trips byte-identically.
void save_query_embeddings(const std::filesystem::path& path,
                           const std::vector<QueryEmbedding>& queries,
                           std::uint32_t embed_dim);
std::vector<QueryEmbedding> load_query_embeddings(
    const std::filesystem::path& path);

}  // namespace geocell
