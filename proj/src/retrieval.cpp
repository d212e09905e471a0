#include "geocell/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <unordered_set>

#include "geocell/errors.hpp"
#include "geocell/parallel.hpp"
#include "geocell/raster.hpp"

namespace geocell {

namespace {

constexpr char kDbMagic[4] = {'G', 'C', 'D', 'B'};
constexpr char kQueryMagic[4] = {'G', 'C', 'Q', 'E'};
constexpr std::uint32_t kDbVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

template <typename T>
T get(std::ifstream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(value));
  if (!in) throw IoError("file truncated");
  return value;
}

double dot(const std::vector<float>& a, const Embedding& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

bool cell_before(const CellIndex& a, const CellIndex& b) {
  if (a.band_i != b.band_i) return a.band_i < b.band_i;
  return a.step_j < b.step_j;
}

void check_query(const EmbeddingDatabase& db, const Embedding& query) {
  if (query.size() != db.embed_dim)
    throw ShapeError("query dimension does not match the database");
}

bool result_hit(const RetrievalResult& result, const PhotoRecord& photo,
                const RegionLayout& layout, std::size_t n, double radius_m) {
  const std::size_t top = std::min(n, result.size());
  for (std::size_t r = 0; r < top; ++r) {
    const GeoPoint center = cell_center(result[r].cell, layout);
    if (geodesic_distance(center, photo.location, layout.earth_radius_r) <
        radius_m)
      return true;
  }
  return false;
}

}  // namespace

EmbeddingDatabase build_database(const ModelParams& params,
                                 const ModelConfig& config,
                                 const ImageSource& source,
                                 const RegionLayout& layout,
                                 const GeoPoint& box_min,
                                 const GeoPoint& box_max, int threads) {
  check_config(config);
  const std::vector<CellIndex> cells = cells_in_box(layout, box_min, box_max);
  if (cells.empty()) throw EmptyDatasetError("no cells in the region box");

  EmbeddingDatabase db;
  db.cell_size_l = layout.cell_size_l;
  db.earth_radius_r = layout.earth_radius_r;
  db.embed_dim = static_cast<std::uint32_t>(config.embed_dim);
  db.records.resize(cells.size());

  parallel_for(cells.size(), threads, [&](std::size_t i) {
    DbRecord& rec = db.records[i];
    rec.cell = cells[i];
    const GeoPoint center = cell_center(cells[i], layout);
    std::vector<Image> images;
    try {
      images = source.cell(center, 0.0);
    } catch (const CoverageError&) {
      images.assign(static_cast<std::size_t>(config.n_lods),
                    Image::zeros(config.image_size, config.image_size));
    }
    rec.covered = source.cell_coverage(center) > 0.0;
    const Embedding emb = embed_cell(params, config, images);
    rec.embedding.resize(emb.size());
    for (std::size_t d = 0; d < emb.size(); ++d)
      rec.embedding[d] = static_cast<float>(emb[d]);
  });
  return db;
}

void save_database(const std::filesystem::path& path,
                   const EmbeddingDatabase& db) {
  for (const DbRecord& rec : db.records) {
    if (rec.embedding.size() != db.embed_dim)
      throw ShapeError("record embedding does not match embed_dim");
    if (rec.cell.band_i < std::numeric_limits<std::int32_t>::min() ||
        rec.cell.band_i > std::numeric_limits<std::int32_t>::max() ||
        rec.cell.step_j < std::numeric_limits<std::int32_t>::min() ||
        rec.cell.step_j > std::numeric_limits<std::int32_t>::max())
      throw RangeError("cell index exceeds the storage range");
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kDbMagic, sizeof(kDbMagic));
  put<std::uint32_t>(out, kDbVersion);
  put<double>(out, db.cell_size_l);
  put<double>(out, db.earth_radius_r);
  put<std::uint32_t>(out, db.embed_dim);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(db.records.size()));
  for (const DbRecord& rec : db.records) {
    put<std::int32_t>(out, static_cast<std::int32_t>(rec.cell.band_i));
    put<std::int32_t>(out, static_cast<std::int32_t>(rec.cell.step_j));
    put<std::uint8_t>(out, rec.covered ? 1 : 0);
    out.write(reinterpret_cast<const char*>(rec.embedding.data()),
              static_cast<std::streamsize>(rec.embedding.size() *
                                           sizeof(float)));
  }
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

EmbeddingDatabase load_database(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kDbMagic, sizeof(magic)) != 0)
    throw IoError(path.string() + " is not a cell database");
  if (get<std::uint32_t>(in) != kDbVersion)
    throw IoError("unsupported database version");

  EmbeddingDatabase db;
  db.cell_size_l = get<double>(in);
  db.earth_radius_r = get<double>(in);
  db.embed_dim = get<std::uint32_t>(in);
  if (!(db.cell_size_l > 0.0) || !(db.earth_radius_r > 0.0))
    throw IoError("invalid layout parameters");
  if (db.embed_dim == 0 || db.embed_dim > (1u << 20))
    throw IoError("implausible embedding dimension");
  const std::uint64_t count = get<std::uint64_t>(in);
  if (count > (1ull << 32)) throw IoError("implausible record count");

  db.records.resize(count);
  for (DbRecord& rec : db.records) {
    rec.cell.band_i = get<std::int32_t>(in);
    rec.cell.step_j = get<std::int32_t>(in);
    rec.covered = get<std::uint8_t>(in) != 0;
    rec.embedding.resize(db.embed_dim);
    in.read(reinterpret_cast<char*>(rec.embedding.data()),
            static_cast<std::streamsize>(db.embed_dim * sizeof(float)));
    if (!in) throw IoError("file truncated");
  }
  return db;
}

RetrievalResult knn_exact(const EmbeddingDatabase& db, const Embedding& query,
                          std::size_t n) {
  if (n < 1) throw ValidationError("n must be positive");
  check_query(db, query);

  RetrievalResult scored(db.records.size());
  for (std::size_t i = 0; i < db.records.size(); ++i) {
    scored[i].cell = db.records[i].cell;
    scored[i].score = dot(db.records[i].embedding, query);
  }
  std::sort(scored.begin(), scored.end(),
            [](const ScoredCell& a, const ScoredCell& b) {
              if (a.score != b.score) return a.score > b.score;
              return cell_before(a.cell, b.cell);
            });
  if (scored.size() > n) scored.resize(n);
  return scored;
}

GraphIndex build_graph_index(const EmbeddingDatabase& db,
                             const HnswConfig& config) {
  GraphIndex index{&db, HnswIndex(db.embed_dim, config)};
  for (const DbRecord& rec : db.records) index.graph.add(rec.embedding);
  index.graph.finish();
  return index;
}

RetrievalResult knn_graph(const GraphIndex& index, const Embedding& query,
                          std::size_t n, std::size_t ef_search) {
  if (n < 1) throw ValidationError("n must be positive");
  if (ef_search < n)
    throw ValidationError("ef_search must be at least n");
  const EmbeddingDatabase& db = *index.db;
  check_query(db, query);

  std::vector<float> q(query.size());
  for (std::size_t d = 0; d < query.size(); ++d)
    q[d] = static_cast<float>(query[d]);
  const auto found =
      index.graph.search(q, std::min(n, index.graph.size()), ef_search);

  // Records are stored (band, step) ascending, so the id tie order already
  // matches the exact-search tie order.
  RetrievalResult result(found.size());
  for (std::size_t i = 0; i < found.size(); ++i) {
    result[i].cell = db.records[found[i].second].cell;
    result[i].score = dot(db.records[found[i].second].embedding, query);
  }
  std::sort(result.begin(), result.end(),
            [](const ScoredCell& a, const ScoredCell& b) {
              if (a.score != b.score) return a.score > b.score;
              return cell_before(a.cell, b.cell);
            });
  return result;
}

double recall_at_n_within(const EmbeddingDatabase& db,
                          const std::vector<QueryEmbedding>& queries,
                          std::size_t n, double radius_m) {
  if (queries.empty()) throw ValidationError("at least one query required");
  const RegionLayout layout = db.layout();
  std::size_t hits = 0;
  for (const QueryEmbedding& q : queries) {
    const RetrievalResult result = knn_exact(db, q.embedding, n);
    hits += result_hit(result, q.photo, layout, n, radius_m) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double recall_at_n_within(const GraphIndex& index,
                          const std::vector<QueryEmbedding>& queries,
                          std::size_t n, std::size_t ef_search,
                          double radius_m) {
  if (queries.empty()) throw ValidationError("at least one query required");
  const RegionLayout layout = index.db->layout();
  std::size_t hits = 0;
  for (const QueryEmbedding& q : queries) {
    const RetrievalResult result = knn_graph(index, q.embedding, n, ef_search);
    hits += result_hit(result, q.photo, layout, n, radius_m) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

std::vector<GroupRecall> grouped_recall(
    const std::vector<RetrievalResult>& results,
    const std::vector<QueryEmbedding>& queries, const RegionLayout& layout,
    GroupKey key, std::size_t n, double radius_m, std::size_t min_count) {
  if (results.size() != queries.size())
    throw ValidationError("results and queries must pair up");
  if (queries.empty()) throw ValidationError("at least one query required");

  // Key -1 collects queries without a timestamp.
  std::map<int, std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    int group = -1;
    if (queries[i].photo.captured_at) {
      const CalendarTime t = calendar_utc(*queries[i].photo.captured_at);
      group = key == GroupKey::kYear ? t.year : t.hour;
    }
    auto& [count, hits] = groups[group];
    ++count;
    if (result_hit(results[i], queries[i].photo, layout, n, radius_m)) ++hits;
  }

  std::vector<GroupRecall> rows;
  auto emit = [&](int group, const std::pair<std::size_t, std::size_t>& tally) {
    GroupRecall row;
    row.group = group < 0 ? "unknown" : std::to_string(group);
    row.count = tally.first;
    row.recall =
        static_cast<double>(tally.second) / static_cast<double>(tally.first);
    row.below_min = tally.first < min_count;
    rows.push_back(row);
  };
  for (const auto& [group, tally] : groups) {
    if (group >= 0) emit(group, tally);
  }
  if (groups.count(-1)) emit(-1, groups.at(-1));
  return rows;
}

void write_score_grid(const std::filesystem::path& path,
                      const EmbeddingDatabase& db, const Embedding& query,
                      const GeoPoint& box_min, const GeoPoint& box_max) {
  check_query(db, query);
  const RegionLayout layout = db.layout();
  const std::vector<CellIndex> box_cells =
      cells_in_box(layout, box_min, box_max);
  std::unordered_set<CellIndex, CellIndexHash> in_box(box_cells.begin(),
                                                      box_cells.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "band_i,step_j,lat_deg,lon_deg,score\n";
  char row[160];
  for (const DbRecord& rec : db.records) {
    if (!rec.covered || !in_box.count(rec.cell)) continue;
    const GeoPoint center = cell_center(rec.cell, layout);
    std::snprintf(row, sizeof(row), "%lld,%lld,%.9f,%.9f,%.9f\n",
                  static_cast<long long>(rec.cell.band_i),
                  static_cast<long long>(rec.cell.step_j),
                  rad_to_deg(center.lat), rad_to_deg(center.lon),
                  dot(rec.embedding, query));
    out << row;
  }
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

void write_results_csv(const std::filesystem::path& path,
                       const std::vector<QueryEmbedding>& queries,
                       const std::vector<RetrievalResult>& results,
                       const RegionLayout& layout, double radius_m) {
  if (results.size() != queries.size())
    throw ValidationError("results and queries must pair up");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "query_id,rank,band_i,step_j,score,dist_m,hit\n";
  char row[256];
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (std::size_t r = 0; r < results[i].size(); ++r) {
      const ScoredCell& sc = results[i][r];
      const double dist =
          geodesic_distance(cell_center(sc.cell, layout),
                            queries[i].photo.location, layout.earth_radius_r);
      std::snprintf(row, sizeof(row), ",%zu,%lld,%lld,%.9f,%.3f,%d\n", r + 1,
                    static_cast<long long>(sc.cell.band_i),
                    static_cast<long long>(sc.cell.step_j), sc.score, dist,
                    dist < radius_m ? 1 : 0);
      out << queries[i].photo.id << row;
    }
  }
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

void save_query_embeddings(const std::filesystem::path& path,
                           const std::vector<QueryEmbedding>& queries,
                           std::uint32_t embed_dim) {
  for (const QueryEmbedding& q : queries) {
    if (q.embedding.size() != embed_dim)
      throw ShapeError("query embedding does not match embed_dim");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kQueryMagic, sizeof(kQueryMagic));
  put<std::uint32_t>(out, kDbVersion);
  put<std::uint32_t>(out, embed_dim);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(queries.size()));
  for (const QueryEmbedding& q : queries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(q.photo.id.size()));
    out.write(q.photo.id.data(),
              static_cast<std::streamsize>(q.photo.id.size()));
    put<double>(out, q.photo.location.lat);
    put<double>(out, q.photo.location.lon);
    put<std::uint8_t>(out, q.photo.captured_at ? 1 : 0);
    put<std::int64_t>(out, q.photo.captured_at.value_or(0));
    for (const double v : q.embedding) put<float>(out, static_cast<float>(v));
  }
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<QueryEmbedding> load_query_embeddings(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kQueryMagic, sizeof(magic)) != 0)
    throw IoError(path.string() + " is not a query embedding file");
  if (get<std::uint32_t>(in) != kDbVersion)
    throw IoError("unsupported query file version");
  const std::uint32_t embed_dim = get<std::uint32_t>(in);
  if (embed_dim == 0 || embed_dim > (1u << 20))
    throw IoError("implausible embedding dimension");
  const std::uint64_t count = get<std::uint64_t>(in);
  if (count > (1ull << 32)) throw IoError("implausible record count");

  std::vector<QueryEmbedding> queries(count);
  for (QueryEmbedding& q : queries) {
    const std::uint32_t id_len = get<std::uint32_t>(in);
    if (id_len > (1u << 20)) throw IoError("implausible string length");
    q.photo.id.resize(id_len);
    in.read(q.photo.id.data(), id_len);
    if (!in) throw IoError("file truncated");
    q.photo.location.lat = get<double>(in);
    q.photo.location.lon = get<double>(in);
    const bool has_time = get<std::uint8_t>(in) != 0;
    const std::int64_t t = get<std::int64_t>(in);
    if (has_time) q.photo.captured_at = t;
    q.embedding.resize(embed_dim);
    for (double& v : q.embedding)
      v = static_cast<double>(get<float>(in));
  }
  return queries;
}

}  // namespace geocell
