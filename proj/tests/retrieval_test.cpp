#include "geocell/retrieval.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "geocell/errors.hpp"
#include "geocell/rng.hpp"
#include "geocell/synth.hpp"

using namespace geocell;

namespace {

std::vector<float> random_unit(Rng& rng, std::size_t dim) {
  std::vector<float> v(dim);
  double norm = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double x = rng.normal();
    v[d] = static_cast<float>(x);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (float& x : v) x = static_cast<float>(x / norm);
  return v;
}

Embedding to_double(const std::vector<float>& v) {
  Embedding e(v.size());
  for (std::size_t d = 0; d < v.size(); ++d) e[d] = v[d];
  return e;
}

EmbeddingDatabase random_db(std::size_t count, std::size_t dim,
                            std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingDatabase db;
  db.embed_dim = static_cast<std::uint32_t>(dim);
  for (std::size_t i = 0; i < count; ++i) {
    DbRecord rec;
    rec.cell = {static_cast<std::int64_t>(i / 100),
                static_cast<std::int64_t>(i % 100)};
    rec.embedding = random_unit(rng, dim);
    db.records.push_back(std::move(rec));
  }
  return db;
}

RetrievalResult brute_force(const EmbeddingDatabase& db,
                            const Embedding& query, std::size_t n) {
  RetrievalResult all;
  for (const DbRecord& rec : db.records) {
    double acc = 0.0;
    for (std::size_t d = 0; d < rec.embedding.size(); ++d)
      acc += static_cast<double>(rec.embedding[d]) * query[d];
    all.push_back({rec.cell, acc});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const ScoredCell& a, const ScoredCell& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.cell.band_i != b.cell.band_i)
                       return a.cell.band_i < b.cell.band_i;
                     return a.cell.step_j < b.cell.step_j;
                   });
  if (all.size() > n) all.resize(n);
  return all;
}

double overlap(const RetrievalResult& a, const RetrievalResult& b) {
  std::set<CellIndex> sa;
  for (const ScoredCell& s : a) sa.insert(s.cell);
  std::size_t shared = 0;
  for (const ScoredCell& s : b) shared += sa.count(s.cell);
  return static_cast<double>(shared) / static_cast<double>(a.size());
}

ModelParams blank_safe_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params = init_params(config, seed);
  for (std::size_t i = 0; i < params.aerial.patch_b.v.size(); ++i)
    params.aerial.patch_b.v[i] = 0.01 * static_cast<double>(i + 1);
  for (std::size_t i = 0; i < params.street.patch_b.v.size(); ++i)
    params.street.patch_b.v[i] = 0.01 * static_cast<double>(i + 1);
  return params;
}

}  // namespace

TEST_CASE("graph index input validation") {
  HnswIndex index(4);
  CHECK_THROWS_AS(index.add({1.0f, 0.0f}), ShapeError);
  CHECK_THROWS_AS(index.search({1.0f, 0.0f, 0.0f, 0.0f}, 1, 8),
                  ValidationError);  // not sealed

  index.add({1.0f, 0.0f, 0.0f, 0.0f});
  index.finish();
  CHECK_THROWS_AS(index.add({0.0f, 1.0f, 0.0f, 0.0f}), ValidationError);
  CHECK_THROWS_AS(index.search({1.0f, 0.0f, 0.0f, 0.0f}, 0, 8),
                  ValidationError);
  CHECK_THROWS_AS(index.search({1.0f, 0.0f, 0.0f, 0.0f}, 4, 2),
                  ValidationError);

  HnswIndex empty(4);
  empty.finish();
  CHECK_THROWS_AS(empty.search({1.0f, 0.0f, 0.0f, 0.0f}, 1, 8),
                  ValidationError);
}

TEST_CASE("a full-width beam search is exhaustive") {
  Rng rng(41);
  const std::size_t dim = 16;
  HnswIndex index(dim);
  std::vector<std::vector<float>> vectors;
  for (std::size_t i = 0; i < 400; ++i) {
    vectors.push_back(random_unit(rng, dim));
    CHECK(index.add(vectors.back()) == i);
  }
  index.finish();
  CHECK(index.reachable_from_entry() == 400);

  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<float> q = random_unit(rng, dim);
    const auto found = index.search(q, 10, index.size());

    std::vector<std::pair<double, std::size_t>> exact;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d)
        acc += static_cast<double>(vectors[i][d]) * q[d];
      exact.push_back({acc, i});
    }
    std::sort(exact.begin(), exact.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    REQUIRE(found.size() == 10);
    for (std::size_t r = 0; r < 10; ++r) {
      CHECK(found[r].second == exact[r].second);
      CHECK(found[r].first == exact[r].first);
    }
  }
}

TEST_CASE("graph and exact retrieval agree on duplicate-heavy data") {
  EmbeddingDatabase db;
  db.embed_dim = 4;
  for (int i = 0; i < 60; ++i) {
    DbRecord rec;
    rec.cell = {i / 10, i % 10};
    rec.embedding = {1.0f, 0.0f, 0.0f, 0.0f};  // all identical: pure ties
    db.records.push_back(rec);
  }
  const Embedding query = {0.6, 0.8, 0.0, 0.0};

  const RetrievalResult exact = knn_exact(db, query, 15);
  REQUIRE(exact.size() == 15);
  for (std::size_t r = 1; r < exact.size(); ++r) {
    const bool ordered =
        exact[r - 1].cell.band_i < exact[r].cell.band_i ||
        (exact[r - 1].cell.band_i == exact[r].cell.band_i &&
         exact[r - 1].cell.step_j < exact[r].cell.step_j);
    CHECK(ordered);
  }

  const GraphIndex index = build_graph_index(db);
  const RetrievalResult approx = knn_graph(index, query, 15, db.records.size());
  REQUIRE(approx.size() == 15);
  for (std::size_t r = 0; r < 15; ++r) {
    CHECK(approx[r].cell == exact[r].cell);
    CHECK(approx[r].score == exact[r].score);
  }
}

TEST_CASE("exact database retrieval matches a quadratic reference") {
  const EmbeddingDatabase db = random_db(500, 16, 5);
  Rng rng(6);
  for (int trial = 0; trial < 25; ++trial) {
    const Embedding q = to_double(random_unit(rng, 16));
    const RetrievalResult got = knn_exact(db, q, 10);
    const RetrievalResult want = brute_force(db, q, 10);
    REQUIRE(got.size() == want.size());
    for (std::size_t r = 0; r < got.size(); ++r) {
      CHECK(got[r].cell == want[r].cell);
      CHECK(got[r].score == want[r].score);
    }
  }
  CHECK(knn_exact(db, to_double(random_unit(rng, 16)), 5000).size() == 500);
  CHECK_THROWS_AS(knn_exact(db, Embedding(8, 0.0), 10), ShapeError);
  CHECK_THROWS_AS(knn_exact(db, Embedding(16, 0.0), 0), ValidationError);
}

TEST_CASE("beam width trades accuracy monotonically") {
  const EmbeddingDatabase db = random_db(1000, 16, 7);
  const GraphIndex index = build_graph_index(db);
  Rng rng(8);
  std::vector<Embedding> queries;
  for (int i = 0; i < 50; ++i) queries.push_back(to_double(random_unit(rng, 16)));

  const std::size_t widths[] = {16, 64, 256, 1000};
  double prev = -1.0;
  double at64 = 0.0;
  for (const std::size_t ef : widths) {
    double total = 0.0;
    for (const Embedding& q : queries) {
      const RetrievalResult exact = knn_exact(db, q, 10);
      const RetrievalResult approx = knn_graph(index, q, 10, ef);
      total += overlap(exact, approx);
    }
    total /= static_cast<double>(queries.size());
    CHECK(total >= prev);
    prev = total;
    if (ef == 64) at64 = total;
  }
  CHECK(at64 >= 0.9);
  CHECK(prev == 1.0);  // the full-width beam is exact

  // Same data, same seed: a rebuilt index answers identically.
  const GraphIndex rebuilt = build_graph_index(db);
  for (int i = 0; i < 5; ++i) {
    const auto a = knn_graph(index, queries[i], 10, 64);
    const auto b = knn_graph(rebuilt, queries[i], 10, 64);
    REQUIRE(a.size() == b.size());
    for (std::size_t r = 0; r < a.size(); ++r) CHECK(a[r].cell == b[r].cell);
  }
}

TEST_CASE("database files round-trip exactly") {
  Rng rng(13);
  EmbeddingDatabase db;
  db.cell_size_l = 30.0;
  db.embed_dim = 8;
  const std::int64_t bands[] = {-250000, -1, 0, 57};
  for (const std::int64_t band : bands) {
    for (const std::int64_t step : {-3, 0, 11}) {
      DbRecord rec;
      rec.cell = {band, step};
      rec.covered = (band + step) % 2 == 0;
      rec.embedding = random_unit(rng, 8);
      db.records.push_back(std::move(rec));
    }
  }

  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "geocell_test.gcdb";
  save_database(path, db);
  const EmbeddingDatabase loaded = load_database(path);
  CHECK(loaded.cell_size_l == db.cell_size_l);
  CHECK(loaded.earth_radius_r == db.earth_radius_r);
  CHECK(loaded.embed_dim == db.embed_dim);
  REQUIRE(loaded.records.size() == db.records.size());
  for (std::size_t i = 0; i < db.records.size(); ++i) {
    CHECK(loaded.records[i].cell == db.records[i].cell);
    CHECK(loaded.records[i].covered == db.records[i].covered);
    CHECK(loaded.records[i].embedding == db.records[i].embedding);
  }

  const auto copy = dir / "geocell_test_copy.gcdb";
  save_database(copy, loaded);
  std::ifstream a(path, std::ios::binary), b(copy, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(!sa.empty());

  CHECK_THROWS_AS(load_database(dir / "geocell_missing.gcdb"), IoError);
  std::string corrupt = sa;
  corrupt[0] = 'X';
  const auto bad = dir / "geocell_bad.gcdb";
  std::ofstream(bad, std::ios::binary) << corrupt;
  CHECK_THROWS_AS(load_database(bad), IoError);
  std::ofstream(bad, std::ios::binary) << sa.substr(0, sa.size() / 2);
  CHECK_THROWS_AS(load_database(bad), IoError);
  std::filesystem::remove(path);
  std::filesystem::remove(copy);
  std::filesystem::remove(bad);
}

TEST_CASE("database building covers the region and blanks the outside") {
  SyntheticWorld world;
  world.seed = 15;
  world.region_min = {deg_to_rad(42.0), deg_to_rad(-71.0)};
  world.region_max.lat = world.region_min.lat + 500.0 / kDefaultEarthRadiusM;
  world.region_max.lon =
      world.region_min.lon +
      500.0 / (kDefaultEarthRadiusM * std::cos(world.region_max.lat));
  const GeoRaster aerial = synth_aerial(world);

  ModelConfig config;
  config.image_size = 8;
  config.patch_size = 4;
  config.token_dim = 8;
  config.heads_h = 2;
  config.embed_dim = 8;
  config.n_lods = 2;
  const ModelParams params = blank_safe_params(config, 3);
  const SynthImageSource source(world, aerial, config, 76.8);

  const double pad = 200.0 / kDefaultEarthRadiusM;
  const GeoPoint box_min = {world.region_min.lat - pad,
                            world.region_min.lon - pad};
  const GeoPoint box_max = {world.region_max.lat + pad,
                            world.region_max.lon + pad};
  const RegionLayout layout;
  const EmbeddingDatabase db = build_database(params, config, source, layout,
                                              box_min, box_max, 1);
  CHECK(db.records.size() == cells_in_box(layout, box_min, box_max).size());

  std::size_t covered = 0, blank = 0;
  for (std::size_t i = 0; i < db.records.size(); ++i) {
    if (i > 0) {
      const CellIndex &p = db.records[i - 1].cell, &c = db.records[i].cell;
      CHECK((p.band_i < c.band_i ||
             (p.band_i == c.band_i && p.step_j < c.step_j)));
    }
    double norm = 0.0;
    for (const float v : db.records[i].embedding)
      norm += static_cast<double>(v) * v;
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-5));
    db.records[i].covered ? ++covered : ++blank;
  }
  CHECK(covered > 0);
  CHECK(blank > 0);

  // An uncovered record carries the embedding of all-black input.
  const Embedding blank_emb = embed_cell(
      params, config,
      std::vector<Image>(2, Image::zeros(config.image_size,
                                         config.image_size)));
  for (const DbRecord& rec : db.records) {
    if (rec.covered) continue;
    for (std::size_t d = 0; d < rec.embedding.size(); ++d)
      CHECK(rec.embedding[d] == static_cast<float>(blank_emb[d]));
    break;
  }

  CHECK_THROWS_AS(build_database(params, config, source, layout,
                                 {0.1, 0.1}, {0.1, 0.1}, 1),
                  EmptyDatasetError);
}

TEST_CASE("localization recall uses a strict distance cutoff") {
  const RegionLayout layout;
  EmbeddingDatabase db;
  db.cell_size_l = layout.cell_size_l;
  db.earth_radius_r = layout.earth_radius_r;
  db.embed_dim = 4;
  DbRecord rec;
  rec.cell = {0, 0};
  rec.embedding = {1.0f, 0.0f, 0.0f, 0.0f};
  db.records.push_back(rec);
  const GeoPoint center = cell_center({0, 0}, layout);

  auto query_at = [&](double north_m) {
    QueryEmbedding q;
    q.photo.id = "q";
    q.photo.location = {center.lat + north_m / layout.earth_radius_r,
                        center.lon};
    q.embedding = {1.0, 0.0, 0.0, 0.0};
    return q;
  };

  CHECK(recall_at_n_within(db, {query_at(49.999)}, 1, 50.0) == 1.0);
  CHECK(recall_at_n_within(db, {query_at(50.0001)}, 1, 50.0) == 0.0);
  CHECK(recall_at_n_within(db, {query_at(49.999), query_at(50.0001)}, 1,
                           50.0) == 0.5);

  const GraphIndex index = build_graph_index(db);
  CHECK(recall_at_n_within(index, {query_at(49.999)}, 1, 1, 50.0) == 1.0);
  CHECK(recall_at_n_within(index, {query_at(50.0001)}, 1, 1, 50.0) == 0.0);
}

TEST_CASE("grouped recall splits by capture year with unknown last") {
  const RegionLayout layout;
  const GeoPoint center = cell_center({0, 0}, layout);
  const RetrievalResult ranked = {{{0, 0}, 1.0}};

  auto query_at = [&](double dist_m, std::optional<std::int64_t> t) {
    QueryEmbedding q;
    q.photo.id = "q";
    q.photo.location = {center.lat + dist_m / kDefaultEarthRadiusM,
                        center.lon};
    q.photo.captured_at = t;
    q.embedding = {1.0, 0.0, 0.0, 0.0};
    return q;
  };

  // 2018-06-01 and 2019-06-01 noon, plus one undated query.
  const std::int64_t t2018 = 1527854400, t2019 = 1559390400;
  const std::vector<QueryEmbedding> queries = {
      query_at(10.0, t2018), query_at(10.0, t2018), query_at(500.0, t2018),
      query_at(500.0, t2019), query_at(10.0, std::nullopt)};
  const std::vector<RetrievalResult> results(queries.size(), ranked);

  const auto rows = grouped_recall(results, queries, layout, GroupKey::kYear,
                                   1, 50.0, 2);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].group == "2018");
  CHECK(rows[0].count == 3);
  CHECK(rows[0].recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(!rows[0].below_min);
  CHECK(rows[1].group == "2019");
  CHECK(rows[1].count == 1);
  CHECK(rows[1].recall == 0.0);
  CHECK(rows[1].below_min);
  CHECK(rows[2].group == "unknown");
  CHECK(rows[2].count == 1);
  CHECK(rows[2].recall == 1.0);
  CHECK(rows[2].below_min);

  const auto by_hour = grouped_recall(results, queries, layout,
                                      GroupKey::kHour, 1, 50.0, 1);
  CHECK(by_hour[0].group == "12");
  CHECK(by_hour[0].count == 4);
  CHECK(by_hour[1].group == "unknown");
}

TEST_CASE("score grids list covered in-box cells with their dot products") {
  EmbeddingDatabase db;
  db.embed_dim = 2;
  const RegionLayout layout = db.layout();
  for (std::int64_t j = 0; j < 4; ++j) {
    DbRecord rec;
    rec.cell = {0, j};
    rec.covered = j != 1;
    rec.embedding = {static_cast<float>(0.1 * (j + 1)), 0.5f};
    db.records.push_back(rec);
  }

  // Box spanning the first three cells only.
  const GeoPoint lo = cell_center({0, 0}, layout);
  const GeoPoint hi = cell_center({0, 2}, layout);
  const Embedding query = {1.0, 2.0};
  const auto path =
      std::filesystem::temp_directory_path() / "geocell_grid.csv";
  write_score_grid(path, db, query, {lo.lat - 1e-6, lo.lon - 1e-6},
                   {hi.lat + 1e-6, hi.lon + 1e-6});

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "band_i,step_j,lat_deg,lon_deg,score");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  REQUIRE(rows.size() == 2);  // cell 1 uncovered, cell 3 out of box
  for (const std::size_t j : {std::size_t{0}, std::size_t{2}}) {
    std::stringstream ss(rows[j / 2]);
    std::string field;
    std::getline(ss, field, ',');
    CHECK(field == "0");
    std::getline(ss, field, ',');
    CHECK(field == std::to_string(j));
    std::getline(ss, field, ',');
    const GeoPoint center = cell_center({0, static_cast<std::int64_t>(j)},
                                        layout);
    CHECK(std::stod(field) ==
          doctest::Approx(rad_to_deg(center.lat)).epsilon(1e-9));
    std::getline(ss, field, ',');
    CHECK(std::stod(field) ==
          doctest::Approx(rad_to_deg(center.lon)).epsilon(1e-9));
    std::getline(ss, field, ',');
    const double want = 0.1 * (j + 1) * 1.0 + 0.5 * 2.0;
    CHECK(std::stod(field) == doctest::Approx(want).epsilon(1e-6));
  }
  std::filesystem::remove(path);
}

TEST_CASE("result CSVs carry ranks, distances and hit flags") {
  const RegionLayout layout;
  const GeoPoint center = cell_center({0, 0}, layout);
  QueryEmbedding q;
  q.photo.id = "queryA";
  q.photo.location = {center.lat + 10.0 / kDefaultEarthRadiusM, center.lon};
  q.embedding = {1.0, 0.0};
  const std::vector<RetrievalResult> results = {
      {{{0, 0}, 0.9}, {{0, 5}, 0.7}}};

  const auto path =
      std::filesystem::temp_directory_path() / "geocell_results.csv";
  write_results_csv(path, {q}, results, layout, 50.0);

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "query_id,rank,band_i,step_j,score,dist_m,hit");
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("queryA,1,0,0,0.9", 0) == 0);
  CHECK(line.substr(line.size() - 2) == ",1");  // 10 m away: hit
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("queryA,2,0,5,0.7", 0) == 0);
  CHECK(line.substr(line.size() - 2) == ",0");  // five cells east: miss
  CHECK(!std::getline(in, line));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(write_results_csv(path, {q, q}, results, layout, 50.0),
                  ValidationError);
}

TEST_CASE("query embedding files round-trip exactly") {
  std::vector<QueryEmbedding> queries;
  QueryEmbedding a;
  a.photo.id = "first";
  a.photo.location = {deg_to_rad(-33.5), deg_to_rad(151.2)};
  a.photo.captured_at = 1559392200;
  a.embedding = {0.5, -0.25, 0.125, 0.0625};
  QueryEmbedding b;
  b.photo.id = "second_with_a_longer_name";
  b.photo.location = {deg_to_rad(42.0), deg_to_rad(-71.0)};
  b.embedding = {1.0, 0.0, 0.0, 0.0};
  queries.push_back(a);
  queries.push_back(b);

  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "geocell_test.gcqe";
  save_query_embeddings(path, queries, 4);
  const auto loaded = load_query_embeddings(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].photo.id == "first");
  CHECK(loaded[0].photo.location.lat == a.photo.location.lat);
  CHECK(loaded[0].photo.location.lon == a.photo.location.lon);
  CHECK(loaded[0].photo.captured_at == a.photo.captured_at);
  CHECK(loaded[0].embedding == a.embedding);  // exact dyadic values
  CHECK(!loaded[1].photo.captured_at.has_value());

  const auto copy = dir / "geocell_test_copy.gcqe";
  save_query_embeddings(copy, loaded, 4);
  std::ifstream fa(path, std::ios::binary), fb(copy, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {});
  const std::string sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);

  CHECK_THROWS_AS(save_query_embeddings(path, queries, 3), ShapeError);
  std::string corrupt = sa;
  corrupt[2] = 'X';
  const auto bad = dir / "geocell_bad.gcqe";
  std::ofstream(bad, std::ios::binary) << corrupt;
  CHECK_THROWS_AS(load_query_embeddings(bad), IoError);
  std::filesystem::remove(path);
  std::filesystem::remove(copy);
  std::filesystem::remove(bad);
}
