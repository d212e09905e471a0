#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "geocell/dataset.hpp"
#include "geocell/errors.hpp"
#include "geocell/geodesy.hpp"
#include "geocell/gradcheck.hpp"
#include "geocell/hnsw.hpp"
#include "geocell/mining.hpp"
#include "geocell/model.hpp"
#include "geocell/parallel.hpp"
#include "geocell/raster.hpp"
#include "geocell/retrieval.hpp"
#include "geocell/rng.hpp"
#include "geocell/synth.hpp"
#include "geocell/training.hpp"

namespace {

using namespace geocell;

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string());
}

GeoPoint point_deg(double lat_deg, double lon_deg) {
  return {deg_to_rad(lat_deg), deg_to_rad(lon_deg)};
}

void save_world_json(const std::filesystem::path& path,
                     const SyntheticWorld& world) {
  nlohmann::json j;
  j["seed"] = world.seed;
  j["region_min_lat_rad"] = world.region_min.lat;
  j["region_min_lon_rad"] = world.region_min.lon;
  j["region_max_lat_rad"] = world.region_max.lat;
  j["region_max_lon_rad"] = world.region_max.lon;
  j["octaves"] = world.octaves;
  j["base_wavelength_m"] = world.base_wavelength_m;
  j["gain"] = world.gain;
  j["resolution_m"] = world.resolution_m;
  j["photometric_noise_sigma"] = world.photometric_noise_sigma;
  j["street_pixels"] = world.street_pixels;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

SyntheticWorld load_world_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw IoError(path.string() + " is not valid JSON");
  }
  SyntheticWorld world;
  try {
    world.seed = j.at("seed").get<std::uint64_t>();
    world.region_min.lat = j.at("region_min_lat_rad").get<double>();
    world.region_min.lon = j.at("region_min_lon_rad").get<double>();
    world.region_max.lat = j.at("region_max_lat_rad").get<double>();
    world.region_max.lon = j.at("region_max_lon_rad").get<double>();
    world.octaves = j.at("octaves").get<int>();
    world.base_wavelength_m = j.at("base_wavelength_m").get<double>();
    world.gain = j.at("gain").get<double>();
    world.resolution_m = j.at("resolution_m").get<double>();
    world.photometric_noise_sigma =
        j.at("photometric_noise_sigma").get<double>();
    world.street_pixels = j.at("street_pixels").get<std::int64_t>();
  } catch (const nlohmann::json::exception&) {
    throw IoError(path.string() + " is missing world fields");
  }
  return world;
}

struct WorldBundle {
  SyntheticWorld world;
  GeoRaster aerial;
};

WorldBundle load_world_dir(const std::filesystem::path& dir) {
  WorldBundle bundle;
  bundle.world = load_world_json(dir / "world.json");
  bundle.aerial = load_raster(dir / "world.rgb");
  return bundle;
}

double extra_or(const Checkpoint& ckpt, const std::string& key,
                double fallback) {
  for (const auto& [k, v] : ckpt.extras) {
    if (k == key) return v;
  }
  return fallback;
}

void add_model_flags(CLI::App* cmd, ModelConfig& config) {
  cmd->add_option("--image-size", config.image_size, "Square input size, px")
      ->capture_default_str();
  cmd->add_option("--patch-size", config.patch_size, "Encoder patch size, px")
      ->capture_default_str();
  cmd->add_option("--token-dim", config.token_dim, "Token width")
      ->capture_default_str();
  cmd->add_option("--heads", config.heads_h, "Attention heads")
      ->capture_default_str();
  cmd->add_option("--embed-dim", config.embed_dim, "Embedding width")
      ->capture_default_str();
  cmd->add_option("--n-lods", config.n_lods,
                  "Aerial detail levels per cell")
      ->capture_default_str();
  cmd->add_option("--lod-embedding", config.lod_embedding,
                  "Add a learned per-level embedding to aerial tokens")
      ->capture_default_str();
}

int run_layout(const std::vector<double>& bbox, double cell_size,
               double earth_radius, const std::filesystem::path& out_dir) {
  RegionLayout layout{cell_size, earth_radius};
  const GeoPoint lo = point_deg(bbox[0], bbox[1]);
  const GeoPoint hi = point_deg(bbox[2], bbox[3]);
  const std::vector<CellIndex> cells = cells_in_box(layout, lo, hi);
  ensure_dir(out_dir);
  write_cell_csv(out_dir / "cells.csv", cells, layout);

  std::printf("cells: %zu\n", cells.size());
  if (!cells.empty()) {
    std::int64_t band_lo = cells.front().band_i;
    std::int64_t band_hi = cells.front().band_i;
    for (const CellIndex& c : cells) {
      band_lo = std::min(band_lo, c.band_i);
      band_hi = std::max(band_hi, c.band_i);
    }
    double min_ratio = 1.0;
    for (std::int64_t band = band_lo; band <= band_hi; ++band)
      min_ratio = std::min(min_ratio, trapezoid_ratio(band, layout));
    std::printf("bands: [%lld, %lld]\n", static_cast<long long>(band_lo),
                static_cast<long long>(band_hi));
    std::printf("min side ratio: %.9f\n", min_ratio);
    std::printf("max side deviation: %.4f cm\n",
                (1.0 - min_ratio) * cell_size * 100.0);
  }
  std::printf("wrote %s\n", (out_dir / "cells.csv").c_str());
  return 0;
}

int run_synth(const std::vector<double>& origin, double extent,
              std::size_t train_photos, std::size_t query_photos, int octaves,
              double wavelength, double gain, double noise_sigma,
              double resolution, std::int64_t street_pixels,
              std::uint64_t seed, const std::filesystem::path& out_dir) {
  SyntheticWorld world;
  world.seed = seed;
  world.octaves = octaves;
  world.base_wavelength_m = wavelength;
  world.gain = gain;
  world.resolution_m = resolution;
  world.photometric_noise_sigma = noise_sigma;
  world.street_pixels = street_pixels;
  world.region_min = point_deg(origin[0], origin[1]);
  world.region_max.lat = world.region_min.lat + extent / kDefaultEarthRadiusM;
  world.region_max.lon =
      world.region_min.lon +
      extent / (kDefaultEarthRadiusM * std::cos(world.region_max.lat));

  ensure_dir(out_dir);
  const GeoRaster aerial = synth_aerial(world);
  save_raster(aerial, out_dir / "world.rgb");
  save_world_json(out_dir / "world.json", world);

  const auto train_set =
      scatter_photos(world, train_photos, "train_", mix_seed(seed, 11));
  const auto query_set =
      scatter_photos(world, query_photos, "query_", mix_seed(seed, 12));
  write_manifest(out_dir / "train.jsonl", train_set);
  write_manifest(out_dir / "test.jsonl", query_set);

  std::printf("raster: %lld x %lld px at %.2f m/px\n",
              static_cast<long long>(aerial.width),
              static_cast<long long>(aerial.height), world.resolution_m);
  std::printf("train photos: %zu  queries: %zu\n", train_set.size(),
              query_set.size());
  std::printf("wrote %s\n", out_dir.c_str());
  return 0;
}

int run_train(const std::filesystem::path& world_dir,
              std::filesystem::path manifest, const ModelConfig& mconfig,
              TrainConfig tconfig, const std::string& mining_mode,
              std::int64_t s_max, int threads,
              const std::filesystem::path& out_dir) {
  if (manifest.empty()) manifest = world_dir / "train.jsonl";
  const WorldBundle bundle = load_world_dir(world_dir);
  const ManifestData data = load_manifest(manifest);
  if (data.skipped_lines > 0)
    std::printf("skipped %zu malformed manifest lines\n", data.skipped_lines);

  tconfig.threads = threads;
  MiningConfig mining;
  if (mining_mode == "on") {
    mining.enabled = true;
  } else if (mining_mode != "off") {
    throw ValidationError("--mining must be 'on' or 'off'");
  }
  mining.s_max = s_max;

  const SynthImageSource source(bundle.world, bundle.aerial, mconfig,
                                tconfig.d0);
  const TrainResult result =
      train(data.records, source, mconfig, tconfig, mining, out_dir);
  std::printf("iterations: %lld\n",
              static_cast<long long>(result.iterations_run));
  std::printf("final loss: %.6f  batch recall@1: %.4f\n", result.final_loss,
              result.final_recall);
  std::printf("model: %s\n", result.checkpoint.c_str());
  std::printf("metrics: %s\n", result.metrics_csv.c_str());
  return 0;
}

int run_build_db(const std::filesystem::path& world_dir,
                 const std::filesystem::path& model_path,
                 const std::vector<double>& bbox, double cell_size, double d0,
                 int threads, const std::filesystem::path& out_dir) {
  const WorldBundle bundle = load_world_dir(world_dir);
  const Checkpoint ckpt = load_checkpoint(model_path);
  if (cell_size <= 0.0) cell_size = extra_or(ckpt, "cell_size_l", 30.0);
  if (d0 <= 0.0) d0 = extra_or(ckpt, "d0", 76.8);

  GeoPoint lo = bundle.world.region_min;
  GeoPoint hi = bundle.world.region_max;
  if (!bbox.empty()) {
    lo = point_deg(bbox[0], bbox[1]);
    hi = point_deg(bbox[2], bbox[3]);
  }

  const RegionLayout layout{cell_size, kDefaultEarthRadiusM};
  const SynthImageSource source(bundle.world, bundle.aerial, ckpt.config, d0);
  const EmbeddingDatabase db = build_database(ckpt.params, ckpt.config, source,
                                              layout, lo, hi, threads);
  ensure_dir(out_dir);
  const std::filesystem::path db_path = out_dir / "db.gcdb";
  save_database(db_path, db);

  std::size_t covered = 0;
  for (const DbRecord& rec : db.records) covered += rec.covered ? 1 : 0;
  std::printf("cells: %zu (%zu covered)\n", db.records.size(), covered);
  std::printf("wrote %s\n", db_path.c_str());
  return 0;
}

int run_embed_queries(const std::filesystem::path& world_dir,
                      const std::filesystem::path& model_path,
                      std::filesystem::path manifest, int threads,
                      const std::filesystem::path& out_dir) {
  if (manifest.empty()) manifest = world_dir / "test.jsonl";
  const WorldBundle bundle = load_world_dir(world_dir);
  const Checkpoint ckpt = load_checkpoint(model_path);
  const ManifestData data = load_manifest(manifest);
  if (data.skipped_lines > 0)
    std::printf("skipped %zu malformed manifest lines\n", data.skipped_lines);

  const double d0 = extra_or(ckpt, "d0", 76.8);
  const SynthImageSource source(bundle.world, bundle.aerial, ckpt.config, d0);

  std::vector<QueryEmbedding> queries(data.records.size());
  parallel_for(data.records.size(), threads, [&](std::size_t i) {
    const PhotoRecord& photo = data.records[i];
    const Image image = source.street(
        photo, photo_render_seed(bundle.world.seed, photo.id));
    queries[i].photo = photo;
    queries[i].embedding = embed_street(ckpt.params, ckpt.config, image);
  });

  ensure_dir(out_dir);
  const std::filesystem::path q_path = out_dir / "queries.gcqe";
  save_query_embeddings(q_path, queries,
                        static_cast<std::uint32_t>(ckpt.config.embed_dim));
  std::printf("queries: %zu\n", queries.size());
  std::printf("wrote %s\n", q_path.c_str());
  return 0;
}

std::vector<RetrievalResult> rank_queries(
    const EmbeddingDatabase& db, const std::vector<QueryEmbedding>& queries,
    const std::string& index_kind, std::size_t n, std::size_t ef_search) {
  std::vector<RetrievalResult> results(queries.size());
  if (index_kind == "graph") {
    const GraphIndex index = build_graph_index(db);
    const std::size_t ef = std::max(ef_search, n);
    for (std::size_t i = 0; i < queries.size(); ++i)
      results[i] = knn_graph(index, queries[i].embedding, n, ef);
  } else if (index_kind == "exact") {
    for (std::size_t i = 0; i < queries.size(); ++i)
      results[i] = knn_exact(db, queries[i].embedding, n);
  } else {
    throw ValidationError("--index must be 'exact' or 'graph'");
  }
  return results;
}

int run_search(const std::filesystem::path& db_path,
               const std::filesystem::path& queries_path,
               const std::string& index_kind, std::size_t n,
               std::size_t ef_search, double radius,
               const std::filesystem::path& out_dir) {
  const EmbeddingDatabase db = load_database(db_path);
  const std::vector<QueryEmbedding> queries =
      load_query_embeddings(queries_path);
  if (queries.empty()) throw ValidationError("query file holds no queries");
  const auto results = rank_queries(db, queries, index_kind, n, ef_search);

  ensure_dir(out_dir);
  const std::filesystem::path results_path = out_dir / "results.csv";
  write_results_csv(results_path, queries, results, db.layout(), radius);
  std::printf("queries: %zu  top-%zu rankings\n", queries.size(), n);
  std::printf("wrote %s\n", results_path.c_str());
  return 0;
}

void write_grouped_csv(const std::filesystem::path& path,
                       const std::vector<GroupRecall>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "group,count,recall,below_min\n";
  char row[96];
  for (const GroupRecall& g : rows) {
    std::snprintf(row, sizeof(row), ",%zu,%.6f,%d\n", g.count, g.recall,
                  g.below_min ? 1 : 0);
    out << g.group << row;
  }
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

int run_eval(const std::filesystem::path& db_path,
             const std::filesystem::path& queries_path,
             const std::string& index_kind, std::size_t ef_search,
             double radius, std::size_t min_group,
             const std::string& grid_query_id,
             const std::filesystem::path& out_dir) {
  const EmbeddingDatabase db = load_database(db_path);
  const std::vector<QueryEmbedding> queries =
      load_query_embeddings(queries_path);
  if (queries.empty()) throw ValidationError("query file holds no queries");

  const std::size_t n_max = 10;
  const auto results =
      rank_queries(db, queries, index_kind, n_max, ef_search);
  const RegionLayout layout = db.layout();

  auto recall_at = [&](std::size_t n) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const std::size_t top = std::min(n, results[i].size());
      for (std::size_t r = 0; r < top; ++r) {
        const GeoPoint center = cell_center(results[i][r].cell, layout);
        if (geodesic_distance(center, queries[i].photo.location,
                              layout.earth_radius_r) < radius) {
          ++hits;
          break;
        }
      }
    }
    return static_cast<double>(hits) / static_cast<double>(queries.size());
  };
  for (const std::size_t n : {std::size_t{1}, std::size_t{5}, n_max})
    std::printf("R@%zu<%.0fm: %.4f\n", n, radius, recall_at(n));

  ensure_dir(out_dir);
  write_grouped_csv(out_dir / "recall_by_year.csv",
                    grouped_recall(results, queries, layout, GroupKey::kYear,
                                   n_max, radius, min_group));
  write_grouped_csv(out_dir / "recall_by_hour.csv",
                    grouped_recall(results, queries, layout, GroupKey::kHour,
                                   n_max, radius, min_group));

  const QueryEmbedding* grid_query = &queries.front();
  if (!grid_query_id.empty()) {
    grid_query = nullptr;
    for (const QueryEmbedding& q : queries) {
      if (q.photo.id == grid_query_id) {
        grid_query = &q;
        break;
      }
    }
    if (!grid_query)
      throw ValidationError("no query with id " + grid_query_id);
  }
  GeoPoint grid_lo{};
  GeoPoint grid_hi{};
  bool first = true;
  for (const DbRecord& rec : db.records) {
    const GeoPoint center = cell_center(rec.cell, layout);
    if (first) {
      grid_lo = grid_hi = center;
      first = false;
    } else {
      grid_lo.lat = std::min(grid_lo.lat, center.lat);
      grid_lo.lon = std::min(grid_lo.lon, center.lon);
      grid_hi.lat = std::max(grid_hi.lat, center.lat);
      grid_hi.lon = std::max(grid_hi.lon, center.lon);
    }
  }
  write_score_grid(out_dir / "score_grid.csv", db, grid_query->embedding,
                   grid_lo, grid_hi);

  std::printf("wrote %s\n", (out_dir / "recall_by_year.csv").c_str());
  std::printf("wrote %s\n", (out_dir / "recall_by_hour.csv").c_str());
  std::printf("wrote %s (query %s)\n", (out_dir / "score_grid.csv").c_str(),
              grid_query->photo.id.c_str());
  return 0;
}

int run_gradcheck(const ModelConfig& mconfig, std::size_t batch,
                  std::uint64_t seed, double tau, double eps, double step) {
  const GradCheckReport report =
      gradcheck_model(mconfig, batch, seed, tau, eps, step);
  std::printf("checked %zu entries\n", report.entries_checked);
  std::printf("max relative error: %.3e (%s)\n", report.max_rel_error,
              report.worst_tensor.c_str());
  return report.max_rel_error < 1e-4 ? 0 : 1;
}

int run_selftest(std::uint64_t seed) {
  int failures = 0;
  auto check = [&](bool ok, const char* name) {
    std::printf("%s %s\n", ok ? "ok  " : "FAIL", name);
    if (!ok) ++failures;
  };

  // Cell centers land back in their own cell.
  {
    RegionLayout layout;
    Rng rng(seed);
    const std::int64_t top = max_band_index(layout);
    bool ok = true;
    for (int i = 0; i < 10000 && ok; ++i) {
      const std::int64_t band =
          static_cast<std::int64_t>(rng.uniform_index(
              static_cast<std::uint64_t>(2 * top + 1))) -
          top;
      const StepRange range = band_step_range(band, layout);
      const std::int64_t span = range.last - range.first + 1;
      const std::int64_t step =
          range.first + static_cast<std::int64_t>(rng.uniform_index(
                            static_cast<std::uint64_t>(span)));
      const CellIndex cell{band, step};
      ok = cell_of_point(cell_center(cell, layout), layout) == cell;
    }
    check(ok, "cell center round-trip");
  }

  // Cells stay square to within the documented bound below 85.06 degrees.
  {
    RegionLayout layout;
    const std::int64_t top = max_band_index(layout);
    double worst = 1.0;
    for (std::int64_t band = -top; band <= top; ++band)
      worst = std::min(worst, trapezoid_ratio(band, layout));
    check(worst > 1.0 - 6.3e-4, "side-ratio bound");
  }

  // Detail levels double in extent at equal pixel counts.
  {
    const std::vector<double> sides = lod_sidelengths(4, 76.8);
    const bool ok = sides == std::vector<double>{76.8, 153.6, 307.2, 614.4};
    check(ok, "detail-level sidelengths");
  }

  // Two-sample identity-similarity loss lands on the hand value.
  {
    SimilarityMatrix s;
    s.b = 2;
    s.v = {1.0, 0.0, 0.0, 1.0};
    BatchMask mask;
    mask.size = 2;
    mask.flags = {0, 1, 1, 0};
    const double loss = dcl_loss(s, mask, 1.0, 0.0);
    check(std::abs(loss - (-1.0)) < 1e-12, "contrastive unit value");
  }

  // Checkpoint files round-trip byte for byte.
  {
    ModelConfig config;
    config.image_size = 8;
    config.patch_size = 4;
    config.token_dim = 8;
    config.heads_h = 2;
    config.embed_dim = 8;
    config.n_lods = 2;
    Checkpoint ckpt{config, init_params(config, seed), {{"d0", 76.8}}};
    const auto dir = std::filesystem::temp_directory_path();
    const auto p1 = dir / "geocell_selftest_a.gcm";
    const auto p2 = dir / "geocell_selftest_b.gcm";
    save_checkpoint(p1, ckpt);
    save_checkpoint(p2, load_checkpoint(p1));
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
    check(!sa.empty() && sa == sb, "checkpoint round-trip");
  }

  // Exact search agrees with a quadratic scan, graph search with ef=count
  // agrees with exact.
  {
    Rng rng(mix_seed(seed, 3));
    EmbeddingDatabase db;
    db.embed_dim = 16;
    const std::size_t count = 400;
    for (std::size_t i = 0; i < count; ++i) {
      DbRecord rec;
      rec.cell = {static_cast<std::int64_t>(i) / 20,
                  static_cast<std::int64_t>(i) % 20};
      double norm = 0.0;
      rec.embedding.resize(db.embed_dim);
      std::vector<double> raw(db.embed_dim);
      for (double& v : raw) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (std::size_t d = 0; d < raw.size(); ++d)
        rec.embedding[d] = static_cast<float>(raw[d] / norm);
      db.records.push_back(std::move(rec));
    }
    const GraphIndex index = build_graph_index(db);
    bool ok = true;
    for (int q = 0; q < 20 && ok; ++q) {
      Embedding query(db.embed_dim);
      double norm = 0.0;
      for (double& v : query) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : query) v /= norm;

      const RetrievalResult exact = knn_exact(db, query, 10);
      std::vector<std::pair<double, CellIndex>> naive;
      for (const DbRecord& rec : db.records) {
        double dot = 0.0;
        for (std::size_t d = 0; d < query.size(); ++d)
          dot += static_cast<double>(rec.embedding[d]) * query[d];
        naive.emplace_back(dot, rec.cell);
      }
      std::sort(naive.begin(), naive.end(),
                [](const auto& a, const auto& b) {
                  if (a.first != b.first) return a.first > b.first;
                  if (a.second.band_i != b.second.band_i)
                    return a.second.band_i < b.second.band_i;
                  return a.second.step_j < b.second.step_j;
                });
      for (std::size_t r = 0; r < exact.size(); ++r) {
        ok = ok && exact[r].cell == naive[r].second;
      }
      const RetrievalResult beam = knn_graph(index, query, 10, count);
      for (std::size_t r = 0; r < exact.size(); ++r)
        ok = ok && beam[r].cell == exact[r].cell;
    }
    check(ok, "search oracle agreement");
  }

  // Analytic gradients match finite differences.
  {
    ModelConfig config;
    config.image_size = 8;
    config.patch_size = 4;
    config.token_dim = 8;
    config.heads_h = 2;
    config.embed_dim = 8;
    config.n_lods = 2;
    const GradCheckReport report =
        gradcheck_model(config, 3, seed, 1.0 / 36.0, 0.1);
    check(report.max_rel_error < 1e-4, "gradient check");
  }

  std::printf(failures == 0 ? "all self tests passed\n"
                            : "%d self tests failed\n",
              failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Cross-view geolocalization toolkit: consistent-scale cell layouts, "
      "synthetic worlds, contrastive training, and cell retrieval"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");
  app.set_config("--config", "", "Read options from a key = value file");

  int exit_code = 0;

  // layout
  auto* layout_cmd =
      app.add_subcommand("layout", "Cell grid for a bounding box");
  std::vector<double> layout_bbox;
  double layout_cell_size = 30.0;
  double layout_radius = kDefaultEarthRadiusM;
  std::string layout_out = "out";
  layout_cmd
      ->add_option("--bbox", layout_bbox,
                   "lat_min lon_min lat_max lon_max, degrees")
      ->expected(4)
      ->required();
  layout_cmd->add_option("--cell-size", layout_cell_size, "Cell size, m")
      ->capture_default_str();
  layout_cmd->add_option("--earth-radius", layout_radius, "Sphere radius, m")
      ->capture_default_str();
  layout_cmd->add_option("--out", layout_out, "Output directory")
      ->capture_default_str();
  layout_cmd->callback([&] {
    exit_code =
        run_layout(layout_bbox, layout_cell_size, layout_radius, layout_out);
  });

  // synth
  auto* synth_cmd = app.add_subcommand(
      "synth", "Procedural world with train and query manifests");
  std::vector<double> synth_origin = {42.0, -71.0};
  double synth_extent = 3000.0;
  std::size_t synth_train = 2000;
  std::size_t synth_queries = 500;
  int synth_octaves = 3;
  double synth_wavelength = 192.0;
  double synth_gain = 0.5;
  double synth_sigma = 0.02;
  double synth_resolution = 0.5;
  std::int64_t synth_street_pixels = 32;
  std::uint64_t synth_seed = 1;
  std::string synth_out = "out";
  synth_cmd
      ->add_option("--origin", synth_origin, "Southwest corner lat lon, degrees")
      ->expected(2)
      ->capture_default_str();
  synth_cmd->add_option("--extent", synth_extent, "Region side length, m")
      ->capture_default_str();
  synth_cmd->add_option("--train-photos", synth_train, "Training photo count")
      ->capture_default_str();
  synth_cmd->add_option("--query-photos", synth_queries, "Held-out query count")
      ->capture_default_str();
  synth_cmd->add_option("--octaves", synth_octaves, "Noise octaves")
      ->capture_default_str();
  synth_cmd
      ->add_option("--wavelength", synth_wavelength,
                   "Longest noise wavelength, m")
      ->capture_default_str();
  synth_cmd->add_option("--gain", synth_gain, "Per-octave amplitude gain")
      ->capture_default_str();
  synth_cmd
      ->add_option("--noise-sigma", synth_sigma,
                   "Photometric noise standard deviation")
      ->capture_default_str();
  synth_cmd
      ->add_option("--resolution", synth_resolution, "Raster resolution, m/px")
      ->capture_default_str();
  synth_cmd
      ->add_option("--street-pixels", synth_street_pixels,
                   "Street view size, px")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "World seed")
      ->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "Output directory")
      ->capture_default_str();
  synth_cmd->callback([&] {
    exit_code = run_synth(synth_origin, synth_extent, synth_train,
                          synth_queries, synth_octaves, synth_wavelength,
                          synth_gain, synth_sigma, synth_resolution,
                          synth_street_pixels, synth_seed, synth_out);
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the matching model");
  std::string train_world;
  std::string train_manifest;
  ModelConfig train_model;
  TrainConfig train_config;
  std::string train_mining = "off";
  std::int64_t train_s_max = 1 << 14;
  int train_threads = default_threads();
  std::string train_out = "out";
  train_cmd->add_option("--world", train_world, "World directory from synth")
      ->required();
  train_cmd
      ->add_option("--manifest", train_manifest,
                   "Photo manifest (default <world>/train.jsonl)")
      ->capture_default_str();
  add_model_flags(train_cmd, train_model);
  train_cmd->add_option("--batch", train_config.batch_b, "Batch size")
      ->capture_default_str();
  train_cmd
      ->add_option("--iterations", train_config.iterations, "Training steps")
      ->capture_default_str();
  train_cmd->add_option("--lr-peak", train_config.lr_peak, "Peak learning rate")
      ->capture_default_str();
  train_cmd
      ->add_option("--warmup", train_config.warmup_iters,
                   "Linear warmup steps")
      ->capture_default_str();
  train_cmd
      ->add_option("--tau", train_config.temperature_tau,
                   "Contrastive temperature")
      ->capture_default_str();
  train_cmd
      ->add_option("--label-smoothing", train_config.label_smoothing_eps,
                   "Label smoothing weight")
      ->capture_default_str();
  train_cmd->add_option("--cell-size", train_config.cell_size_l, "Cell size, m")
      ->capture_default_str();
  train_cmd
      ->add_option("--l-delta", train_config.l_delta,
                   "Offset margin inside the cell, m")
      ->capture_default_str();
  train_cmd->add_option("--d0", train_config.d0, "Finest patch sidelength, m")
      ->capture_default_str();
  train_cmd
      ->add_option("--checkpoint-every", train_config.checkpoint_every,
                   "Checkpoint cadence, iterations")
      ->capture_default_str();
  train_cmd
      ->add_option("--mask-distance", train_config.mask.min_distance_m,
                   "False-negative mask distance, m")
      ->capture_default_str();
  train_cmd
      ->add_option("--mask-boundary", train_config.mask.boundary_distance,
                   "Measure the mask distance to the cell boundary")
      ->capture_default_str();
  train_cmd->add_option("--mining", train_mining, "Hard-example mining: on|off")
      ->capture_default_str();
  train_cmd->add_option("--s-max", train_s_max, "Mining pool size cap")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_config.seed, "Run seed")
      ->capture_default_str();
  train_cmd->add_option("--threads", train_threads, "Worker threads")
      ->capture_default_str();
  train_cmd->add_option("--out", train_out, "Output directory")
      ->capture_default_str();
  train_cmd->callback([&] {
    exit_code = run_train(train_world, train_manifest, train_model,
                          train_config, train_mining, train_s_max,
                          train_threads, train_out);
  });

  // build-db
  auto* db_cmd =
      app.add_subcommand("build-db", "Embed every cell into a database");
  std::string db_world;
  std::string db_model;
  std::vector<double> db_bbox;
  double db_cell_size = -1.0;
  double db_d0 = -1.0;
  int db_threads = default_threads();
  std::string db_out = "out";
  db_cmd->add_option("--world", db_world, "World directory from synth")
      ->required();
  db_cmd->add_option("--model", db_model, "Trained checkpoint (.gcm)")
      ->required();
  db_cmd
      ->add_option("--bbox", db_bbox,
                   "lat_min lon_min lat_max lon_max, degrees "
                   "(default: world region)")
      ->expected(4);
  db_cmd
      ->add_option("--cell-size", db_cell_size,
                   "Cell size, m (default: from the checkpoint)")
      ->capture_default_str();
  db_cmd
      ->add_option("--d0", db_d0,
                   "Finest patch sidelength, m (default: from the checkpoint)")
      ->capture_default_str();
  db_cmd->add_option("--threads", db_threads, "Worker threads")
      ->capture_default_str();
  db_cmd->add_option("--out", db_out, "Output directory")
      ->capture_default_str();
  db_cmd->callback([&] {
    exit_code = run_build_db(db_world, db_model, db_bbox, db_cell_size, db_d0,
                             db_threads, db_out);
  });

  // embed-queries
  auto* eq_cmd =
      app.add_subcommand("embed-queries", "Embed a photo manifest");
  std::string eq_world;
  std::string eq_model;
  std::string eq_manifest;
  int eq_threads = default_threads();
  std::string eq_out = "out";
  eq_cmd->add_option("--world", eq_world, "World directory from synth")
      ->required();
  eq_cmd->add_option("--model", eq_model, "Trained checkpoint (.gcm)")
      ->required();
  eq_cmd
      ->add_option("--manifest", eq_manifest,
                   "Photo manifest (default <world>/test.jsonl)")
      ->capture_default_str();
  eq_cmd->add_option("--threads", eq_threads, "Worker threads")
      ->capture_default_str();
  eq_cmd->add_option("--out", eq_out, "Output directory")
      ->capture_default_str();
  eq_cmd->callback([&] {
    exit_code =
        run_embed_queries(eq_world, eq_model, eq_manifest, eq_threads, eq_out);
  });

  // search
  auto* search_cmd =
      app.add_subcommand("search", "Rank database cells per query");
  std::string search_db;
  std::string search_queries;
  std::string search_index = "graph";
  std::size_t search_n = 10;
  std::size_t search_ef = 64;
  double search_radius = 50.0;
  std::string search_out = "out";
  search_cmd->add_option("--db", search_db, "Cell database (.gcdb)")
      ->required();
  search_cmd->add_option("--queries", search_queries, "Query file (.gcqe)")
      ->required();
  search_cmd->add_option("--index", search_index, "exact|graph")
      ->capture_default_str();
  search_cmd->add_option("--n", search_n, "Results per query")
      ->capture_default_str();
  search_cmd->add_option("--ef-search", search_ef, "Graph search beam width")
      ->capture_default_str();
  search_cmd
      ->add_option("--radius", search_radius, "Hit distance threshold, m")
      ->capture_default_str();
  search_cmd->add_option("--out", search_out, "Output directory")
      ->capture_default_str();
  search_cmd->callback([&] {
    exit_code = run_search(search_db, search_queries, search_index, search_n,
                           search_ef, search_radius, search_out);
  });

  // eval
  auto* eval_cmd = app.add_subcommand(
      "eval", "Recall within 50 m, grouped recall, score grid");
  std::string eval_db;
  std::string eval_queries;
  std::string eval_index = "exact";
  std::size_t eval_ef = 64;
  double eval_radius = 50.0;
  std::size_t eval_min_group = 1;
  std::string eval_grid_query;
  std::string eval_out = "out";
  eval_cmd->add_option("--db", eval_db, "Cell database (.gcdb)")->required();
  eval_cmd->add_option("--queries", eval_queries, "Query file (.gcqe)")
      ->required();
  eval_cmd->add_option("--index", eval_index, "exact|graph")
      ->capture_default_str();
  eval_cmd->add_option("--ef-search", eval_ef, "Graph search beam width")
      ->capture_default_str();
  eval_cmd->add_option("--radius", eval_radius, "Hit distance threshold, m")
      ->capture_default_str();
  eval_cmd
      ->add_option("--min-group", eval_min_group,
                   "Flag groups smaller than this")
      ->capture_default_str();
  eval_cmd
      ->add_option("--grid-query", eval_grid_query,
                   "Query id for the score grid (default: first)")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Output directory")
      ->capture_default_str();
  eval_cmd->callback([&] {
    exit_code = run_eval(eval_db, eval_queries, eval_index, eval_ef,
                         eval_radius, eval_min_group, eval_grid_query,
                         eval_out);
  });

  // gradcheck
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference check of every gradient");
  ModelConfig grad_model;
  grad_model.image_size = 8;
  grad_model.patch_size = 4;
  grad_model.token_dim = 8;
  grad_model.heads_h = 2;
  grad_model.embed_dim = 8;
  grad_model.n_lods = 2;
  std::size_t grad_batch = 3;
  std::uint64_t grad_seed = 7;
  double grad_tau = 1.0 / 36.0;
  double grad_eps = 0.1;
  double grad_step = 1e-5;
  add_model_flags(grad_cmd, grad_model);
  grad_cmd->add_option("--batch", grad_batch, "Batch size")
      ->capture_default_str();
  grad_cmd->add_option("--seed", grad_seed, "Batch seed")
      ->capture_default_str();
  grad_cmd->add_option("--tau", grad_tau, "Contrastive temperature")
      ->capture_default_str();
  grad_cmd->add_option("--label-smoothing", grad_eps, "Label smoothing weight")
      ->capture_default_str();
  grad_cmd->add_option("--step", grad_step, "Finite-difference step")
      ->capture_default_str();
  grad_cmd->callback([&] {
    exit_code = run_gradcheck(grad_model, grad_batch, grad_seed, grad_tau,
                              grad_eps, grad_step);
  });

  // selftest
  auto* self_cmd =
      app.add_subcommand("selftest", "Quick end-to-end property checks");
  std::uint64_t self_seed = 1;
  self_cmd->add_option("--seed", self_seed, "Check seed")
      ->capture_default_str();
  self_cmd->callback([&] { exit_code = run_selftest(self_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return exit_code;
}
