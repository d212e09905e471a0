#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdint>
#include <utility>

#include "geocell/dataset.hpp"
#include "geocell/errors.hpp"
#include "geocell/geodesy.hpp"
#include "geocell/mining.hpp"
#include "geocell/model.hpp"
#include "geocell/raster.hpp"
#include "geocell/retrieval.hpp"
#include "geocell/rng.hpp"
#include "geocell/synth.hpp"
#include "geocell/training.hpp"

namespace py = pybind11;
using namespace geocell;

namespace {

// Checkpoint-shaped model handle: configuration plus parameters, with the
// auxiliary scalars persisted alongside them.
struct Model {
  ModelConfig config;
  ModelParams params;
  std::vector<std::pair<std::string, double>> extras;

  static Model init(const ModelConfig& config, std::uint64_t seed) {
    return {config, init_params(config, seed), {}};
  }

  static Model load(const std::filesystem::path& path) {
    Checkpoint ckpt = load_checkpoint(path);
    return {ckpt.config, std::move(ckpt.params), std::move(ckpt.extras)};
  }

  void save(const std::filesystem::path& path) const {
    save_checkpoint(path, {config, params, extras});
  }

  double extra_or(const std::string& key, double fallback) const {
    for (const auto& [k, v] : extras)
      if (k == key) return v;
    return fallback;
  }
};

struct TrainSummary {
  std::int64_t iterations_run = 0;
  double final_loss = 0.0;
  double final_recall = 0.0;
  std::string metrics_csv;
  std::string checkpoint;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-view geolocalization engine: consistent-scale cell "
            "layout, multi-LOD patch embedding, contrastive training, and "
            "cell retrieval.";

  static py::exception<Error> base_exc(m, "GeocellError");
  static py::exception<RangeError> range_exc(m, "CellRangeError", base_exc);
  static py::exception<ValidationError> input_exc(m, "InputError", base_exc);
  static py::exception<IoError> file_exc(m, "FileError", base_exc);
  static py::exception<CoverageError> cover_exc(m, "NoCoverageError",
                                               base_exc);
  static py::exception<ResourceError> resource_exc(m, "ResourceLimitError",
                                                   base_exc);
  static py::exception<ShapeError> shape_exc(m, "ShapeMismatchError",
                                             base_exc);
  static py::exception<NumericError> numeric_exc(m, "NonFiniteError",
                                                 base_exc);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const RangeError& e) {
      py::set_error(range_exc, e.what());
    } catch (const ValidationError& e) {
      py::set_error(input_exc, e.what());
    } catch (const IoError& e) {
      py::set_error(file_exc, e.what());
    } catch (const CoverageError& e) {
      py::set_error(cover_exc, e.what());
    } catch (const ResourceError& e) {
      py::set_error(resource_exc, e.what());
    } catch (const ShapeError& e) {
      py::set_error(shape_exc, e.what());
    } catch (const NumericError& e) {
      py::set_error(numeric_exc, e.what());
    } catch (const Error& e) {
      py::set_error(base_exc, e.what());
    }
  });

  m.def("deg_to_rad", &deg_to_rad, py::arg("degrees"));
  m.def("rad_to_deg", &rad_to_deg, py::arg("radians"));
  m.def("wrap_longitude", &wrap_longitude, py::arg("radians"));
  m.def("mix_seed", &mix_seed, py::arg("a"), py::arg("b"));

  py::class_<GeoPoint>(m, "GeoPoint")
      .def(py::init<>())
      .def(py::init([](double lat, double lon) {
             return GeoPoint{lat, lon};
           }),
           py::arg("lat"), py::arg("lon"))
      .def_readwrite("lat", &GeoPoint::lat)
      .def_readwrite("lon", &GeoPoint::lon)
      .def("__repr__", [](const GeoPoint& p) {
        return "GeoPoint(lat=" + std::to_string(p.lat) +
               ", lon=" + std::to_string(p.lon) + ")";
      });

  py::class_<CellIndex>(m, "CellIndex")
      .def(py::init<>())
      .def(py::init([](std::int64_t band, std::int64_t step) {
             return CellIndex{band, step};
           }),
           py::arg("band_i"), py::arg("step_j"))
      .def_readwrite("band_i", &CellIndex::band_i)
      .def_readwrite("step_j", &CellIndex::step_j)
      .def(py::self == py::self)
      .def("__hash__",
           [](const CellIndex& c) { return CellIndexHash{}(c); })
      .def("__repr__", [](const CellIndex& c) {
        return "CellIndex(band_i=" + std::to_string(c.band_i) +
               ", step_j=" + std::to_string(c.step_j) + ")";
      });

  py::class_<RegionLayout>(m, "RegionLayout")
      .def(py::init<>())
      .def(py::init([](double l, double r) {
             return RegionLayout{l, r};
           }),
           py::arg("cell_size_l") = 30.0,
           py::arg("earth_radius_r") = kDefaultEarthRadiusM)
      .def_readwrite("cell_size_l", &RegionLayout::cell_size_l)
      .def_readwrite("earth_radius_r", &RegionLayout::earth_radius_r);

  m.attr("DEFAULT_EARTH_RADIUS_M") = kDefaultEarthRadiusM;
  m.def("band_latitude", &band_latitude, py::arg("band_i"), py::arg("layout"));
  m.def("max_band_index", &max_band_index, py::arg("layout"));
  m.def("band_step_count", &band_step_count, py::arg("band_i"),
        py::arg("layout"));
  m.def("cell_center", &cell_center, py::arg("cell"), py::arg("layout"));
  m.def("cell_of_point", &cell_of_point, py::arg("point"), py::arg("layout"));
  m.def("cells_in_box", &cells_in_box, py::arg("layout"), py::arg("box_min"),
        py::arg("box_max"));
  m.def("geodesic_distance", &geodesic_distance, py::arg("a"), py::arg("b"),
        py::arg("earth_radius") = kDefaultEarthRadiusM);
  m.def("trapezoid_ratio", &trapezoid_ratio, py::arg("band_i"),
        py::arg("layout"));
  m.def("lod_sidelengths", &lod_sidelengths, py::arg("n"), py::arg("d0"));

  py::class_<Image>(m, "Image")
      .def_readonly("width", &Image::width)
      .def_readonly("height", &Image::height)
      .def_property_readonly(
          "values", [](const Image& im) { return im.values; },
          "Row-major RGB float values in [0, 1].")
      .def("at",
           [](const Image& im, std::int64_t x, std::int64_t y, int channel) {
             if (x < 0 || x >= im.width || y < 0 || y >= im.height ||
                 channel < 0 || channel > 2)
               throw py::index_error("pixel index out of range");
             return im.values[static_cast<std::size_t>(
                 (y * im.width + x) * 3 + channel)];
           },
           py::arg("x"), py::arg("y"), py::arg("channel"));

  py::class_<PatchSpec>(m, "PatchSpec")
      .def(py::init<>())
      .def_readwrite("center", &PatchSpec::center)
      .def_readwrite("sidelength_d", &PatchSpec::sidelength_d)
      .def_readwrite("orientation_theta", &PatchSpec::orientation_theta)
      .def_readwrite("pixels", &PatchSpec::pixels);

  m.def("patch_specs_for_cell", &patch_specs_for_cell, py::arg("cell"),
        py::arg("layout"), py::arg("n"), py::arg("d0"), py::arg("pixels"),
        py::arg("theta"));
  m.def("patch_specs_at", &patch_specs_at, py::arg("center"), py::arg("theta"),
        py::arg("n"), py::arg("d0"), py::arg("pixels"));

  py::class_<GeoRaster>(m, "GeoRaster")
      .def_readonly("anchor", &GeoRaster::anchor)
      .def_readonly("resolution", &GeoRaster::resolution)
      .def_readonly("width", &GeoRaster::width)
      .def_readonly("height", &GeoRaster::height);
  m.def("extract_patch", &extract_patch, py::arg("raster"), py::arg("spec"));
  m.def("patch_coverage", &patch_coverage, py::arg("raster"), py::arg("spec"));

  py::class_<SyntheticWorld>(m, "SyntheticWorld")
      .def(py::init<>())
      .def_readwrite("seed", &SyntheticWorld::seed)
      .def_readwrite("region_min", &SyntheticWorld::region_min)
      .def_readwrite("region_max", &SyntheticWorld::region_max)
      .def_readwrite("octaves", &SyntheticWorld::octaves)
      .def_readwrite("base_wavelength_m", &SyntheticWorld::base_wavelength_m)
      .def_readwrite("gain", &SyntheticWorld::gain)
      .def_readwrite("resolution_m", &SyntheticWorld::resolution_m)
      .def_readwrite("photometric_noise_sigma",
                     &SyntheticWorld::photometric_noise_sigma)
      .def_readwrite("street_pixels", &SyntheticWorld::street_pixels);

  m.def("synth_aerial", &synth_aerial, py::arg("world"));
  m.def("synth_street_view",
        py::overload_cast<const SyntheticWorld&, const GeoPoint&, double,
                          std::uint64_t>(&synth_street_view),
        py::arg("world"), py::arg("position"), py::arg("heading"),
        py::arg("seed"));
  m.def("synth_street_view",
        py::overload_cast<const GeoRaster&, const SyntheticWorld&,
                          const GeoPoint&, double, std::uint64_t>(
            &synth_street_view),
        py::arg("aerial"), py::arg("world"), py::arg("position"),
        py::arg("heading"), py::arg("seed"));
  m.def("street_view_spec", &street_view_spec, py::arg("world"),
        py::arg("position"), py::arg("heading"));
  m.def("scatter_photos", &scatter_photos, py::arg("world"), py::arg("count"),
        py::arg("id_prefix"), py::arg("seed"));
  m.def("photo_render_seed", &photo_render_seed, py::arg("world_seed"),
        py::arg("photo_id"));

  py::class_<PhotoRecord>(m, "PhotoRecord")
      .def(py::init<>())
      .def_readwrite("id", &PhotoRecord::id)
      .def_readwrite("location", &PhotoRecord::location)
      .def_readwrite("captured_at", &PhotoRecord::captured_at)
      .def_readwrite("image_path", &PhotoRecord::image_path)
      .def_readwrite("synthetic", &PhotoRecord::synthetic)
      .def_readwrite("pose_pos", &PhotoRecord::pose_pos)
      .def_readwrite("pose_heading", &PhotoRecord::pose_heading);

  m.def(
      "load_manifest",
      [](const std::filesystem::path& path) {
        const ManifestData data = load_manifest(path);
        return py::make_tuple(data.records, data.skipped_lines);
      },
      py::arg("path"),
      "Returns (records, skipped_line_count) for a JSON-lines manifest.");
  m.def("write_manifest", &write_manifest, py::arg("path"),
        py::arg("records"));
  m.def("parse_rfc3339", &parse_rfc3339, py::arg("text"));
  m.def(
      "calendar_utc",
      [](std::int64_t unix_seconds) {
        const CalendarTime t = calendar_utc(unix_seconds);
        return py::make_tuple(t.year, t.month, t.day, t.hour);
      },
      py::arg("unix_seconds"),
      "Returns (year, month, day, hour) in UTC.");

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &ModelConfig::image_size)
      .def_readwrite("patch_size", &ModelConfig::patch_size)
      .def_readwrite("token_dim", &ModelConfig::token_dim)
      .def_readwrite("heads_h", &ModelConfig::heads_h)
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("n_lods", &ModelConfig::n_lods)
      .def_readwrite("lod_embedding", &ModelConfig::lod_embedding);

  py::class_<Model>(m, "Model")
      .def_static("init", &Model::init, py::arg("config"), py::arg("seed"))
      .def_static("load", &Model::load, py::arg("path"))
      .def("save", &Model::save, py::arg("path"))
      .def_readonly("config", &Model::config)
      .def_readwrite("extras", &Model::extras)
      .def("extra_or", &Model::extra_or, py::arg("key"), py::arg("fallback"))
      .def(
          "embed_street",
          [](const Model& model, const Image& image) {
            return embed_street(model.params, model.config, image);
          },
          py::arg("image"))
      .def(
          "embed_cell",
          [](const Model& model, const std::vector<Image>& lod_images) {
            return embed_cell(model.params, model.config, lod_images);
          },
          py::arg("lod_images"));

  py::class_<MaskConfig>(m, "MaskConfig")
      .def(py::init<>())
      .def_readwrite("min_distance_m", &MaskConfig::min_distance_m)
      .def_readwrite("boundary_distance", &MaskConfig::boundary_distance)
      .def_readwrite("cell_size_l", &MaskConfig::cell_size_l)
      .def_readwrite("earth_radius", &MaskConfig::earth_radius);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("batch_b", &TrainConfig::batch_b)
      .def_readwrite("iterations", &TrainConfig::iterations)
      .def_readwrite("lr_peak", &TrainConfig::lr_peak)
      .def_readwrite("warmup_iters", &TrainConfig::warmup_iters)
      .def_readwrite("temperature_tau", &TrainConfig::temperature_tau)
      .def_readwrite("label_smoothing_eps", &TrainConfig::label_smoothing_eps)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("cell_size_l", &TrainConfig::cell_size_l)
      .def_readwrite("l_delta", &TrainConfig::l_delta)
      .def_readwrite("d0", &TrainConfig::d0)
      .def_readwrite("mask", &TrainConfig::mask)
      .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
      .def_readwrite("threads", &TrainConfig::threads);

  py::class_<MiningConfig>(m, "MiningConfig")
      .def(py::init<>())
      .def_readwrite("enabled", &MiningConfig::enabled)
      .def_readwrite("s_max", &MiningConfig::s_max);

  py::class_<TrainSummary>(m, "TrainSummary")
      .def_readonly("iterations_run", &TrainSummary::iterations_run)
      .def_readonly("final_loss", &TrainSummary::final_loss)
      .def_readonly("final_recall", &TrainSummary::final_recall)
      .def_readonly("metrics_csv", &TrainSummary::metrics_csv)
      .def_readonly("checkpoint", &TrainSummary::checkpoint);

  m.def(
      "train_synthetic",
      [](const SyntheticWorld& world, const std::vector<PhotoRecord>& photos,
         const ModelConfig& config, const TrainConfig& tconfig,
         const std::filesystem::path& out_dir, const MiningConfig& mining) {
        const GeoRaster aerial = synth_aerial(world);
        const SynthImageSource source(world, aerial, config, tconfig.d0);
        TrainResult result =
            train(photos, source, config, tconfig, mining, out_dir);
        Model model{config, std::move(result.params),
                    {{"cell_size_l", tconfig.cell_size_l},
                     {"d0", tconfig.d0},
                     {"l_delta", tconfig.l_delta}}};
        TrainSummary summary{result.iterations_run, result.final_loss,
                             result.final_recall,
                             result.metrics_csv.string(),
                             result.checkpoint.string()};
        return py::make_tuple(std::move(model), summary);
      },
      py::arg("world"), py::arg("photos"), py::arg("config"),
      py::arg("train_config"), py::arg("out_dir"),
      py::arg("mining") = MiningConfig{},
      "Trains on a synthetic world; returns (model, summary).");

  py::class_<DbRecord>(m, "DbRecord")
      .def_readonly("cell", &DbRecord::cell)
      .def_readonly("covered", &DbRecord::covered)
      .def_readonly("embedding", &DbRecord::embedding);

  py::class_<EmbeddingDatabase>(m, "EmbeddingDatabase")
      .def_readonly("cell_size_l", &EmbeddingDatabase::cell_size_l)
      .def_readonly("earth_radius_r", &EmbeddingDatabase::earth_radius_r)
      .def_readonly("embed_dim", &EmbeddingDatabase::embed_dim)
      .def_readonly("records", &EmbeddingDatabase::records)
      .def("layout", &EmbeddingDatabase::layout)
      .def("__len__",
           [](const EmbeddingDatabase& db) { return db.records.size(); });

  m.def(
      "build_database_synthetic",
      [](const Model& model, const SyntheticWorld& world,
         const RegionLayout& layout, const GeoPoint& box_min,
         const GeoPoint& box_max, double d0, int threads) {
        const GeoRaster aerial = synth_aerial(world);
        const SynthImageSource source(world, aerial, model.config, d0);
        return build_database(model.params, model.config, source, layout,
                              box_min, box_max, threads);
      },
      py::arg("model"), py::arg("world"), py::arg("layout"),
      py::arg("box_min"), py::arg("box_max"), py::arg("d0") = 76.8,
      py::arg("threads") = 1);
  m.def("save_database", &save_database, py::arg("path"), py::arg("db"));
  m.def("load_database", &load_database, py::arg("path"));

  py::class_<ScoredCell>(m, "ScoredCell")
      .def_readonly("cell", &ScoredCell::cell)
      .def_readonly("score", &ScoredCell::score);

  m.def("knn_exact", &knn_exact, py::arg("db"), py::arg("query"),
        py::arg("n"));

  py::class_<GraphIndex>(m, "GraphIndex");
  m.def("build_graph_index",
        [](const EmbeddingDatabase& db) { return build_graph_index(db); },
        py::arg("db"), py::keep_alive<0, 1>());
  m.def("knn_graph", &knn_graph, py::arg("index"), py::arg("query"),
        py::arg("n"), py::arg("ef_search"));

  py::class_<QueryEmbedding>(m, "QueryEmbedding")
      .def(py::init<>())
      .def_readwrite("photo", &QueryEmbedding::photo)
      .def_readwrite("embedding", &QueryEmbedding::embedding);

  m.def("recall_at_n_within",
        py::overload_cast<const EmbeddingDatabase&,
                          const std::vector<QueryEmbedding>&, std::size_t,
                          double>(&recall_at_n_within),
        py::arg("db"), py::arg("queries"), py::arg("n"),
        py::arg("radius_m") = 50.0);
  m.def("recall_at_n_within",
        py::overload_cast<const GraphIndex&,
                          const std::vector<QueryEmbedding>&, std::size_t,
                          std::size_t, double>(&recall_at_n_within),
        py::arg("index"), py::arg("queries"), py::arg("n"),
        py::arg("ef_search"), py::arg("radius_m") = 50.0);

  py::enum_<GroupKey>(m, "GroupKey")
      .value("YEAR", GroupKey::kYear)
      .value("HOUR", GroupKey::kHour);

  py::class_<GroupRecall>(m, "GroupRecall")
      .def_readonly("group", &GroupRecall::group)
      .def_readonly("count", &GroupRecall::count)
      .def_readonly("recall", &GroupRecall::recall)
      .def_readonly("below_min", &GroupRecall::below_min);

  m.def("grouped_recall", &grouped_recall, py::arg("results"),
        py::arg("queries"), py::arg("layout"), py::arg("key"), py::arg("n"),
        py::arg("radius_m") = 50.0, py::arg("min_count") = 1);
  m.def("write_score_grid", &write_score_grid, py::arg("path"), py::arg("db"),
        py::arg("query"), py::arg("box_min"), py::arg("box_max"));
  m.def("write_results_csv", &write_results_csv, py::arg("path"),
        py::arg("queries"), py::arg("results"), py::arg("layout"),
        py::arg("radius_m") = 50.0);
  m.def("save_query_embeddings", &save_query_embeddings, py::arg("path"),
        py::arg("queries"), py::arg("embed_dim"));
  m.def("load_query_embeddings", &load_query_embeddings, py::arg("path"));
}
