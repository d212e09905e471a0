"""Smoke test for the geocell python module: exercises the full pipeline
on a tiny synthetic world. Run with PYTHONPATH pointing at the built
package directory."""

import math
import os
import tempfile

import geocell as gc


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def tiny_world(extent_m=400.0):
    w = gc.SyntheticWorld()
    w.seed = 7
    lat0 = gc.deg_to_rad(42.0)
    lon0 = gc.deg_to_rad(-71.0)
    half = 0.5 * extent_m / gc.DEFAULT_EARTH_RADIUS_M
    w.region_min = gc.GeoPoint(lat0 - half, lon0 - half / math.cos(lat0))
    w.region_max = gc.GeoPoint(lat0 + half, lon0 + half / math.cos(lat0))
    w.street_pixels = 8
    return w


def tiny_config():
    c = gc.ModelConfig()
    c.image_size = 8
    c.patch_size = 4
    c.token_dim = 8
    c.heads_h = 2
    c.embed_dim = 8
    c.n_lods = 2
    return c


def test_geodesy():
    layout = gc.RegionLayout()
    assert close(layout.cell_size_l, 30.0)
    p = gc.GeoPoint(gc.deg_to_rad(42.0), gc.deg_to_rad(-71.0))
    cell = gc.cell_of_point(p, layout)
    center = gc.cell_center(cell, layout)
    assert gc.geodesic_distance(p, center) < 30.0 * math.sqrt(2.0)
    assert gc.cell_of_point(center, layout) == cell
    assert hash(cell) == hash(gc.CellIndex(cell.band_i, cell.step_j))
    cells = gc.cells_in_box(
        layout,
        gc.GeoPoint(p.lat - 1e-4, p.lon - 1e-4),
        gc.GeoPoint(p.lat + 1e-4, p.lon + 1e-4),
    )
    assert cell in cells
    assert 0.0 < gc.trapezoid_ratio(cell.band_i, layout) <= 1.0

    sides = gc.lod_sidelengths(4, 76.8)
    assert sides == [76.8, 153.6, 307.2, 614.4]


def test_synth_and_manifest(tmp):
    world = tiny_world()
    photos = gc.scatter_photos(world, 12, "p", 3)
    assert len(photos) == 12
    assert photos[0].id == "p00000"
    assert all(ph.synthetic for ph in photos)

    img = gc.synth_street_view(
        world, photos[0].pose_pos, photos[0].pose_heading,
        gc.photo_render_seed(world.seed, photos[0].id))
    assert img.width == 8 and img.height == 8
    assert len(img.values) == 8 * 8 * 3
    assert all(0.0 <= v <= 1.0 for v in img.values)

    manifest = os.path.join(tmp, "photos.jsonl")
    gc.write_manifest(manifest, photos)
    records, skipped = gc.load_manifest(manifest)
    assert skipped == 0
    assert [r.id for r in records] == [p.id for p in photos]
    ts = gc.parse_rfc3339("2021-06-05T14:30:00Z")
    assert ts is not None and gc.calendar_utc(ts) == (2021, 6, 5, 14)


def test_model_roundtrip(tmp):
    config = tiny_config()
    model = gc.Model.init(config, 11)
    world = tiny_world()
    aerial = gc.synth_aerial(world)

    pos = gc.GeoPoint(
        0.5 * (world.region_min.lat + world.region_max.lat),
        0.5 * (world.region_min.lon + world.region_max.lon))
    street = gc.synth_street_view(aerial, world, pos, 0.3, 5)
    q = model.embed_street(street)
    assert len(q) == 8
    assert close(sum(x * x for x in q), 1.0, 1e-9)

    specs = gc.patch_specs_at(pos, 0.0, config.n_lods, 76.8, config.image_size)
    lods = [gc.extract_patch(aerial, s) for s in specs]
    r = model.embed_cell(lods)
    assert len(r) == 8
    assert close(sum(x * x for x in r), 1.0, 1e-9)

    path = os.path.join(tmp, "model.gcm")
    model.save(path)
    again = gc.Model.load(path)
    assert again.embed_street(street) == q
    assert again.config.embed_dim == 8


def test_train_and_retrieve(tmp):
    world = tiny_world()
    photos = gc.scatter_photos(world, 12, "t", 9)
    config = tiny_config()

    tc = gc.TrainConfig()
    tc.batch_b = 2
    tc.iterations = 3
    tc.warmup_iters = 1
    tc.checkpoint_every = 10
    tc.seed = 4
    tc.d0 = 76.8
    tc.threads = 1

    out = os.path.join(tmp, "run")
    model, summary = gc.train_synthetic(world, photos, config, tc, out)
    assert summary.iterations_run == 3
    assert math.isfinite(summary.final_loss)
    assert os.path.exists(summary.metrics_csv)
    assert os.path.exists(summary.checkpoint)
    assert close(model.extra_or("cell_size_l", 0.0), 30.0)

    layout = gc.RegionLayout()
    db = gc.build_database_synthetic(
        model, world, layout, world.region_min, world.region_max,
        d0=tc.d0, threads=1)
    assert len(db) > 0
    assert db.embed_dim == 8
    assert db.records[0].covered in (True, False)

    db_path = os.path.join(tmp, "cells.gcdb")
    gc.save_database(db_path, db)
    loaded = gc.load_database(db_path)
    assert len(loaded) == len(db)
    assert loaded.records[0].cell == db.records[0].cell

    aerial = gc.synth_aerial(world)
    queries = []
    for ph in photos[:4]:
        img = gc.synth_street_view(
            aerial, world, ph.pose_pos, ph.pose_heading,
            gc.photo_render_seed(world.seed, ph.id))
        qe = gc.QueryEmbedding()
        qe.photo = ph
        qe.embedding = model.embed_street(img)
        queries.append(qe)

    top = gc.knn_exact(db, queries[0].embedding, 3)
    assert len(top) == 3
    assert top[0].score >= top[1].score >= top[2].score

    index = gc.build_graph_index(db)
    via_graph = gc.knn_graph(index, queries[0].embedding, 3, len(db))
    assert [(s.cell.band_i, s.cell.step_j) for s in via_graph] == \
        [(s.cell.band_i, s.cell.step_j) for s in top]

    r1 = gc.recall_at_n_within(db, queries, 1)
    rall = gc.recall_at_n_within(db, queries, len(db))
    assert 0.0 <= r1 <= rall <= 1.0

    q_path = os.path.join(tmp, "queries.gcqe")
    gc.save_query_embeddings(q_path, queries, db.embed_dim)
    q_again = gc.load_query_embeddings(q_path)
    assert [q.photo.id for q in q_again] == [q.photo.id for q in queries]

    results = [gc.knn_exact(db, q.embedding, 5) for q in queries]
    rows = gc.grouped_recall(results, queries, layout, gc.GroupKey.YEAR, 5)
    assert sum(row.count for row in rows) == len(queries)

    csv_path = os.path.join(tmp, "results.csv")
    gc.write_results_csv(csv_path, queries, results, layout)
    with open(csv_path) as fh:
        header = fh.readline().strip()
    assert header == "query_id,rank,band_i,step_j,score,dist_m,hit"


def test_errors():
    bad = gc.ModelConfig()
    bad.image_size = 10
    bad.patch_size = 3
    try:
        gc.Model.init(bad, 1)
    except gc.GeocellError:
        pass
    else:
        raise AssertionError("invalid config accepted")

    try:
        gc.load_database("/nonexistent/geocell/cells.gcdb")
    except gc.FileError:
        pass
    else:
        raise AssertionError("missing file accepted")


def main():
    test_geodesy()
    with tempfile.TemporaryDirectory() as tmp:
        test_synth_and_manifest(tmp)
        test_model_roundtrip(tmp)
        test_train_and_retrieve(tmp)
    test_errors()
    print("smoke: all checks passed")


if __name__ == "__main__":
    main()
