#include "geocell/mining.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "geocell/errors.hpp"
#include "geocell/rng.hpp"
#include "geocell/synth.hpp"

using namespace geocell;

namespace {

SyntheticWorld pool_world(std::uint64_t seed = 9) {
  SyntheticWorld w;
  w.seed = seed;
  w.region_min = {deg_to_rad(42.0), deg_to_rad(-71.0)};
  w.region_max.lat = w.region_min.lat + 500.0 / kDefaultEarthRadiusM;
  w.region_max.lon =
      w.region_min.lon +
      500.0 / (kDefaultEarthRadiusM * std::cos(w.region_max.lat));
  return w;
}

ModelConfig pool_model() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.token_dim = 8;
  c.heads_h = 2;
  c.embed_dim = 8;
  c.n_lods = 2;
  return c;
}

Embedding axis(std::size_t dim, std::size_t i, double jitter) {
  Embedding e(dim, 0.0);
  e[i] = 1.0;
  e[(i + 1) % dim] = jitter;
  const double norm = std::sqrt(1.0 + jitter * jitter);
  for (double& v : e) v /= norm;
  return e;
}

MiningPool blob_pool(std::size_t per_blob, std::uint64_t seed) {
  Rng rng(seed);
  MiningPool pool;
  for (std::size_t k = 0; k < 2 * per_blob; ++k) {
    PoolSample s;
    s.sample.photo_index = k;
    const std::size_t blob = k % 2;  // interleaved so index order can't help
    s.query_emb = axis(8, blob * 4, rng.uniform(-0.05, 0.05));
    s.ref_emb = axis(8, blob * 4, rng.uniform(-0.05, 0.05));
    pool.samples.push_back(std::move(s));
  }
  return pool;
}

}  // namespace

TEST_CASE("the pool size schedule starts at b and doubles under a cap") {
  MiningState state;
  state.s_max = 1 << 14;
  const std::int64_t b = 30;

  CHECK(next_pool_size(state, b) == 30);
  CHECK(state.min_iters_per_increase == 167);  // ceil(5000/30)

  // Consuming a pool too quickly keeps the size.
  state.iterations_since_increase = 166;
  CHECK(next_pool_size(state, b) == 30);

  // After enough iterations the size doubles, repeatedly, until another
  // doubling would pass s_max: 30 * 2^9 = 15360 is the last admissible.
  std::int64_t expected = 30;
  while (expected * 2 <= state.s_max) {
    state.iterations_since_increase = 167;
    expected *= 2;
    CHECK(next_pool_size(state, b) == expected);
  }
  CHECK(expected == 15360);
  state.iterations_since_increase = 100000;
  CHECK(next_pool_size(state, b) == 15360);

  // A power-of-two batch reaches the cap exactly.
  MiningState pow2;
  pow2.s_max = 64;
  CHECK(next_pool_size(pow2, 16) == 16);
  pow2.iterations_since_increase = pow2.min_iters_per_increase;
  CHECK(next_pool_size(pow2, 16) == 32);
  pow2.iterations_since_increase = pow2.min_iters_per_increase;
  CHECK(next_pool_size(pow2, 16) == 64);
  pow2.iterations_since_increase = pow2.min_iters_per_increase;
  CHECK(next_pool_size(pow2, 16) == 64);
}

TEST_CASE("clustering partitions the pool exactly") {
  Rng source(31);
  MiningPool pool;
  for (std::size_t k = 0; k < 24; ++k) {
    PoolSample s;
    s.sample.photo_index = k;
    Embedding q(8), r(8);
    double qn = 0.0, rn = 0.0;
    for (std::size_t d = 0; d < 8; ++d) {
      q[d] = source.uniform(-1.0, 1.0);
      r[d] = source.uniform(-1.0, 1.0);
      qn += q[d] * q[d];
      rn += r[d] * r[d];
    }
    for (std::size_t d = 0; d < 8; ++d) {
      q[d] /= std::sqrt(qn);
      r[d] /= std::sqrt(rn);
    }
    s.query_emb = q;
    s.ref_emb = r;
    pool.samples.push_back(std::move(s));
  }

  Rng rng(7);
  const auto batches = cluster_pool(pool, 6, rng);
  REQUIRE(batches.size() == 4);
  std::set<std::size_t> seen;
  for (const auto& batch : batches) {
    REQUIRE(batch.size() == 6);
    for (const auto& s : batch) seen.insert(s.sample.photo_index);
  }
  CHECK(seen.size() == 24);

  Rng again(7);
  const auto rerun = cluster_pool(pool, 6, again);
  for (std::size_t i = 0; i < batches.size(); ++i)
    for (std::size_t j = 0; j < 6; ++j)
      CHECK(rerun[i][j].sample.photo_index ==
            batches[i][j].sample.photo_index);

  Rng bad(1);
  CHECK_THROWS_AS(cluster_pool(pool, 7, bad), ValidationError);
}

TEST_CASE("clustering groups similar embeddings together") {
  // Two nearly orthogonal blobs of 8: batches of 8 should be blob-pure.
  int pure_runs = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const MiningPool pool = blob_pool(8, 1000 + seed);
    Rng rng(seed);
    const auto batches = cluster_pool(pool, 8, rng);
    bool pure = true;
    for (const auto& batch : batches) {
      std::set<std::size_t> blobs;
      for (const auto& s : batch) blobs.insert(s.sample.photo_index % 2);
      if (blobs.size() != 1) pure = false;
    }
    if (pure) ++pure_runs;
  }
  CHECK(pure_runs >= 99);
}

TEST_CASE("identical embeddings fall back to pool order") {
  MiningPool pool;
  for (std::size_t k = 0; k < 8; ++k) {
    PoolSample s;
    s.sample.photo_index = k;
    s.query_emb = axis(4, 0, 0.0);
    s.ref_emb = axis(4, 0, 0.0);
    pool.samples.push_back(std::move(s));
  }
  Rng rng(3);
  const auto batches = cluster_pool(pool, 4, rng);
  REQUIRE(batches.size() == 2);
  // After the random seed member, ties resolve to the lowest remaining
  // index, so each batch is sorted past its first element.
  for (const auto& batch : batches)
    CHECK(std::is_sorted(batch.begin() + 1, batch.end(),
                         [](const PoolSample& a, const PoolSample& b) {
                           return a.sample.photo_index < b.sample.photo_index;
                         }));
}

TEST_CASE("scanning embeds pool samples with the frozen model") {
  const SyntheticWorld world = pool_world();
  const GeoRaster aerial = synth_aerial(world);
  const ModelConfig config = pool_model();
  const SynthImageSource source(world, aerial, config, 76.8);
  const auto photos = scatter_photos(world, 12, "m_", 4);
  const DedupPartition partition = dedup_partition(photos, RegionLayout{});
  const ModelParams params = init_params(config, 11);

  BatchSampleStream stream(photos, partition, 3, 30.0, 5.0, 17);
  const auto pool =
      scan_pool(params, config, source, photos, stream, 6, 1);
  REQUIRE(pool.has_value());
  REQUIRE(pool->samples.size() == 6);

  const PoolSample& probe = pool->samples[2];
  const Image street =
      source.street(photos[probe.sample.photo_index], probe.sample.render_seed);
  const Embedding expected = embed_street(params, config, street);
  REQUIRE(probe.query_emb.size() == expected.size());
  for (std::size_t d = 0; d < expected.size(); ++d)
    CHECK(probe.query_emb[d] == doctest::Approx(expected[d]).epsilon(1e-12));
  const std::vector<Image> cell =
      source.cell(probe.sample.pair.cell_center, probe.sample.pair.cell_theta);
  const Embedding ref = embed_cell(params, config, cell);
  for (std::size_t d = 0; d < ref.size(); ++d)
    CHECK(probe.ref_emb[d] == doctest::Approx(ref[d]).epsilon(1e-12));

  BatchSampleStream dry(photos, partition, 3, 30.0, 5.0, 17, 3);
  CHECK(!scan_pool(params, config, source, photos, dry, 6, 1).has_value());
}

TEST_CASE("a batcher with pool size b forwards the stream unchanged") {
  const SyntheticWorld world = pool_world();
  const GeoRaster aerial = synth_aerial(world);
  const ModelConfig config = pool_model();
  const SynthImageSource source(world, aerial, config, 76.8);
  const auto photos = scatter_photos(world, 12, "m_", 4);
  const DedupPartition partition = dedup_partition(photos, RegionLayout{});
  const ModelParams params = init_params(config, 11);

  BatchSampleStream mined_stream(photos, partition, 3, 30.0, 5.0, 23);
  BatchSampleStream plain_stream(photos, partition, 3, 30.0, 5.0, 23);
  MinedBatcher batcher(config, source, photos, mined_stream, 3, 3, 99, 1);

  for (int i = 0; i < 5; ++i) {
    const auto batch = batcher.next_batch(params);
    REQUIRE(batch.has_value());
    REQUIRE(batch->size() == 3);
    CHECK(batcher.pool_size() == 3);
    for (const auto& sample : *batch) {
      TrainingSample direct;
      REQUIRE(plain_stream.next(&direct));
      CHECK(sample.photo_index == direct.photo_index);
      CHECK(sample.render_seed == direct.render_seed);
      CHECK(sample.pair.cell_theta == direct.pair.cell_theta);
      CHECK(sample.pair.offset_t == direct.pair.offset_t);
    }
  }
}

TEST_CASE("a larger pool still yields full partitioned batches") {
  const SyntheticWorld world = pool_world();
  const GeoRaster aerial = synth_aerial(world);
  const ModelConfig config = pool_model();
  const SynthImageSource source(world, aerial, config, 76.8);
  const auto photos = scatter_photos(world, 200, "m_", 4);
  const DedupPartition partition = dedup_partition(photos, RegionLayout{});
  REQUIRE(partition.size() >= 50);
  const ModelParams params = init_params(config, 11);

  // b = 50 keeps the iteration floor at ceil(5000/50) = 100, so 330
  // batches walk the schedule 50 -> 100 -> 200 with s_max = 200.
  BatchSampleStream stream(photos, partition, 50, 30.0, 5.0, 23);
  MinedBatcher batcher(config, source, photos, stream, 50, 200, 99, 1);

  std::int64_t max_pool = 0;
  for (int i = 0; i < 330; ++i) {
    const auto batch = batcher.next_batch(params);
    REQUIRE(batch.has_value());
    REQUIRE(batch->size() == 50);
    max_pool = std::max(max_pool, batcher.pool_size());
  }
  CHECK(max_pool == 200);
}
