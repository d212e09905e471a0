#include "geocell/mining.hpp"

#include <algorithm>
#include <cmath>

#include "geocell/errors.hpp"
#include "geocell/parallel.hpp"

namespace geocell {

namespace {
constexpr std::int64_t kScheduleIterations = 5000;
}

std::int64_t next_pool_size(MiningState& state, std::int64_t b) {
  if (b < 1) throw ValidationError("batch size must be positive");
  if (state.s_max < b) throw ValidationError("s_max must be at least b");
  if (state.current_pool_size_s < b) {
    state.current_pool_size_s = b;
    state.iterations_since_increase = 0;
    state.min_iters_per_increase = (kScheduleIterations + b - 1) / b;
    return b;
  }
  if (state.iterations_since_increase >= state.min_iters_per_increase &&
      state.current_pool_size_s * 2 <= state.s_max) {
    state.current_pool_size_s *= 2;
    state.iterations_since_increase = 0;
  }
  return state.current_pool_size_s;
}

std::optional<MiningPool> scan_pool(const ModelParams& params,
                                    const ModelConfig& config,
                                    const ImageSource& source,
                                    const std::vector<PhotoRecord>& photos,
                                    SampleStream& stream, std::int64_t s,
                                    int threads) {
  if (s < 1) throw ValidationError("pool size must be positive");

  std::vector<TrainingSample> samples;
  samples.reserve(static_cast<std::size_t>(s));
  for (std::int64_t i = 0; i < s; ++i) {
    TrainingSample sample;
    if (!stream.next(&sample)) return std::nullopt;
    samples.push_back(sample);
  }

  MiningPool pool;
  pool.samples.resize(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const TrainingSample& sample = samples[i];
    const PhotoRecord& photo = photos[sample.photo_index];
    PoolSample out;
    out.sample = sample;
    out.query_emb = embed_street(params, config,
                                 source.street(photo, sample.render_seed));
    out.ref_emb = embed_cell(
        params, config,
        source.cell(sample.pair.cell_center, sample.pair.cell_theta));
    pool.samples[i] = std::move(out);
  });
  return pool;
}

std::vector<std::vector<PoolSample>> cluster_pool(const MiningPool& pool,
                                                  std::size_t b, Rng& rng) {
  const std::size_t s = pool.samples.size();
  if (b < 1) throw ValidationError("batch size must be positive");
  if (s == 0 || s % b != 0)
    throw ValidationError("pool size must be a positive multiple of b");
  const std::size_t dim = pool.samples[0].query_emb.size();

  std::vector<bool> taken(s, false);
  std::vector<std::vector<PoolSample>> batches;
  batches.reserve(s / b);
  std::size_t left = s;

  while (left > 0) {
    // Uniform seed among the remaining samples.
    std::size_t nth = static_cast<std::size_t>(rng.uniform_index(left));
    std::size_t seed = s;
    for (std::size_t i = 0; i < s; ++i) {
      if (taken[i]) continue;
      if (nth == 0) {
        seed = i;
        break;
      }
      --nth;
    }

    std::vector<PoolSample> batch;
    batch.reserve(b);
    std::vector<double> centroid(dim, 0.0);
    const auto add_member = [&](std::size_t idx) {
      taken[idx] = true;
      --left;
      const Embedding& q = pool.samples[idx].query_emb;
      for (std::size_t r = 0; r < dim; ++r) centroid[r] += q[r];
      batch.push_back(pool.samples[idx]);
    };
    add_member(seed);

    for (std::size_t step = 1; step < b; ++step) {
      // Cosine against the centroid orders like the plain dot product,
      // since the positive normalizer is shared by all candidates.
      double best = -HUGE_VAL;
      std::size_t best_idx = s;
      for (std::size_t i = 0; i < s; ++i) {
        if (taken[i]) continue;
        const Embedding& ref = pool.samples[i].ref_emb;
        double dot = 0.0;
        for (std::size_t r = 0; r < dim; ++r) dot += ref[r] * centroid[r];
        if (dot > best) {
          best = dot;
          best_idx = i;
        }
      }
      add_member(best_idx);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

MinedBatcher::MinedBatcher(const ModelConfig& config, const ImageSource& source,
                           const std::vector<PhotoRecord>& photos,
                           SampleStream& stream, std::int64_t b,
                           std::int64_t s_max, std::uint64_t seed, int threads)
    : config_(config),
      source_(source),
      photos_(photos),
      stream_(stream),
      b_(b),
      threads_(threads),
      rng_(seed) {
  if (b_ < 1) throw ValidationError("batch size must be positive");
  state_.s_max = s_max;
}

std::optional<std::vector<TrainingSample>> MinedBatcher::next_batch(
    const ModelParams& params) {
  if (queue_.empty()) {
    const std::int64_t s = next_pool_size(state_, b_);
    if (s == b_) {
      // Degenerate pools reduce to plain stream batches; skip the embedding
      // work entirely.
      std::vector<TrainingSample> batch(static_cast<std::size_t>(b_));
      for (auto& sample : batch) {
        if (!stream_.next(&sample)) return std::nullopt;
      }
      queue_.push_back(std::move(batch));
    } else {
      const std::optional<MiningPool> pool = scan_pool(
          params, config_, source_, photos_, stream_, s, threads_);
      if (!pool) return std::nullopt;
      for (std::vector<PoolSample>& cluster :
           cluster_pool(*pool, static_cast<std::size_t>(b_), rng_)) {
        std::vector<TrainingSample> batch;
        batch.reserve(cluster.size());
        for (const PoolSample& member : cluster)
          batch.push_back(member.sample);
        queue_.push_back(std::move(batch));
      }
    }
  }
  std::vector<TrainingSample> batch = std::move(queue_.front());
  queue_.pop_front();
  ++state_.iterations_since_increase;
  return batch;
}

}  // namespace geocell
