#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "geocell/training.hpp"

namespace geocell {

// Pool-size doubling schedule. min_iters_per_increase is derived from the
// batch size on first use.
struct MiningState {
  std::int64_t current_pool_size_s = 0;  // 0 until the first pool
  std::int64_t s_max = 1 << 14;
  std::int64_t iterations_since_increase = 0;
  std::int64_t min_iters_per_increase = 0;
};

// Pool size for the next scan: b at first, doubling whenever the previous
// pool was consumed after at least ceil(5000/b) iterations since the last
// increase, while b * 2^k stays within s_max.
std::int64_t next_pool_size(MiningState& state, std::int64_t b);

struct PoolSample {
  TrainingSample sample;
  Embedding query_emb;  // street branch
  Embedding ref_emb;    // cell branch
};

struct MiningPool {
  std::vector<PoolSample> samples;
};

// Pulls exactly s samples from the stream and embeds both sides with the
// given (frozen) parameters. Returns nullopt when the stream runs dry
// before s samples, which ends training.
std::optional<MiningPool> scan_pool(const ModelParams& params,
                                    const ModelConfig& config,
                                    const ImageSource& source,
                                    const std::vector<PhotoRecord>& photos,
                                    SampleStream& stream, std::int64_t s,
                                    int threads = 1);

// Greedy centroid batching: seed each batch with a uniformly random
// remaining sample, then b-1 times add the remaining sample whose reference
// embedding is most similar to the mean of the current members' query
// embeddings (recomputed after every addition, ties to the lowest pool
// index). Returns s/b batches that partition the pool.
std::vector<std::vector<PoolSample>> cluster_pool(const MiningPool& pool,
                                                  std::size_t b, Rng& rng);

// Batch producer for the training loop: scan -> cluster -> yield cycles
// with the doubling schedule. While s = b it bypasses embedding entirely
// and forwards stream batches unchanged.
class MinedBatcher {
 public:
  MinedBatcher(const ModelConfig& config, const ImageSource& source,
               const std::vector<PhotoRecord>& photos, SampleStream& stream,
               std::int64_t b, std::int64_t s_max, std::uint64_t seed,
               int threads = 1);

  // params are frozen per scanned pool; nullopt when the stream ends.
  std::optional<std::vector<TrainingSample>> next_batch(
      const ModelParams& params);

  std::int64_t pool_size() const { return state_.current_pool_size_s; }

 private:
  const ModelConfig& config_;
  const ImageSource& source_;
  const std::vector<PhotoRecord>& photos_;
  SampleStream& stream_;
  std::int64_t b_;
  int threads_;
  MiningState state_;
  Rng rng_;
  std::deque<std::vector<TrainingSample>> queue_;
};

}  // namespace geocell
