#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <vector>

#include "geocell/errors.hpp"
#include "geocell/mining.hpp"
#include "geocell/parallel.hpp"
#include "geocell/training.hpp"

namespace geocell {

namespace {

constexpr std::uint64_t kStreamSalt = 0x7261696e5f731ull;
constexpr std::uint64_t kMinerSalt = 0x6d696e65725f31ull;

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir,
                                      std::int64_t iteration) {
  char name[64];
  std::snprintf(name, sizeof(name), "checkpoint_%06lld.gcm",
                static_cast<long long>(iteration));
  return out_dir / name;
}

void write_metrics_row(std::ofstream& out, std::int64_t iteration, double lr,
                       double loss, double recall, std::int64_t pool_size) {
  char row[160];
  std::snprintf(row, sizeof(row), "%lld,%.12g,%.9f,%.6f,%lld\n",
                static_cast<long long>(iteration), lr, loss, recall,
                static_cast<long long>(pool_size));
  out << row;
}

}  // namespace

TrainResult train(const std::vector<PhotoRecord>& photos,
                  const ImageSource& source, const ModelConfig& mconfig,
                  const TrainConfig& tconfig, const MiningConfig& mining,
                  const std::filesystem::path& out_dir) {
  check_config(mconfig);
  check_train_config(tconfig);
  if (photos.empty()) throw EmptyDatasetError("no photos to train on");
  if (mining.enabled && mining.s_max < tconfig.batch_b)
    throw ValidationError("s_max must be at least the batch size");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());

  RegionLayout dedup_layout;
  dedup_layout.cell_size_l = 5.0;
  const DedupPartition partition = dedup_partition(photos, dedup_layout);
  const std::size_t b = static_cast<std::size_t>(tconfig.batch_b);
  if (partition.size() < b)
    throw InsufficientDataError(
        "fewer distinct photo locations than the batch size");

  ModelParams params = init_params(mconfig, tconfig.seed);
  AdamState adam(mconfig);
  const int threads =
      tconfig.threads > 0 ? tconfig.threads : default_threads();

  MaskConfig mask_config = tconfig.mask;
  mask_config.cell_size_l = tconfig.cell_size_l;

  BatchSampleStream stream(photos, partition, b, tconfig.cell_size_l,
                           tconfig.l_delta, mix_seed(tconfig.seed, kStreamSalt));
  std::unique_ptr<MinedBatcher> miner;
  if (mining.enabled) {
    miner = std::make_unique<MinedBatcher>(
        mconfig, source, photos, stream, tconfig.batch_b, mining.s_max,
        mix_seed(tconfig.seed, kMinerSalt), threads);
  }

  const std::filesystem::path metrics_path = out_dir / "metrics.csv";
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  metrics << "iteration,lr,loss,batch_recall_at1,pool_size_s\n";

  TrainResult result;
  std::vector<TrainingSample> batch(b);
  std::vector<Image> streets(b);
  std::vector<std::vector<Image>> cells(b);
  std::vector<TrainingPair> pairs(b);

  // A batch whose mask leaves some row or column without negatives has an
  // undefined loss; pull the next batch instead, up to a bounded streak.
  constexpr int kMaxDegenerateStreak = 50;
  int degenerate_streak = 0;

  for (std::int64_t it = 0; it < tconfig.iterations; ++it) {
    std::optional<BatchResult> step;
    BatchMask mask;
    while (!step) {
      if (miner) {
        std::optional<std::vector<TrainingSample>> mined =
            miner->next_batch(params);
        if (!mined) break;
        batch = std::move(*mined);
      } else {
        bool dry = false;
        for (std::size_t i = 0; i < b; ++i) {
          if (!stream.next(&batch[i])) {
            dry = true;
            break;
          }
        }
        if (dry) break;
      }

      parallel_for(b, threads, [&](std::size_t i) {
        const TrainingSample& sample = batch[i];
        streets[i] =
            source.street(photos[sample.photo_index], sample.render_seed);
        cells[i] =
            source.cell(sample.pair.cell_center, sample.pair.cell_theta);
        pairs[i] = sample.pair;
      });

      mask = negative_mask(pairs, mask_config);
      try {
        step = loss_and_grads(params, mconfig, streets, cells, mask,
                              tconfig.temperature_tau,
                              tconfig.label_smoothing_eps);
      } catch (const DegenerateBatchError&) {
        if (++degenerate_streak >= kMaxDegenerateStreak) throw;
      }
    }
    if (!step) break;
    degenerate_streak = 0;
    const SimilarityMatrix sim =
        similarity_matrix(step->street_embs, step->cell_embs);
    const double recall = batch_recall_at1(sim, mask);
    const double lr = lr_at(it, tconfig);
    adam_step(params, step->grads, adam, lr);

    const std::int64_t pool_size =
        miner ? miner->pool_size() : tconfig.batch_b;
    write_metrics_row(metrics, it, lr, step->loss, recall, pool_size);

    result.iterations_run = it + 1;
    result.final_loss = step->loss;
    result.final_recall = recall;

    if ((it + 1) % tconfig.checkpoint_every == 0 &&
        it + 1 < tconfig.iterations) {
      save_checkpoint(checkpoint_path(out_dir, it + 1),
                      Checkpoint{mconfig, params, {}});
    }
  }

  metrics.close();
  if (!metrics) throw IoError("failed writing " + metrics_path.string());

  Checkpoint final_checkpoint;
  final_checkpoint.config = mconfig;
  final_checkpoint.params = params;
  final_checkpoint.extras = {{"cell_size_l", tconfig.cell_size_l},
                             {"d0", tconfig.d0},
                             {"l_delta", tconfig.l_delta}};
  const std::filesystem::path model_path = out_dir / "model.gcm";
  save_checkpoint(model_path, final_checkpoint);

  result.params = std::move(params);
  result.metrics_csv = metrics_path;
  result.checkpoint = model_path;
  return result;
}

}  // namespace geocell
