#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <vector>

#include "geocell/dataset.hpp"
#include "geocell/model.hpp"
#include "geocell/synth.hpp"

namespace geocell {

// Cosine similarities between b street embeddings (rows) and b cell
// embeddings (columns).
struct SimilarityMatrix {
  std::size_t b = 0;
  std::vector<double> v;  // row-major

  double at(std::size_t i, std::size_t j) const { return v[i * b + j]; }
  double& at(std::size_t i, std::size_t j) { return v[i * b + j]; }
};

// Throws ValidationError when counts differ or any input deviates from unit
// norm by more than 1e-4.
SimilarityMatrix similarity_matrix(const std::vector<Embedding>& street_embs,
                                   const std::vector<Embedding>& cell_embs);

// Symmetric masked contrastive loss with label smoothing. Per row, the
// target puts 1-eps on the positive and eps/#active on active negatives,
// scored against logits S/tau whose log-partition runs over the active
// negatives only (the positive is excluded). The reverse direction uses the
// transposed matrix and mask; the result is the mean over both directions.
// Throws DegenerateBatchError when a row or column has no active negative.
double dcl_loss(const SimilarityMatrix& s, const BatchMask& mask, double tau,
                double eps);

struct DclGrad {
  double loss = 0.0;
  SimilarityMatrix grad;
};
DclGrad dcl_loss_grad(const SimilarityMatrix& s, const BatchMask& mask,
                      double tau, double eps);

// Fraction of rows whose positive outranks every active negative.
double batch_recall_at1(const SimilarityMatrix& s, const BatchMask& mask);

struct TrainConfig {
  std::int64_t batch_b = 8;
  std::int64_t iterations = 5000;
  double lr_peak = 1e-3;
  std::int64_t warmup_iters = 1000;
  double temperature_tau = 1.0 / 36.0;
  double label_smoothing_eps = 0.1;
  std::uint64_t seed = 1;

  double cell_size_l = 30.0;
  double l_delta = 5.0;
  double d0 = 76.8;
  MaskConfig mask;
  std::int64_t checkpoint_every = 1000;
  int threads = 0;  // 0 = hardware concurrency
};

void check_train_config(const TrainConfig& config);

// Linear warmup to lr_peak, then half-cosine decay to zero over the
// remaining iterations.
double lr_at(std::int64_t iteration, const TrainConfig& config);

struct AdamState {
  std::int64_t t = 0;
  ModelParams m;
  ModelParams v;

  explicit AdamState(const ModelConfig& config)
      : m(zero_params(config)), v(zero_params(config)) {}
};

// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8, bias correction),
// in place. Throws NumericError on non-finite gradients.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               double lr);

// One fully specified training example: a photo, its augmented positive
// cell, and the seed that reproduces the photo's rendered pixels.
struct TrainingSample {
  std::size_t photo_index = 0;
  TrainingPair pair;
  std::uint64_t render_seed = 0;
};

class SampleStream {
 public:
  virtual ~SampleStream() = default;
  // False once the stream is exhausted.
  virtual bool next(TrainingSample* out) = 0;
};

// Endless stream over a photo partition: every b consecutive samples form
// one deduplicated batch with fresh pose augmentation. An optional sample
// limit makes the stream finite.
class BatchSampleStream : public SampleStream {
 public:
  BatchSampleStream(const std::vector<PhotoRecord>& photos,
                    const DedupPartition& partition, std::size_t b, double l,
                    double l_delta, std::uint64_t seed,
                    std::int64_t sample_limit = -1);
  bool next(TrainingSample* out) override;

 private:
  const std::vector<PhotoRecord>& photos_;
  const DedupPartition& partition_;
  std::size_t b_;
  double l_;
  double l_delta_;
  Rng rng_;
  std::int64_t remaining_;
  std::deque<TrainingSample> queue_;
};

// Produces the model-ready images of a sample: the photo's street view and
// the oriented LOD patch stack of a cell window.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Image street(const PhotoRecord& photo,
                       std::uint64_t render_seed) const = 0;
  virtual std::vector<Image> cell(const GeoPoint& center,
                                  double theta) const = 0;
  // Fraction of the finest north-up patch backed by data, when the source
  // can tell; defaults to full coverage.
  virtual double cell_coverage(const GeoPoint& center) const {
    (void)center;
    return 1.0;
  }
};

// Renders from a synthetic world raster. File-backed photos are read from
// disk (PPM) and must match the configured image size.
class SynthImageSource : public ImageSource {
 public:
  SynthImageSource(const SyntheticWorld& world, const GeoRaster& aerial,
                   const ModelConfig& config, double d0);
  Image street(const PhotoRecord& photo,
               std::uint64_t render_seed) const override;
  std::vector<Image> cell(const GeoPoint& center, double theta) const override;
  double cell_coverage(const GeoPoint& center) const override;

 private:
  SyntheticWorld world_;
  const GeoRaster& aerial_;
  std::int64_t n_lods_;
  std::int64_t pixels_;
  double d0_;
};

// Stable per-photo render seed for evaluation-time embedding.
std::uint64_t photo_render_seed(std::uint64_t world_seed,
                                const std::string& photo_id);

struct MiningConfig {
  bool enabled = false;
  std::int64_t s_max = 1 << 14;
};

struct TrainResult {
  ModelParams params;
  std::int64_t iterations_run = 0;
  double final_loss = 0.0;
  double final_recall = 0.0;
  std::filesystem::path metrics_csv;
  std::filesystem::path checkpoint;
};

// The full loop: batches (random or mined), rendering, loss, Adam, metrics
// CSV (iteration,lr,loss,batch_recall_at1,pool_size_s) and periodic
// checkpoints under out_dir.
TrainResult train(const std::vector<PhotoRecord>& photos,
                  const ImageSource& source, const ModelConfig& mconfig,
                  const TrainConfig& tconfig, const MiningConfig& mining,
                  const std::filesystem::path& out_dir);

}  // namespace geocell
