#include "geocell/training.hpp"

#include <algorithm>
#include <cmath>

#include "geocell/errors.hpp"

namespace geocell {

SimilarityMatrix similarity_matrix(const std::vector<Embedding>& street_embs,
                                   const std::vector<Embedding>& cell_embs) {
  if (street_embs.size() != cell_embs.size())
    throw ValidationError("embedding counts differ");
  const std::size_t b = street_embs.size();
  if (b == 0) throw ValidationError("empty embedding batch");

  const auto check_unit = [](const Embedding& e) {
    double sq = 0.0;
    for (const double x : e) sq += x * x;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-4)
      throw ValidationError("similarity inputs must be unit-norm");
  };
  const std::size_t dim = street_embs[0].size();
  for (const Embedding& e : street_embs) {
    if (e.size() != dim) throw ShapeError("embedding dimensions differ");
    check_unit(e);
  }
  for (const Embedding& e : cell_embs) {
    if (e.size() != dim) throw ShapeError("embedding dimensions differ");
    check_unit(e);
  }

  SimilarityMatrix s;
  s.b = b;
  s.v.resize(b * b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < dim; ++r)
        acc += street_embs[i][r] * cell_embs[j][r];
      s.at(i, j) = acc;
    }
  }
  return s;
}

namespace {

void check_loss_inputs(const SimilarityMatrix& s, const BatchMask& mask,
                       double tau, double eps) {
  if (s.b < 2) throw ValidationError("loss needs a batch of at least 2");
  if (mask.size != s.b) throw ShapeError("mask size does not match batch");
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  if (eps < 0.0 || eps >= 1.0)
    throw ValidationError("label smoothing must lie in [0, 1)");
  for (std::size_t i = 0; i < s.b; ++i) {
    if (mask.at(i, i))
      throw ValidationError("mask diagonal must be false");
  }
}

// One direction of the loss over logits row[j] = S(i, j)/tau with active
// negative set A: -(1-eps)*row[i] - eps/|A| * sum_A row[j] + logsumexp_A.
// grad_out accumulates d loss / d row[j] scaled by `weight` when non-null.
double row_loss(const SimilarityMatrix& s, const BatchMask& mask, double tau,
                double eps, std::size_t i, bool transposed, double weight,
                SimilarityMatrix* grad_out) {
  const std::size_t b = s.b;
  const auto sim = [&](std::size_t j) {
    return transposed ? s.at(j, i) : s.at(i, j);
  };
  const auto active = [&](std::size_t j) {
    return transposed ? mask.at(j, i) : mask.at(i, j);
  };

  double mx = -HUGE_VAL;
  std::size_t n_active = 0;
  for (std::size_t j = 0; j < b; ++j) {
    if (!active(j)) continue;
    ++n_active;
    mx = std::max(mx, sim(j) / tau);
  }
  if (n_active == 0)
    throw DegenerateBatchError(
        "no active negatives in " +
        std::string(transposed ? "column " : "row ") + std::to_string(i));

  double z = 0.0;
  double neg_mean = 0.0;
  for (std::size_t j = 0; j < b; ++j) {
    if (!active(j)) continue;
    const double logit = sim(j) / tau;
    z += std::exp(logit - mx);
    neg_mean += logit;
  }
  neg_mean /= static_cast<double>(n_active);
  const double lse = mx + std::log(z);
  const double loss = -(1.0 - eps) * sim(i) / tau - eps * neg_mean + lse;

  if (grad_out != nullptr) {
    const auto add = [&](std::size_t j, double g) {
      if (transposed)
        grad_out->at(j, i) += weight * g;
      else
        grad_out->at(i, j) += weight * g;
    };
    add(i, -(1.0 - eps) / tau);
    for (std::size_t j = 0; j < b; ++j) {
      if (!active(j)) continue;
      const double p = std::exp(sim(j) / tau - lse);
      add(j, (p - eps / static_cast<double>(n_active)) / tau);
    }
  }
  return loss;
}

}  // namespace

double dcl_loss(const SimilarityMatrix& s, const BatchMask& mask, double tau,
                double eps) {
  check_loss_inputs(s, mask, tau, eps);
  double total = 0.0;
  for (std::size_t i = 0; i < s.b; ++i) {
    total += row_loss(s, mask, tau, eps, i, false, 0.0, nullptr);
    total += row_loss(s, mask, tau, eps, i, true, 0.0, nullptr);
  }
  return total / (2.0 * static_cast<double>(s.b));
}

DclGrad dcl_loss_grad(const SimilarityMatrix& s, const BatchMask& mask,
                      double tau, double eps) {
  check_loss_inputs(s, mask, tau, eps);
  DclGrad out;
  out.grad.b = s.b;
  out.grad.v.assign(s.b * s.b, 0.0);
  const double weight = 1.0 / (2.0 * static_cast<double>(s.b));
  double total = 0.0;
  for (std::size_t i = 0; i < s.b; ++i) {
    total += row_loss(s, mask, tau, eps, i, false, weight, &out.grad);
    total += row_loss(s, mask, tau, eps, i, true, weight, &out.grad);
  }
  out.loss = total * weight;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss value");
  return out;
}

double batch_recall_at1(const SimilarityMatrix& s, const BatchMask& mask) {
  if (mask.size != s.b) throw ShapeError("mask size does not match batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < s.b; ++i) {
    bool top = true;
    for (std::size_t j = 0; j < s.b; ++j) {
      if (j == i || !mask.at(i, j)) continue;
      if (s.at(i, j) >= s.at(i, i)) {
        top = false;
        break;
      }
    }
    if (top) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(s.b);
}

void check_train_config(const TrainConfig& config) {
  if (config.batch_b < 2) throw ValidationError("batch_b must be at least 2");
  if (config.iterations < 1)
    throw ValidationError("iterations must be positive");
  if (!(config.lr_peak > 0.0)) throw ValidationError("lr_peak must be positive");
  if (config.warmup_iters < 0 || config.warmup_iters > config.iterations)
    throw ValidationError("warmup_iters must lie within the run");
  if (!(config.temperature_tau > 0.0))
    throw ValidationError("temperature must be positive");
  if (config.label_smoothing_eps < 0.0 || config.label_smoothing_eps >= 1.0)
    throw ValidationError("label smoothing must lie in [0, 1)");
  if (!(config.cell_size_l > 2.0 * config.l_delta))
    throw ValidationError("cell size must exceed twice the margin");
  if (!(config.d0 > 0.0)) throw ValidationError("d0 must be positive");
  if (config.checkpoint_every < 1)
    throw ValidationError("checkpoint_every must be positive");
}

double lr_at(std::int64_t iteration, const TrainConfig& config) {
  if (iteration < 0 || iteration >= config.iterations)
    throw RangeError("iteration outside the configured run");
  if (config.warmup_iters > 0 && iteration < config.warmup_iters) {
    return config.lr_peak * static_cast<double>(iteration) /
           static_cast<double>(config.warmup_iters);
  }
  const std::int64_t span = config.iterations - config.warmup_iters;
  if (span <= 0) return config.lr_peak;
  const double progress =
      static_cast<double>(iteration - config.warmup_iters) /
      static_cast<double>(span);
  return config.lr_peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               double lr) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  std::vector<Tensor*> p, m, v;
  std::vector<const Tensor*> g;
  params.for_each_tensor([&](const std::string&, Tensor& t) { p.push_back(&t); });
  grads.for_each_tensor(
      [&](const std::string&, const Tensor& t) { g.push_back(&t); });
  state.m.for_each_tensor([&](const std::string&, Tensor& t) { m.push_back(&t); });
  state.v.for_each_tensor([&](const std::string&, Tensor& t) { v.push_back(&t); });
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw ShapeError("optimizer state does not match the parameters");

  for (std::size_t k = 0; k < g.size(); ++k) {
    if (g[k]->v.size() != p[k]->v.size())
      throw ShapeError("gradient shapes do not match the parameters");
    for (const double x : g[k]->v) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient");
    }
  }

  ++state.t;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < p.size(); ++k) {
    Tensor& pt = *p[k];
    const Tensor& gt = *g[k];
    Tensor& mt = *m[k];
    Tensor& vt = *v[k];
    for (std::size_t i = 0; i < pt.v.size(); ++i) {
      mt.v[i] = kBeta1 * mt.v[i] + (1.0 - kBeta1) * gt.v[i];
      vt.v[i] = kBeta2 * vt.v[i] + (1.0 - kBeta2) * gt.v[i] * gt.v[i];
      pt.v[i] -= lr * (mt.v[i] / bc1) / (std::sqrt(vt.v[i] / bc2) + kEps);
    }
  }
}

BatchSampleStream::BatchSampleStream(const std::vector<PhotoRecord>& photos,
                                     const DedupPartition& partition,
                                     std::size_t b, double l, double l_delta,
                                     std::uint64_t seed,
                                     std::int64_t sample_limit)
    : photos_(photos),
      partition_(partition),
      b_(b),
      l_(l),
      l_delta_(l_delta),
      rng_(seed),
      remaining_(sample_limit) {
  if (b_ < 1) throw ValidationError("stream batch size must be positive");
}

bool BatchSampleStream::next(TrainingSample* out) {
  if (remaining_ == 0) return false;
  if (queue_.empty()) {
    Rng& rng = rng_;
    const std::vector<std::size_t> batch = sample_batch(rng, partition_, b_);
    for (const std::size_t idx : batch) {
      TrainingSample sample;
      sample.photo_index = idx;
      sample.pair = make_training_pair(photos_[idx], rng, l_, l_delta_);
      sample.render_seed = rng.next_u64();
      queue_.push_back(sample);
    }
  }
  *out = queue_.front();
  queue_.pop_front();
  if (remaining_ > 0) --remaining_;
  return true;
}

SynthImageSource::SynthImageSource(const SyntheticWorld& world,
                                   const GeoRaster& aerial,
                                   const ModelConfig& config, double d0)
    : world_(world),
      aerial_(aerial),
      n_lods_(config.n_lods),
      pixels_(config.image_size),
      d0_(d0) {
  world_.street_pixels = config.image_size;
}

Image SynthImageSource::street(const PhotoRecord& photo,
                               std::uint64_t render_seed) const {
  if (!photo.synthetic) {
    Image image = read_ppm(photo.image_path);
    if (image.width != pixels_ || image.height != pixels_)
      throw ShapeError("photo " + photo.id +
                       " does not match the configured image size");
    return image;
  }
  return synth_street_view(aerial_, world_, photo.pose_pos, photo.pose_heading,
                           render_seed);
}

std::vector<Image> SynthImageSource::cell(const GeoPoint& center,
                                          double theta) const {
  const std::vector<PatchSpec> specs = patch_specs_at(
      center, theta, static_cast<int>(n_lods_), d0_, pixels_);
  std::vector<Image> images;
  images.reserve(specs.size());
  for (const PatchSpec& spec : specs)
    images.push_back(extract_patch(aerial_, spec));
  return images;
}

double SynthImageSource::cell_coverage(const GeoPoint& center) const {
  const std::vector<PatchSpec> specs = patch_specs_at(
      center, 0.0, static_cast<int>(n_lods_), d0_, pixels_);
  return patch_coverage(aerial_, specs.front());
}

std::uint64_t photo_render_seed(std::uint64_t world_seed,
                                const std::string& photo_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : photo_id) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix_seed(world_seed, h);
}

}  // namespace geocell
