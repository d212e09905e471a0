#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geocell/raster.hpp"

namespace geocell {

// Dense row-major tensor of doubles. Training math runs in double
// precision; databases store single-precision copies.
struct Tensor {
  std::vector<std::int64_t> dims;
  std::vector<double> v;

  static Tensor zeros(std::vector<std::int64_t> dims);
  std::size_t size() const { return v.size(); }
  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
};

struct ModelConfig {
  std::int64_t image_size = 32;
  std::int64_t patch_size = 8;
  std::int64_t token_dim = 64;
  std::int64_t heads_h = 4;
  std::int64_t embed_dim = 64;
  std::int64_t n_lods = 4;
  bool lod_embedding = true;

  std::int64_t tokens_per_image() const {
    const std::int64_t g = image_size / patch_size;
    return g * g;
  }
  std::int64_t head_dim() const { return embed_dim / heads_h; }
  std::int64_t patch_dim() const { return 3 * patch_size * patch_size; }
};

// Throws ValidationError unless the config satisfies its divisibility and
// positivity requirements.
void check_config(const ModelConfig& config);

enum class Domain { kStreet, kAerial };

// Patch projection onto tokens plus a learned positional table.
struct EncoderParams {
  Tensor patch_w;  // [token_dim, 3*patch^2]
  Tensor patch_b;  // [token_dim]
  Tensor pos;      // [tokens_per_image, token_dim]
};

// Single-query multi-head attention pooling head.
struct PoolParams {
  Tensor q;   // [token_dim]
  Tensor wq;  // [heads, head_dim, token_dim]
  Tensor wk;  // [heads, head_dim, token_dim]
  Tensor wv;  // [heads, head_dim, token_dim]
  Tensor wo;  // [embed_dim, embed_dim]
};

// Two branches with identical shapes and independent weights. The aerial
// encoder is shared across LODs; aerial_lod holds the optional per-LOD
// additive embedding.
struct ModelParams {
  EncoderParams street;
  PoolParams street_pool;
  EncoderParams aerial;
  Tensor aerial_lod;  // [n_lods, token_dim], empty when disabled
  PoolParams aerial_pool;

  // Visits every tensor with its checkpoint name, in the canonical order
  // used for initialization, serialization and optimizer state.
  template <typename F>
  void for_each_tensor(F&& f) {
    f("street.patch_w", street.patch_w);
    f("street.patch_b", street.patch_b);
    f("street.pos", street.pos);
    f("street.q", street_pool.q);
    f("street.wq", street_pool.wq);
    f("street.wk", street_pool.wk);
    f("street.wv", street_pool.wv);
    f("street.wo", street_pool.wo);
    f("aerial.patch_w", aerial.patch_w);
    f("aerial.patch_b", aerial.patch_b);
    f("aerial.pos", aerial.pos);
    if (!aerial_lod.v.empty()) f("aerial.lod", aerial_lod);
    f("aerial.q", aerial_pool.q);
    f("aerial.wq", aerial_pool.wq);
    f("aerial.wk", aerial_pool.wk);
    f("aerial.wv", aerial_pool.wv);
    f("aerial.wo", aerial_pool.wo);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&f](const char* name, Tensor& t) {
          f(name, static_cast<const Tensor&>(t));
        });
  }
};

// Zero-valued parameters with the shapes the config dictates.
ModelParams zero_params(const ModelConfig& config);

// Deterministic initialization: projection matrices ~ U(-1/sqrt(fan_in),
// 1/sqrt(fan_in)), query tokens ~ N(0, 0.02), biases and tables zero.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

using Embedding = std::vector<double>;

// Tokens of one image: patch projection + positional embedding, plus the
// per-LOD term in the aerial domain when enabled. Row-major [tokens,
// token_dim]. lod_index is ignored for the street domain.
std::vector<double> encode_image(const ModelParams& params,
                                 const ModelConfig& config, Domain domain,
                                 const Image& image, std::int64_t lod_index);

// Pools a token sequence (row-major [count, token_dim]) into one unit-norm
// embedding via single-query multi-head attention.
Embedding mha_pool(const ModelParams& params, const ModelConfig& config,
                   Domain domain, const std::vector<double>& tokens,
                   std::size_t token_count);

Embedding embed_street(const ModelParams& params, const ModelConfig& config,
                       const Image& image);

// Embeds one cell from its n_lods aerial patches: shared encoder per LOD,
// token concatenation, one pooling pass.
Embedding embed_cell(const ModelParams& params, const ModelConfig& config,
                     const std::vector<Image>& lod_images);

struct BatchResult {
  double loss = 0.0;
  ModelParams grads;
  std::vector<Embedding> street_embs;
  std::vector<Embedding> cell_embs;
};

struct BatchMask;  // dataset.hpp

// Loss and analytic gradients of the full composition over one batch:
// embeddings, cosine similarities, symmetric masked contrastive loss with
// label smoothing. Throws NumericError naming the stage when a non-finite
// value appears.
BatchResult loss_and_grads(const ModelParams& params,
                           const ModelConfig& config,
                           const std::vector<Image>& street_batch,
                           const std::vector<std::vector<Image>>& cell_batch,
                           const BatchMask& mask, double tau, double eps);

// Checkpoint file: magic GCM1, config block, named tensors, with extra
// scalar metadata (render geometry and the like) preserved alongside.
struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::vector<std::pair<std::string, double>> extras;  // sorted by key
};

void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace geocell
