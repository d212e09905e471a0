#pragma once

#include <cstddef>
#include <vector>

#include "geocell/model.hpp"

namespace geocell::detail {

// Everything the attention-pooling backward pass needs from the forward
// pass. Layouts: tokens [count, token_dim]; k, v [heads, count, head_dim];
// qh [heads, head_dim]; w [heads, count].
struct PoolCache {
  std::size_t count = 0;
  std::vector<double> qh;
  std::vector<double> k;
  std::vector<double> v;
  std::vector<double> w;
  std::vector<double> ctx;   // [embed_dim]
  std::vector<double> y;     // [embed_dim], before normalization
  double norm = 0.0;
  Embedding e;
};

const PoolParams& pool_of(const ModelParams& params, Domain domain);
PoolParams& pool_of(ModelParams& params, Domain domain);
const EncoderParams& encoder_of(const ModelParams& params, Domain domain);
EncoderParams& encoder_of(ModelParams& params, Domain domain);

PoolCache pool_forward(const PoolParams& pool, const ModelConfig& config,
                       const std::vector<double>& tokens,
                       std::size_t token_count);

// Accumulates parameter gradients into pool_grads and writes token
// gradients ([count, token_dim], accumulated) into dtokens. tokens must be
// the forward input.
void pool_backward(const PoolParams& pool, const ModelConfig& config,
                   const PoolCache& cache, const std::vector<double>& tokens,
                   const std::vector<double>& de, PoolParams& pool_grads,
                   std::vector<double>& dtokens);

// Gradient flow through encode_image: token gradients into encoder (and
// optional LOD table) gradients. image must be the forward input.
void encode_backward(const ModelConfig& config, Domain domain,
                     const Image& image, std::int64_t lod_index,
                     const double* dtokens, ModelParams& grads);

}  // namespace geocell::detail
