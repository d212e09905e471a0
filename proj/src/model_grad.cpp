#include <cmath>
#include <cstring>

#include "geocell/dataset.hpp"
#include "geocell/errors.hpp"
#include "geocell/model.hpp"
#include "geocell/training.hpp"
#include "model_internal.hpp"

namespace geocell {

namespace detail {

void pool_backward(const PoolParams& pool, const ModelConfig& config,
                   const PoolCache& cache, const std::vector<double>& tokens,
                   const std::vector<double>& de, PoolParams& pool_grads,
                   std::vector<double>& dtokens) {
  const std::size_t td = static_cast<std::size_t>(config.token_dim);
  const std::size_t heads = static_cast<std::size_t>(config.heads_h);
  const std::size_t hd = static_cast<std::size_t>(config.head_dim());
  const std::size_t ed = static_cast<std::size_t>(config.embed_dim);
  const std::size_t count = cache.count;
  dtokens.assign(count * td, 0.0);

  // Through the L2 normalization: e = y / |y|.
  double e_dot_de = 0.0;
  for (std::size_t r = 0; r < ed; ++r) e_dot_de += cache.e[r] * de[r];
  std::vector<double> dy(ed);
  for (std::size_t r = 0; r < ed; ++r)
    dy[r] = (de[r] - cache.e[r] * e_dot_de) / cache.norm;

  // Through the output projection: y = wo * ctx.
  std::vector<double> dctx(ed, 0.0);
  for (std::size_t r = 0; r < ed; ++r) {
    const double g = dy[r];
    double* wo_grad = &pool_grads.wo.v[r * ed];
    const double* wo_row = &pool.wo.v[r * ed];
    for (std::size_t c = 0; c < ed; ++c) {
      wo_grad[c] += g * cache.ctx[c];
      dctx[c] += wo_row[c] * g;
    }
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> dw(count);
  std::vector<double> da(count);
  std::vector<double> dqh(hd);
  std::vector<double> dk(hd);
  std::vector<double> dv(hd);
  std::vector<double> dq(td, 0.0);

  for (std::size_t h = 0; h < heads; ++h) {
    const double* dctx_h = &dctx[h * hd];
    const double* k = &cache.k[h * count * hd];
    const double* v = &cache.v[h * count * hd];
    const double* w = &cache.w[h * count];
    const double* qh = &cache.qh[h * hd];
    const double* wq = &pool.wq.v[h * hd * td];
    const double* wk = &pool.wk.v[h * hd * td];
    const double* wv = &pool.wv.v[h * hd * td];
    double* wq_grad = &pool_grads.wq.v[h * hd * td];
    double* wk_grad = &pool_grads.wk.v[h * hd * td];
    double* wv_grad = &pool_grads.wv.v[h * hd * td];

    // ctx_h = sum_i w_i v_i, then the softmax Jacobian onto the logits.
    double wdw = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      double acc = 0.0;
      for (std::size_t r = 0; r < hd; ++r) acc += v[i * hd + r] * dctx_h[r];
      dw[i] = acc;
      wdw += w[i] * acc;
    }
    for (std::size_t i = 0; i < count; ++i) da[i] = w[i] * (dw[i] - wdw);

    std::fill(dqh.begin(), dqh.end(), 0.0);
    for (std::size_t i = 0; i < count; ++i) {
      const double* tok = &tokens[i * td];
      double* dtok = &dtokens[i * td];
      const double a = da[i] * scale;
      for (std::size_t r = 0; r < hd; ++r) {
        dqh[r] += a * k[i * hd + r];
        dk[r] = a * qh[r];
        dv[r] = w[i] * dctx_h[r];
      }
      for (std::size_t r = 0; r < hd; ++r) {
        const double gk = dk[r];
        const double gv = dv[r];
        const double* wk_row = &wk[r * td];
        const double* wv_row = &wv[r * td];
        double* wk_grad_row = &wk_grad[r * td];
        double* wv_grad_row = &wv_grad[r * td];
        for (std::size_t c = 0; c < td; ++c) {
          wk_grad_row[c] += gk * tok[c];
          wv_grad_row[c] += gv * tok[c];
          dtok[c] += wk_row[c] * gk + wv_row[c] * gv;
        }
      }
    }

    // qh = wq_h * q.
    for (std::size_t r = 0; r < hd; ++r) {
      const double g = dqh[r];
      const double* wq_row = &wq[r * td];
      double* wq_grad_row = &wq_grad[r * td];
      for (std::size_t c = 0; c < td; ++c) {
        wq_grad_row[c] += g * pool.q.v[c];
        dq[c] += wq_row[c] * g;
      }
    }
  }

  for (std::size_t c = 0; c < td; ++c) pool_grads.q.v[c] += dq[c];
}

void encode_backward(const ModelConfig& config, Domain domain,
                     const Image& image, std::int64_t lod_index,
                     const double* dtokens, ModelParams& grads) {
  EncoderParams& enc_grads = encoder_of(grads, domain);
  const std::size_t td = static_cast<std::size_t>(config.token_dim);
  const std::size_t ps = static_cast<std::size_t>(config.patch_size);
  const std::size_t grid = static_cast<std::size_t>(config.image_size) / ps;
  const std::size_t pd = static_cast<std::size_t>(config.patch_dim());
  const bool add_lod = domain == Domain::kAerial && config.lod_embedding &&
                       !grads.aerial_lod.v.empty();

  std::vector<double> flat(pd);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const std::size_t t = gy * grid + gx;
      std::size_t at = 0;
      for (std::size_t py = 0; py < ps; ++py) {
        for (std::size_t px = 0; px < ps; ++px) {
          for (int c = 0; c < 3; ++c) {
            flat[at++] = image.at(static_cast<std::int64_t>(gx * ps + px),
                                  static_cast<std::int64_t>(gy * ps + py), c);
          }
        }
      }
      const double* dtok = &dtokens[t * td];
      for (std::size_t r = 0; r < td; ++r) {
        const double g = dtok[r];
        enc_grads.patch_b.v[r] += g;
        enc_grads.pos.v[t * td + r] += g;
        if (add_lod)
          grads.aerial_lod
              .v[static_cast<std::size_t>(lod_index) * td + r] += g;
        double* w_grad = &enc_grads.patch_w.v[r * pd];
        for (std::size_t c = 0; c < pd; ++c) w_grad[c] += g * flat[c];
      }
    }
  }
}

}  // namespace detail

BatchResult loss_and_grads(const ModelParams& params,
                           const ModelConfig& config,
                           const std::vector<Image>& street_batch,
                           const std::vector<std::vector<Image>>& cell_batch,
                           const BatchMask& mask, double tau, double eps) {
  check_config(config);
  const std::size_t b = street_batch.size();
  if (b < 2) throw ValidationError("loss needs a batch of at least 2");
  if (cell_batch.size() != b)
    throw ShapeError("street and cell batches differ in size");
  if (mask.size != b) throw ShapeError("mask size does not match the batch");

  const std::size_t per = static_cast<std::size_t>(config.tokens_per_image());
  const std::size_t td = static_cast<std::size_t>(config.token_dim);
  const std::size_t ed = static_cast<std::size_t>(config.embed_dim);
  const std::size_t n = static_cast<std::size_t>(config.n_lods);

  std::vector<std::vector<double>> street_tokens(b);
  std::vector<std::vector<double>> cell_tokens(b);
  std::vector<detail::PoolCache> street_cache(b);
  std::vector<detail::PoolCache> cell_cache(b);

  BatchResult result;
  result.street_embs.resize(b);
  result.cell_embs.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    street_tokens[i] =
        encode_image(params, config, Domain::kStreet, street_batch[i], 0);
    street_cache[i] = detail::pool_forward(
        detail::pool_of(params, Domain::kStreet), config, street_tokens[i],
        per);
    result.street_embs[i] = street_cache[i].e;

    if (cell_batch[i].size() != n)
      throw ShapeError("cell image stack must hold n_lods images");
    cell_tokens[i].reserve(n * per * td);
    for (std::size_t lod = 0; lod < n; ++lod) {
      const std::vector<double> part =
          encode_image(params, config, Domain::kAerial, cell_batch[i][lod],
                       static_cast<std::int64_t>(lod));
      cell_tokens[i].insert(cell_tokens[i].end(), part.begin(), part.end());
    }
    cell_cache[i] = detail::pool_forward(
        detail::pool_of(params, Domain::kAerial), config, cell_tokens[i],
        n * per);
    result.cell_embs[i] = cell_cache[i].e;
  }

  const SimilarityMatrix s =
      similarity_matrix(result.street_embs, result.cell_embs);
  const DclGrad dg = dcl_loss_grad(s, mask, tau, eps);
  result.loss = dg.loss;

  // Loss gradients into the embeddings.
  std::vector<std::vector<double>> de_street(b, std::vector<double>(ed, 0.0));
  std::vector<std::vector<double>> de_cell(b, std::vector<double>(ed, 0.0));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double g = dg.grad.at(i, j);
      if (g == 0.0) continue;
      for (std::size_t r = 0; r < ed; ++r) {
        de_street[i][r] += g * result.cell_embs[j][r];
        de_cell[j][r] += g * result.street_embs[i][r];
      }
    }
  }

  result.grads = zero_params(config);
  std::vector<double> dtokens;
  for (std::size_t i = 0; i < b; ++i) {
    detail::pool_backward(detail::pool_of(params, Domain::kStreet), config,
                          street_cache[i], street_tokens[i], de_street[i],
                          detail::pool_of(result.grads, Domain::kStreet),
                          dtokens);
    detail::encode_backward(config, Domain::kStreet, street_batch[i], 0,
                            dtokens.data(), result.grads);

    detail::pool_backward(detail::pool_of(params, Domain::kAerial), config,
                          cell_cache[i], cell_tokens[i], de_cell[i],
                          detail::pool_of(result.grads, Domain::kAerial),
                          dtokens);
    for (std::size_t lod = 0; lod < n; ++lod) {
      detail::encode_backward(config, Domain::kAerial, cell_batch[i][lod],
                              static_cast<std::int64_t>(lod),
                              dtokens.data() + lod * per * td, result.grads);
    }
  }

  if (!std::isfinite(result.loss)) throw NumericError("non-finite loss value");
  result.grads.for_each_tensor([](const std::string& name, Tensor& t) {
    for (const double x : t.v) {
      if (!std::isfinite(x))
        throw NumericError("non-finite gradient in " + name);
    }
  });
  return result;
}

}  // namespace geocell
