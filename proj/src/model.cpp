#include "geocell/model.hpp"

#include <cmath>
#include <cstring>

#include "geocell/errors.hpp"
#include "geocell/rng.hpp"
#include "model_internal.hpp"

namespace geocell {

Tensor Tensor::zeros(std::vector<std::int64_t> dims) {
  Tensor t;
  std::size_t n = 1;
  for (const std::int64_t d : dims) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  t.dims = std::move(dims);
  t.v.assign(n, 0.0);
  return t;
}

void check_config(const ModelConfig& config) {
  if (config.image_size < 2 || config.patch_size < 1 ||
      config.token_dim < 1 || config.heads_h < 1 || config.embed_dim < 1 ||
      config.n_lods < 1)
    throw ValidationError("model config fields must be positive");
  if (config.image_size % config.patch_size != 0)
    throw ValidationError("image_size must be divisible by patch_size");
  if (config.embed_dim % config.heads_h != 0)
    throw ValidationError("embed_dim must be divisible by heads_h");
}

namespace detail {

const PoolParams& pool_of(const ModelParams& params, Domain domain) {
  return domain == Domain::kStreet ? params.street_pool : params.aerial_pool;
}
PoolParams& pool_of(ModelParams& params, Domain domain) {
  return domain == Domain::kStreet ? params.street_pool : params.aerial_pool;
}
const EncoderParams& encoder_of(const ModelParams& params, Domain domain) {
  return domain == Domain::kStreet ? params.street : params.aerial;
}
EncoderParams& encoder_of(ModelParams& params, Domain domain) {
  return domain == Domain::kStreet ? params.street : params.aerial;
}

PoolCache pool_forward(const PoolParams& pool, const ModelConfig& config,
                       const std::vector<double>& tokens,
                       std::size_t token_count) {
  if (token_count == 0) throw ShapeError("pooling needs at least one token");
  const std::size_t td = static_cast<std::size_t>(config.token_dim);
  const std::size_t heads = static_cast<std::size_t>(config.heads_h);
  const std::size_t hd = static_cast<std::size_t>(config.head_dim());
  const std::size_t ed = static_cast<std::size_t>(config.embed_dim);
  if (tokens.size() != token_count * td)
    throw ShapeError("token buffer does not match count * token_dim");

  PoolCache cache;
  cache.count = token_count;
  cache.qh.assign(heads * hd, 0.0);
  cache.k.assign(heads * token_count * hd, 0.0);
  cache.v.assign(heads * token_count * hd, 0.0);
  cache.w.assign(heads * token_count, 0.0);
  cache.ctx.assign(ed, 0.0);

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t h = 0; h < heads; ++h) {
    const double* wq = &pool.wq.v[h * hd * td];
    const double* wk = &pool.wk.v[h * hd * td];
    const double* wv = &pool.wv.v[h * hd * td];
    double* qh = &cache.qh[h * hd];
    for (std::size_t r = 0; r < hd; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < td; ++c) acc += wq[r * td + c] * pool.q.v[c];
      qh[r] = acc;
    }
    double* k = &cache.k[h * token_count * hd];
    double* v = &cache.v[h * token_count * hd];
    double* w = &cache.w[h * token_count];
    for (std::size_t i = 0; i < token_count; ++i) {
      const double* tok = &tokens[i * td];
      for (std::size_t r = 0; r < hd; ++r) {
        double ka = 0.0, va = 0.0;
        const double* wkr = &wk[r * td];
        const double* wvr = &wv[r * td];
        for (std::size_t c = 0; c < td; ++c) {
          ka += wkr[c] * tok[c];
          va += wvr[c] * tok[c];
        }
        k[i * hd + r] = ka;
        v[i * hd + r] = va;
      }
      double logit = 0.0;
      for (std::size_t r = 0; r < hd; ++r) logit += qh[r] * k[i * hd + r];
      w[i] = logit * scale;
    }
    // Stable softmax over the logits stored in w.
    double mx = w[0];
    for (std::size_t i = 1; i < token_count; ++i) mx = std::max(mx, w[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < token_count; ++i) {
      w[i] = std::exp(w[i] - mx);
      z += w[i];
    }
    for (std::size_t i = 0; i < token_count; ++i) w[i] /= z;

    double* ctx = &cache.ctx[h * hd];
    for (std::size_t i = 0; i < token_count; ++i) {
      for (std::size_t r = 0; r < hd; ++r) ctx[r] += w[i] * v[i * hd + r];
    }
  }

  cache.y.assign(ed, 0.0);
  for (std::size_t r = 0; r < ed; ++r) {
    double acc = 0.0;
    const double* row = &pool.wo.v[r * ed];
    for (std::size_t c = 0; c < ed; ++c) acc += row[c] * cache.ctx[c];
    cache.y[r] = acc;
  }
  double sq = 0.0;
  for (const double x : cache.y) sq += x * x;
  cache.norm = std::sqrt(sq);
  if (!std::isfinite(cache.norm) || cache.norm <= 0.0)
    throw NumericError("pooled embedding has zero or non-finite norm");
  cache.e.resize(ed);
  for (std::size_t r = 0; r < ed; ++r) cache.e[r] = cache.y[r] / cache.norm;
  return cache;
}

}  // namespace detail

ModelParams zero_params(const ModelConfig& config) {
  check_config(config);
  ModelParams p;
  const std::int64_t td = config.token_dim;
  const std::int64_t tokens = config.tokens_per_image();
  const auto encoder = [&] {
    EncoderParams e;
    e.patch_w = Tensor::zeros({td, config.patch_dim()});
    e.patch_b = Tensor::zeros({td});
    e.pos = Tensor::zeros({tokens, td});
    return e;
  };
  const auto pool = [&] {
    PoolParams q;
    q.q = Tensor::zeros({td});
    q.wq = Tensor::zeros({config.heads_h, config.head_dim(), td});
    q.wk = Tensor::zeros({config.heads_h, config.head_dim(), td});
    q.wv = Tensor::zeros({config.heads_h, config.head_dim(), td});
    q.wo = Tensor::zeros({config.embed_dim, config.embed_dim});
    return q;
  };
  p.street = encoder();
  p.street_pool = pool();
  p.aerial = encoder();
  if (config.lod_embedding) p.aerial_lod = Tensor::zeros({config.n_lods, td});
  p.aerial_pool = pool();
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params(config);
  Rng rng(seed);
  p.for_each_tensor([&](const std::string& name, Tensor& t) {
    const auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() &&
             name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".patch_w") || ends_with(".wq") || ends_with(".wk") ||
        ends_with(".wv") || ends_with(".wo")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.dims.back()));
      for (double& x : t.v) x = rng.uniform(-bound, bound);
    } else if (ends_with(".q")) {
      for (double& x : t.v) x = rng.normal(0.0, 0.02);
    }
    // Biases, positional tables and the LOD table stay zero.
  });
  return p;
}

std::vector<double> encode_image(const ModelParams& params,
                                 const ModelConfig& config, Domain domain,
                                 const Image& image, std::int64_t lod_index) {
  check_config(config);
  if (image.width != config.image_size || image.height != config.image_size)
    throw ShapeError("image does not match the configured size");
  if (image.values.size() !=
      static_cast<std::size_t>(image.width) * image.height * 3u)
    throw ShapeError("image buffer does not match its dimensions");

  const EncoderParams& enc = detail::encoder_of(params, domain);
  const std::size_t td = static_cast<std::size_t>(config.token_dim);
  const std::size_t ps = static_cast<std::size_t>(config.patch_size);
  const std::size_t grid = static_cast<std::size_t>(config.image_size) / ps;
  const std::size_t pd = static_cast<std::size_t>(config.patch_dim());
  const bool add_lod = domain == Domain::kAerial && config.lod_embedding;
  if (add_lod && (lod_index < 0 || lod_index >= config.n_lods))
    throw ShapeError("lod_index out of range");

  std::vector<double> tokens(grid * grid * td);
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
      double* out = &tokens[t * td];
      for (std::size_t r = 0; r < td; ++r) {
        double acc = enc.patch_b.v[r] + enc.pos.v[t * td + r];
        const double* row = &enc.patch_w.v[r * pd];
        for (std::size_t c = 0; c < pd; ++c) acc += row[c] * flat[c];
        if (add_lod)
          acc += params.aerial_lod.v[static_cast<std::size_t>(lod_index) * td +
                                     r];
        out[r] = acc;
      }
    }
  }
  return tokens;
}

Embedding mha_pool(const ModelParams& params, const ModelConfig& config,
                   Domain domain, const std::vector<double>& tokens,
                   std::size_t token_count) {
  check_config(config);
  return detail::pool_forward(detail::pool_of(params, domain), config, tokens,
                              token_count)
      .e;
}

Embedding embed_street(const ModelParams& params, const ModelConfig& config,
                       const Image& image) {
  const std::vector<double> tokens =
      encode_image(params, config, Domain::kStreet, image, 0);
  return mha_pool(params, config, Domain::kStreet, tokens,
                  static_cast<std::size_t>(config.tokens_per_image()));
}

Embedding embed_cell(const ModelParams& params, const ModelConfig& config,
                     const std::vector<Image>& lod_images) {
  check_config(config);
  if (lod_images.size() != static_cast<std::size_t>(config.n_lods))
    throw ShapeError("cell embedding needs exactly n_lods images");
  const std::size_t per = static_cast<std::size_t>(config.tokens_per_image());
  const std::size_t td = static_cast<std::size_t>(config.token_dim);
  std::vector<double> tokens;
  tokens.reserve(lod_images.size() * per * td);
  for (std::size_t lod = 0; lod < lod_images.size(); ++lod) {
    const std::vector<double> part =
        encode_image(params, config, Domain::kAerial, lod_images[lod],
                     static_cast<std::int64_t>(lod));
    tokens.insert(tokens.end(), part.begin(), part.end());
  }
  return mha_pool(params, config, Domain::kAerial, tokens,
                  lod_images.size() * per);
}

}  // namespace geocell
