#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "geocell/dataset.hpp"
#include "geocell/model.hpp"
#include "geocell/rng.hpp"

namespace geocell {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t entries_checked = 0;
};

// Compares every analytic gradient entry of the model+loss composition
// against a central difference on a random batch. Relative error uses an
// absolute floor so near-zero gradients are judged by absolute deviation.
inline GradCheckReport gradcheck_model(const ModelConfig& config,
                                       std::size_t b, std::uint64_t seed,
                                       double tau, double eps,
                                       double step = 1e-5) {
  Rng rng(seed);
  auto random_image = [&](std::int64_t size) {
    Image im = Image::zeros(size, size);
    for (float& v : im.values) v = static_cast<float>(rng.uniform());
    return im;
  };

  std::vector<Image> street_batch;
  std::vector<std::vector<Image>> cell_batch;
  for (std::size_t i = 0; i < b; ++i) {
    street_batch.push_back(random_image(config.image_size));
    std::vector<Image> lods;
    for (std::int64_t l = 0; l < config.n_lods; ++l)
      lods.push_back(random_image(config.image_size));
    cell_batch.push_back(std::move(lods));
  }

  BatchMask mask;
  mask.size = b;
  mask.flags.assign(b * b, 1);
  for (std::size_t i = 0; i < b; ++i) mask.flags[i * b + i] = 0;

  ModelParams params = init_params(config, mix_seed(seed, 17));
  const BatchResult base =
      loss_and_grads(params, config, street_batch, cell_batch, mask, tau, eps);

  std::vector<const Tensor*> grads;
  std::vector<std::string> names;
  base.grads.for_each_tensor([&](const std::string& name, const Tensor& t) {
    grads.push_back(&t);
    names.push_back(name);
  });
  std::vector<Tensor*> probes;
  params.for_each_tensor(
      [&](const std::string&, Tensor& t) { probes.push_back(&t); });

  auto eval = [&]() {
    return loss_and_grads(params, config, street_batch, cell_batch, mask, tau,
                          eps)
        .loss;
  };

  GradCheckReport report;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    Tensor& tensor = *probes[k];
    const Tensor& grad = *grads[k];
    for (std::size_t i = 0; i < tensor.v.size(); ++i) {
      const double saved = tensor.v[i];
      tensor.v[i] = saved + step;
      const double up = eval();
      tensor.v[i] = saved - step;
      const double down = eval();
      tensor.v[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = grad.v[i];
      const double denom =
          std::max({std::abs(fd), std::abs(an), 1e-4});
      const double rel = std::abs(fd - an) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = names[k];
      }
    }
  }
  return report;
}

}  // namespace geocell
