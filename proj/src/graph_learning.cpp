#include "prunegcrn/graph_learning.hpp"

#include <cmath>

#include "prunegcrn/errors.hpp"

namespace prunegcrn {

WeightPool make_weight_pool(std::size_t d, std::size_t c, std::size_t f, std::mt19937_64& rng,
                            const std::string& name) {
  // Glorot-uniform on the per-node c×f filter.
  const double limit = std::sqrt(6.0 / static_cast<double>(c + f));
  std::uniform_real_distribution<double> u(-limit, limit);
  std::vector<double> w(d * c * f);
  for (double& v : w) v = u(rng);
  return WeightPool{ad::leaf({d, c, f}, std::move(w), true, name + ".weights"),
                    ad::zeros({d, f}, true, name + ".bias")};
}

ad::Var adaptive_support(ad::Tape& t, const ad::Var& embeddings) {
  if (embeddings->shape.size() != 2 || embeddings->shape[0] == 0) {
    throw DimensionError("adaptive_support: embeddings must be n×d with n >= 1, got " +
                         ad::shape_str(embeddings->shape));
  }
  for (double v : embeddings->value) {
    if (!std::isfinite(v)) throw NumericError("adaptive_support: non-finite embedding");
  }
  auto gram = ad::matmul(t, embeddings, ad::transpose(t, embeddings));
  return ad::rowsoftmax(t, ad::relu(t, gram));
}

ad::Var with_identity(ad::Tape& t, const ad::Var& support) {
  const std::size_t n = support->shape.at(0);
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  return ad::add(t, support, ad::constant({n, n}, std::move(eye)));
}

NaplFilter prepare_napl(ad::Tape& t, const ad::Var& propagation, const ad::Var& embeddings,
                        const WeightPool& pool) {
  const std::size_t n = embeddings->shape.at(0);
  const std::size_t d = embeddings->shape.at(1);
  if (pool.weights->shape.size() != 3 || pool.weights->shape[0] != d ||
      pool.bias->shape != ad::Shape{d, pool.out_channels()}) {
    throw DimensionError("napl: pool " + ad::shape_str(pool.weights->shape) + "/" +
                         ad::shape_str(pool.bias->shape) + " does not match embeddings " +
                         ad::shape_str(embeddings->shape));
  }
  if (propagation->shape != ad::Shape{n, n}) {
    throw DimensionError("napl: support " + ad::shape_str(propagation->shape) +
                         " does not match " + std::to_string(n) + " nodes");
  }
  const std::size_t c = pool.in_channels(), f = pool.out_channels();
  auto flat = ad::reshape(t, pool.weights, {d, c * f});
  auto theta = ad::reshape(t, ad::matmul(t, embeddings, flat), {n, c, f});
  return NaplFilter{propagation, theta, ad::matmul(t, embeddings, pool.bias)};
}

ad::Var apply_napl(ad::Tape& t, const NaplFilter& filter, const ad::Var& x) {
  auto h = ad::batched_left_matmul(t, filter.propagation, x);
  return ad::add(t, ad::node_matmul(t, h, filter.theta), filter.bias);
}

ad::Var napl_conv(ad::Tape& t, const ad::Var& x, const ad::Var& support,
                  const ad::Var& embeddings, const WeightPool& pool) {
  return apply_napl(t, prepare_napl(t, with_identity(t, support), embeddings, pool), x);
}

std::size_t napl_param_count(std::size_t n, std::size_t d, std::size_t c, std::size_t f) {
  return d * c * f + n * d;
}

}  // namespace prunegcrn
