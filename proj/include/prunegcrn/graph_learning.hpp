#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>

#include "prunegcrn/autodiff.hpp"

namespace prunegcrn {

/// Shared low-rank pool for one graph-convolution site. Each node's filter is
/// the embedding-weighted combination E[i,:]·weights, never a free parameter.
struct WeightPool {
  ad::Var weights;  // d × c × f
  ad::Var bias;     // d × f

  std::size_t in_channels() const { return weights->shape[1]; }
  std::size_t out_channels() const { return weights->shape[2]; }
};

WeightPool make_weight_pool(std::size_t d, std::size_t c, std::size_t f, std::mt19937_64& rng,
                            const std::string& name);

/// Learned row-normalized adjacency rowsoftmax(relu(E·Eᵀ)).
ad::Var adaptive_support(ad::Tape& t, const ad::Var& embeddings);

/// Builds a support matrix from the node embeddings.
using SupportBuilder = std::function<ad::Var(ad::Tape&, const ad::Var&)>;

/// I + support.
ad::Var with_identity(ad::Tape& t, const ad::Var& support);

/// Per-forward products of one convolution site, reused across timesteps.
struct NaplFilter {
  ad::Var propagation;  // n × n, already including the identity
  ad::Var theta;        // n × c × f
  ad::Var bias;         // n × f
};

NaplFilter prepare_napl(ad::Tape& t, const ad::Var& propagation, const ad::Var& embeddings,
                        const WeightPool& pool);

/// Z = propagation·X, then each node's affine map: Z[i] = H[i]·theta[i] + bias[i].
/// X may be n×c or batched B×n×c.
ad::Var apply_napl(ad::Tape& t, const NaplFilter& filter, const ad::Var& x);

/// Z = (I + L)·X·E·W + E·b for a single call site.
ad::Var napl_conv(ad::Tape& t, const ad::Var& x, const ad::Var& support,
                  const ad::Var& embeddings, const WeightPool& pool);

/// Learnable count of the factorized filter: d·c·f + n·d.
std::size_t napl_param_count(std::size_t n, std::size_t d, std::size_t c, std::size_t f);

}  // namespace prunegcrn
