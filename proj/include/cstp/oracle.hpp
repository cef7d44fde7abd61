#pragma once

// Test oracle: exhaustive enumeration of leaf degree realizations. Walks
// every per-tree degree vector summing to the population hypothesis, weighs
// it by the multinomial probability, filters by observation consistency, and
// accumulates — no generating-function machinery shared with the production
// path. Guarded to small instances.

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cstp/inference.hpp"

namespace cstp {

// Same quantity as joint_weight, by direct enumeration.
double brute_force_joint_weight(const std::vector<LeafObservation>& observations,
                                std::optional<std::pair<std::size_t, std::int32_t>> pinned,
                                std::int64_t n_hat);

// Posterior of one leaf's degree accumulated over n_hat in [n_min, n_max],
// normalized like leaf_degree_posterior. Refuses instances with more than 6
// leaves in total or n_max > 14.
LeafDegreePosterior brute_force_posterior(const std::vector<LeafObservation>& observations,
                                          std::size_t leaf, std::int64_t n_min,
                                          std::int64_t n_max);

}  // namespace cstp
