#pragma once

// Exact posterior inference of unobserved leaf collision degrees from the
// ternary observations of K partially split trees, under a uniform improper
// prior on the unknown population size.
//
// For a hypothesized population n, the degrees of one tree's leaves follow a
// multinomial with the leaf masses as cell probabilities, and the K trees are
// independent allocations of the same n users. Consistent-realization weights
// are accumulated per tree as the coefficients of a product of per-leaf
// series (w(d) = P^d/d! over the leaf's allowed degrees), carried in the
// probability normalization v[m] = m! * [x^m] so every intermediate value
// stays in [0,1]. Posteriors sum these weights over n with a certified
// geometric tail bound.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cstp/model.hpp"

namespace cstp {

struct LeafObservation {
  std::int32_t tree = 0;     // 0-based tree index
  std::int32_t mass_exp = 0; // leaf mass is 2^-mass_exp
  SlotStatus status = SlotStatus::Collision;

  double mass() const;
};

// Degree distribution of one leaf. Observed idle/single leaves are point
// masses at 0/1; collision leaves carry probabilities for d in
// [min_degree, truncation] with min_degree >= 2.
struct LeafDegreePosterior {
  std::int32_t min_degree = 0;
  std::vector<double> probs;     // probs[i] = Pr(D = min_degree + i)
  std::int32_t truncation = 0;   // largest degree retained
  double tail_mass_bound = 0.0;  // upper bound on discarded probability

  static LeafDegreePosterior point(std::int32_t d);

  bool is_point() const { return probs.size() == 1 && tail_mass_bound == 0.0; }
  double pr(std::int32_t d) const;
  double mean() const;
  double mass_at_least(std::int32_t d) const;
};

// The concatenated leaves of all K trees, tree-major and frontier-ordered
// within each tree. refs maps a profile index back to (tree, arena node);
// entries produced by predictive planning carry node = -1.
struct DegreeProfile {
  struct LeafRef {
    std::int32_t tree = -1;
    std::int32_t node = -1;
  };

  std::vector<LeafDegreePosterior> entries;
  std::vector<LeafRef> refs;

  std::size_t size() const { return entries.size(); }
};

// Aggregate degree profile: expected_count(d) = sum of per-leaf probabilities,
// fraction(d) = expected_count(d) / leaf count.
struct Omega {
  std::vector<double> expected;  // index d, starting at d = 0
  std::size_t leaf_count = 0;

  double expected_count(std::int32_t d) const;
  double fraction(std::int32_t d) const;
  std::int32_t max_degree() const { return static_cast<std::int32_t>(expected.size()) - 1; }
};

Omega omega(const DegreeProfile& profile);

struct InferOptions {
  double eps_tail = 1e-9;
  // Cap on the population-size summation; -1 selects
  // 64 * (observed degree floor + number of collision leaves).
  std::int64_t n_cap = -1;
  // Ablation mode: condition each leaf's posterior on its own tree only.
  bool per_tree_only = false;
  // Optional mask over flat observation indices: collision leaves with a zero
  // entry are skipped (their profile slots report tail_mass_bound = 1 and no
  // probabilities). Null computes every leaf.
  const std::vector<char>* wanted = nullptr;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::int32_t tree, std::string what)
      : std::runtime_error(std::move(what)), tree_(tree) {}
  std::int32_t tree() const { return tree_; }

 private:
  std::int32_t tree_ = 0;
};

// Sum over all degree realizations consistent with the observations (and the
// pin, if given) of the product of per-tree multinomial weights, at a fixed
// population hypothesis n_hat. pinned = (flat leaf index, degree).
double joint_weight(const std::vector<LeafObservation>& observations,
                    std::optional<std::pair<std::size_t, std::int32_t>> pinned,
                    std::int64_t n_hat);

// Posterior of one leaf's degree, normalized over its allowed support.
LeafDegreePosterior leaf_degree_posterior(const std::vector<LeafObservation>& observations,
                                          std::size_t leaf, double eps_tail,
                                          std::int64_t n_cap = -1);

// Posteriors for every leaf at once (shared prefix/suffix computation).
// Profile order matches the observation order within each tree, trees
// concatenated by index; refs carry (tree, -1) placeholders for the caller
// to resolve to arena nodes.
DegreeProfile infer_profile(const std::vector<LeafObservation>& observations,
                            const InferOptions& options = {});

}  // namespace cstp
