#pragma once

// Degree-optimization machinery: the reward function, predictive evolution of
// a degree profile under candidate splits, greedy split-order selection, and
// the highest-expected-degree tail policy.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cstp/inference.hpp"

namespace cstp {

// Per-degree reward lambda(d) >= 0 with finite support. The planner maximizes
// the scalar product of the profile's expected degree counts (d >= 1) with it.
struct RewardFunction {
  std::vector<std::pair<std::int32_t, double>> values;  // sorted by degree

  // lambda(2) = lambda(3) = 0.5, zero elsewhere.
  static RewardFunction standard();
  // Accepts "d=2:0.5,d=3:0.5" (the "d=" marker is optional per item).
  static RewardFunction parse(const std::string& text);

  double at(std::int32_t d) const;
  std::string text() const;
};

struct SplitOrder {
  // s_i: index into the concatenated profile as it stands after i-1 planned
  // splits (a split replaces entry s with its two children, shifting every
  // later entry up by one).
  std::vector<std::size_t> steps;

  bool empty() const { return steps.empty(); }
  std::size_t length() const { return steps.size(); }
};

struct PlanResult {
  SplitOrder order;
  DegreeProfile predicted;      // profile after all planned splits
  std::vector<double> scores;   // score after each accepted split
  double initial_score = 0.0;
};

struct PlanOptions {
  double improvement_eps = 1e-6;
  // -1 selects 4 * K * (collision-constrained entries at planning time).
  std::int64_t max_len = -1;
};

// Marginal degree distribution of either child of a split leaf: a binomial
// thinning with ratio 1/2 of the parent's posterior.
LeafDegreePosterior predict_child(const LeafDegreePosterior& parent);
std::pair<LeafDegreePosterior, LeafDegreePosterior> predict_children(
    const LeafDegreePosterior& parent);

// True when the entry admits degrees >= 2, i.e. splitting it may pay off.
// Observed idle/single leaves and fully known low degrees are excluded.
bool splittable(const LeafDegreePosterior& entry);

// Replaces entry s by the two predicted children; later entries shift by one.
DegreeProfile apply_split(const DegreeProfile& profile, std::size_t s);

// Scalar product of the profile's expected degree counts (d >= 1) with the
// reward (unnormalized expected-count convention).
double score(const DegreeProfile& profile, const RewardFunction& reward);

// Greedy order: each step splits the entry whose predicted profile maximizes
// the score, stopping when the best one-step gain drops to improvement_eps
// or the length bound is hit. Ties break to the lowest index.
PlanResult plan_split_order(const DegreeProfile& profile, const RewardFunction& reward,
                            const PlanOptions& options = {});

// Tail policy: entry with the highest expected degree among collision
// candidates; ties break to the lowest index. `eligible` restricts the
// candidate set (null = every splittable entry). Throws if no candidate.
std::size_t select_tail_split(const DegreeProfile& profile,
                              const std::vector<char>* eligible = nullptr);

}  // namespace cstp
