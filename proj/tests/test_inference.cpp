#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "cstp/inference.hpp"
#include "cstp/model.hpp"
#include "cstp/oracle.hpp"

using namespace cstp;

namespace {

LeafObservation leaf(std::int32_t tree, std::int32_t mass_exp, SlotStatus st) {
  return LeafObservation{tree, mass_exp, st};
}

// Two half-mass leaves of one tree, single + collision. The pinned-degree
// posterior has the closed form (d+1) 2^-(d+1) over d >= 2.
std::vector<LeafObservation> two_leaf_case() {
  return {leaf(0, 1, SlotStatus::Single), leaf(0, 1, SlotStatus::Collision)};
}

double total_variation(const LeafDegreePosterior& a, const LeafDegreePosterior& b) {
  std::int32_t lo = std::min(a.min_degree, b.min_degree);
  std::int32_t hi = std::max(a.truncation, b.truncation);
  double tv = 0.0;
  for (std::int32_t d = lo; d <= hi; ++d) tv += std::abs(a.pr(d) - b.pr(d));
  return 0.5 * tv;
}

// Labeled-assignment micro oracle, a second independent route: enumerates the
// leaf choice of every user in every tree and accumulates raw probabilities.
struct MicroOracle {
  const std::vector<LeafObservation>& obs;
  std::vector<std::vector<std::size_t>> tree_leaves;  // per tree: flat indices

  explicit MicroOracle(const std::vector<LeafObservation>& o) : obs(o) {
    std::int32_t k_max = 0;
    for (const auto& ob : o) k_max = std::max(k_max, ob.tree);
    tree_leaves.resize(static_cast<std::size_t>(k_max) + 1);
    for (std::size_t i = 0; i < o.size(); ++i) {
      tree_leaves[static_cast<std::size_t>(o[i].tree)].push_back(i);
    }
  }

  // Sums Pr(assignment) over all user->leaf maps consistent with the
  // observations, with the pinned leaf's occupancy fixed to pin_degree.
  double weight(std::int64_t n, std::int64_t pin_leaf, std::int64_t pin_degree) const {
    std::vector<std::size_t> counts(obs.size(), 0);
    return walk_user(0, n, 1.0, counts, pin_leaf, pin_degree);
  }

  double walk_user(std::int64_t user, std::int64_t n, double prob, std::vector<std::size_t>& counts,
                   std::int64_t pin_leaf, std::int64_t pin_degree) const {
    if (user == n) return consistent(counts, pin_leaf, pin_degree) ? prob : 0.0;
    double total = 0.0;
    walk_tree(user, 0, n, prob, counts, pin_leaf, pin_degree, total);
    return total;
  }

  void walk_tree(std::int64_t user, std::size_t tree, std::int64_t n, double prob,
                 std::vector<std::size_t>& counts, std::int64_t pin_leaf, std::int64_t pin_degree,
                 double& total) const {
    if (tree == tree_leaves.size()) {
      total += walk_user(user + 1, n, prob, counts, pin_leaf, pin_degree);
      return;
    }
    for (std::size_t flat : tree_leaves[tree]) {
      counts[flat] += 1;
      walk_tree(user, tree + 1, n, prob * obs[flat].mass(), counts, pin_leaf, pin_degree, total);
      counts[flat] -= 1;
    }
  }

  bool consistent(const std::vector<std::size_t>& counts, std::int64_t pin_leaf,
                  std::int64_t pin_degree) const {
    for (std::size_t i = 0; i < obs.size(); ++i) {
      if (pin_leaf == static_cast<std::int64_t>(i) &&
          counts[i] != static_cast<std::size_t>(pin_degree)) {
        return false;
      }
      switch (obs[i].status) {
        case SlotStatus::Idle:
          if (counts[i] != 0) return false;
          break;
        case SlotStatus::Single:
          if (counts[i] != 1) return false;
          break;
        case SlotStatus::Collision:
          if (counts[i] < 2) return false;
          break;
      }
    }
    return true;
  }
};

// Random observation sets from real random tree frontiers (so masses are
// dyadic and sum to one).
std::vector<LeafObservation> random_instance(std::uint64_t seed, int k_trees, int max_leaves,
                                             std::uint32_t population) {
  std::vector<LeafObservation> obs;
  UserPopulation pop = UserPopulation::random(population, seed);
  RunMetrics metrics;
  std::uint64_t mix = seed;
  for (int k = 0; k < k_trees; ++k) {
    SplitTree tree(k);
    tree.transmit(pop, tree.root(), metrics);
    int leaves = 1;
    while (leaves < max_leaves) {
      std::vector<std::int32_t> collisions;
      for (std::int32_t id : tree.leaves()) {
        if (tree.status(id) == SlotStatus::Collision) collisions.push_back(id);
      }
      if (collisions.empty()) break;
      mix = splitmix64(mix);
      tree.split(pop, collisions[mix % collisions.size()], metrics);
      leaves += 1;
    }
    for (std::int32_t id : tree.leaves()) {
      obs.push_back(leaf(k, tree.node(id).mass_exp(), tree.status(id)));
    }
  }
  return obs;
}

bool has_open_per_tree(const std::vector<LeafObservation>& obs, int k_trees) {
  std::vector<bool> open(static_cast<std::size_t>(k_trees), false);
  std::vector<bool> seen(static_cast<std::size_t>(k_trees), false);
  for (const auto& o : obs) {
    seen[static_cast<std::size_t>(o.tree)] = true;
    if (o.status != SlotStatus::Collision) open[static_cast<std::size_t>(o.tree)] = true;
  }
  for (std::size_t k = 0; k < open.size(); ++k) {
    if (seen[k] && !open[k]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("joint weight matches hand-computed values") {
  auto obs = two_leaf_case();
  // One fixed user alone in the single leaf, two more in the collision leaf:
  // 3 of the 2^3 equiprobable placements.
  CHECK(joint_weight(obs, {}, 3) == doctest::Approx(0.375).epsilon(1e-12));
  // A collision leaf needs at least two users beyond the observed floor.
  CHECK(joint_weight(obs, {}, 1) == 0.0);
  // All users pinned into a lone full-mass leaf.
  std::vector<LeafObservation> lone = {leaf(0, 0, SlotStatus::Collision)};
  CHECK(joint_weight(lone, {{0, 4}}, 4) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("joint weight agrees with both oracles on random instances") {
  int checked = 0;
  for (std::uint64_t seed = 1; checked < 25 && seed < 200; ++seed) {
    auto obs = random_instance(seed, (seed % 2) ? 2 : 1, 3, 4);
    if (obs.size() > 6) continue;
    for (std::int64_t n = 0; n <= 7; ++n) {
      double fast = joint_weight(obs, {}, n);
      double slow = brute_force_joint_weight(obs, {}, n);
      CHECK(fast == doctest::Approx(slow).epsilon(1e-10));
      MicroOracle micro(obs);
      double raw = micro.weight(n, -1, 0);
      CHECK(fast == doctest::Approx(raw).epsilon(1e-10));
    }
    checked += 1;
  }
  CHECK(checked == 25);
}

TEST_CASE("per-population pin decomposition is self-consistent") {
  auto obs = two_leaf_case();
  for (std::int64_t n = 2; n <= 10; ++n) {
    double unpinned = joint_weight(obs, {}, n);
    double pinned_total = 0.0;
    for (std::int32_t d = 2; d <= n; ++d) pinned_total += joint_weight(obs, {{1, d}}, n);
    CHECK(pinned_total == doctest::Approx(unpinned).epsilon(1e-12));
  }
}

TEST_CASE("two-leaf posterior matches the closed form") {
  auto obs = two_leaf_case();
  LeafDegreePosterior post = leaf_degree_posterior(obs, 1, 1e-12);
  CHECK(post.min_degree == 2);
  for (std::int32_t d = 2; d <= 20; ++d) {
    double expected = static_cast<double>(d + 1) * std::ldexp(1.0, -(d + 1));
    CHECK(post.pr(d) == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(post.pr(2) == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(post.pr(3) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(post.pr(4) == doctest::Approx(0.15625).epsilon(1e-12));
}

TEST_CASE("observed leaves give point masses") {
  auto obs = two_leaf_case();
  LeafDegreePosterior single = leaf_degree_posterior(obs, 0, 1e-9);
  CHECK(single.is_point());
  CHECK(single.pr(1) == 1.0);
  CHECK(single.mean() == 1.0);
}

TEST_CASE("oracle sanity: pinned population forces a point mass") {
  std::vector<LeafObservation> lone = {leaf(0, 0, SlotStatus::Collision)};
  // With exactly 5 users and a single leaf the degree is 5.
  LeafDegreePosterior post = brute_force_posterior(lone, 0, 5, 5);
  CHECK(post.pr(5) == doctest::Approx(1.0).epsilon(1e-12));
  // An all-idle tree admits no users at all.
  std::vector<LeafObservation> idle = {leaf(0, 1, SlotStatus::Idle), leaf(0, 1, SlotStatus::Idle)};
  CHECK(brute_force_joint_weight(idle, {}, 1) == 0.0);
  CHECK(brute_force_joint_weight(idle, {}, 0) == 1.0);
  // Enumeration guard.
  std::vector<LeafObservation> big(7, leaf(0, 3, SlotStatus::Collision));
  CHECK_THROWS_AS(brute_force_posterior(big, 0, 1, 5), std::invalid_argument);
}

TEST_CASE("posterior matches the enumeration oracle on random small instances") {
  int checked = 0;
  for (std::uint64_t seed = 1; checked < 30 && seed < 400; ++seed) {
    int k_trees = (seed % 2) ? 2 : 1;
    auto obs = random_instance(seed, k_trees, (seed % 2) ? 3 : 4, 5);
    if (obs.size() > 6 || !has_open_per_tree(obs, k_trees)) continue;
    std::int64_t floor = 0;
    bool any_collision = false;
    for (const auto& o : obs) {
      if (o.status == SlotStatus::Single) floor += 1;
      if (o.status == SlotStatus::Collision) {
        floor += 2;
        any_collision = true;
      }
    }
    if (!any_collision || floor > 12) continue;
    for (std::size_t l = 0; l < obs.size(); ++l) {
      if (obs[l].status != SlotStatus::Collision) continue;
      LeafDegreePosterior fast = leaf_degree_posterior(obs, l, 1e-15, 12);
      LeafDegreePosterior slow = brute_force_posterior(obs, l, 0, 12);
      CHECK(total_variation(fast, slow) < 1e-9);
    }
    checked += 1;
  }
  CHECK(checked == 30);
}

TEST_CASE("posteriors are exchangeable across equal-mass equal-status leaves") {
  std::vector<LeafObservation> obs = {
      leaf(0, 2, SlotStatus::Single), leaf(0, 2, SlotStatus::Collision),
      leaf(0, 2, SlotStatus::Collision), leaf(0, 2, SlotStatus::Idle)};
  LeafDegreePosterior a = leaf_degree_posterior(obs, 1, 1e-12);
  LeafDegreePosterior b = leaf_degree_posterior(obs, 2, 1e-12);
  CHECK(total_variation(a, b) < 1e-13);
}

TEST_CASE("partial population sums converge monotonically with a valid tail bound") {
  auto obs = two_leaf_case();
  // Exact totals per population hypothesis from the oracle.
  std::vector<double> weights;
  double z_inf = 0.0;
  for (std::int64_t n = 0; n <= 14; ++n) {
    double w = brute_force_joint_weight(obs, {}, n);
    weights.push_back(w);
    z_inf += w;
  }
  // Closed form: total = sum over d >= 2 of (d+1) 2^-(d+1) = 1.
  CHECK(z_inf == doctest::Approx(1.0).epsilon(1e-3));
  double partial = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double before = partial;
    partial += weights[i];
    CHECK(partial >= before);  // monotone in the cap
  }
  // The geometric tail beyond n = 14 is tiny and positive.
  CHECK(1.0 - partial > 0.0);
  CHECK(1.0 - partial < 1e-2);
}

TEST_CASE("reported tail bound covers the true truncation error") {
  auto obs = two_leaf_case();
  // Full-range reference: the closed-form posterior over a wide support.
  LeafDegreePosterior full;
  full.min_degree = 2;
  for (std::int32_t d = 2; d <= 60; ++d) {
    full.probs.push_back(static_cast<double>(d + 1) * std::ldexp(1.0, -(d + 1)));
  }
  full.truncation = 60;
  for (double eps : {1e-4, 1e-6, 1e-8}) {
    LeafDegreePosterior post = leaf_degree_posterior(obs, 1, eps);
    double tv = total_variation(post, full);
    CHECK(tv <= post.tail_mass_bound);  // the bound is a valid upper bound
    CHECK(post.tail_mass_bound < 50.0 * eps);  // and a useful one
  }
}

TEST_CASE("profile inference matches per-leaf queries") {
  auto obs = random_instance(11, 2, 4, 6);
  REQUIRE(has_open_per_tree(obs, 2));
  DegreeProfile profile = infer_profile(obs, {});
  REQUIRE(profile.size() == obs.size());
  for (std::size_t l = 0; l < obs.size(); ++l) {
    if (obs[l].status != SlotStatus::Collision) {
      CHECK(profile.entries[l].is_point());
      continue;
    }
    LeafDegreePosterior direct = leaf_degree_posterior(obs, l, 1e-9);
    CHECK(total_variation(profile.entries[l], direct) < 1e-9);
    CHECK(profile.entries[l].pr(0) == 0.0);
    CHECK(profile.entries[l].pr(1) == 0.0);
  }
}

TEST_CASE("a tree without idle or single observations diverges") {
  std::vector<LeafObservation> obs = {leaf(0, 1, SlotStatus::Collision),
                                      leaf(0, 1, SlotStatus::Collision)};
  CHECK_THROWS_AS(leaf_degree_posterior(obs, 0, 1e-9, 100), DivergenceError);
  try {
    leaf_degree_posterior(obs, 0, 1e-9, 100);
  } catch (const DivergenceError& e) {
    CHECK(e.tree() == 0);
  }
}

TEST_CASE("omega aggregates expected counts and fractions") {
  DegreeProfile singles;
  for (int i = 0; i < 3; ++i) {
    singles.entries.push_back(LeafDegreePosterior::point(1));
    singles.refs.push_back({0, -1});
  }
  Omega om = omega(singles);
  CHECK(om.expected_count(1) == 3.0);
  CHECK(om.fraction(1) == 1.0);
  CHECK(om.expected_count(7) == 0.0);

  auto obs = two_leaf_case();
  DegreeProfile profile = infer_profile(obs, {});
  Omega om2 = omega(profile);
  CHECK(om2.expected_count(2) == doctest::Approx(0.375).epsilon(1e-9));
  CHECK(om2.expected_count(1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(om2.fraction(0) == 0.0);
  // Total probability across the profile sums to the leaf count.
  double total = 0.0;
  for (std::int32_t d = 0; d <= om2.max_degree(); ++d) total += om2.expected_count(d);
  CHECK(total == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("per-tree-only mode ignores the other tree") {
  // Tree 1 pins the population tightly; joint inference must differ from
  // per-tree inference on tree 0.
  std::vector<LeafObservation> obs = {
      leaf(0, 1, SlotStatus::Single), leaf(0, 1, SlotStatus::Collision),
      leaf(1, 2, SlotStatus::Single), leaf(1, 2, SlotStatus::Single),
      leaf(1, 2, SlotStatus::Single), leaf(1, 2, SlotStatus::Idle)};
  InferOptions joint_opt;
  InferOptions solo_opt;
  solo_opt.per_tree_only = true;
  DegreeProfile joint = infer_profile(obs, joint_opt);
  DegreeProfile solo = infer_profile(obs, solo_opt);
  // Joint: tree 1 forces exactly 3 users, so the collision leaf holds 2.
  CHECK(joint.entries[1].pr(2) == doctest::Approx(1.0).epsilon(1e-9));
  // Solo: the closed-form geometric-like posterior spreads beyond 2.
  CHECK(solo.entries[1].pr(2) == doctest::Approx(0.375).epsilon(1e-9));
}
