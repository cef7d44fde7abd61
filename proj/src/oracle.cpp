#include "cstp/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace cstp {

namespace {

constexpr std::size_t kMaxLeaves = 6;
constexpr std::int64_t kMaxPopulation = 14;

struct OracleTree {
  std::vector<std::size_t> flat;
  std::vector<double> mass;
  std::vector<SlotStatus> status;
};

std::vector<OracleTree> group_by_tree(const std::vector<LeafObservation>& obs) {
  std::int32_t k_max = -1;
  for (const auto& o : obs) k_max = std::max(k_max, o.tree);
  std::vector<OracleTree> trees(static_cast<std::size_t>(k_max) + 1);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    auto& t = trees[static_cast<std::size_t>(obs[i].tree)];
    t.flat.push_back(i);
    t.mass.push_back(obs[i].mass());
    t.status.push_back(obs[i].status);
  }
  for (const auto& t : trees) {
    if (t.flat.empty()) throw std::invalid_argument("oracle: tree without leaves");
  }
  return trees;
}

bool degree_allowed(SlotStatus status, std::int64_t d) {
  switch (status) {
    case SlotStatus::Idle: return d == 0;
    case SlotStatus::Single: return d == 1;
    case SlotStatus::Collision: return d >= 2;
  }
  return false;
}

// Sum of multinomial weights n!/(prod d_j!) prod P^d_j over all consistent
// degree vectors of one tree. When pin_local is set, that leaf is fixed to
// pin_degree. Recursive walk over leaves, exact in double at oracle scale.
struct TreeEnumerator {
  const OracleTree& tree;
  std::int64_t n = 0;
  std::int64_t pin_local = -1;  // local leaf index or -1
  std::int64_t pin_degree = 0;
  double total = 0.0;

  void run() {
    total = 0.0;
    double n_fact = 1.0;
    for (std::int64_t i = 2; i <= n; ++i) n_fact *= static_cast<double>(i);
    walk(0, n, n_fact);
  }

  // weight carries n! / prod_{j < leaf} d_j! * prod_{j < leaf} P_j^{d_j}.
  void walk(std::size_t leaf, std::int64_t remaining, double weight) {
    if (leaf == tree.flat.size()) {
      if (remaining == 0) total += weight;
      return;
    }
    const SlotStatus st = tree.status[leaf];
    const double p = tree.mass[leaf];
    std::int64_t lo = 0, hi = remaining;
    if (static_cast<std::int64_t>(leaf) == pin_local) {
      lo = hi = pin_degree;
      if (pin_degree > remaining || !degree_allowed(st, pin_degree)) return;
    }
    double p_pow = 1.0, fact = 1.0;
    for (std::int64_t i = 1; i <= lo; ++i) {
      p_pow *= p;
      fact *= static_cast<double>(i);
    }
    for (std::int64_t d = lo; d <= hi; ++d) {
      if (degree_allowed(st, d)) {
        walk(leaf + 1, remaining - d, weight * p_pow / fact);
      }
      p_pow *= p;
      fact *= static_cast<double>(d + 1);
    }
  }
};

double tree_sum(const OracleTree& t, std::int64_t n, std::int64_t pin_local,
                std::int64_t pin_degree) {
  TreeEnumerator e{t, n, pin_local, pin_degree};
  e.run();
  return e.total;
}

void check_guard(const std::vector<LeafObservation>& obs, std::int64_t n_hi) {
  if (obs.size() > kMaxLeaves || n_hi > kMaxPopulation) {
    throw std::invalid_argument("oracle: instance beyond enumeration guard (" +
                                std::to_string(kMaxLeaves) + " leaves, population " +
                                std::to_string(kMaxPopulation) + ")");
  }
}

}  // namespace

double brute_force_joint_weight(const std::vector<LeafObservation>& observations,
                                std::optional<std::pair<std::size_t, std::int32_t>> pinned,
                                std::int64_t n_hat) {
  check_guard(observations, n_hat);
  auto trees = group_by_tree(observations);
  double result = 1.0;
  for (const auto& t : trees) {
    std::int64_t pin_local = -1, pin_degree = 0;
    if (pinned) {
      for (std::size_t j = 0; j < t.flat.size(); ++j) {
        if (t.flat[j] == pinned->first) {
          pin_local = static_cast<std::int64_t>(j);
          pin_degree = pinned->second;
        }
      }
    }
    result *= tree_sum(t, n_hat, pin_local, pin_degree);
  }
  return result;
}

LeafDegreePosterior brute_force_posterior(const std::vector<LeafObservation>& observations,
                                          std::size_t leaf, std::int64_t n_min,
                                          std::int64_t n_max) {
  check_guard(observations, n_max);
  if (leaf >= observations.size()) throw std::invalid_argument("oracle: leaf out of range");
  if (observations[leaf].status != SlotStatus::Collision) {
    return LeafDegreePosterior::point(observations[leaf].status == SlotStatus::Single ? 1 : 0);
  }
  auto trees = group_by_tree(observations);
  std::size_t tree_of_leaf = 0;
  std::int64_t local = -1;
  for (std::size_t k = 0; k < trees.size(); ++k) {
    for (std::size_t j = 0; j < trees[k].flat.size(); ++j) {
      if (trees[k].flat[j] == leaf) {
        tree_of_leaf = k;
        local = static_cast<std::int64_t>(j);
      }
    }
  }

  std::vector<double> weight_by_degree(static_cast<std::size_t>(n_max) + 1, 0.0);
  double z = 0.0;
  for (std::int64_t n = n_min; n <= n_max; ++n) {
    double others = 1.0;
    for (std::size_t k = 0; k < trees.size(); ++k) {
      if (k != tree_of_leaf) others *= tree_sum(trees[k], n, -1, 0);
    }
    z += others * tree_sum(trees[tree_of_leaf], n, -1, 0);
    for (std::int64_t d = 2; d <= n; ++d) {
      weight_by_degree[static_cast<std::size_t>(d)] +=
          others * tree_sum(trees[tree_of_leaf], n, local, d);
    }
  }
  if (z <= 0.0) throw std::runtime_error("oracle: observations have zero weight on the given range");

  LeafDegreePosterior post;
  post.min_degree = 2;
  std::int64_t d_hi = 2;
  for (std::int64_t d = 2; d <= n_max; ++d) {
    if (weight_by_degree[static_cast<std::size_t>(d)] > 0.0) d_hi = d;
  }
  for (std::int64_t d = 2; d <= d_hi; ++d) {
    post.probs.push_back(weight_by_degree[static_cast<std::size_t>(d)] / z);
  }
  if (post.probs.empty()) post.probs.push_back(0.0);
  post.truncation = static_cast<std::int32_t>(d_hi);
  double cum = 0.0;
  for (double p : post.probs) cum += p;
  post.tail_mass_bound = std::max(0.0, 1.0 - cum);
  return post;
}

}  // namespace cstp
