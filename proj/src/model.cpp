#include "cstp/model.hpp"

#include <algorithm>
#include <cmath>

namespace cstp {

const char* to_string(SlotStatus s) {
  switch (s) {
    case SlotStatus::Idle: return "idle";
    case SlotStatus::Single: return "single";
    case SlotStatus::Collision: return "collision";
  }
  return "?";
}

bool SlotSignal::contains(std::uint32_t u) const {
  return std::binary_search(users.begin(), users.end(), u);
}

SlotStatus classify(const SlotSignal& signal) {
  if (signal.users.empty()) return SlotStatus::Idle;
  if (signal.users.size() == 1) return SlotStatus::Single;
  return SlotStatus::Collision;
}

SlotSignal subtract(const SlotSignal& parent, const SlotSignal& child) {
  if (!std::includes(parent.users.begin(), parent.users.end(),
                     child.users.begin(), child.users.end())) {
    throw std::invalid_argument("subtract: child signal is not contained in parent signal");
  }
  SlotSignal out;
  out.users.reserve(parent.users.size() - child.users.size());
  std::set_difference(parent.users.begin(), parent.users.end(),
                      child.users.begin(), child.users.end(),
                      std::back_inserter(out.users));
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

UserPopulation UserPopulation::random(std::uint32_t size, std::uint64_t seed) {
  UserPopulation p;
  p.size_ = size;
  p.seed_ = seed;
  p.mixed_seed_ = splitmix64(seed);
  return p;
}

UserPopulation UserPopulation::from_paths(
    std::vector<std::vector<std::vector<std::uint8_t>>> paths, std::uint64_t fill_seed) {
  UserPopulation p;
  p.size_ = static_cast<std::uint32_t>(paths.size());
  p.seed_ = fill_seed;
  p.mixed_seed_ = splitmix64(fill_seed);
  p.explicit_paths_ = std::move(paths);
  return p;
}

bool UserPopulation::path_bit(std::uint32_t user, std::uint32_t tree, std::uint32_t depth) const {
  if (user >= size_) throw std::out_of_range("path_bit: no such user");
  if (user < explicit_paths_.size()) {
    const auto& trees = explicit_paths_[user];
    if (tree < trees.size() && depth < trees[tree].size()) {
      return trees[tree][depth] != 0;
    }
  }
  // Each stage adds a small coordinate to a fully mixed state, so distinct
  // (seed, user, tree, depth) tuples keep distinct generator inputs.
  std::uint64_t h = splitmix64(mixed_seed_ + user);
  h = splitmix64(h + (static_cast<std::uint64_t>(tree) << 32 | depth));
  return (h & 1) != 0;
}

void MassSum::add_pow2(int exponent) {
  if (exponent < 0 || exponent > kScaleExp) {
    throw std::overflow_error("MassSum: node mass 2^-" + std::to_string(exponent) +
                              " is outside the exact accumulator range");
  }
  units_ += std::uint64_t{1} << (kScaleExp - exponent);
}

bool MassSum::exceeds(double threshold) const {
  long double scaled = static_cast<long double>(threshold) * std::ldexp(1.0L, kScaleExp);
  return static_cast<long double>(units_) > scaled;
}

double MassSum::value() const {
  return std::ldexp(static_cast<double>(units_), -kScaleExp);
}

std::string SlotLabel::text() const {
  return std::to_string(slot) + (derived ? "'" : "");
}

double TreeNode::mass() const { return std::ldexp(1.0, -(level - 1)); }

SplitTree::SplitTree(std::int32_t index) : index_(index) {
  nodes_.emplace_back();
  leaves_.push_back(0);
}

SlotStatus SplitTree::status(std::int32_t id) const {
  const TreeNode& n = node(id);
  if (!n.status) throw std::logic_error("status: node has not been observed");
  return *n.status;
}

SlotLabel SplitTree::slot_label(std::int32_t id) const {
  const TreeNode& n = node(id);
  if (n.origin == NodeOrigin::Derived) {
    const TreeNode& p = node(n.parent);
    return SlotLabel{node(p.child[0]).slot, true};
  }
  return SlotLabel{n.slot, false};
}

std::vector<std::uint8_t> SplitTree::path(std::int32_t id) const {
  std::vector<std::uint8_t> bits;
  std::int32_t cur = id;
  while (cur != 0) {
    const TreeNode& n = node(cur);
    const TreeNode& p = node(n.parent);
    bits.push_back(p.child[1] == cur ? 1 : 0);
    cur = n.parent;
  }
  std::reverse(bits.begin(), bits.end());
  return bits;
}

SlotSignal SplitTree::active_set(const UserPopulation& population, std::int32_t id) const {
  const TreeNode& n = node(id);
  // A user is active here iff the node's root path is a prefix of the user's
  // path. When the parent's signal is known, filtering it by the final flip
  // yields the same set without rescanning the population.
  if (n.parent >= 0 && node(n.parent).has_signal()) {
    const TreeNode& p = node(n.parent);
    bool right = (p.child[1] == id);
    std::uint32_t depth = static_cast<std::uint32_t>(p.level - 1);
    SlotSignal out;
    for (std::uint32_t u : p.genie_signal->users) {
      if (population.path_bit(u, static_cast<std::uint32_t>(index_), depth) == right) {
        out.users.push_back(u);
      }
    }
    return out;
  }
  std::vector<std::uint8_t> bits = path(id);
  SlotSignal out;
  for (std::uint32_t u = 0; u < population.size(); ++u) {
    bool match = true;
    for (std::size_t d = 0; d < bits.size(); ++d) {
      if (population.path_bit(u, static_cast<std::uint32_t>(index_),
                              static_cast<std::uint32_t>(d)) != (bits[d] != 0)) {
        match = false;
        break;
      }
    }
    if (match) out.users.push_back(u);
  }
  return out;
}

void SplitTree::transmit(const UserPopulation& population, std::int32_t id, RunMetrics& metrics) {
  TreeNode& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.has_signal()) throw std::logic_error("transmit: node already carries a signal");
  if (!n.is_leaf()) throw std::logic_error("transmit: node is not a leaf");
  SlotSignal sig = active_set(population, id);
  metrics.slots_used += 1;
  n.slot = static_cast<std::int32_t>(metrics.slots_used);
  n.origin = NodeOrigin::Transmitted;
  n.status = classify(sig);
  n.genie_signal = std::move(sig);
}

void SplitTree::derive_complement(std::int32_t id) {
  TreeNode& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.has_signal()) throw std::logic_error("derive_complement: node already carries a signal");
  if (n.parent < 0) throw std::logic_error("derive_complement: root has no complement");
  const TreeNode& p = node(n.parent);
  std::int32_t sibling = (p.child[0] == id) ? p.child[1] : p.child[0];
  const TreeNode& s = node(sibling);
  if (!p.has_signal() || !s.has_signal()) {
    throw std::logic_error("derive_complement: parent and sibling signals are required");
  }
  SlotSignal sig = subtract(*p.genie_signal, *s.genie_signal);
  n.origin = NodeOrigin::Derived;
  // Derived slots are classified exactly like received ones.
  n.status = classify(sig);
  n.genie_signal = std::move(sig);
}

std::pair<std::int32_t, std::int32_t> SplitTree::expand(std::int32_t leaf) {
  TreeNode& n = nodes_.at(static_cast<std::size_t>(leaf));
  if (!n.is_leaf()) throw std::logic_error("expand: node is not a leaf");
  // A collision surviving to this depth needs ~120 identical coin flips from
  // two users; treat it as a generator defect rather than looping on.
  if (n.level >= 120) throw std::runtime_error("expand: tree depth beyond plausibility bound");
  std::int32_t left = static_cast<std::int32_t>(nodes_.size());
  std::int32_t right = left + 1;
  TreeNode child;
  child.parent = leaf;
  child.level = n.level + 1;
  nodes_.push_back(child);
  nodes_.push_back(child);
  nodes_[static_cast<std::size_t>(leaf)].child[0] = left;
  nodes_[static_cast<std::size_t>(leaf)].child[1] = right;
  return {left, right};
}

void SplitTree::replace_leaf(std::int32_t leaf, std::int32_t left, std::int32_t right) {
  auto it = std::find(leaves_.begin(), leaves_.end(), leaf);
  if (it == leaves_.end()) throw std::logic_error("split: node is not on the frontier");
  *it = left;
  leaves_.insert(it + 1, right);
}

std::pair<std::int32_t, std::int32_t> SplitTree::split_impl(const UserPopulation& population,
                                                            std::int32_t leaf, RunMetrics& metrics,
                                                            bool require_collision) {
  const TreeNode& n = node(leaf);
  if (!n.has_signal()) throw std::logic_error("split: leaf has not been observed");
  if (require_collision && *n.status != SlotStatus::Collision) {
    throw std::logic_error("split: leaf is not a collision");
  }
  auto [left, right] = expand(leaf);
  transmit(population, left, metrics);
  derive_complement(right);
  replace_leaf(leaf, left, right);
  return {left, right};
}

std::pair<std::int32_t, std::int32_t> SplitTree::split(const UserPopulation& population,
                                                       std::int32_t leaf, RunMetrics& metrics) {
  return split_impl(population, leaf, metrics, true);
}

std::pair<std::int32_t, std::int32_t> SplitTree::split_scheduled(const UserPopulation& population,
                                                                 std::int32_t leaf,
                                                                 RunMetrics& metrics) {
  return split_impl(population, leaf, metrics, false);
}

std::pair<std::int32_t, std::int32_t> SplitTree::split_both_transmitted(
    const UserPopulation& population, std::int32_t leaf, RunMetrics& metrics) {
  const TreeNode& n = node(leaf);
  if (!n.has_signal()) throw std::logic_error("split: leaf has not been observed");
  if (*n.status != SlotStatus::Collision) throw std::logic_error("split: leaf is not a collision");
  auto [left, right] = expand(leaf);
  transmit(population, left, metrics);
  transmit(population, right, metrics);
  replace_leaf(leaf, left, right);
  return {left, right};
}

MassSum SplitTree::frontier_mass() const {
  MassSum sum;
  for (std::int32_t id : leaves_) sum.add_pow2(node(id).mass_exp());
  return sum;
}

}  // namespace cstp
