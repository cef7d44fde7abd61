#pragma once

// Core types for binary contention trees over a slotted collision channel:
// user populations with per-tree coin-flip paths, symbolic slot signals,
// ternary observation, interference-cancellation complements, and slot/
// feedback accounting.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cstp {

// ---------------------------------------------------------------------------
// Slot observation
// ---------------------------------------------------------------------------

enum class SlotStatus { Idle, Single, Collision };

const char* to_string(SlotStatus s);

// Noiseless superposition, modeled symbolically as the set of users active in
// the slot. The receiver-visible part of a signal is its SlotStatus only;
// the set itself is ground truth reserved for subtraction, the decoder's
// replica bookkeeping, and tests.
struct SlotSignal {
  std::vector<std::uint32_t> users;  // sorted, unique

  std::size_t size() const { return users.size(); }
  bool empty() const { return users.empty(); }
  bool contains(std::uint32_t u) const;
};

SlotStatus classify(const SlotSignal& signal);

// parent - child. Defined only when child's active set is contained in the
// parent's; throws std::invalid_argument otherwise.
SlotSignal subtract(const SlotSignal& parent, const SlotSignal& child);

// ---------------------------------------------------------------------------
// User population
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);

// N users, each with one lazily extended fair-coin path per tree. Path bits
// are a pure function of (seed, user, tree, depth), so trees of any depth
// need no pre-allocated state and copies are trivially cheap.
class UserPopulation {
 public:
  UserPopulation() = default;

  static UserPopulation random(std::uint32_t size, std::uint64_t seed);

  // Explicit path prefixes for scripted scenarios: paths[user][tree] is the
  // leading bit sequence (0 = left, 1 = right); bits beyond a prefix fall
  // back to the seeded generator.
  static UserPopulation from_paths(
      std::vector<std::vector<std::vector<std::uint8_t>>> paths,
      std::uint64_t fill_seed);

  std::uint32_t size() const { return size_; }
  std::uint64_t seed() const { return seed_; }

  // depth is the 0-based flip index: the bit that routes the user from a
  // level-(depth+1) node into one of its children.
  bool path_bit(std::uint32_t user, std::uint32_t tree, std::uint32_t depth) const;

 private:
  std::uint32_t size_ = 0;
  std::uint64_t seed_ = 0;
  std::uint64_t mixed_seed_ = 0;
  std::vector<std::vector<std::vector<std::uint8_t>>> explicit_paths_;
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct RunMetrics {
  std::uint64_t slots_used = 0;  // M
  std::uint64_t recovered = 0;   // R
  std::uint64_t feedback = 0;    // F

  double throughput() const {
    return slots_used == 0 ? 0.0 : static_cast<double>(recovered) / static_cast<double>(slots_used);
  }
};

// Exact accumulator for sums of node masses 2^-e, kept in units of 2^-62.
// Depths beyond 62 would need wider arithmetic; reaching them requires ~62
// consecutive identical coin flips of a colliding user pair, so we treat it
// as a hard error instead.
class MassSum {
 public:
  static constexpr int kScaleExp = 62;

  void add_pow2(int exponent);
  bool exceeds(double threshold) const;  // strict >
  bool is_one() const { return units_ == (std::uint64_t{1} << kScaleExp); }
  double value() const;
  std::uint64_t raw_units() const { return units_; }

 private:
  std::uint64_t units_ = 0;
};

// ---------------------------------------------------------------------------
// Split tree
// ---------------------------------------------------------------------------

enum class NodeOrigin { Transmitted, Derived };

// Slot label as used in traces: transmitted nodes carry the global slot
// number; the derived sibling shares the number with a prime mark.
struct SlotLabel {
  std::int32_t slot = -1;
  bool derived = false;

  std::string text() const;
  friend bool operator==(const SlotLabel&, const SlotLabel&) = default;
};

struct TreeNode {
  std::int32_t parent = -1;
  std::int32_t child[2] = {-1, -1};  // [0] = left, [1] = right
  std::int32_t level = 1;            // root is level 1
  std::int32_t slot = -1;            // global slot number for transmitted nodes
  NodeOrigin origin = NodeOrigin::Transmitted;
  std::optional<SlotStatus> status;          // present iff the signal is known
  std::optional<SlotSignal> genie_signal;    // ground truth; not protocol-visible

  bool is_leaf() const { return child[0] < 0; }
  bool has_signal() const { return genie_signal.has_value(); }
  int mass_exp() const { return level - 1; }  // node mass is 2^-(level-1)
  double mass() const;
};

// One binary contention tree. Nodes live in an arena and are never removed;
// `leaves` is the current frontier in left-to-right order, and a split
// replaces one frontier entry with its two children in place.
class SplitTree {
 public:
  explicit SplitTree(std::int32_t index);

  std::int32_t index() const { return index_; }
  std::int32_t root() const { return 0; }
  std::size_t node_count() const { return nodes_.size(); }
  const TreeNode& node(std::int32_t id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::int32_t>& leaves() const { return leaves_; }

  SlotStatus status(std::int32_t id) const;
  SlotLabel slot_label(std::int32_t id) const;

  // Root-to-node bit path (empty for the root).
  std::vector<std::uint8_t> path(std::int32_t id) const;

  // Transmits in a fresh slot: the signal is the set of users whose tree
  // path has this node's path as a prefix. Increments metrics.slots_used and
  // classifies the node. Transmitting twice or on a non-leaf is an error.
  void transmit(const UserPopulation& population, std::int32_t id, RunMetrics& metrics);

  // Receiver-side complement: fills `id` from parent minus sibling without
  // using a slot.
  void derive_complement(std::int32_t id);

  // Collision split with interference cancellation: creates both children,
  // transmits the left one (one slot) and derives the right. Requires the
  // leaf to be an observed Collision.
  std::pair<std::int32_t, std::int32_t> split(const UserPopulation& population,
                                              std::int32_t leaf, RunMetrics& metrics);

  // Same mechanics without the Collision requirement, for splits executed
  // from a broadcast schedule whose target may turn out idle or single.
  std::pair<std::int32_t, std::int32_t> split_scheduled(const UserPopulation& population,
                                                        std::int32_t leaf, RunMetrics& metrics);

  // Plain splitting without interference cancellation: both children are
  // transmitted (two slots).
  std::pair<std::int32_t, std::int32_t> split_both_transmitted(const UserPopulation& population,
                                                               std::int32_t leaf,
                                                               RunMetrics& metrics);

  // Exact sum of frontier masses; 1 for a consistent tree.
  MassSum frontier_mass() const;

 private:
  std::pair<std::int32_t, std::int32_t> expand(std::int32_t leaf);
  std::pair<std::int32_t, std::int32_t> split_impl(const UserPopulation& population,
                                                   std::int32_t leaf, RunMetrics& metrics,
                                                   bool require_collision);
  void replace_leaf(std::int32_t leaf, std::int32_t left, std::int32_t right);
  SlotSignal active_set(const UserPopulation& population, std::int32_t id) const;

  std::int32_t index_ = 0;
  std::vector<TreeNode> nodes_;
  std::vector<std::int32_t> leaves_;
};

}  // namespace cstp
