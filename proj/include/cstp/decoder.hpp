#pragma once

// Successive interference cancellation as iterative peeling over the combined
// leaves of K trees: one check per current leaf, one variable per user, an
// edge wherever the user's replica sits. A check whose residual drops to a
// single user reveals that user's message; the replica pointers then subtract
// it from every other check containing it.

#include <cstdint>
#include <vector>

#include "cstp/model.hpp"

namespace cstp {

enum class DecodeSource { SingleSlot, Peel };

struct Resolution {
  std::uint32_t user = 0;
  std::int32_t tree = -1;
  std::int32_t node = -1;  // arena id of the check that revealed the user
  DecodeSource source = DecodeSource::Peel;
};

class PeelingGraph {
 public:
  // One check per frontier leaf across all trees; users of Single leaves are
  // resolved immediately and subtracted from their other replicas. Every
  // frontier leaf must carry a signal.
  static PeelingGraph build(const std::vector<SplitTree>& trees);

  // Initial resolutions performed by build (single-slot receptions).
  const std::vector<Resolution>& initial_resolutions() const { return initial_; }

  // Peels degree-1 residuals to the fixed point; returns the users resolved
  // during this call. The fixed point does not depend on processing order.
  std::vector<Resolution> peel();

  // Replaces the check of a just-split leaf by checks for its two children.
  void add_split(const SplitTree& tree, std::int32_t parent, std::int32_t left,
                 std::int32_t right);

  // True iff every check's residual is empty.
  bool is_complete() const;

  std::size_t resolved_count() const { return resolved_users_.size(); }
  bool is_resolved(std::uint32_t user) const;
  std::vector<std::uint32_t> resolved_users() const;  // sorted

  // Residual degree of the check at (tree, node); 0 when absent or clean.
  std::size_t residual_degree(std::int32_t tree, std::int32_t node) const;
  // Known degree of a fully peeled check: its original active-set size.
  std::size_t original_degree(std::int32_t tree, std::int32_t node) const;

 private:
  struct Check {
    std::int32_t tree = -1;
    std::int32_t node = -1;
    SlotStatus status = SlotStatus::Idle;
    std::size_t original_degree = 0;
    std::vector<std::uint32_t> residual;  // sorted
    bool alive = true;
  };

  std::size_t check_at(std::int32_t tree, std::int32_t node) const;
  std::size_t add_check(std::int32_t tree, std::int32_t node, SlotStatus status,
                        const SlotSignal& signal);
  void resolve(std::uint32_t user, std::size_t via_check, DecodeSource source,
               std::vector<Resolution>& out);

  std::vector<Check> checks_;
  std::vector<std::vector<std::size_t>> user_checks_;  // user -> alive check ids
  std::vector<char> resolved_;                         // per user
  std::vector<std::uint32_t> resolved_users_;          // insertion order
  std::vector<std::size_t> worklist_;                  // degree-1 candidates
  std::vector<Resolution> initial_;
};

}  // namespace cstp
