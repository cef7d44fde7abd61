#pragma once

// Executable protocol engines over the core tree model: level-synchronous
// binary tree splitting (BTS), depth-first splitting with interference
// cancellation (SICTA), and the two-phase coded splitting tree protocol
// (estimation, planned degree optimization, adaptive tail) with feedback
// accounting and a replayable event trace.

#include <cstdint>
#include <vector>

#include "cstp/decoder.hpp"
#include "cstp/inference.hpp"
#include "cstp/model.hpp"
#include "cstp/planner.hpp"

namespace cstp {

// Feedback units charged per receiver instruction. The split-order broadcast
// is one message regardless of its length; estimation and tail splits are
// steered individually.
struct FeedbackPolicy {
  std::uint32_t estimation_per_slot = 1;
  std::uint32_t order_broadcast = 1;
  std::uint32_t tail_per_split = 1;
  std::uint32_t terminate = 1;
};

enum class FeedbackKind {
  EstimationSlot,
  RoundReport,
  SplitInstruction,
  OrderBroadcast,
  TailSplit,
  Terminate
};

struct TraceEvent {
  enum class Kind { Transmit, Derive, Feedback, DecodeAttempt, Decode };

  Kind kind = Kind::Transmit;
  std::int32_t tree = -1;
  std::int32_t node = -1;
  std::int32_t slot = -1;      // slot label; derived nodes share the sibling's
  bool derived = false;
  std::uint32_t user = 0;          // Decode
  DecodeSource source = DecodeSource::Peel;  // Decode
  FeedbackKind feedback = FeedbackKind::EstimationSlot;  // Feedback
  std::uint32_t count = 0;     // feedback units / decode-attempt resolutions
};

struct ProtocolResult {
  RunMetrics metrics;
  std::vector<SplitTree> trees;
  std::vector<std::uint32_t> recovered_users;  // sorted
  std::vector<TraceEvent> trace;

  // Diagnostics.
  std::vector<double> estimation_covered;  // per tree, idle/single mass at phase end
  std::uint64_t estimation_slots = 0;
  std::uint32_t planned_order_length = 0;
  std::uint32_t tail_splits = 0;
};

struct CstpParams {
  std::uint32_t k_trees = 3;
  double alpha = 0.25;
  RewardFunction reward = RewardFunction::standard();
  FeedbackPolicy feedback{};
  InferOptions inference{};
  double improvement_eps = 1e-6;
  std::int64_t max_order_len = -1;
};

// Reference scheme: one tree, level-synchronous splitting, both children of
// every collision transmitted, one feedback report per round.
ProtocolResult run_bts(const UserPopulation& population);

// Calibration baseline: one tree resolved depth-first left-first, each split
// transmitting the left child and deriving the right.
ProtocolResult run_sicta(const UserPopulation& population);

// Estimation phase over K freshly rooted trees: single-child descent, restart
// at the collision leaf closest to the root, per-tree stop once idle/single
// slots cover more than alpha of the probability mass. Returns the inferred
// profile over the combined frontiers (refs resolved to arena nodes).
DegreeProfile run_estimation_phase(std::vector<SplitTree>& trees,
                                   const UserPopulation& population, double alpha,
                                   RunMetrics& metrics, const FeedbackPolicy& policy,
                                   std::vector<TraceEvent>& trace,
                                   std::vector<double>* covered_out = nullptr,
                                   const InferOptions& inference = {});

// Full protocol: K roots, estimation, greedy split-order broadcast, scheduled
// splits with a decode attempt after each, posterior refresh, and adaptive
// tail splits until decoding completes.
ProtocolResult run_cstp(const UserPopulation& population, const CstpParams& params);

// Metrics recomputed from the event log alone.
RunMetrics replay_metrics(const std::vector<TraceEvent>& trace);

// Replays the trace against the final trees' ground truth: every decode step
// must be a valid single-user residual at its time, and the replayed metrics
// and recovered set must match the reported ones.
bool validate_trace(const ProtocolResult& result);

}  // namespace cstp
