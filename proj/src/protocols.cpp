#include "cstp/protocols.hpp"

#include <algorithm>
#include <stdexcept>

namespace cstp {

namespace {

void log_transmit(std::vector<TraceEvent>& trace, const SplitTree& tree, std::int32_t node) {
  TraceEvent e;
  e.kind = TraceEvent::Kind::Transmit;
  e.tree = tree.index();
  e.node = node;
  e.slot = tree.node(node).slot;
  trace.push_back(e);
}

void log_derive(std::vector<TraceEvent>& trace, const SplitTree& tree, std::int32_t node) {
  TraceEvent e;
  e.kind = TraceEvent::Kind::Derive;
  e.tree = tree.index();
  e.node = node;
  e.slot = tree.slot_label(node).slot;
  e.derived = true;
  trace.push_back(e);
}

void charge(RunMetrics& metrics, std::vector<TraceEvent>& trace, FeedbackKind kind,
            std::uint32_t units) {
  if (units == 0) return;
  metrics.feedback += units;
  TraceEvent e;
  e.kind = TraceEvent::Kind::Feedback;
  e.feedback = kind;
  e.count = units;
  trace.push_back(e);
}

void log_resolutions(ProtocolResult& res, const std::vector<Resolution>& resolutions) {
  for (const auto& r : resolutions) {
    TraceEvent e;
    e.kind = TraceEvent::Kind::Decode;
    e.tree = r.tree;
    e.node = r.node;
    e.user = r.user;
    e.source = r.source;
    res.trace.push_back(e);
    res.metrics.recovered += 1;
  }
}

void log_attempt(std::vector<TraceEvent>& trace, std::size_t resolved) {
  TraceEvent e;
  e.kind = TraceEvent::Kind::DecodeAttempt;
  e.count = static_cast<std::uint32_t>(resolved);
  trace.push_back(e);
}

// Direct reception bookkeeping for the single-tree schemes.
void note_single(ProtocolResult& res, const SplitTree& tree, std::int32_t node) {
  const TreeNode& n = tree.node(node);
  if (*n.status != SlotStatus::Single) return;
  TraceEvent e;
  e.kind = TraceEvent::Kind::Decode;
  e.tree = tree.index();
  e.node = node;
  e.user = n.genie_signal->users.front();
  e.source = DecodeSource::SingleSlot;
  res.trace.push_back(e);
  res.metrics.recovered += 1;
  res.recovered_users.push_back(e.user);
}

// Conditions a predicted child distribution on the status observed when the
// split executed.
LeafDegreePosterior condition_child(const LeafDegreePosterior& predicted, SlotStatus status) {
  if (status == SlotStatus::Idle) return LeafDegreePosterior::point(0);
  if (status == SlotStatus::Single) return LeafDegreePosterior::point(1);
  LeafDegreePosterior out;
  out.min_degree = 2;
  double total = 0.0;
  for (std::int32_t d = 2; d <= predicted.truncation; ++d) total += predicted.pr(d);
  if (total <= 0.0) return LeafDegreePosterior::point(2);
  for (std::int32_t d = 2; d <= predicted.truncation; ++d) {
    out.probs.push_back(predicted.pr(d) / total);
  }
  out.truncation = predicted.truncation;
  out.tail_mass_bound = predicted.tail_mass_bound;
  return out;
}

struct LeafHandle {
  std::int32_t tree = -1;
  std::int32_t node = -1;
};

std::vector<LeafHandle> frontier_handles(const std::vector<SplitTree>& trees) {
  std::vector<LeafHandle> handles;
  for (const auto& t : trees) {
    for (std::int32_t leaf : t.leaves()) {
      handles.push_back({t.index(), leaf});
    }
  }
  return handles;
}

std::vector<LeafObservation> frontier_observations(const std::vector<SplitTree>& trees) {
  std::vector<LeafObservation> obs;
  for (const auto& t : trees) {
    for (std::int32_t leaf : t.leaves()) {
      obs.push_back({t.index(), t.node(leaf).mass_exp(), t.status(leaf)});
    }
  }
  return obs;
}

}  // namespace

ProtocolResult run_bts(const UserPopulation& population) {
  if (population.size() < 1) throw std::invalid_argument("run_bts: population must be >= 1");
  ProtocolResult res;
  SplitTree tree(0);
  tree.transmit(population, tree.root(), res.metrics);
  log_transmit(res.trace, tree, tree.root());
  note_single(res, tree, tree.root());

  while (true) {
    std::vector<std::int32_t> collisions;
    for (std::int32_t leaf : tree.leaves()) {
      if (tree.status(leaf) == SlotStatus::Collision) collisions.push_back(leaf);
    }
    if (collisions.empty()) break;
    // One report per round tells the colliding leaves to split.
    charge(res.metrics, res.trace, FeedbackKind::RoundReport, 1);
    for (std::int32_t leaf : collisions) {
      auto [l, r] = tree.split_both_transmitted(population, leaf, res.metrics);
      log_transmit(res.trace, tree, l);
      log_transmit(res.trace, tree, r);
      note_single(res, tree, l);
      note_single(res, tree, r);
    }
  }
  std::sort(res.recovered_users.begin(), res.recovered_users.end());
  res.trees.push_back(std::move(tree));
  return res;
}

ProtocolResult run_sicta(const UserPopulation& population) {
  if (population.size() < 1) throw std::invalid_argument("run_sicta: population must be >= 1");
  ProtocolResult res;
  SplitTree tree(0);
  tree.transmit(population, tree.root(), res.metrics);
  log_transmit(res.trace, tree, tree.root());
  note_single(res, tree, tree.root());

  std::vector<std::int32_t> stack;
  if (tree.status(tree.root()) == SlotStatus::Collision) stack.push_back(tree.root());
  while (!stack.empty()) {
    std::int32_t node = stack.back();
    stack.pop_back();
    charge(res.metrics, res.trace, FeedbackKind::SplitInstruction, 1);
    auto [l, r] = tree.split(population, node, res.metrics);
    log_transmit(res.trace, tree, l);
    log_derive(res.trace, tree, r);
    note_single(res, tree, l);
    note_single(res, tree, r);
    // Depth-first, left subtree first.
    if (tree.status(r) == SlotStatus::Collision) stack.push_back(r);
    if (tree.status(l) == SlotStatus::Collision) stack.push_back(l);
  }
  charge(res.metrics, res.trace, FeedbackKind::Terminate, 1);
  std::sort(res.recovered_users.begin(), res.recovered_users.end());
  res.trees.push_back(std::move(tree));
  return res;
}

DegreeProfile run_estimation_phase(std::vector<SplitTree>& trees,
                                   const UserPopulation& population, double alpha,
                                   RunMetrics& metrics, const FeedbackPolicy& policy,
                                   std::vector<TraceEvent>& trace,
                                   std::vector<double>* covered_out,
                                   const InferOptions& inference) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("estimation: alpha must lie in (0, 1)");
  }
  if (covered_out) covered_out->assign(trees.size(), 0.0);

  for (std::size_t k = 0; k < trees.size(); ++k) {
    SplitTree& tree = trees[k];
    if (!tree.node(tree.root()).has_signal()) {
      throw std::logic_error("estimation: tree root has not been transmitted");
    }
    MassSum covered;
    if (tree.status(tree.root()) != SlotStatus::Collision) {
      covered.add_pow2(0);
      if (covered_out) (*covered_out)[k] = covered.value();
      continue;
    }
    std::int32_t current = tree.root();
    while (true) {
      charge(metrics, trace, FeedbackKind::EstimationSlot, policy.estimation_per_slot);
      auto [l, r] = tree.split(population, current, metrics);
      log_transmit(trace, tree, l);
      log_derive(trace, tree, r);
      bool l_coll = tree.status(l) == SlotStatus::Collision;
      bool r_coll = tree.status(r) == SlotStatus::Collision;
      if (!l_coll) covered.add_pow2(tree.node(l).mass_exp());
      if (!r_coll) covered.add_pow2(tree.node(r).mass_exp());
      if (covered.exceeds(alpha)) break;
      if (l_coll && r_coll) {
        current = l;
        continue;
      }
      // Restart at the collision leaf closest to the root (then lowest slot
      // label, transmitted before derived).
      std::int32_t best = -1;
      for (std::int32_t leaf : tree.leaves()) {
        if (tree.status(leaf) != SlotStatus::Collision) continue;
        if (best < 0) {
          best = leaf;
          continue;
        }
        const auto lv = tree.node(leaf).level;
        const auto bv = tree.node(best).level;
        auto ls = tree.slot_label(leaf);
        auto bs = tree.slot_label(best);
        if (std::tuple(lv, ls.slot, ls.derived) < std::tuple(bv, bs.slot, bs.derived)) best = leaf;
      }
      if (best < 0) break;  // fully resolved; covered mass is 1
      current = best;
    }
    if (covered_out) (*covered_out)[k] = covered.value();
  }

  DegreeProfile profile = infer_profile(frontier_observations(trees), inference);
  auto handles = frontier_handles(trees);
  for (std::size_t i = 0; i < handles.size(); ++i) {
    profile.refs[i] = {handles[i].tree, handles[i].node};
  }
  return profile;
}

ProtocolResult run_cstp(const UserPopulation& population, const CstpParams& params) {
  if (params.k_trees < 2) throw std::invalid_argument("run_cstp: needs K >= 2 trees");
  ProtocolResult res;
  std::vector<SplitTree> trees;
  trees.reserve(params.k_trees);
  for (std::uint32_t k = 0; k < params.k_trees; ++k) {
    trees.emplace_back(static_cast<std::int32_t>(k));
    trees.back().transmit(population, trees.back().root(), res.metrics);
    log_transmit(res.trace, trees.back(), trees.back().root());
    charge(res.metrics, res.trace, FeedbackKind::EstimationSlot,
           params.feedback.estimation_per_slot);
  }

  DegreeProfile profile =
      run_estimation_phase(trees, population, params.alpha, res.metrics, params.feedback,
                           res.trace, &res.estimation_covered, params.inference);
  res.estimation_slots = res.metrics.slots_used;

  PeelingGraph graph = PeelingGraph::build(trees);
  log_resolutions(res, graph.initial_resolutions());
  log_resolutions(res, graph.peel());

  if (!graph.is_complete()) {
    PlanOptions plan_options;
    plan_options.improvement_eps = params.improvement_eps;
    plan_options.max_len = params.max_order_len;
    PlanResult plan = plan_split_order(profile, params.reward, plan_options);
    res.planned_order_length = static_cast<std::uint32_t>(plan.order.length());

    if (!plan.order.empty()) {
      charge(res.metrics, res.trace, FeedbackKind::OrderBroadcast,
             params.feedback.order_broadcast);
      std::vector<LeafHandle> frontier = frontier_handles(trees);
      for (std::size_t s : plan.order.steps) {
        LeafHandle h = frontier[s];
        SplitTree& tree = trees[static_cast<std::size_t>(h.tree)];
        auto [l, r] = tree.split_scheduled(population, h.node, res.metrics);
        log_transmit(res.trace, tree, l);
        log_derive(res.trace, tree, r);
        frontier[s] = {h.tree, l};
        frontier.insert(frontier.begin() + static_cast<std::ptrdiff_t>(s) + 1, {h.tree, r});
        graph.add_split(tree, h.node, l, r);
        auto resolved = graph.peel();
        log_resolutions(res, resolved);
        log_attempt(res.trace, resolved.size());
        if (graph.is_complete()) break;
      }
    }
  }

  if (!graph.is_complete()) {
    // Refresh posteriors from everything observed so far; only unresolved
    // collision leaves need distributions.
    std::vector<LeafHandle> handles = frontier_handles(trees);
    std::vector<LeafObservation> obs = frontier_observations(trees);
    std::vector<char> wanted(obs.size(), 0);
    for (std::size_t i = 0; i < obs.size(); ++i) {
      wanted[i] = obs[i].status == SlotStatus::Collision &&
                  graph.residual_degree(handles[i].tree, handles[i].node) > 0;
    }
    InferOptions refresh_options = params.inference;
    refresh_options.wanted = &wanted;
    DegreeProfile current = infer_profile(obs, refresh_options);
    for (std::size_t i = 0; i < handles.size(); ++i) {
      current.refs[i] = {handles[i].tree, handles[i].node};
      if (obs[i].status == SlotStatus::Collision && !wanted[i]) {
        // Fully peeled collision: its degree is known exactly.
        current.entries[i] = LeafDegreePosterior::point(
            static_cast<std::int32_t>(graph.original_degree(handles[i].tree, handles[i].node)));
      }
    }

    std::vector<char> eligible(handles.size(), 0);
    auto refresh_eligibility = [&]() {
      eligible.assign(handles.size(), 0);
      for (std::size_t i = 0; i < handles.size(); ++i) {
        eligible[i] = trees[static_cast<std::size_t>(handles[i].tree)].status(handles[i].node) ==
                          SlotStatus::Collision &&
                      graph.residual_degree(handles[i].tree, handles[i].node) > 0;
      }
    };
    refresh_eligibility();
    while (!graph.is_complete()) {
      std::size_t s = select_tail_split(current, &eligible);
      LeafHandle h = handles[s];
      SplitTree& tree = trees[static_cast<std::size_t>(h.tree)];
      charge(res.metrics, res.trace, FeedbackKind::TailSplit, params.feedback.tail_per_split);
      auto [l, r] = tree.split(population, h.node, res.metrics);
      res.tail_splits += 1;
      log_transmit(res.trace, tree, l);
      log_derive(res.trace, tree, r);

      LeafDegreePosterior predicted = predict_child(current.entries[s]);
      LeafDegreePosterior left_post = condition_child(predicted, tree.status(l));
      LeafDegreePosterior right_post = condition_child(predicted, tree.status(r));
      current.entries[s] = left_post;
      current.entries.insert(current.entries.begin() + static_cast<std::ptrdiff_t>(s) + 1,
                             right_post);
      current.refs[s] = {h.tree, l};
      current.refs.insert(current.refs.begin() + static_cast<std::ptrdiff_t>(s) + 1, {h.tree, r});
      handles[s] = {h.tree, l};
      handles.insert(handles.begin() + static_cast<std::ptrdiff_t>(s) + 1, {h.tree, r});

      graph.add_split(tree, h.node, l, r);
      auto resolved = graph.peel();
      log_resolutions(res, resolved);
      log_attempt(res.trace, resolved.size());
      refresh_eligibility();
    }
  }

  charge(res.metrics, res.trace, FeedbackKind::Terminate, params.feedback.terminate);
  res.recovered_users = graph.resolved_users();
  if (res.recovered_users.size() != res.metrics.recovered) {
    throw std::logic_error("run_cstp: decode accounting mismatch");
  }
  res.trees = std::move(trees);
  return res;
}

RunMetrics replay_metrics(const std::vector<TraceEvent>& trace) {
  RunMetrics m;
  for (const auto& e : trace) {
    switch (e.kind) {
      case TraceEvent::Kind::Transmit: m.slots_used += 1; break;
      case TraceEvent::Kind::Decode: m.recovered += 1; break;
      case TraceEvent::Kind::Feedback: m.feedback += e.count; break;
      default: break;
    }
  }
  return m;
}

bool validate_trace(const ProtocolResult& result) {
  RunMetrics replayed = replay_metrics(result.trace);
  if (replayed.slots_used != result.metrics.slots_used ||
      replayed.recovered != result.metrics.recovered ||
      replayed.feedback != result.metrics.feedback) {
    return false;
  }
  std::vector<char> resolved;
  std::vector<std::uint32_t> users;
  for (const auto& e : result.trace) {
    if (e.kind != TraceEvent::Kind::Decode) continue;
    if (e.tree < 0 || static_cast<std::size_t>(e.tree) >= result.trees.size()) return false;
    const SplitTree& tree = result.trees[static_cast<std::size_t>(e.tree)];
    if (e.node < 0 || static_cast<std::size_t>(e.node) >= tree.node_count()) return false;
    const TreeNode& n = tree.node(e.node);
    if (!n.has_signal()) return false;
    // The decode step is sound iff the check's residual at this point in the
    // log is exactly the reported user.
    std::uint32_t residual_user = 0;
    std::size_t residual_size = 0;
    for (std::uint32_t u : n.genie_signal->users) {
      if (u < resolved.size() && resolved[u]) continue;
      residual_user = u;
      residual_size += 1;
    }
    if (residual_size != 1 || residual_user != e.user) return false;
    if (e.user >= resolved.size()) resolved.resize(e.user + 1, 0);
    if (resolved[e.user]) return false;
    resolved[e.user] = 1;
    users.push_back(e.user);
  }
  std::sort(users.begin(), users.end());
  return users == result.recovered_users;
}

}  // namespace cstp
