#include "cstp/decoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace cstp {

std::size_t PeelingGraph::check_at(std::int32_t tree, std::int32_t node) const {
  for (std::size_t i = 0; i < checks_.size(); ++i) {
    if (checks_[i].tree == tree && checks_[i].node == node) return i;
  }
  return checks_.size();
}

std::size_t PeelingGraph::add_check(std::int32_t tree, std::int32_t node, SlotStatus status,
                                    const SlotSignal& signal) {
  Check c;
  c.tree = tree;
  c.node = node;
  c.status = status;
  c.original_degree = signal.size();
  for (std::uint32_t u : signal.users) {
    if (u >= user_checks_.size()) {
      user_checks_.resize(u + 1);
      resolved_.resize(u + 1, 0);
    }
    if (resolved_[u]) continue;
    c.residual.push_back(u);
  }
  std::size_t id = checks_.size();
  checks_.push_back(std::move(c));
  for (std::uint32_t u : checks_[id].residual) user_checks_[u].push_back(id);
  if (checks_[id].residual.size() == 1) worklist_.push_back(id);
  return id;
}

void PeelingGraph::resolve(std::uint32_t user, std::size_t via_check, DecodeSource source,
                           std::vector<Resolution>& out) {
  if (resolved_[user]) return;
  resolved_[user] = 1;
  resolved_users_.push_back(user);
  out.push_back(Resolution{user, checks_[via_check].tree, checks_[via_check].node, source});
  // Replica pointers: cancel this user from every check carrying it.
  for (std::size_t id : user_checks_[user]) {
    auto& residual = checks_[id].residual;
    auto it = std::lower_bound(residual.begin(), residual.end(), user);
    if (it != residual.end() && *it == user) {
      residual.erase(it);
      if (checks_[id].alive && residual.size() == 1) worklist_.push_back(id);
    }
  }
  user_checks_[user].clear();
}

PeelingGraph PeelingGraph::build(const std::vector<SplitTree>& trees) {
  PeelingGraph g;
  std::uint32_t max_user = 0;
  bool any = false;
  for (const auto& tree : trees) {
    for (std::int32_t leaf : tree.leaves()) {
      const TreeNode& n = tree.node(leaf);
      if (!n.has_signal()) throw std::logic_error("build_graph: frontier leaf without signal");
      for (std::uint32_t u : n.genie_signal->users) {
        max_user = std::max(max_user, u);
        any = true;
      }
    }
  }
  g.resolved_.assign(any ? max_user + 1 : 0, 0);
  g.user_checks_.assign(any ? max_user + 1 : 0, {});
  for (const auto& tree : trees) {
    for (std::int32_t leaf : tree.leaves()) {
      const TreeNode& n = tree.node(leaf);
      g.add_check(tree.index(), leaf, *n.status, *n.genie_signal);
    }
  }
  // Single slots are direct receptions.
  for (std::size_t id = 0; id < g.checks_.size(); ++id) {
    if (g.checks_[id].status == SlotStatus::Single) {
      std::uint32_t u = g.checks_[id].residual.empty() ? 0 : g.checks_[id].residual.front();
      if (!g.checks_[id].residual.empty()) {
        g.resolve(u, id, DecodeSource::SingleSlot, g.initial_);
      }
    }
  }
  return g;
}

std::vector<Resolution> PeelingGraph::peel() {
  std::vector<Resolution> out;
  std::size_t cursor = 0;
  while (cursor < worklist_.size()) {
    std::size_t id = worklist_[cursor++];
    if (!checks_[id].alive || checks_[id].residual.size() != 1) continue;
    std::uint32_t user = checks_[id].residual.front();
    DecodeSource src =
        checks_[id].status == SlotStatus::Single ? DecodeSource::SingleSlot : DecodeSource::Peel;
    resolve(user, id, src, out);
  }
  worklist_.clear();
  return out;
}

void PeelingGraph::add_split(const SplitTree& tree, std::int32_t parent, std::int32_t left,
                             std::int32_t right) {
  std::size_t pid = check_at(tree.index(), parent);
  if (pid < checks_.size()) {
    checks_[pid].alive = false;
    for (std::uint32_t u : checks_[pid].residual) {
      auto& list = user_checks_[u];
      list.erase(std::remove(list.begin(), list.end(), pid), list.end());
    }
    checks_[pid].residual.clear();
  }
  for (std::int32_t child : {left, right}) {
    const TreeNode& n = tree.node(child);
    if (!n.has_signal()) throw std::logic_error("add_split: child without signal");
    add_check(tree.index(), child, *n.status, *n.genie_signal);
  }
}

bool PeelingGraph::is_complete() const {
  for (const auto& c : checks_) {
    if (c.alive && !c.residual.empty()) return false;
  }
  return true;
}

bool PeelingGraph::is_resolved(std::uint32_t user) const {
  return user < resolved_.size() && resolved_[user] != 0;
}

std::vector<std::uint32_t> PeelingGraph::resolved_users() const {
  std::vector<std::uint32_t> out = resolved_users_;
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t PeelingGraph::residual_degree(std::int32_t tree, std::int32_t node) const {
  std::size_t id = check_at(tree, node);
  if (id >= checks_.size() || !checks_[id].alive) return 0;
  return checks_[id].residual.size();
}

std::size_t PeelingGraph::original_degree(std::int32_t tree, std::int32_t node) const {
  std::size_t id = check_at(tree, node);
  if (id >= checks_.size()) return 0;
  return checks_[id].original_degree;
}

}  // namespace cstp
