#include "cstp/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cstp {

namespace {

// Binomial(n, 1/2) pmf over 0..n. The multiplicative recurrence is exact in
// double for n <= 55 (all intermediate counts below 2^53) and accurate to a
// few ulp beyond.
std::vector<double> half_binomial(std::int32_t n) {
  std::vector<double> pmf(static_cast<std::size_t>(n) + 1);
  double v = std::exp2(static_cast<double>(-n));
  for (std::int32_t d = 0; d <= n; ++d) {
    pmf[static_cast<std::size_t>(d)] = v;
    v = v * static_cast<double>(n - d) / static_cast<double>(d + 1);
  }
  return pmf;
}

double entry_score(const LeafDegreePosterior& e, const RewardFunction& reward) {
  double s = 0.0;
  for (const auto& [d, v] : reward.values) {
    if (d >= 1) s += e.pr(d) * v;
  }
  return s;
}

}  // namespace

RewardFunction RewardFunction::standard() {
  return RewardFunction{{{2, 0.5}, {3, 0.5}}};
}

RewardFunction RewardFunction::parse(const std::string& text) {
  RewardFunction r;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::string body = item;
    if (body.rfind("d=", 0) == 0) body = body.substr(2);
    auto colon = body.find(':');
    if (colon == std::string::npos) {
      throw std::invalid_argument("reward: expected d:value in '" + item + "'");
    }
    std::int32_t d = std::stoi(body.substr(0, colon));
    double v = std::stod(body.substr(colon + 1));
    if (d < 0 || v < 0.0) throw std::invalid_argument("reward: degree and value must be >= 0");
    r.values.emplace_back(d, v);
  }
  if (r.values.empty()) throw std::invalid_argument("reward: empty specification");
  std::sort(r.values.begin(), r.values.end());
  return r;
}

double RewardFunction::at(std::int32_t d) const {
  for (const auto& [deg, v] : values) {
    if (deg == d) return v;
  }
  return 0.0;
}

std::string RewardFunction::text() const {
  std::string out;
  for (const auto& [d, v] : values) {
    if (!out.empty()) out += ',';
    out += "d=" + std::to_string(d) + ':' + std::to_string(v);
  }
  return out;
}

LeafDegreePosterior predict_child(const LeafDegreePosterior& parent) {
  const std::int32_t d_max = parent.truncation;
  LeafDegreePosterior child;
  child.min_degree = 0;
  child.truncation = d_max;
  child.tail_mass_bound = parent.tail_mass_bound;
  child.probs.assign(static_cast<std::size_t>(std::max(d_max, 0)) + 1, 0.0);
  // One binomial row walked up the parent support via Pascal's recurrence
  // B(d; n+1) = (B(d; n) + B(d-1; n)) / 2.
  std::vector<double> row = half_binomial(std::max(parent.min_degree, 0));
  for (std::int32_t dp = std::max(parent.min_degree, 0); dp <= d_max; ++dp) {
    const double pp = parent.pr(dp);
    if (pp != 0.0) {
      for (std::int32_t d = 0; d <= dp; ++d) {
        child.probs[static_cast<std::size_t>(d)] += pp * row[static_cast<std::size_t>(d)];
      }
    }
    if (dp < d_max) {
      row.push_back(0.0);
      for (std::int32_t d = dp + 1; d >= 1; --d) {
        row[static_cast<std::size_t>(d)] =
            0.5 * (row[static_cast<std::size_t>(d)] + row[static_cast<std::size_t>(d - 1)]);
      }
      row[0] *= 0.5;
    }
  }
  while (child.probs.size() > 1 && child.probs.back() == 0.0) {
    child.probs.pop_back();
    child.truncation -= 1;
  }
  return child;
}

std::pair<LeafDegreePosterior, LeafDegreePosterior> predict_children(
    const LeafDegreePosterior& parent) {
  LeafDegreePosterior c = predict_child(parent);
  return {c, c};
}

bool splittable(const LeafDegreePosterior& entry) {
  return entry.mass_at_least(2) > 0.0;
}

DegreeProfile apply_split(const DegreeProfile& profile, std::size_t s) {
  if (s >= profile.size()) throw std::out_of_range("apply_split: index out of range");
  if (!splittable(profile.entries[s])) {
    throw std::logic_error("apply_split: entry has no collision-degree mass");
  }
  DegreeProfile out;
  out.entries.reserve(profile.size() + 1);
  out.refs.reserve(profile.size() + 1);
  LeafDegreePosterior child = predict_child(profile.entries[s]);
  for (std::size_t i = 0; i < profile.size(); ++i) {
    if (i == s) {
      out.entries.push_back(child);
      out.entries.push_back(child);
      out.refs.push_back({profile.refs[i].tree, -1});
      out.refs.push_back({profile.refs[i].tree, -1});
    } else {
      out.entries.push_back(profile.entries[i]);
      out.refs.push_back(profile.refs[i]);
    }
  }
  return out;
}

double score(const DegreeProfile& profile, const RewardFunction& reward) {
  double s = 0.0;
  for (const auto& e : profile.entries) s += entry_score(e, reward);
  return s;
}

PlanResult plan_split_order(const DegreeProfile& profile, const RewardFunction& reward,
                            const PlanOptions& options) {
  PlanResult result;
  result.predicted = profile;
  result.initial_score = score(profile, reward);

  std::int64_t collision_entries = 0;
  std::int32_t k_trees = 1;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    if (splittable(profile.entries[i])) collision_entries += 1;
    k_trees = std::max(k_trees, profile.refs[i].tree + 1);
  }
  std::int64_t max_len =
      options.max_len >= 0 ? options.max_len : 4 * static_cast<std::int64_t>(k_trees) * collision_entries;
  if (collision_entries == 0 || max_len == 0) return result;

  // One-step gain of splitting entry i; refreshed only for new children.
  auto gain = [&](const LeafDegreePosterior& e) {
    return 2.0 * entry_score(predict_child(e), reward) - entry_score(e, reward);
  };
  std::vector<double> delta(profile.size());
  for (std::size_t i = 0; i < profile.size(); ++i) {
    delta[i] = splittable(profile.entries[i]) ? gain(profile.entries[i])
                                              : -std::numeric_limits<double>::infinity();
  }

  double current = result.initial_score;
  auto& entries = result.predicted.entries;
  auto& refs = result.predicted.refs;
  while (static_cast<std::int64_t>(result.order.steps.size()) < max_len) {
    std::size_t best = 0;
    double best_gain = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < delta.size(); ++i) {
      if (delta[i] > best_gain) {
        best_gain = delta[i];
        best = i;
      }
    }
    if (!(best_gain > options.improvement_eps)) break;
    // Same evolution as apply_split, in place.
    LeafDegreePosterior child = predict_child(entries[best]);
    double child_delta = splittable(child) ? gain(child) : -std::numeric_limits<double>::infinity();
    entries[best] = child;
    entries.insert(entries.begin() + static_cast<std::ptrdiff_t>(best) + 1, std::move(child));
    refs[best].node = -1;
    refs.insert(refs.begin() + static_cast<std::ptrdiff_t>(best) + 1, refs[best]);
    delta[best] = child_delta;
    delta.insert(delta.begin() + static_cast<std::ptrdiff_t>(best) + 1, child_delta);
    current += best_gain;
    result.order.steps.push_back(best);
    result.scores.push_back(current);
  }
  return result;
}

std::size_t select_tail_split(const DegreeProfile& profile, const std::vector<char>* eligible) {
  if (eligible && eligible->size() != profile.size()) {
    throw std::invalid_argument("select_tail_split: mask size mismatch");
  }
  double best_mean = -1.0;
  std::size_t best = profile.size();
  for (std::size_t i = 0; i < profile.size(); ++i) {
    if (eligible && !(*eligible)[i]) continue;
    if (!splittable(profile.entries[i])) continue;
    double m = profile.entries[i].mean();
    if (m > best_mean) {
      best_mean = m;
      best = i;
    }
  }
  if (best == profile.size()) {
    throw std::logic_error("select_tail_split: no unresolved collision entry");
  }
  return best;
}

}  // namespace cstp
