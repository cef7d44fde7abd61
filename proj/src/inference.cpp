#include "cstp/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cstp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLn2 = 0.6931471805599453;

// Exact coefficient arithmetic is carried in plain doubles; the scheme is
// safe for population windows up to this size (see merge_without_leaf).
constexpr std::int64_t kMaxWindow = 1024;

struct TreeLayout {
  std::vector<std::size_t> flat;  // flat observation indices, input order
  std::vector<double> mass;
  std::vector<int> mass_exp;
  std::vector<SlotStatus> status;
  double open_mass = 0.0;  // total mass of idle + single leaves
  std::int64_t single_count = 0;
  std::int64_t collision_count = 0;
  std::int64_t floor = 0;  // minimal population consistent with the tree

  std::size_t leaf_count() const { return flat.size(); }
};

std::vector<TreeLayout> build_layouts(const std::vector<LeafObservation>& obs) {
  if (obs.empty()) throw std::invalid_argument("inference: no observations");
  std::int32_t k_max = -1;
  for (const auto& o : obs) {
    if (o.tree < 0) throw std::invalid_argument("inference: negative tree index");
    k_max = std::max(k_max, o.tree);
  }
  std::vector<TreeLayout> trees(static_cast<std::size_t>(k_max) + 1);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& o = obs[i];
    auto& t = trees[static_cast<std::size_t>(o.tree)];
    t.flat.push_back(i);
    t.mass.push_back(o.mass());
    t.mass_exp.push_back(o.mass_exp);
    t.status.push_back(o.status);
  }
  for (std::size_t k = 0; k < trees.size(); ++k) {
    auto& t = trees[k];
    if (t.flat.empty()) {
      throw std::invalid_argument("inference: tree " + std::to_string(k) + " has no leaves");
    }
    MassSum total;
    for (std::size_t j = 0; j < t.leaf_count(); ++j) {
      total.add_pow2(t.mass_exp[j]);
      switch (t.status[j]) {
        case SlotStatus::Idle:
          t.open_mass += t.mass[j];
          break;
        case SlotStatus::Single:
          t.open_mass += t.mass[j];
          t.single_count += 1;
          t.floor += 1;
          break;
        case SlotStatus::Collision:
          t.collision_count += 1;
          t.floor += 2;
          break;
      }
    }
    if (!total.is_one()) {
      throw std::invalid_argument("inference: leaf masses of tree " + std::to_string(k) +
                                  " do not sum to 1");
    }
  }
  return trees;
}

// ---------------------------------------------------------------------------
// Probability-normalized polynomial arithmetic.
//
// A tree state vector v over m = 0..n holds v[m] = m! * [x^m] of the product
// of per-leaf series w(d) = P^d/d! x^d. Every v[m] equals a sum of
// multinomial probabilities of a sub-allocation, so 0 <= v[m] <= 1 throughout
// and the per-leaf update kernels need no renormalization: the kernel factor
// is kappa_d(m) = C(m,d) P^d <= (1+P)^m, within double range for any tree
// with two or more leaves (P <= 1/2) and n <= kMaxWindow.
// ---------------------------------------------------------------------------

struct ScaledVec {
  std::vector<double> v;
  double log_scale = 0.0;  // true value = v[m] * exp(log_scale)
};

void rescale(ScaledVec& s) {
  double mx = 0.0;
  for (double x : s.v) mx = std::max(mx, x);
  if (mx > 0.0 && mx < 1e-120) {
    double inv = 1.0 / mx;
    for (double& x : s.v) x *= inv;
    s.log_scale += std::log(mx);
  }
}

ScaledVec unit_vec(std::int64_t n) {
  ScaledVec s;
  s.v.assign(static_cast<std::size_t>(n) + 1, 0.0);
  s.v[0] = 1.0;
  return s;
}

void mul_single_leaf(std::vector<double>& v, double p) {
  for (std::size_t m = v.size() - 1; m >= 1; --m) {
    v[m] = p * static_cast<double>(m) * v[m - 1];
  }
  v[0] = 0.0;
}

void mul_collision_leaf(std::vector<double>& v, double p, std::int64_t cap) {
  const std::int64_t n = static_cast<std::int64_t>(v.size()) - 1;
  for (std::int64_t m = n; m >= 0; --m) {
    double acc = 0.0;
    if (m >= 2) {
      // kappa_d = C(m,d) p^d, advanced multiplicatively over d.
      double kappa = 0.5 * static_cast<double>(m) * static_cast<double>(m - 1) * p * p;
      const std::int64_t d_hi = std::min<std::int64_t>(cap, m);
      for (std::int64_t d = 2; d <= d_hi; ++d) {
        double src = v[static_cast<std::size_t>(m - d)];
        if (src != 0.0) acc += kappa * src;
        kappa *= p * static_cast<double>(m - d) / static_cast<double>(d + 1);
      }
    }
    v[static_cast<std::size_t>(m)] = acc;
  }
}

void mul_pinned_leaf(ScaledVec& s, double p, std::int64_t pin) {
  auto& v = s.v;
  const std::int64_t n = static_cast<std::int64_t>(v.size()) - 1;
  if (pin == 0) return;
  if (pin > n) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  // The constant p^pin lives in the log scale; the kernel is C(m,pin),
  // which stays within double range for n <= kMaxWindow.
  s.log_scale += static_cast<double>(pin) * std::log(p);
  double kappa = 1.0;  // C(m,pin), advanced downward from m = n
  for (std::int64_t i = 0; i < pin; ++i) {
    kappa *= static_cast<double>(n - i) / static_cast<double>(pin - i);
  }
  for (std::int64_t m = n; m >= 0; --m) {
    double out = 0.0;
    if (m >= pin) {
      double src = v[static_cast<std::size_t>(m - pin)];
      if (src != 0.0) out = kappa * src;
      kappa *= static_cast<double>(m - pin) / static_cast<double>(m);
    }
    v[static_cast<std::size_t>(m)] = out;
  }
}

std::int64_t series_cap(std::int64_t n, double p) {
  double mean = static_cast<double>(n) * p;
  double slack = 12.0 * std::sqrt(std::max(mean * (1.0 - p), 1.0)) + 60.0;
  return std::min<std::int64_t>(n, static_cast<std::int64_t>(std::ceil(mean + slack)));
}

// Multiplies the state vector by one leaf's series. exact == true disables
// the collision-degree cap (used by joint_weight).
void mul_leaf(std::vector<double>& v, SlotStatus status, double p, bool exact) {
  const std::int64_t n = static_cast<std::int64_t>(v.size()) - 1;
  switch (status) {
    case SlotStatus::Idle:
      return;
    case SlotStatus::Single:
      mul_single_leaf(v, p);
      return;
    case SlotStatus::Collision:
      mul_collision_leaf(v, p, exact ? n : series_cap(n, p));
      return;
  }
}

// Product of all leaf series of one tree in v-space. A pinned leaf
// (local index, degree) replaces its series by the single pinned term.
ScaledVec tree_vector(const TreeLayout& t, std::int64_t n,
                      std::optional<std::pair<std::size_t, std::int64_t>> pin, bool exact) {
  ScaledVec s = unit_vec(n);
  for (std::size_t j = 0; j < t.leaf_count(); ++j) {
    if (pin && pin->first == j) {
      mul_pinned_leaf(s, t.mass[j], pin->second);
    } else {
      mul_leaf(s.v, t.status[j], t.mass[j], exact);
    }
    rescale(s);
  }
  return s;
}

// v-space product of two partial tree states:
//   g[m] = sum_j C(m,j) a[j] b[m-j]
// Row sums run with the binomial scaled by 2^-m so every intermediate stays
// in [0, m+1]; the true entry acc(m) 2^m is then re-centered on the vector
// max so no part of the window is flushed to zero.
ScaledVec merge_partials(const ScaledVec& a, const ScaledVec& b) {
  const std::int64_t n = static_cast<std::int64_t>(a.v.size()) - 1;
  std::vector<double> acc(static_cast<std::size_t>(n) + 1, 0.0);
  for (std::int64_t m = 0; m <= n; ++m) {
    double c = std::exp2(static_cast<double>(-m));  // C(m,j) 2^-m at j = 0
    double sum = 0.0;
    for (std::int64_t j = 0; j <= m; ++j) {
      double av = a.v[static_cast<std::size_t>(j)];
      double bv = b.v[static_cast<std::size_t>(m - j)];
      if (av != 0.0 && bv != 0.0) sum += c * av * bv;
      c *= static_cast<double>(m - j) / static_cast<double>(j + 1);
    }
    acc[static_cast<std::size_t>(m)] = sum;
  }
  double max_log = kNegInf;
  for (std::int64_t m = 0; m <= n; ++m) {
    double s = acc[static_cast<std::size_t>(m)];
    if (s > 0.0) max_log = std::max(max_log, std::log(s) + kLn2 * static_cast<double>(m));
  }
  ScaledVec g;
  g.v.assign(static_cast<std::size_t>(n) + 1, 0.0);
  if (max_log == kNegInf) {
    g.log_scale = a.log_scale + b.log_scale;
    return g;
  }
  g.log_scale = a.log_scale + b.log_scale + max_log;
  for (std::int64_t m = 0; m <= n; ++m) {
    double s = acc[static_cast<std::size_t>(m)];
    if (s > 0.0) {
      g.v[static_cast<std::size_t>(m)] =
          std::exp(std::log(s) + kLn2 * static_cast<double>(m) - max_log);
    }
  }
  return g;
}

// Certified upper bound (in log) on sum_{m > n} prod_k Pr(obs_k | m), from the
// binomial marginal of the idle/single region of each tree:
//   Pr(obs_k | m) <= C(m, S_k) q_k^S_k (1-q_k)^(m-S_k).
double log_tail_bound(const std::vector<TreeLayout>& trees, std::int64_t n,
                      std::int64_t only_tree = -1) {
  double log_b = 0.0;   // log prod_k b_k(n+1)
  double log_rho = 0.0; // log of the term ratio at n+2, decreasing in m
  bool any_decay = false;
  const double m1 = static_cast<double>(n + 1);
  for (std::size_t k = 0; k < trees.size(); ++k) {
    if (only_tree >= 0 && static_cast<std::size_t>(only_tree) != k) continue;
    const TreeLayout& t = trees[k];
    const double q = t.open_mass;
    const double s = static_cast<double>(t.single_count);
    if (q >= 1.0) {
      // Fully observed tree: the weight is a point mass at its single count.
      return (n >= t.floor) ? kNegInf : std::numeric_limits<double>::infinity();
    }
    if (q <= 0.0) continue;  // no decay from this tree
    if (m1 - s < 1.0) return std::numeric_limits<double>::infinity();
    any_decay = true;
    log_b += std::lgamma(m1 + 1.0) - std::lgamma(s + 1.0) - std::lgamma(m1 - s + 1.0) +
             s * std::log(q) + (m1 - s) * std::log1p(-q);
    log_rho += std::log1p(-q) + std::log((m1 + 1.0) / (m1 + 1.0 - s));
  }
  if (!any_decay) return std::numeric_limits<double>::infinity();
  if (log_rho >= 0.0) return std::numeric_limits<double>::infinity();
  return log_b - std::log1p(-std::exp(log_rho));
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

struct TreeDP {
  std::vector<ScaledVec> prefix;  // prefix[i] = product of leaves [0, i)
  std::vector<ScaledVec> suffix;  // suffix[i] = product of leaves [i, L)
  const ScaledVec& total() const { return prefix.back(); }
};

struct Engine {
  std::vector<TreeLayout> trees;
  std::int64_t n = 0;
  bool converged = false;
  double log_tail = kNegInf;
  std::vector<TreeDP> dp;
  // cross[k][m] = prod_{k' != k} scaled totals, and the matching log scale.
  std::vector<std::vector<double>> cross;
  std::vector<double> cross_log;
  std::vector<double> z_scaled;  // per tree: sum_m total_k[m] (per-tree mode)
  double log_z = kNegInf;        // log sum_m prod_k Pr(obs_k | m)
  bool per_tree_only = false;
};

void build_tree_dp(const TreeLayout& t, std::int64_t n, TreeDP& out, bool with_suffix) {
  const std::size_t leaf_n = t.leaf_count();
  out.prefix.clear();
  out.suffix.clear();
  out.prefix.reserve(leaf_n + 1);
  out.prefix.push_back(unit_vec(n));
  for (std::size_t j = 0; j < leaf_n; ++j) {
    ScaledVec next = out.prefix.back();
    mul_leaf(next.v, t.status[j], t.mass[j], false);
    rescale(next);
    out.prefix.push_back(std::move(next));
  }
  if (!with_suffix) return;
  out.suffix.resize(leaf_n + 1);
  out.suffix[leaf_n] = unit_vec(n);
  for (std::size_t j = leaf_n; j-- > 0;) {
    ScaledVec next = out.suffix[j + 1];
    mul_leaf(next.v, t.status[j], t.mass[j], false);
    rescale(next);
    out.suffix[j] = std::move(next);
  }
}

std::int64_t default_cap(const std::vector<TreeLayout>& trees) {
  std::int64_t floor = 0;
  std::int64_t collisions = 0;
  for (const auto& t : trees) {
    floor = std::max(floor, t.floor);
    collisions += t.collision_count;
  }
  return 64 * (floor + collisions);
}

Engine build_engine(const std::vector<LeafObservation>& obs, const InferOptions& options,
                    bool with_suffix) {
  Engine eng;
  eng.trees = build_layouts(obs);
  eng.per_tree_only = options.per_tree_only;
  const std::size_t k_trees = eng.trees.size();

  bool any_open = false;
  for (const auto& t : eng.trees) any_open = any_open || t.open_mass > 0.0;
  if (!any_open) {
    std::size_t k = 0;
    while (k < k_trees && eng.trees[k].open_mass > 0.0) ++k;
    throw DivergenceError(static_cast<std::int32_t>(k),
                          "inference: posterior sum diverges, tree " + std::to_string(k) +
                              " has no idle or single observation");
  }

  std::int64_t floor = 0;
  for (const auto& t : eng.trees) floor = std::max(floor, t.floor);
  std::int64_t cap = options.n_cap >= 0 ? options.n_cap : default_cap(eng.trees);
  cap = std::min(cap, kMaxWindow);
  cap = std::max(cap, floor);
  std::int64_t n = std::min(cap, std::max<std::int64_t>(floor + 32, 2 * floor));

  const double eps = options.eps_tail;
  std::vector<ScaledVec> totals(k_trees);
  std::vector<double> window;
  while (true) {
    eng.n = n;
    window.assign(static_cast<std::size_t>(n) + 1, 0.0);
    for (std::size_t k = 0; k < k_trees; ++k) totals[k] = tree_vector(eng.trees[k], n, {}, false);
    double z_scaled = 0.0;
    double log_scale_sum = 0.0;
    for (std::size_t k = 0; k < k_trees; ++k) log_scale_sum += totals[k].log_scale;
    for (std::int64_t m = 0; m <= n; ++m) {
      double prod = 1.0;
      for (std::size_t k = 0; k < k_trees; ++k) {
        prod *= totals[k].v[static_cast<std::size_t>(m)];
        if (prod == 0.0) break;
      }
      window[static_cast<std::size_t>(m)] = prod;
      z_scaled += prod;
    }
    eng.log_z = z_scaled > 0.0 ? std::log(z_scaled) + log_scale_sum : kNegInf;
    if (!eng.per_tree_only) {
      eng.log_tail = log_tail_bound(eng.trees, n);
      eng.converged = z_scaled > 0.0 && eng.log_tail <= std::log(eps) + eng.log_z;
    } else {
      // Each tree's own posterior must converge by itself.
      double worst_rel = kNegInf;
      bool all_ok = z_scaled > 0.0;
      for (std::size_t k = 0; k < k_trees && all_ok; ++k) {
        double zk = 0.0;
        for (double v : totals[k].v) zk += v;
        if (zk <= 0.0) {
          all_ok = false;
          break;
        }
        double rel = log_tail_bound(eng.trees, n, static_cast<std::int64_t>(k)) -
                     (std::log(zk) + totals[k].log_scale);
        worst_rel = std::max(worst_rel, rel);
      }
      eng.converged = all_ok && worst_rel <= std::log(eps);
      eng.log_tail = eng.log_z == kNegInf ? worst_rel : worst_rel + eng.log_z;
    }
    if (eng.converged || n >= cap) break;
    n = std::min(cap, 2 * n + 32);
  }

  if (eng.converged) {
    // The certified bound usually converges well past the posterior's real
    // support; trim the window to the measured (eps/2) upper quantile before
    // the quadratic per-leaf work, folding the discarded mass into the
    // reported tail.
    double log_scale_sum = 0.0;
    for (std::size_t k = 0; k < k_trees; ++k) log_scale_sum += totals[k].log_scale;
    auto quantile = [&](const std::vector<double>& w) {
      double total = 0.0;
      for (double p : w) total += p;
      double discarded = 0.0;
      std::int64_t q = static_cast<std::int64_t>(w.size()) - 1;
      while (q > 0 && discarded + w[static_cast<std::size_t>(q)] <= 0.5 * eps * total) {
        discarded += w[static_cast<std::size_t>(q)];
        q -= 1;
      }
      return std::pair<std::int64_t, double>(q, total > 0.0 ? discarded / total : 0.0);
    };
    std::int64_t q = 0;
    double rel_discard = 0.0;
    if (!eng.per_tree_only) {
      auto [qq, rel] = quantile(window);
      q = qq;
      rel_discard = rel;
    } else {
      for (std::size_t k = 0; k < k_trees; ++k) {
        auto [qq, rel] = quantile(totals[k].v);
        q = std::max(q, qq);
        rel_discard = std::max(rel_discard, rel);
      }
    }
    std::int64_t n_final = std::min(n, q + 4);
    if (rel_discard > 0.0) {
      eng.log_tail = log_add(eng.log_tail, std::log(rel_discard) + eng.log_z);
    }
    n = n_final;
    eng.n = n_final;
  }

  if (!eng.converged) {
    for (std::size_t k = 0; k < k_trees; ++k) {
      if (eng.trees[k].open_mass <= 0.0) {
        throw DivergenceError(static_cast<std::int32_t>(k),
                              "inference: population sum not converged at cap " +
                                  std::to_string(cap) + ", tree " + std::to_string(k) +
                                  " has no idle or single observation");
      }
    }
    if (eng.log_z == kNegInf) {
      throw std::runtime_error("inference: observations have zero weight for every population");
    }
  }

  // Final pass with prefixes (and suffixes, when per-leaf extraction is
  // coming) at the settled window.
  eng.dp.resize(k_trees);
  for (std::size_t k = 0; k < k_trees; ++k) {
    build_tree_dp(eng.trees[k], eng.n, eng.dp[k], with_suffix);
  }
  eng.z_scaled.assign(k_trees, 0.0);
  eng.cross.assign(k_trees, {});
  eng.cross_log.assign(k_trees, 0.0);
  const std::size_t width = static_cast<std::size_t>(eng.n) + 1;
  for (std::size_t k = 0; k < k_trees; ++k) {
    for (std::size_t m = 0; m < width; ++m) eng.z_scaled[k] += eng.dp[k].total().v[m];
    eng.cross[k].assign(width, 1.0);
    if (!eng.per_tree_only) {
      for (std::size_t k2 = 0; k2 < k_trees; ++k2) {
        if (k2 == k) continue;
        eng.cross_log[k] += eng.dp[k2].total().log_scale;
        const auto& w = eng.dp[k2].total().v;
        for (std::size_t m = 0; m < width; ++m) eng.cross[k][m] *= w[m];
      }
    }
  }
  return eng;
}

// log of sum_m kappa_pin(m) g[m-pin] cross[m] for one pinned degree, where
// kappa_pin(m) = C(m,pin) P^pin. The constant P^pin moves into the log (it
// underflows raw doubles for deep leaves) and the binomial factor is kept in
// range by block rescaling.
double log_pinned_sum(const Engine& eng, std::size_t tree, const ScaledVec& g, int mass_exp,
                      std::int64_t pin) {
  const std::int64_t n = eng.n;
  if (pin > n) return kNegInf;
  const auto& cross = eng.cross[tree];
  double c = 1.0;  // C(m, pin), advanced over m
  double acc = 0.0;
  double scale_log = 0.0;
  for (std::int64_t m = pin; m <= n; ++m) {
    double gv = g.v[static_cast<std::size_t>(m - pin)];
    double cv = cross[static_cast<std::size_t>(m)];
    if (gv != 0.0 && cv != 0.0) acc += c * gv * cv;
    c *= static_cast<double>(m + 1) / static_cast<double>(m + 1 - pin);
    if (c > 1e280) {
      c *= 1e-280;
      acc *= 1e-280;
      scale_log += std::log(1e280);
    }
  }
  if (acc <= 0.0) return kNegInf;
  return std::log(acc) + scale_log -
         kLn2 * static_cast<double>(mass_exp) * static_cast<double>(pin) + g.log_scale +
         eng.cross_log[tree];
}

double engine_log_z(const Engine& eng, std::size_t tree) {
  if (!eng.per_tree_only) return eng.log_z;
  if (eng.z_scaled[tree] <= 0.0) return kNegInf;
  return std::log(eng.z_scaled[tree]) + eng.dp[tree].total().log_scale;
}

LeafDegreePosterior extract_posterior(const Engine& eng, std::size_t tree, std::size_t local,
                                      double eps_tail) {
  const TreeLayout& t = eng.trees[tree];
  if (t.status[local] != SlotStatus::Collision) {
    return LeafDegreePosterior::point(t.status[local] == SlotStatus::Single ? 1 : 0);
  }
  const ScaledVec g = merge_partials(eng.dp[tree].prefix[local], eng.dp[tree].suffix[local + 1]);
  const double log_z = engine_log_z(eng, tree);
  if (log_z == kNegInf) {
    throw std::runtime_error("inference: zero total weight while extracting a posterior");
  }
  const std::int64_t d_hi = std::min(series_cap(eng.n, t.mass[local]), eng.n);

  LeafDegreePosterior post;
  post.min_degree = 2;
  post.probs.reserve(static_cast<std::size_t>(std::max<std::int64_t>(d_hi - 1, 1)));
  double cum = 0.0;
  std::int64_t last = 1;
  for (std::int64_t d = 2; d <= d_hi; ++d) {
    double lt = log_pinned_sum(eng, tree, g, t.mass_exp[local], d);
    double p = lt == kNegInf ? 0.0 : std::exp(lt - log_z);
    post.probs.push_back(p);
    cum += p;
    last = d;
    if (1.0 - cum <= 0.5 * eps_tail) break;
  }
  if (cum <= 0.0) {
    throw std::runtime_error("inference: collision leaf posterior has no representable mass");
  }
  post.truncation = static_cast<std::int32_t>(last);
  double n_tail = eng.log_z == kNegInf ? 0.0 : std::exp(eng.log_tail - eng.log_z);
  post.tail_mass_bound = std::max(0.0, 1.0 - cum) + (eng.converged ? std::min(n_tail, 1.0) : 1.0);
  post.tail_mass_bound = std::min(post.tail_mass_bound, 1.0);
  return post;
}

}  // namespace

double LeafObservation::mass() const { return std::ldexp(1.0, -mass_exp); }

LeafDegreePosterior LeafDegreePosterior::point(std::int32_t d) {
  LeafDegreePosterior p;
  p.min_degree = d;
  p.probs = {1.0};
  p.truncation = d;
  p.tail_mass_bound = 0.0;
  return p;
}

double LeafDegreePosterior::pr(std::int32_t d) const {
  if (d < min_degree) return 0.0;
  std::size_t i = static_cast<std::size_t>(d - min_degree);
  return i < probs.size() ? probs[i] : 0.0;
}

double LeafDegreePosterior::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    m += static_cast<double>(min_degree + static_cast<std::int32_t>(i)) * probs[i];
  }
  return m;
}

double LeafDegreePosterior::mass_at_least(std::int32_t d) const {
  double m = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (min_degree + static_cast<std::int32_t>(i) >= d) m += probs[i];
  }
  return m;
}

Omega omega(const DegreeProfile& profile) {
  if (profile.entries.empty()) throw std::invalid_argument("omega: empty profile");
  std::int32_t d_max = 0;
  for (const auto& e : profile.entries) d_max = std::max(d_max, e.truncation);
  Omega out;
  out.expected.assign(static_cast<std::size_t>(d_max) + 1, 0.0);
  out.leaf_count = profile.entries.size();
  for (const auto& e : profile.entries) {
    for (std::size_t i = 0; i < e.probs.size(); ++i) {
      out.expected[static_cast<std::size_t>(e.min_degree) + i] += e.probs[i];
    }
  }
  return out;
}

double Omega::expected_count(std::int32_t d) const {
  if (d < 0 || static_cast<std::size_t>(d) >= expected.size()) return 0.0;
  return expected[static_cast<std::size_t>(d)];
}

double Omega::fraction(std::int32_t d) const {
  return leaf_count == 0 ? 0.0 : expected_count(d) / static_cast<double>(leaf_count);
}

double joint_weight(const std::vector<LeafObservation>& observations,
                    std::optional<std::pair<std::size_t, std::int32_t>> pinned,
                    std::int64_t n_hat) {
  if (n_hat < 0) throw std::invalid_argument("joint_weight: negative population");
  if (n_hat > kMaxWindow) throw std::invalid_argument("joint_weight: population beyond engine range");
  auto trees = build_layouts(observations);
  std::optional<std::pair<std::size_t, std::size_t>> pin_loc;  // (tree, local)
  std::int64_t pin_degree = 0;
  if (pinned) {
    if (pinned->first >= observations.size()) {
      throw std::invalid_argument("joint_weight: pinned leaf out of range");
    }
    const auto& o = observations[pinned->first];
    pin_degree = pinned->second;
    // A pin inconsistent with the leaf's observation selects no realizations.
    switch (o.status) {
      case SlotStatus::Idle:
        if (pin_degree != 0) return 0.0;
        break;
      case SlotStatus::Single:
        if (pin_degree != 1) return 0.0;
        break;
      case SlotStatus::Collision:
        if (pin_degree < 2) return 0.0;
        break;
    }
    for (std::size_t k = 0; k < trees.size(); ++k) {
      const auto& f = trees[k].flat;
      for (std::size_t j = 0; j < f.size(); ++j) {
        if (f[j] == pinned->first) pin_loc = {k, j};
      }
    }
  }
  double result = 1.0;
  for (std::size_t k = 0; k < trees.size(); ++k) {
    std::optional<std::pair<std::size_t, std::int64_t>> pin;
    if (pin_loc && pin_loc->first == k) pin = {pin_loc->second, pin_degree};
    ScaledVec s = tree_vector(trees[k], n_hat, pin, true);
    result *= s.v[static_cast<std::size_t>(n_hat)] * std::exp(s.log_scale);
  }
  return result;
}

LeafDegreePosterior leaf_degree_posterior(const std::vector<LeafObservation>& observations,
                                          std::size_t leaf, double eps_tail, std::int64_t n_cap) {
  if (leaf >= observations.size()) {
    throw std::invalid_argument("leaf_degree_posterior: leaf out of range");
  }
  if (!(eps_tail > 0.0)) throw std::invalid_argument("leaf_degree_posterior: eps_tail must be > 0");
  if (observations[leaf].status != SlotStatus::Collision) {
    return LeafDegreePosterior::point(observations[leaf].status == SlotStatus::Single ? 1 : 0);
  }
  InferOptions options;
  options.eps_tail = eps_tail;
  options.n_cap = n_cap;
  Engine eng = build_engine(observations, options, true);
  for (std::size_t k = 0; k < eng.trees.size(); ++k) {
    const auto& f = eng.trees[k].flat;
    for (std::size_t j = 0; j < f.size(); ++j) {
      if (f[j] == leaf) return extract_posterior(eng, k, j, eps_tail);
    }
  }
  throw std::logic_error("leaf_degree_posterior: leaf not found in layout");
}

DegreeProfile infer_profile(const std::vector<LeafObservation>& observations,
                            const InferOptions& options) {
  if (!(options.eps_tail > 0.0)) throw std::invalid_argument("infer_profile: eps_tail must be > 0");
  bool any_collision = false;
  for (const auto& o : observations) any_collision = any_collision || o.status == SlotStatus::Collision;

  DegreeProfile profile;
  profile.entries.resize(observations.size());
  profile.refs.resize(observations.size());

  if (!any_collision) {
    // Fully observed system; no engine needed.
    auto trees = build_layouts(observations);
    for (std::size_t k = 0; k < trees.size(); ++k) {
      for (std::size_t j = 0; j < trees[k].leaf_count(); ++j) {
        std::size_t flat = trees[k].flat[j];
        profile.entries[flat] =
            LeafDegreePosterior::point(trees[k].status[j] == SlotStatus::Single ? 1 : 0);
        profile.refs[flat] = {static_cast<std::int32_t>(k), -1};
      }
    }
    return profile;
  }

  Engine eng = build_engine(observations, options, true);
  for (std::size_t k = 0; k < eng.trees.size(); ++k) {
    const TreeLayout& t = eng.trees[k];
    for (std::size_t j = 0; j < t.leaf_count(); ++j) {
      std::size_t flat = t.flat[j];
      profile.refs[flat] = {static_cast<std::int32_t>(k), -1};
      if (t.status[j] != SlotStatus::Collision) {
        profile.entries[flat] =
            LeafDegreePosterior::point(t.status[j] == SlotStatus::Single ? 1 : 0);
        continue;
      }
      if (options.wanted && !(*options.wanted)[flat]) {
        LeafDegreePosterior skipped;
        skipped.min_degree = 2;
        skipped.truncation = 1;
        skipped.tail_mass_bound = 1.0;
        profile.entries[flat] = std::move(skipped);
        continue;
      }
      profile.entries[flat] = extract_posterior(eng, k, j, options.eps_tail);
    }
  }
  return profile;
}

}  // namespace cstp
