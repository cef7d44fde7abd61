// Sweep driver for the splitting-tree contention simulators. Expands a
// (scheme, K, alpha, N, trials) grid, runs every job with derived seeds, and
// emits one CSV row per run plus an optional mean/stderr summary.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cstp/harness.hpp"

namespace {

// "lo:hi:step" (inclusive within half a step) or a single value.
std::vector<double> parse_alpha_spec(const std::vector<std::string>& specs) {
  std::vector<double> out;
  for (const auto& spec : specs) {
    auto c1 = spec.find(':');
    if (c1 == std::string::npos) {
      out.push_back(std::stod(spec));
      continue;
    }
    auto c2 = spec.find(':', c1 + 1);
    if (c2 == std::string::npos) {
      throw CLI::ValidationError("--alpha", "range syntax is lo:hi:step");
    }
    double lo = std::stod(spec.substr(0, c1));
    double hi = std::stod(spec.substr(c1 + 1, c2 - c1 - 1));
    double step = std::stod(spec.substr(c2 + 1));
    if (step <= 0.0 || hi < lo) {
      throw CLI::ValidationError("--alpha", "need lo <= hi and step > 0");
    }
    for (double a = lo; a <= hi + 0.5 * step; a += step) out.push_back(a);
  }
  return out;
}

cstp::FeedbackPolicy parse_feedback_policy(const std::string& spec) {
  std::vector<std::uint32_t> parts;
  std::string cur;
  for (char ch : spec + ",") {
    if (ch == ',') {
      if (!cur.empty()) parts.push_back(static_cast<std::uint32_t>(std::stoul(cur)));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (parts.size() != 4) {
    throw CLI::ValidationError("--feedback-policy",
                               "expected estimation,order,tail,terminate (four counts)");
  }
  return cstp::FeedbackPolicy{parts[0], parts[1], parts[2], parts[3]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coded splitting tree / tree splitting contention simulators"};
  app.set_config("--config", "", "flat key=value file mirroring the flags");

  std::string scheme = "cstp";
  unsigned k_trees = 3;
  std::vector<std::string> alpha_specs;
  std::vector<unsigned> populations;
  unsigned trials = 1;
  std::uint64_t seed = 1;
  std::string reward_spec = "d=2:0.5,d=3:0.5";
  std::string feedback_spec = "1,1,1,1";
  std::string out_path;
  bool summary = false;
  bool per_tree_inference = false;
  unsigned workers = 1;

  app.add_option("--scheme", scheme, "bts | sicta | cstp")->capture_default_str();
  app.add_option("--k", k_trees, "number of trees (cstp)")->capture_default_str();
  app.add_option("--alpha", alpha_specs,
                 "estimation coverage threshold; value or lo:hi:step, repeatable");
  app.add_option("--n", populations, "population size, repeatable")->required();
  app.add_option("--trials", trials, "Monte-Carlo trials per grid point")->capture_default_str();
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--reward", reward_spec, "reward function, e.g. d=2:0.5,d=3:0.5")
      ->capture_default_str();
  app.add_option("--feedback-policy", feedback_spec,
                 "units per estimation slot, order broadcast, tail split, terminate")
      ->capture_default_str();
  app.add_option("--out", out_path, "CSV output path (default: stdout)");
  app.add_flag("--summary", summary, "print a mean/stderr table per grid point");
  app.add_flag("--per-tree-inference", per_tree_inference,
               "degree inference conditions on each tree alone (ablation)");
  app.add_option("--workers", workers, "parallel jobs")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    cstp::ExperimentConfig config;
    config.scheme = cstp::scheme_from_string(scheme);
    config.k_trees = k_trees;
    if (!alpha_specs.empty()) config.alphas = parse_alpha_spec(alpha_specs);
    config.populations.assign(populations.begin(), populations.end());
    config.trials = trials;
    config.master_seed = seed;
    config.reward = cstp::RewardFunction::parse(reward_spec);
    config.feedback = parse_feedback_policy(feedback_spec);
    config.per_tree_inference = per_tree_inference;
    config.workers = workers;

    std::vector<cstp::ResultRow> rows = cstp::run_sweep(config);
    std::string csv = cstp::to_csv(rows);

    if (!out_path.empty()) {
      std::ofstream out(out_path, std::ios::binary);
      if (!out) {
        std::cerr << "error: cannot open '" << out_path << "' for writing\n";
        return 1;
      }
      out << csv;
      if (!out) {
        std::cerr << "error: write failed for '" << out_path << "'\n";
        return 1;
      }
    } else if (!summary) {
      std::cout << csv;
    }
    if (summary) {
      std::cout << cstp::to_table(cstp::summarize(rows));
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
