#pragma once

// Experiment driver: deterministic expansion of parameter grids into jobs,
// Monte-Carlo execution, CSV emission, and mean/stderr summaries.

#include <cstdint>
#include <string>
#include <vector>

#include "cstp/protocols.hpp"

namespace cstp {

enum class Scheme { BTS, SICTA, CSTP };

const char* to_string(Scheme s);
Scheme scheme_from_string(const std::string& name);

struct ExperimentConfig {
  Scheme scheme = Scheme::CSTP;
  std::uint32_t k_trees = 3;
  std::vector<double> alphas = {0.25};        // ignored by BTS/SICTA
  std::vector<std::uint32_t> populations = {128};
  std::uint32_t trials = 1;
  std::uint64_t master_seed = 1;
  RewardFunction reward = RewardFunction::standard();
  FeedbackPolicy feedback{};
  bool per_tree_inference = false;
  unsigned workers = 1;
};

struct ResultRow {
  Scheme scheme = Scheme::CSTP;
  std::uint32_t k_trees = 0;
  double alpha = 0.0;
  std::uint32_t population = 0;
  std::uint32_t trial = 0;
  std::uint64_t seed = 0;
  std::uint64_t slots = 0;
  std::uint64_t recovered = 0;
  std::uint64_t feedback = 0;
  double throughput = 0.0;
  double relative_feedback = 0.0;
  std::uint32_t planned_order_length = 0;
  std::uint32_t tail_splits = 0;
};

// Trial seed derived by mixing the master seed with the job's coordinates.
// The mix deliberately excludes alpha (and the reward), so an alpha sweep
// reuses the same populations point for point: common random numbers keep
// the alpha curves comparable, and adding grid values never perturbs the
// randomness of existing jobs.
std::uint64_t job_seed(std::uint64_t master, Scheme scheme, std::uint32_t k_trees,
                       std::uint32_t population, std::uint32_t trial);

// Runs every job of the grid. Row order is deterministic: populations in
// config order, then alphas, then trials. BTS/SICTA collapse the alpha grid
// (alpha column 0) and report k = 1.
std::vector<ResultRow> run_sweep(const ExperimentConfig& config);

// Single job, exposed for callers that stream their own aggregation.
ResultRow run_job(const ExperimentConfig& config, double alpha, std::uint32_t population,
                  std::uint32_t trial);

std::string csv_header();
std::string to_csv_row(const ResultRow& row);
std::string to_csv(const std::vector<ResultRow>& rows);

struct SummaryRow {
  Scheme scheme = Scheme::CSTP;
  std::uint32_t k_trees = 0;
  double alpha = 0.0;
  std::uint32_t population = 0;
  std::size_t trials = 0;
  double mean_throughput = 0.0;
  double stderr_throughput = 0.0;
  double mean_relative_feedback = 0.0;
  double stderr_relative_feedback = 0.0;
};

// Per (scheme, k, alpha, population): mean and standard error of throughput
// and relative feedback, in first-appearance order.
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);
std::string to_table(const std::vector<SummaryRow>& summary);

// Shortest-round-trip decimal text for doubles ('.' decimal point).
std::string format_double(double value);

}  // namespace cstp
