#include "cstp/harness.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

namespace cstp {

const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::BTS: return "bts";
    case Scheme::SICTA: return "sicta";
    case Scheme::CSTP: return "cstp";
  }
  return "?";
}

Scheme scheme_from_string(const std::string& name) {
  if (name == "bts") return Scheme::BTS;
  if (name == "sicta") return Scheme::SICTA;
  if (name == "cstp") return Scheme::CSTP;
  throw std::invalid_argument("unknown scheme '" + name + "'");
}

std::uint64_t job_seed(std::uint64_t master, Scheme scheme, std::uint32_t k_trees,
                       std::uint32_t population, std::uint32_t trial) {
  std::uint64_t h = splitmix64(master ^ 0x7c3a9d10f52be6c4ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(scheme));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(k_trees) << 32 | population));
  h = splitmix64(h ^ trial);
  return h;
}

ResultRow run_job(const ExperimentConfig& config, double alpha, std::uint32_t population,
                  std::uint32_t trial) {
  ResultRow row;
  row.scheme = config.scheme;
  row.k_trees = config.scheme == Scheme::CSTP ? config.k_trees : 1;
  row.alpha = config.scheme == Scheme::CSTP ? alpha : 0.0;
  row.population = population;
  row.trial = trial;
  row.seed = job_seed(config.master_seed, config.scheme, row.k_trees, population, trial);

  UserPopulation users = UserPopulation::random(population, row.seed);
  ProtocolResult result;
  switch (config.scheme) {
    case Scheme::BTS:
      result = run_bts(users);
      break;
    case Scheme::SICTA:
      result = run_sicta(users);
      break;
    case Scheme::CSTP: {
      CstpParams params;
      params.k_trees = config.k_trees;
      params.alpha = alpha;
      params.reward = config.reward;
      params.feedback = config.feedback;
      params.inference.per_tree_only = config.per_tree_inference;
      result = run_cstp(users, params);
      break;
    }
  }
  row.slots = result.metrics.slots_used;
  row.recovered = result.metrics.recovered;
  row.feedback = result.metrics.feedback;
  row.throughput = result.metrics.throughput();
  row.relative_feedback =
      population == 0 ? 0.0
                      : static_cast<double>(result.metrics.feedback) / static_cast<double>(population);
  row.planned_order_length = result.planned_order_length;
  row.tail_splits = result.tail_splits;
  return row;
}

std::vector<ResultRow> run_sweep(const ExperimentConfig& config) {
  if (config.trials < 1) throw std::invalid_argument("sweep: trials must be >= 1");
  std::vector<double> alphas = config.scheme == Scheme::CSTP ? config.alphas
                                                             : std::vector<double>{0.0};
  if (alphas.empty()) throw std::invalid_argument("sweep: empty alpha grid");
  if (config.populations.empty()) throw std::invalid_argument("sweep: empty population list");
  for (double a : config.alphas) {
    if (config.scheme == Scheme::CSTP && !(a > 0.0 && a < 1.0)) {
      throw std::invalid_argument("sweep: alpha values must lie in (0, 1)");
    }
  }

  struct Job {
    double alpha;
    std::uint32_t population;
    std::uint32_t trial;
  };
  std::vector<Job> jobs;
  jobs.reserve(alphas.size() * config.populations.size() * config.trials);
  for (std::uint32_t n : config.populations) {
    for (double a : alphas) {
      for (std::uint32_t t = 0; t < config.trials; ++t) jobs.push_back({a, n, t});
    }
  }

  std::vector<ResultRow> rows(jobs.size());
  unsigned workers = std::max(1u, config.workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      rows[i] = run_job(config, jobs[i].alpha, jobs[i].population, jobs[i].trial);
    }
    return rows;
  }

  // Jobs are independent; rows land at their job index, so output order does
  // not depend on scheduling.
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= jobs.size()) return;
          rows[i] = run_job(config, jobs[i].alpha, jobs[i].population, jobs[i].trial);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::string csv_header() {
  return "scheme,k,alpha,n,trial,seed,slots,recovered,feedback,throughput,"
         "relative_feedback,planned_order_length,tail_splits";
}

std::string to_csv_row(const ResultRow& r) {
  std::string out;
  out += to_string(r.scheme);
  out += ',';
  out += std::to_string(r.k_trees);
  out += ',';
  out += format_double(r.alpha);
  out += ',';
  out += std::to_string(r.population);
  out += ',';
  out += std::to_string(r.trial);
  out += ',';
  out += std::to_string(r.seed);
  out += ',';
  out += std::to_string(r.slots);
  out += ',';
  out += std::to_string(r.recovered);
  out += ',';
  out += std::to_string(r.feedback);
  out += ',';
  out += format_double(r.throughput);
  out += ',';
  out += format_double(r.relative_feedback);
  out += ',';
  out += std::to_string(r.planned_order_length);
  out += ',';
  out += std::to_string(r.tail_splits);
  return out;
}

std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string out = csv_header();
  out += '\n';
  for (const auto& r : rows) {
    out += to_csv_row(r);
    out += '\n';
  }
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("summarize: no rows");
  struct Acc {
    SummaryRow out;
    double t_sum = 0, t_sq = 0, f_sum = 0, f_sq = 0;
  };
  std::vector<Acc> groups;
  for (const auto& r : rows) {
    Acc* acc = nullptr;
    for (auto& g : groups) {
      if (g.out.scheme == r.scheme && g.out.k_trees == r.k_trees && g.out.alpha == r.alpha &&
          g.out.population == r.population) {
        acc = &g;
        break;
      }
    }
    if (!acc) {
      groups.emplace_back();
      acc = &groups.back();
      acc->out.scheme = r.scheme;
      acc->out.k_trees = r.k_trees;
      acc->out.alpha = r.alpha;
      acc->out.population = r.population;
    }
    acc->out.trials += 1;
    acc->t_sum += r.throughput;
    acc->t_sq += r.throughput * r.throughput;
    acc->f_sum += r.relative_feedback;
    acc->f_sq += r.relative_feedback * r.relative_feedback;
  }
  std::vector<SummaryRow> out;
  out.reserve(groups.size());
  for (auto& g : groups) {
    const double n = static_cast<double>(g.out.trials);
    g.out.mean_throughput = g.t_sum / n;
    g.out.mean_relative_feedback = g.f_sum / n;
    if (g.out.trials > 1) {
      double var_t = std::max(0.0, (g.t_sq - g.t_sum * g.t_sum / n) / (n - 1.0));
      double var_f = std::max(0.0, (g.f_sq - g.f_sum * g.f_sum / n) / (n - 1.0));
      g.out.stderr_throughput = std::sqrt(var_t / n);
      g.out.stderr_relative_feedback = std::sqrt(var_f / n);
    }
    out.push_back(g.out);
  }
  return out;
}

std::string to_table(const std::vector<SummaryRow>& summary) {
  std::string out =
      "scheme      k   alpha      n   trials    mean_T     se_T      mean_F/N   se_F/N\n";
  char line[160];
  for (const auto& s : summary) {
    std::snprintf(line, sizeof(line), "%-9s %3u %7.3f %6u %8zu %9.4f %9.5f %11.3f %9.4f\n",
                  to_string(s.scheme), s.k_trees, s.alpha, s.population, s.trials,
                  s.mean_throughput, s.stderr_throughput, s.mean_relative_feedback,
                  s.stderr_relative_feedback);
    out += line;
  }
  return out;
}

}  // namespace cstp
