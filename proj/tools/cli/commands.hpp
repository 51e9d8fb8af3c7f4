#pragma once

// Subcommands of the `csou` tool. Each run_* returns the process exit code
// for a completed run; bad option values raise UsageError and library
// failures propagate as exceptions.

#include <cstdint>
#include <string>
#include <vector>

#include "csou/dataset.hpp"
#include "csou/solvers.hpp"
#include "csou/trainer.hpp"

namespace csou::cli {

struct GenOptions {
  DatasetConfig data;
  std::size_t train_count = 2000;
  std::size_t test_count = 500;
  std::string out = "data";
};

struct SolveOptions {
  std::string data;
  std::string method = "admm";
  SolverConfig solver;
  std::string z_update = "prox";
  std::string deltas = "standard";
  std::string out = "solve_out";
};

struct TrainOptions {
  std::string data;
  net::NetConfig net;
  std::string dir_mode = "window";
  TrainConfig train;
  std::uint64_t init_seed = 7;
  std::string out = "train_out";
};

struct EvalOptions {
  std::string truth;
  std::vector<std::string> recons;
  std::string deltas = "standard";
  std::string out = "eval_out";
};

struct BenchOptions {
  std::string data;
  std::string checkpoint;
  std::string train_data;
  SolveOptions solver;
  TrainOptions train;
  std::string deltas = "standard";
  std::string out = "bench_out";
};

int run_gen(const GenOptions& opt);
int run_solve(const SolveOptions& opt);
int run_train(const TrainOptions& opt);
int run_eval(const EvalOptions& opt);
int run_bench(const BenchOptions& opt);

}  // namespace csou::cli
