// csou: dataset generation, classical solvers, DSCSNet training, evaluation
// and benchmarking. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <iostream>

#include "cli/commands.hpp"
#include "cli/config_file.hpp"

using namespace csou::cli;

namespace {

void add_scene_flags(CLI::App* app, csou::SceneConfig& s) {
  app->add_option("--rows", s.rows, "detector rows M1")->capture_default_str();
  app->add_option("--cols", s.cols, "detector cols M2")->capture_default_str();
  app->add_option("--ratio", s.ratio, "sub-pixel factor c (odd)")->capture_default_str();
  app->add_option("--sigma-psf", s.sigma_psf, "PSF width, low-res px")->capture_default_str();
  app->add_option("--noise", s.noise_sigma, "noise sigma")->capture_default_str();
}

void add_solver_flags(CLI::App* app, SolveOptions& o) {
  app->add_option("--iters", o.solver.max_iters, "iteration budget")->capture_default_str();
  app->add_option("--lambda", o.solver.lambda, "l1 weight")->capture_default_str();
  app->add_option("--rho", o.solver.rho, "ADMM penalty")->capture_default_str();
  app->add_option("--step", o.solver.step, "step size, 0 = 1/||A||^2")->capture_default_str();
  app->add_option("--tol", o.solver.tol, "relative-change stop, 0 = run all iterations")
      ->capture_default_str();
  app->add_option("--z-update", o.z_update, "prox or gradient")->capture_default_str();
}

void add_net_flags(CLI::App* app, TrainOptions& o) {
  app->add_option("--stages", o.net.stages, "unfolded stages")->capture_default_str();
  app->add_option("--lr", o.train.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--history", o.net.history, "DIR history length m")->capture_default_str();
  app->add_option("--dir-pos", o.net.dir_pos, "DIR position p")->capture_default_str();
  app->add_option("--dyn-weight", o.net.dyn_weight, "dynamic conv weight alpha")
      ->capture_default_str();
  app->add_option("--dir-mode", o.dir_mode, "window or inline")->capture_default_str();
  app->add_option("--features", o.net.features, "channels inside C1/C2")->capture_default_str();
  app->add_option("--epochs", o.train.epochs, "training epochs")->capture_default_str();
  app->add_option("--batch", o.train.batch, "batch size")->capture_default_str();
  app->add_option("--clip", o.train.clip_norm, "gradient norm clip, 0 = off")
      ->capture_default_str();
  app->add_option("--checkpoint-every", o.train.checkpoint_every, "epochs between checkpoints")
      ->capture_default_str();
  app->add_option("--seed", o.train.seed, "shuffle seed")->capture_default_str();
  app->add_option("--init-seed", o.init_seed, "parameter init seed")->capture_default_str();
}

void add_config_flag(CLI::App* app) {
  // Consumed before parsing; registered so it is accepted and documented.
  app->add_option("--config", "key = value file; flags override it");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Close small object unmixing: data, solvers, DSCSNet, evaluation"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  GenOptions gen;
  gen.data.seed = 0;
  auto* g = app.add_subcommand("gen", "synthesize train/test splits");
  add_config_flag(g);
  g->add_option("--out", gen.out, "output directory")->capture_default_str();
  g->add_option("--count", gen.train_count, "train records")->capture_default_str();
  g->add_option("--test-count", gen.test_count, "test records")->capture_default_str();
  g->add_option("--k-min", gen.data.k_min, "min targets")->capture_default_str();
  g->add_option("--k-max", gen.data.k_max, "max targets")->capture_default_str();
  g->add_option("--s-lo", gen.data.s_lo, "min intensity")->capture_default_str();
  g->add_option("--s-hi", gen.data.s_hi, "max intensity")->capture_default_str();
  g->add_option("--margin", gen.data.margin, "border margin, low-res px")->capture_default_str();
  g->add_option("--min-sep", gen.data.min_separation, "min target separation, low-res px")
      ->capture_default_str();
  g->add_option("--seed", gen.data.seed, "dataset seed")->capture_default_str();
  add_scene_flags(g, gen.data.scene);

  SolveOptions solve;
  auto* s = app.add_subcommand("solve", "run ISTA or ADMM over a dataset");
  add_config_flag(s);
  s->add_option("--data", solve.data, "dataset file")->required();
  s->add_option("--method", solve.method, "admm or ista")->capture_default_str();
  s->add_option("--deltas", solve.deltas, "standard or extended")->capture_default_str();
  s->add_option("--out", solve.out, "output directory")->capture_default_str();
  add_solver_flags(s, solve);

  TrainOptions trainopt;
  auto* t = app.add_subcommand("train", "train DSCSNet");
  add_config_flag(t);
  t->add_option("--data", trainopt.data, "training dataset file")->required();
  t->add_option("--out", trainopt.out, "output directory")->capture_default_str();
  add_net_flags(t, trainopt);

  EvalOptions evalopt;
  auto* e = app.add_subcommand("eval", "score reconstruction files against a dataset");
  add_config_flag(e);
  e->add_option("--truth", evalopt.truth, "dataset file with the true scenes")->required();
  e->add_option("--recon", evalopt.recons, ".csrc files or directories of them")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  e->add_option("--deltas", evalopt.deltas, "standard or extended")->capture_default_str();
  e->add_option("--out", evalopt.out, "output directory")->capture_default_str();

  BenchOptions bench;
  auto* b = app.add_subcommand("bench", "compare ISTA, ADMM and DSCSNet on one dataset");
  add_config_flag(b);
  b->add_option("--data", bench.data, "test dataset file")->required();
  b->add_option("--checkpoint", bench.checkpoint, "trained DSCSNet checkpoint");
  b->add_option("--train-data", bench.train_data, "train a network here when no checkpoint");
  b->add_option("--deltas", bench.deltas, "standard or extended")->capture_default_str();
  b->add_option("--out", bench.out, "output directory")->capture_default_str();
  add_solver_flags(b, bench.solver);
  // Network flags share names with solver flags only where meaning agrees.
  add_net_flags(b, bench.train);

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 2;
  }

  try {
    if (g->parsed()) return run_gen(gen);
    if (s->parsed()) return run_solve(solve);
    if (t->parsed()) return run_train(trainopt);
    if (e->parsed()) return run_eval(evalopt);
    if (b->parsed()) return run_bench(bench);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    for (const auto* sub : app.get_subcommands()) std::cerr << sub->help();
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
