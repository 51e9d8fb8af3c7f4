#include "cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "cli/config_file.hpp"
#include "csou/errors.hpp"
#include "csou/evaluator.hpp"
#include "csou/parallel.hpp"
#include "csou/recon_io.hpp"

namespace fs = std::filesystem;

namespace csou::cli {
namespace {

// Option values the library rejects are usage errors, not runtime failures.
template <typename Fn>
void check(Fn&& fn) {
  try {
    fn();
  } catch (const InvalidParameter& e) {
    throw UsageError(e.what());
  }
}

void announce(const fs::path& path) { std::cout << "wrote " << path.string() << "\n"; }

std::vector<double> delta_set(const std::string& name) {
  if (name == "standard") return standard_deltas();
  if (name == "extended") return extended_deltas();
  throw UsageError("unknown delta set '" + name + "'");
}

struct Truth {
  SceneConfig scene;
  std::vector<DatasetRecord> records;

  std::vector<SparseScene> scenes() const {
    std::vector<SparseScene> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.scene);
    return out;
  }
  std::vector<Measurement> measurements() const {
    std::vector<Measurement> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.measurement);
    return out;
  }
};

Truth load_truth(const std::string& path) {
  if (!fs::exists(path)) throw IoError("dataset '" + path + "' does not exist");
  Truth t;
  t.records = load_dataset(path, &t.scene);
  return t;
}

using Reports = std::vector<std::pair<std::string, APReport>>;

void write_reports(const fs::path& dir, const std::string& stem, const Reports& reports) {
  fs::create_directories(dir);
  const auto csv = dir / (stem + ".csv");
  const auto json = dir / (stem + ".json");
  const auto txt = dir / (stem + ".txt");
  write_report_csv(csv, reports);
  write_report_json(json, reports);
  {
    std::ofstream out(txt, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + txt.string() + "' for writing");
    out << format_report_table(reports);
  }
  std::cout << format_report_table(reports);
  announce(csv);
  announce(json);
  announce(txt);
}

void configure_solver(SolveOptions& opt) {
  if (opt.method != "admm" && opt.method != "ista") {
    throw UsageError("unknown method '" + opt.method + "' (expected admm or ista)");
  }
  if (opt.z_update == "prox") {
    opt.solver.z_update = ZUpdate::kProx;
  } else if (opt.z_update == "gradient") {
    opt.solver.z_update = ZUpdate::kGradient;
    if (opt.solver.filters.empty()) opt.solver.filters.push_back({1, {1.0}, opt.solver.lambda});
  } else {
    throw UsageError("unknown z-update '" + opt.z_update + "' (expected prox or gradient)");
  }
  check([&] { opt.solver.validate(); });
}

struct SolveOutput {
  std::vector<HighResGrid> estimates;
  std::vector<std::vector<IterationInfo>> logs;
};

SolveOutput solve_all(const SolveOptions& opt, const Truth& truth) {
  const SceneConfig& scene = truth.scene;
  const PsfKernel kernel = make_psf_kernel(scene);
  const ForwardOperator op(scene, kernel);
  std::unique_ptr<NormalSolver> normal;
  if (opt.method == "admm") normal = std::make_unique<NormalSolver>(op);
  SolveOutput out;
  const std::size_t n = truth.records.size();
  out.estimates.resize(n);
  out.logs.resize(n);
  parallel_for(n, [&](std::size_t i) {
    auto log = [&](const IterationInfo& info) { out.logs[i].push_back(info); };
    const auto& y = truth.records[i].measurement;
    SolveResult r = opt.method == "admm"
                        ? admm_solve(y, op, *normal, opt.solver, scene.hr_rows(),
                                     scene.hr_cols(), log)
                        : ista_solve(y, op, opt.solver, scene.hr_rows(), scene.hr_cols(), log);
    out.estimates[i] = std::move(r.estimate);
  });
  return out;
}

void write_iteration_log(const fs::path& path, const SolveOutput& out) {
  std::ofstream log(path, std::ios::trunc);
  if (!log) throw IoError("cannot open '" + path.string() + "' for writing");
  char buf[256];
  for (std::size_t i = 0; i < out.logs.size(); ++i) {
    for (const auto& it : out.logs[i]) {
      std::snprintf(buf, sizeof(buf),
                    "sample %zu iter %zu objective %.10g lagrangian %.10g change %.6g "
                    "residual %.6g\n",
                    i, it.iteration, it.objective, it.lagrangian, it.relative_change,
                    it.primal_residual);
      log << buf;
    }
  }
}

void configure_net(TrainOptions& opt) {
  check([&] { opt.net.dir_mode = net::parse_dir_mode(opt.dir_mode); });
  check([&] { opt.net.validate(); });
  check([&] { opt.train.validate(); });
}

net::NetworkParams train_net(const TrainOptions& opt, const Truth& data, const fs::path& out) {
  fs::create_directories(out);
  auto init = net::init_params(opt.net, opt.init_seed);
  std::cout << "training " << init.scalar_count() << " parameters on " << data.records.size()
            << " samples, " << opt.train.epochs << " epochs\n";
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(data.records, data.scene, opt.train, std::move(init), out,
                      [&](const LossRecord& r) {
                        const double s = std::chrono::duration<double>(
                                             std::chrono::steady_clock::now() - t0)
                                             .count();
                        std::printf("epoch %zu step %zu loss %.8g (%.1fs)\n", r.epoch, r.step,
                                    r.loss, s);
                        std::fflush(stdout);
                      });
  announce(out / "loss.csv");
  for (const auto& p : result.checkpoints) announce(p);
  return std::move(result.params);
}

std::vector<fs::path> expand_recon_paths(const std::vector<std::string>& inputs) {
  std::vector<fs::path> paths;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csrc") {
          found.push_back(entry.path());
        }
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) throw IoError("no .csrc files in '" + in + "'");
      paths.insert(paths.end(), found.begin(), found.end());
    } else if (fs::exists(in)) {
      paths.emplace_back(in);
    } else {
      throw IoError("reconstruction path '" + in + "' does not exist");
    }
  }
  return paths;
}

}  // namespace

int run_gen(const GenOptions& opt) {
  check([&] { opt.data.validate(); });
  std::vector<SplitSpec> splits;
  if (opt.train_count > 0) splits.push_back({"train", opt.train_count});
  if (opt.test_count > 0) splits.push_back({"test", opt.test_count});
  if (splits.empty()) throw UsageError("nothing to generate: both split counts are 0");
  const auto files = generate_dataset(opt.data, splits, opt.out);
  const SceneConfig& s = opt.data.scene;
  std::cout << "scene " << s.rows << "x" << s.cols << " c=" << s.ratio
            << " sigma_psf=" << s.sigma_psf << " noise=" << s.noise_sigma
            << " seed=" << opt.data.seed << "\n";
  for (const auto& split : splits) {
    std::cout << "split " << split.name << ": " << split.count << " records, K "
              << opt.data.k_min << ".." << opt.data.k_max << "\n";
  }
  for (const auto& p : files.data_files) announce(p);
  for (const auto& p : files.csv_files) announce(p);
  announce(files.manifest);
  return 0;
}

int run_solve(const SolveOptions& in) {
  SolveOptions opt = in;
  configure_solver(opt);
  const auto deltas = delta_set(opt.deltas);
  const Truth truth = load_truth(opt.data);
  const auto result = solve_all(opt, truth);

  const fs::path out = opt.out;
  fs::create_directories(out);
  const auto recon = out / (opt.method + ".csrc");
  write_reconstructions(recon, result.estimates);
  announce(recon);
  const auto log = out / (opt.method + "_iterations.log");
  write_iteration_log(log, result);
  announce(log);

  const auto truths = truth.scenes();
  Reports reports{{opt.method, cso_map(result.estimates, truths, truth.scene, deltas)}};
  write_reports(out, opt.method + "_report", reports);
  return 0;
}

int run_train(const TrainOptions& in) {
  TrainOptions opt = in;
  configure_net(opt);
  const Truth data = load_truth(opt.data);
  train_net(opt, data, opt.out);
  return 0;
}

int run_eval(const EvalOptions& opt) {
  const auto deltas = delta_set(opt.deltas);
  const Truth truth = load_truth(opt.truth);
  const auto truths = truth.scenes();
  Reports reports;
  for (const auto& path : expand_recon_paths(opt.recons)) {
    const auto grids = read_reconstructions(path);
    if (grids.size() != truths.size()) {
      throw DimensionError("'" + path.string() + "' holds " + std::to_string(grids.size()) +
                           " reconstructions for " + std::to_string(truths.size()) +
                           " truth scenes");
    }
    reports.emplace_back(path.stem().string(), cso_map(grids, truths, truth.scene, deltas));
  }
  write_reports(opt.out, "report", reports);
  return 0;
}

int run_bench(const BenchOptions& in) {
  BenchOptions opt = in;
  if (opt.checkpoint.empty() && opt.train_data.empty()) {
    throw UsageError("bench needs --checkpoint or --train-data for the network row");
  }
  SolveOptions ista = opt.solver;
  ista.method = "ista";
  SolveOptions admm = opt.solver;
  admm.method = "admm";
  configure_solver(ista);
  configure_solver(admm);
  if (opt.checkpoint.empty()) configure_net(opt.train);
  const auto deltas = delta_set(opt.deltas);

  const Truth test = load_truth(opt.data);
  const auto truths = test.scenes();
  const fs::path out = opt.out;
  fs::create_directories(out);

  net::NetworkParams params;
  if (!opt.checkpoint.empty()) {
    if (!fs::exists(opt.checkpoint)) {
      throw IoError("checkpoint '" + opt.checkpoint + "' does not exist");
    }
    params = net::load_checkpoint(opt.checkpoint);
  } else {
    params = train_net(opt.train, load_truth(opt.train_data), out / "train");
  }

  Reports reports;
  for (const auto* solver : {&ista, &admm}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = solve_all(*solver, test);
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s: %zu samples in %.1fs\n", solver->method.c_str(), truths.size(), s);
    reports.emplace_back(solver->method, cso_map(result.estimates, truths, test.scene, deltas));
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    const net::Physics phys(test.scene);
    const auto recon = net::reconstruct(params, phys, test.measurements());
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("dscsnet: %zu samples in %.1fs\n", truths.size(), s);
    reports.emplace_back("dscsnet", cso_map(recon, truths, test.scene, deltas));
  }
  write_reports(out, "bench", reports);
  return 0;
}

}  // namespace csou::cli
