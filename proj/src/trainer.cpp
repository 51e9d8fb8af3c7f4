#include "csou/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "csou/autodiff/ops.hpp"
#include "csou/errors.hpp"
#include "csou/rng.hpp"
#include "csou/simd/kernels.hpp"

namespace csou {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw InvalidParameter("learning rate must be >= 0");
  if (batch < 1) throw InvalidParameter("batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidParameter("Adam moment decays must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw InvalidParameter("Adam epsilon must be positive");
  if (!(clip_norm >= 0.0)) throw InvalidParameter("clip norm must be >= 0");
}

double mse_loss(std::span<const HighResGrid> pred, std::span<const HighResGrid> gt) {
  if (pred.size() != gt.size()) {
    throw DimensionError("mse_loss: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(gt.size()) + " targets");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].rows() != gt[i].rows() || pred[i].cols() != gt[i].cols()) {
      throw DimensionError("mse_loss: grid " + std::to_string(i) + " shape mismatch");
    }
    total += simd::squared_distance(pred[i].values(), gt[i].values());
    count += pred[i].values().size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

AdamState make_adam_state(const net::NetworkParams& params) {
  AdamState s;
  for (const auto& t : params.tensors) {
    s.m.emplace_back(t.value.size(), 0.0);
    s.v.emplace_back(t.value.size(), 0.0);
  }
  return s;
}

void adam_step(net::NetworkParams& params, std::span<const ad::Tensor> grads, AdamState& state,
               const TrainConfig& cfg) {
  if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size()) {
    throw DimensionError("adam_step: gradient/state count does not match the parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& value = params.tensors[i].value;
    if (grads[i].size() != value.size()) {
      throw DimensionError("adam_step: gradient size mismatch for " + params.tensors[i].name);
    }
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grads[i][j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double update = cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
      value[j] = static_cast<double>(static_cast<float>(value[j] - update));
    }
  }
}

double clip_grad_norm(std::span<ad::Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += simd::dot(g.data(), g.data());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& g : grads) {
      for (double& v : g.data()) v *= k;
    }
  }
  return norm;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng = CounterRng(seed).split(stream_id("shuffle")).split(epoch);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "epoch,step,loss\n";
  char buf[64];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.loss);
    out << r.epoch << ',' << r.step << ',' << buf << '\n';
  }
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

TrainResult train(std::span<const DatasetRecord> data, const SceneConfig& scene,
                  const TrainConfig& cfg, net::NetworkParams init,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw InvalidParameter("training set is empty");
  const net::Physics phys(scene);
  const double scale = init.config.intensity_scale;
  const std::size_t n1 = scene.hr_rows();
  const std::size_t n2 = scene.hr_cols();
  const std::size_t pixels = n1 * n2;

  std::vector<Measurement> measurements;
  std::vector<std::vector<double>> truths;
  for (const auto& r : data) {
    measurements.push_back(r.measurement);
    const HighResGrid g = embed_scene(r.scene, scene);
    std::vector<double> t(g.values().begin(), g.values().end());
    for (double& v : t) v /= scale;
    truths.push_back(std::move(t));
  }

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.params = std::move(init);
  AdamState adam = make_adam_state(result.params);
  std::vector<double> sample_loss(data.size(), 0.0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(data.size(), cfg.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const std::size_t bsz = end - start;
      std::vector<Measurement> batch;
      ad::Tensor target({bsz, 1, n1, n2});
      for (std::size_t b = 0; b < bsz; ++b) {
        const std::size_t idx = order[start + b];
        batch.push_back(measurements[idx]);
        std::copy(truths[idx].begin(), truths[idx].end(), target.data().begin() + b * pixels);
      }
      ad::Tape tape;
      const net::BoundParams p(tape, result.params, true);
      const net::NetInput in = net::make_input(phys, batch, scale);
      const ad::Var pred = net::net_forward(in, p, phys);
      const ad::Var loss = ad::mse(pred, tape.constant(target));
      for (std::size_t b = 0; b < bsz; ++b) {
        sample_loss[order[start + b]] =
            simd::squared_distance(pred.value().data().subspan(b * pixels, pixels),
                                   target.data().subspan(b * pixels, pixels)) /
            static_cast<double>(pixels);
      }
      if (!std::isfinite(loss.value()[0])) {
        throw DivergenceError("training loss is not finite at epoch " + std::to_string(epoch) +
                                  ", step " + std::to_string(adam.step + 1),
                              adam.step + 1);
      }
      tape.backward(loss);
      std::vector<ad::Tensor> grads;
      grads.reserve(p.vars().size());
      for (const ad::Var& v : p.vars()) grads.push_back(tape.grad(v));
      clip_grad_norm(grads, cfg.clip_norm);
      adam_step(result.params, grads, adam, cfg);
    }
    LossRecord rec;
    rec.epoch = epoch;
    rec.step = adam.step;
    for (double l : sample_loss) rec.loss += l;
    rec.loss /= static_cast<double>(sample_loss.size());
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!out_dir.empty()) {
      write_loss_log(out_dir / "loss.csv", result.log);
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
        const auto path = out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".ckpt");
        net::save_checkpoint(path, result.params);
        result.checkpoints.push_back(path);
      }
    }
  }
  if (!out_dir.empty()) {
    write_loss_log(out_dir / "loss.csv", result.log);
    const auto path = out_dir / "model.ckpt";
    net::save_checkpoint(path, result.params);
    result.checkpoints.push_back(path);
  }
  return result;
}

}  // namespace csou
