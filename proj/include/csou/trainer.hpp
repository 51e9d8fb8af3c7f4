#pragma once

// End-to-end training of DSCSNet by MSE against the embedded ground-truth
// grids, with bias-corrected Adam.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "csou/autodiff/tensor.hpp"
#include "csou/dataset.hpp"
#include "csou/net/dscsnet.hpp"

namespace csou {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 32;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 10;  // epochs; 0 writes only the final model
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;  // global gradient norm; 0 disables

  void validate() const;
};

// Mean over batch and pixels of the squared difference.
double mse_loss(std::span<const HighResGrid> pred, std::span<const HighResGrid> gt);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

AdamState make_adam_state(const net::NetworkParams& params);

// One update of every tensor; grads align with params.tensors. Updated values
// are rounded to float so checkpoints stay lossless.
void adam_step(net::NetworkParams& params, std::span<const ad::Tensor> grads, AdamState& state,
               const TrainConfig& cfg);

// Rescales grads in place so their global norm is at most max_norm; returns
// the norm before clipping.
double clip_grad_norm(std::span<ad::Tensor> grads, double max_norm);

// Sample order of one epoch, fixed by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct LossRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps taken so far
  double loss = 0.0;      // mean per-sample training loss over the epoch
};

struct TrainResult {
  net::NetworkParams params;
  std::vector<LossRecord> log;
  std::vector<std::filesystem::path> checkpoints;
};

using EpochCallback = std::function<void(const LossRecord&)>;

// Writes loss.csv, periodic checkpoint_epochN.ckpt and model.ckpt into
// out_dir when it is nonempty.
TrainResult train(std::span<const DatasetRecord> data, const SceneConfig& scene,
                  const TrainConfig& cfg, net::NetworkParams init,
                  const std::filesystem::path& out_dir = {}, const EpochCallback& on_epoch = {});

void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> log);

}  // namespace csou
