#pragma once

// DSCSNet: ADMM unfolded into N_s learnable stages. Each stage runs the exact
// x-update with its own penalty rho_k, a learned sparsifying transform with
// shrinkage for z, and scaled dual ascent for beta. The final layer solves
// once more with a data term enhanced from the z history (DIR) and a
// per-pixel shrinkage map (DTG).
//
// All tensors inside the network are in internal units: intensities divided
// by NetConfig::intensity_scale.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "csou/autodiff/tape.hpp"
#include "csou/scene.hpp"
#include "csou/solvers.hpp"

namespace csou::net {

// kWindow: DIR output feeds only the final reconstruction.
// kInline: DIR output replaces A^T y in every x-update after stage p.
enum class DirMode { kWindow, kInline };

struct NetConfig {
  std::size_t stages = 6;
  std::size_t features = 16;     // L, channels inside C1/C2
  std::size_t basis = 4;         // dynamic-conv basis kernels
  std::size_t attn_hidden = 8;   // weight-generator width
  double dyn_weight = 0.7;       // alpha
  std::size_t history = 3;       // m
  std::size_t dir_pos = 3;       // p
  DirMode dir_mode = DirMode::kWindow;
  std::size_t dtg_features = 8;
  std::size_t dir_features = 8;
  double intensity_scale = 100.0;

  void validate() const;
};

std::string to_string(DirMode mode);
DirMode parse_dir_mode(std::string_view name);

struct NamedTensor {
  std::string name;
  ad::Tensor value;
};

struct NetworkParams {
  NetConfig config;
  std::vector<NamedTensor> tensors;  // fixed order: checkpoint and optimizer order

  ad::Tensor& at(std::string_view name);
  const ad::Tensor& at(std::string_view name) const;
  std::size_t scalar_count() const;
};

// Variance-scaled uniform conv/linear weights and zero biases. Every stage is
// then warm-started as one ADMM prox iteration (identity paths through C1/C2,
// mu1 0, mu2 1, rho 1e-3, theta lambda/rho) with the random kernels scaled
// down to a perturbation. Deterministic in seed.
NetworkParams init_params(const NetConfig& cfg, std::uint64_t seed);

// Rounds every value to the nearest float so checkpoints are lossless.
void round_to_float(NetworkParams& params);

double inverse_softplus(double y);

// Rewrites stage k so that it performs one classical ADMM prox iteration with
// penalty rho and weight lambda. Requires config.dyn_weight == 0 and
// config.features >= 2.
void set_classical_stage(NetworkParams& params, std::size_t k, double lambda, double rho);

// Checkpoint: a text manifest (config lines, then "param <name> <shape>
// <offset>" lines, then "end") followed by the values as little-endian f32
// in manifest order.
void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params);
NetworkParams load_checkpoint(const std::filesystem::path& path);

// Fixed imaging model shared by every forward pass. Not movable: the solver
// points into the operator.
class Physics {
 public:
  explicit Physics(const SceneConfig& cfg);
  Physics(const Physics&) = delete;
  Physics& operator=(const Physics&) = delete;

  const SceneConfig& scene() const { return scene_; }
  const ForwardOperator& op() const { return op_; }
  const NormalSolver& solver() const { return solver_; }

 private:
  SceneConfig scene_;
  PsfKernel kernel_;
  ForwardOperator op_;
  NormalSolver solver_;
};

// Parameters bound as tape leaves.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const NetworkParams& params, bool requires_grad);
  ad::Var operator[](std::string_view name) const;
  const std::vector<ad::Var>& vars() const { return vars_; }
  const NetConfig& config() const { return *config_; }

 private:
  const NetConfig* config_;
  std::vector<ad::Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct StageState {
  ad::Var x;
  ad::Var z;
  ad::Var beta;
};

// Internal-unit inputs of one batch.
struct NetInput {
  ad::Tensor y;    // [B,M]
  ad::Tensor aty;  // A^T y, [B,1,N1,N2]
  ad::Tensor inp;  // nearest replication of y, [B,1,N1,N2]
};

NetInput make_input(const Physics& phys, std::span<const Measurement> batch, double scale);

// x = replicate(y), z = 0, beta = 0.
StageState init_layer(ad::Tape& tape, const NetInput& in);

// Attention over the basis kernels from pooled input, blended with the static
// kernel: alpha * sum_b a_b basis_b + (1 - alpha) * static. 3x3, same padding.
ad::Var dynamic_conv(ad::Var x, const BoundParams& p, const std::string& prefix);

// rhs: if bound, x' = (A^T A + rho I)^-1 (rhs + rho (z - beta)); otherwise the
// measurement data term A^T y is used. Stage 0 has no mu1 and ignores s.z in
// the z-update (the init layer sets it to zero).
StageState stage_forward(const StageState& s, const NetInput& in, const BoundParams& p,
                         std::size_t k, const Physics& phys, ad::Var rhs = {});

// Nonnegative per-pixel threshold map for delta = beta - z.
ad::Var dtg_forward(ad::Var delta, const BoundParams& p);

// Softmax-weighted sum of tanh(conv(Z_i)).
ad::Var dir_fuse(std::span<const ad::Var> history, const BoundParams& p);
// A^T y plus a learned correction from [fused history ; SiLU(conv(inp))].
ad::Var dir_forward(std::span<const ad::Var> history, const NetInput& in, const BoundParams& p);

// relu((A^T A + rho I)^-1 (f_DIR - rho * soft(beta - z, theta_d))).
ad::Var final_reconstruction(const StageState& s, ad::Var f_dir, const BoundParams& p,
                             const Physics& phys);

struct ForwardTrace {
  std::vector<StageState> stages;  // after each stage
  ad::Var f_dir;
};

// Output in internal units, [B,1,N1,N2].
ad::Var net_forward(const NetInput& in, const BoundParams& p, const Physics& phys,
                    ForwardTrace* trace = nullptr);

// Inference in physical units; batches run concurrently on separate tapes.
std::vector<HighResGrid> reconstruct(const NetworkParams& params, const Physics& phys,
                                     std::span<const Measurement> measurements,
                                     std::size_t chunk = 32);

}  // namespace csou::net
