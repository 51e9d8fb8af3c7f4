#include "csou/net/dscsnet.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "csou/autodiff/ops.hpp"
#include "csou/binary_io.hpp"
#include "csou/errors.hpp"
#include "csou/net/solve_ops.hpp"
#include "csou/parallel.hpp"
#include "csou/rng.hpp"

namespace csou::net {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr const char* kCheckpointMagic = "csou-checkpoint";
constexpr int kCheckpointVersion = 1;

// Warm start: the 6-iteration ADMM schedule that scored best on a held-out
// split at the default scene (lambda in physical intensity units).
constexpr double kWarmRho = 1e-3;
constexpr double kWarmLambda = 0.03;
constexpr double kWarmThreshold = 1e-3;
constexpr double kWarmPerturbation = 0.1;

std::string stage_prefix(std::size_t k) { return "stage" + std::to_string(k) + "."; }

class ParamBuilder {
 public:
  ParamBuilder(NetworkParams& params, std::uint64_t seed) : params_(params), seed_(seed) {}

  void uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    CounterRng rng = CounterRng(seed_).split(stream_id(name.c_str()));
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    add(name, std::move(t));
  }
  void constant(const std::string& name, Shape shape, double value) {
    add(name, Tensor(std::move(shape), value));
  }
  void dynamic_conv(const std::string& prefix, std::size_t cin, std::size_t cout,
                    const NetConfig& cfg) {
    uniform(prefix + "basis", {cfg.basis, cout, cin, 3, 3}, cin * 9);
    uniform(prefix + "static", {cout, cin, 3, 3}, cin * 9);
    constant(prefix + "bias", {cout}, 0.0);
    uniform(prefix + "attn_w1", {cin, cfg.attn_hidden}, cin);
    constant(prefix + "attn_b1", {cfg.attn_hidden}, 0.0);
    uniform(prefix + "attn_w2", {cfg.attn_hidden, cfg.basis}, cfg.attn_hidden);
    constant(prefix + "attn_b2", {cfg.basis}, 0.0);
  }
  void conv(const std::string& prefix, std::size_t cin, std::size_t cout) {
    uniform(prefix + "w", {cout, cin, 3, 3}, cin * 9);
    constant(prefix + "b", {cout}, 0.0);
  }

 private:
  void add(const std::string& name, Tensor t) { params_.tensors.push_back({name, std::move(t)}); }
  NetworkParams& params_;
  std::uint64_t seed_;
};

Var conv(Var x, const BoundParams& p, const std::string& prefix) {
  return ad::conv2d(x, p[prefix + "w"], p[prefix + "b"], 1);
}

Var positive(const BoundParams& p, const std::string& name) { return ad::softplus(p[name]); }

}  // namespace

void NetConfig::validate() const {
  if (stages < 1) throw InvalidParameter("network needs at least one stage");
  if (features < 1 || basis < 1 || attn_hidden < 1 || dtg_features < 1 || dir_features < 1) {
    throw InvalidParameter("network widths must be >= 1");
  }
  if (!(dyn_weight >= 0.0 && dyn_weight <= 1.0)) {
    throw InvalidParameter("dynamic weight must lie in [0, 1]");
  }
  if (dir_pos < 1 || dir_pos > stages) {
    throw InvalidParameter("DIR position must lie in [1, stages], got " + std::to_string(dir_pos));
  }
  if (history < 1 || history > dir_pos) {
    throw InvalidParameter("history length must lie in [1, DIR position], got " +
                           std::to_string(history));
  }
  if (!(intensity_scale > 0.0)) throw InvalidParameter("intensity scale must be positive");
}

std::string to_string(DirMode mode) { return mode == DirMode::kWindow ? "window" : "inline"; }

DirMode parse_dir_mode(std::string_view name) {
  if (name == "window") return DirMode::kWindow;
  if (name == "inline") return DirMode::kInline;
  throw InvalidParameter("unknown DIR mode '" + std::string(name) + "' (window|inline)");
}

Tensor& NetworkParams::at(std::string_view name) {
  for (auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw InvalidParameter("no parameter named '" + std::string(name) + "'");
}

const Tensor& NetworkParams::at(std::string_view name) const {
  return const_cast<NetworkParams*>(this)->at(name);
}

std::size_t NetworkParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw InvalidParameter("inverse softplus needs a positive value");
  return y > 30.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

NetworkParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NetworkParams params;
  params.config = cfg;
  ParamBuilder b(params, seed);
  const std::size_t L = cfg.features;
  for (std::size_t k = 0; k < cfg.stages; ++k) {
    const std::string s = stage_prefix(k);
    b.dynamic_conv(s + "c1.", 1, L, cfg);
    b.uniform(s + "c2.w", {1, L, 3, 3}, L * 9);
    b.constant(s + "c2.b", {1}, 0.0);
    // z enters stage 0 as zero, so that stage has no mu1.
    if (k > 0) b.constant(s + "mu1", {1}, 0.0);
    b.constant(s + "mu2", {1}, 1.0);
    b.constant(s + "rho_raw", {1}, 0.0);
    b.constant(s + "theta_raw", {1}, 0.0);
  }
  const std::size_t F = cfg.dtg_features;
  b.dynamic_conv("dtg.fe.", 1, F, cfg);
  b.conv("dtg.p1.", F, F / 2 > 0 ? F / 2 : 1);
  b.conv("dtg.p2.", F, F / 2 > 0 ? F / 2 : 1);
  b.conv("dtg.fuse.", 2, 1);
  // Start with thresholds near zero so the final layer is a plain x-update.
  params.at("dtg.fuse.b")[0] = inverse_softplus(kWarmThreshold);

  const std::size_t D = cfg.dir_features;
  for (std::size_t i = 0; i < cfg.history; ++i) b.conv("dir.enh" + std::to_string(i) + ".", 1, 1);
  b.constant("dir.fuse_logits", {cfg.history}, 0.0);
  b.conv("dir.inp.", 1, D);
  b.conv("dir.cat.", 1 + D, D);
  b.conv("dir.out.", D, 1);
  // Small correction on top of A^T y at the start.
  for (double& v : params.at("dir.out.w").data()) v *= 0.01;
  b.constant("final.rho_raw", {1}, inverse_softplus(kWarmRho));

  // Each stage starts as one ADMM prox iteration plus a small random
  // perturbation, so training refines a working solver.
  const double lambda = kWarmLambda / cfg.intensity_scale;
  for (std::size_t k = 0; k < cfg.stages; ++k) {
    const std::string s = stage_prefix(k);
    for (const char* name : {"c1.basis", "c1.static", "c2.w"}) {
      for (double& v : params.at(s + name).data()) v *= kWarmPerturbation;
    }
    if (L >= 2) {
      Tensor& basis = params.at(s + "c1.basis");  // [B,L,1,3,3]
      for (std::size_t j = 0; j < cfg.basis; ++j) {
        basis[(j * L + 0) * 9 + 4] += 1.0;
        basis[(j * L + 1) * 9 + 4] -= 1.0;
      }
      Tensor& stat = params.at(s + "c1.static");
      stat[0 * 9 + 4] += 1.0;
      stat[1 * 9 + 4] -= 1.0;
      Tensor& c2 = params.at(s + "c2.w");
      c2[0 * 9 + 4] += 1.0;
      c2[1 * 9 + 4] -= 1.0;
    }
    params.at(s + "rho_raw")[0] = inverse_softplus(kWarmRho);
    params.at(s + "theta_raw")[0] = inverse_softplus(lambda / kWarmRho);
  }
  round_to_float(params);
  return params;
}

void round_to_float(NetworkParams& params) {
  for (auto& t : params.tensors) {
    for (double& v : t.value.data()) v = static_cast<double>(static_cast<float>(v));
  }
}

void set_classical_stage(NetworkParams& params, std::size_t k, double lambda, double rho) {
  const NetConfig& cfg = params.config;
  if (cfg.dyn_weight != 0.0) throw InvalidParameter("classical stage needs dynamic weight 0");
  if (cfg.features < 2) throw InvalidParameter("classical stage needs at least 2 features");
  if (!(rho > 0.0) || !(lambda > 0.0)) throw InvalidParameter("classical stage needs rho, lambda > 0");
  const std::string s = stage_prefix(k);
  for (const char* name : {"c1.basis", "c1.static", "c1.bias", "c2.w", "c2.b"}) {
    for (double& v : params.at(s + name).data()) v = 0.0;
  }
  // C2(SiLU(C1 v)) = SiLU(v) - SiLU(-v) = v
  Tensor& c1 = params.at(s + "c1.static");  // [L,1,3,3]
  c1[0 * 9 + 4] = 1.0;
  c1[1 * 9 + 4] = -1.0;
  Tensor& c2 = params.at(s + "c2.w");  // [1,L,3,3]
  c2[0 * 9 + 4] = 1.0;
  c2[1 * 9 + 4] = -1.0;
  if (k > 0) params.at(s + "mu1")[0] = 0.0;
  params.at(s + "mu2")[0] = 1.0;
  params.at(s + "rho_raw")[0] = inverse_softplus(rho);
  params.at(s + "theta_raw")[0] = inverse_softplus(lambda / rho);
}

void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const NetConfig& c = params.config;
  std::ostringstream m;
  m.precision(17);
  m << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'
    << "config stages " << c.stages << '\n'
    << "config features " << c.features << '\n'
    << "config basis " << c.basis << '\n'
    << "config attn_hidden " << c.attn_hidden << '\n'
    << "config dyn_weight " << c.dyn_weight << '\n'
    << "config history " << c.history << '\n'
    << "config dir_pos " << c.dir_pos << '\n'
    << "config dir_mode " << to_string(c.dir_mode) << '\n'
    << "config dtg_features " << c.dtg_features << '\n'
    << "config dir_features " << c.dir_features << '\n'
    << "config intensity_scale " << c.intensity_scale << '\n';
  std::size_t offset = 0;
  for (const auto& t : params.tensors) {
    m << "param " << t.name << ' ';
    const Shape& s = t.value.shape();
    for (std::size_t d = 0; d < s.size(); ++d) m << (d ? "," : "") << s[d];
    m << ' ' << offset << '\n';
    offset += t.value.size();
  }
  m << "end\n";
  const std::string manifest = m.str();
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto& t : params.tensors) {
    for (double v : t.value.data()) le::put_f32(out, static_cast<float>(v));
  }
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

NetworkParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw TruncatedRecord("checkpoint '" + path.string() + "' is empty", 0);
  {
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    head >> magic >> version;
    if (magic != kCheckpointMagic) throw BadMagic("'" + path.string() + "' is not a checkpoint");
    if (version != kCheckpointVersion) {
      throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
  }
  NetworkParams params;
  NetConfig& c = params.config;
  struct Entry {
    std::string name;
    Shape shape;
  };
  std::vector<Entry> entries;
  std::size_t expected_offset = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string key, value;
      ls >> key >> value;
      auto count = [&] { return static_cast<std::size_t>(std::stoull(value)); };
      if (key == "stages") c.stages = count();
      else if (key == "features") c.features = count();
      else if (key == "basis") c.basis = count();
      else if (key == "attn_hidden") c.attn_hidden = count();
      else if (key == "dyn_weight") c.dyn_weight = std::stod(value);
      else if (key == "history") c.history = count();
      else if (key == "dir_pos") c.dir_pos = count();
      else if (key == "dir_mode") c.dir_mode = parse_dir_mode(value);
      else if (key == "dtg_features") c.dtg_features = count();
      else if (key == "dir_features") c.dir_features = count();
      else if (key == "intensity_scale") c.intensity_scale = std::stod(value);
      else throw IoError("checkpoint: unknown config key '" + key + "'");
    } else if (kind == "param") {
      Entry e;
      std::string shape;
      std::size_t offset = 0;
      if (!(ls >> e.name >> shape >> offset)) throw IoError("checkpoint: bad line '" + line + "'");
      std::istringstream ss(shape);
      std::string dim;
      while (std::getline(ss, dim, ',')) e.shape.push_back(static_cast<std::size_t>(std::stoull(dim)));
      if (offset != expected_offset) throw IoError("checkpoint: offset mismatch for " + e.name);
      expected_offset += ad::numel(e.shape);
      entries.push_back(std::move(e));
    } else {
      throw IoError("checkpoint: unexpected line '" + line + "'");
    }
  }
  if (!ended) throw TruncatedRecord("checkpoint manifest has no end line", 0);
  c.validate();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor t(entries[i].shape);
    for (double& v : t.data()) {
      float f = 0.0F;
      if (!le::get_f32(in, f)) {
        throw TruncatedRecord("checkpoint blob ends inside parameter " + entries[i].name, i);
      }
      v = static_cast<double>(f);
    }
    params.tensors.push_back({entries[i].name, std::move(t)});
  }
  // Layout must agree with what this config builds.
  const NetworkParams shape_ref = init_params(c, 0);
  if (shape_ref.tensors.size() != params.tensors.size()) {
    throw IoError("checkpoint holds " + std::to_string(params.tensors.size()) +
                  " tensors, config expects " + std::to_string(shape_ref.tensors.size()));
  }
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (shape_ref.tensors[i].name != params.tensors[i].name ||
        shape_ref.tensors[i].value.shape() != params.tensors[i].value.shape()) {
      throw IoError("checkpoint parameter " + params.tensors[i].name + " does not match config");
    }
  }
  return params;
}

Physics::Physics(const SceneConfig& cfg)
    : scene_((cfg.validate(), cfg)),
      kernel_(make_psf_kernel(cfg)),
      op_(cfg, kernel_),
      solver_(op_) {}

BoundParams::BoundParams(Tape& tape, const NetworkParams& params, bool requires_grad)
    : config_(&params.config) {
  vars_.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    index_.emplace(t.name, vars_.size());
    vars_.push_back(tape.leaf(t.value, requires_grad));
  }
}

Var BoundParams::operator[](std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw InvalidParameter("no parameter named '" + std::string(name) + "'");
  return vars_[it->second];
}

NetInput make_input(const Physics& phys, std::span<const Measurement> batch, double scale) {
  const SceneConfig& cfg = phys.scene();
  const std::size_t m = cfg.rows * cfg.cols;
  const std::size_t n1 = cfg.hr_rows();
  const std::size_t n2 = cfg.hr_cols();
  NetInput in;
  in.y = Tensor({batch.size(), m});
  in.inp = Tensor({batch.size(), 1, n1, n2});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].rows() != cfg.rows || batch[b].cols() != cfg.cols) {
      throw DimensionError("measurement " + std::to_string(b) + " does not match the scene config");
    }
    for (std::size_t i = 0; i < m; ++i) in.y[b * m + i] = batch[b].values()[i] / scale;
    const HighResGrid up = replicate(batch[b], cfg.ratio);
    for (std::size_t i = 0; i < n1 * n2; ++i) in.inp[b * n1 * n2 + i] = up.values()[i] / scale;
  }
  in.aty = adjoint_batch(phys.op(), in.y, n1, n2);
  return in;
}

StageState init_layer(Tape& tape, const NetInput& in) {
  StageState s;
  s.x = tape.constant(in.inp);
  s.z = tape.constant(Tensor(in.inp.shape(), 0.0));
  s.beta = tape.constant(Tensor(in.inp.shape(), 0.0));
  return s;
}

Var dynamic_conv(Var x, const BoundParams& p, const std::string& prefix) {
  const double alpha = p.config().dyn_weight;
  const Var basis = p[prefix + "basis"];
  const Var stat = p[prefix + "static"];
  const Shape& bs = basis.shape();  // [Bk, Cout, Cin, 3, 3]
  const std::size_t nb = bs[0];
  const std::size_t per = basis.size() / nb;
  const std::size_t batch = x.shape()[0];

  Var pooled = ad::global_avg_pool(x);
  Var h = ad::silu(ad::add(ad::matmul(pooled, p[prefix + "attn_w1"]), p[prefix + "attn_b1"]));
  Var attn = ad::softmax(ad::add(ad::matmul(h, p[prefix + "attn_w2"]), p[prefix + "attn_b2"]));
  Var mixed = ad::matmul(attn, ad::reshape(basis, {nb, per}));
  Var kernel = ad::add(ad::scale(mixed, alpha), ad::scale(ad::reshape(stat, {1, per}), 1.0 - alpha));
  Shape ks{batch, bs[1], bs[2], bs[3], bs[4]};
  return ad::conv2d(x, ad::reshape(kernel, ks), p[prefix + "bias"], 1);
}

StageState stage_forward(const StageState& s, const NetInput& in, const BoundParams& p,
                         std::size_t k, const Physics& phys, Var rhs) {
  const std::string pre = stage_prefix(k);
  const Var rho = positive(p, pre + "rho_raw");
  const Var theta = positive(p, pre + "theta_raw");
  StageState out;
  const Var w = ad::sub(s.z, s.beta);
  if (rhs.tape()) {
    out.x = normal_solve(phys.solver(), ad::add(rhs, ad::mul(rho, w)), rho);
  } else {
    out.x = admm_x(phys.solver(), in.y, w, rho);
  }
  const Var v = ad::add(out.x, s.beta);
  const Var t = ad::conv2d(ad::silu(dynamic_conv(v, p, pre + "c1.")), p[pre + "c2.w"],
                           p[pre + "c2.b"], 1);
  out.z = ad::mul(p[pre + "mu2"], ad::soft_threshold(t, theta));
  if (k > 0) out.z = ad::add(ad::mul(p[pre + "mu1"], s.z), out.z);
  out.beta = ad::add(s.beta, ad::sub(out.x, out.z));
  return out;
}

Var dtg_forward(Var delta, const BoundParams& p) {
  const Var feat = ad::silu(dynamic_conv(delta, p, "dtg.fe."));
  const Var u1 = conv(feat, p, "dtg.p1.");
  const Var u2 = conv(feat, p, "dtg.p2.");
  const std::vector<Var> u_parts{u1, u2};
  const Var u = ad::concat(u_parts);
  const std::vector<Var> pooled{ad::channel_mean(u), ad::channel_max(u)};
  return ad::softplus(conv(ad::concat(pooled), p, "dtg.fuse."));
}

Var dir_fuse(std::span<const Var> history, const BoundParams& p) {
  const std::size_t m = p.config().history;
  if (history.size() != m) {
    throw ShapeError("DIR expects " + std::to_string(m) + " history entries, got " +
                     std::to_string(history.size()));
  }
  const Var weights = ad::softmax(p["dir.fuse_logits"]);
  Var fused;
  for (std::size_t i = 0; i < m; ++i) {
    const Var enhanced = ad::tanh(conv(history[i], p, "dir.enh" + std::to_string(i) + "."));
    const Var term = ad::mul(ad::index(weights, i), enhanced);
    fused = i == 0 ? term : ad::add(fused, term);
  }
  return fused;
}

Var dir_forward(std::span<const Var> history, const NetInput& in, const BoundParams& p) {
  Tape& tape = *history.front().tape();
  const Var fused = dir_fuse(history, p);
  const Var inp = ad::silu(conv(tape.constant(in.inp), p, "dir.inp."));
  const std::vector<Var> parts{fused, inp};
  const Var mixed = ad::silu(conv(ad::concat(parts), p, "dir.cat."));
  return ad::add(tape.constant(in.aty), conv(mixed, p, "dir.out."));
}

Var final_reconstruction(const StageState& s, Var f_dir, const BoundParams& p, const Physics& phys) {
  const Var rho = positive(p, "final.rho_raw");
  const Var delta = ad::sub(s.beta, s.z);
  const Var shrunk = ad::soft_threshold(delta, dtg_forward(delta, p));
  const Var rhs = ad::sub(f_dir, ad::mul(rho, shrunk));
  return ad::relu(normal_solve(phys.solver(), rhs, rho));
}

Var net_forward(const NetInput& in, const BoundParams& p, const Physics& phys, ForwardTrace* trace) {
  const NetConfig& cfg = p.config();
  Tape& tape = *p.vars().front().tape();
  StageState s = init_layer(tape, in);
  std::vector<Var> zs;
  Var f_dir;
  for (std::size_t k = 0; k < cfg.stages; ++k) {
    const bool inline_rhs = cfg.dir_mode == DirMode::kInline && f_dir.tape();
    s = stage_forward(s, in, p, k, phys, inline_rhs ? f_dir : Var{});
    zs.push_back(s.z);
    if (trace) trace->stages.push_back(s);
    if (k + 1 == cfg.dir_pos) {
      const std::span<const Var> window(zs.data() + (cfg.dir_pos - cfg.history), cfg.history);
      f_dir = dir_forward(window, in, p);
    }
  }
  if (trace) trace->f_dir = f_dir;
  return final_reconstruction(s, f_dir, p, phys);
}

std::vector<HighResGrid> reconstruct(const NetworkParams& params, const Physics& phys,
                                     std::span<const Measurement> measurements, std::size_t chunk) {
  if (chunk == 0) chunk = 1;
  const SceneConfig& cfg = phys.scene();
  const std::size_t n1 = cfg.hr_rows();
  const std::size_t n2 = cfg.hr_cols();
  const double scale = params.config.intensity_scale;
  std::vector<HighResGrid> out(measurements.size());
  const std::size_t chunks = (measurements.size() + chunk - 1) / chunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * chunk;
    const std::size_t hi = std::min(measurements.size(), lo + chunk);
    Tape tape;
    const BoundParams p(tape, params, false);
    const NetInput in = make_input(phys, measurements.subspan(lo, hi - lo), scale);
    const Var x = net_forward(in, p, phys);
    for (std::size_t b = lo; b < hi; ++b) {
      HighResGrid g(n1, n2);
      for (std::size_t i = 0; i < n1 * n2; ++i) {
        g.values()[i] = x.value()[(b - lo) * n1 * n2 + i] * scale;
      }
      out[b] = std::move(g);
    }
  });
  return out;
}

}  // namespace csou::net
