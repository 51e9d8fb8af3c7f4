#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "../common/gradcheck.hpp"
#include "../common/stage_script.hpp"
#include "csou/autodiff/ops.hpp"
#include "csou/dataset.hpp"
#include "csou/errors.hpp"
#include "csou/net/dscsnet.hpp"
#include "csou/net/solve_ops.hpp"
#include "doctest.h"

using namespace csou;
using namespace csou::ad;
using namespace csou::net;
using csou::testing::grad_check;
using csou::testing::random_tensor;

namespace {

SceneConfig small_scene() {
  SceneConfig s;
  s.rows = 4;
  s.cols = 4;
  return s;
}

NetConfig small_net() {
  NetConfig c;
  c.stages = 3;
  c.features = 4;
  c.basis = 2;
  c.attn_hidden = 3;
  c.history = 2;
  c.dir_pos = 2;
  c.dtg_features = 4;
  c.dir_features = 3;
  return c;
}

std::vector<Measurement> random_measurements(const SceneConfig& s, std::size_t n,
                                             std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Measurement> out;
  for (std::size_t i = 0; i < n; ++i) {
    Measurement m(s);
    for (double& v : m.values()) v = rng.uniform(-20.0, 120.0);
    out.push_back(m);
  }
  return out;
}

void zero_all(NetworkParams& p, const std::string& prefix) {
  for (auto& t : p.tensors) {
    if (t.name.rfind(prefix, 0) == 0) {
      for (double& v : t.value.data()) v = 0.0;
    }
  }
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "csou_unit_net";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("net") {
  TEST_CASE("config validation and parameter init") {
    NetConfig c;
    CHECK_NOTHROW(c.validate());
    c.dir_pos = 7;
    CHECK_THROWS_AS(c.validate(), InvalidParameter);
    c = NetConfig{};
    c.history = 4;
    c.dir_pos = 3;
    CHECK_THROWS_AS(c.validate(), InvalidParameter);
    c = NetConfig{};
    c.dyn_weight = 1.5;
    CHECK_THROWS_AS(c.validate(), InvalidParameter);
    CHECK(parse_dir_mode("inline") == DirMode::kInline);
    CHECK_THROWS_AS(parse_dir_mode("sideways"), InvalidParameter);

    const NetworkParams a = init_params(NetConfig{}, 3);
    const NetworkParams b = init_params(NetConfig{}, 3);
    const NetworkParams d = init_params(NetConfig{}, 4);
    CHECK(a.tensors.size() == b.tensors.size());
    bool same = true, differs = false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
      same = same && a.tensors[i].value == b.tensors[i].value;
      differs = differs || !(a.tensors[i].value == d.tensors[i].value);
    }
    CHECK(same);
    CHECK(differs);
    CHECK_THROWS_AS(a.at("stage0.mu1"), InvalidParameter);
    CHECK(a.at("stage1.mu1")[0] == 0.0);
    CHECK(a.at("stage1.mu2")[0] == 1.0);
    CHECK(std::log1p(std::exp(a.at("stage5.rho_raw")[0])) == doctest::Approx(1e-3).epsilon(1e-5));
    CHECK(std::log1p(std::exp(a.at("stage5.theta_raw")[0])) == doctest::Approx(0.3).epsilon(1e-5));
    CHECK(inverse_softplus(std::log(2.0)) == doctest::Approx(0.0).scale(1.0));
    CHECK_THROWS_AS(a.at("nope"), InvalidParameter);
  }

  TEST_CASE("init layer") {
    const SceneConfig s;
    const Physics phys(s);
    Tape tape;
    const std::vector<Measurement> zero{Measurement(s)};
    NetInput in = make_input(phys, zero, 100.0);
    StageState st = init_layer(tape, in);
    for (const Var& v : {st.x, st.z, st.beta}) {
      CHECK(v.shape() == Shape{1, 1, 33, 33});
      for (double e : v.value().data()) CHECK(e == 0.0);
    }
    const std::vector<Measurement> flat{Measurement(s.rows, s.cols, std::vector<double>(121, 40.0))};
    in = make_input(phys, flat, 100.0);
    st = init_layer(tape, in);
    for (double e : st.x.value().data()) CHECK(e == 0.4);
  }

  TEST_CASE("dynamic conv degenerations") {
    NetConfig c = small_net();
    c.dyn_weight = 0.0;
    const NetworkParams p = init_params(c, 1);
    Tape tape;
    const BoundParams bp(tape, p, false);
    const Var x = tape.constant(random_tensor({2, 1, 6, 6}, 2));
    const Var dyn = dynamic_conv(x, bp, "stage0.c1.");
    const Var ref = conv2d(x, bp["stage0.c1.static"], bp["stage0.c1.bias"], 1);
    for (std::size_t i = 0; i < dyn.size(); ++i)
      CHECK(dyn.value()[i] == doctest::Approx(ref.value()[i]).epsilon(1e-14));

    c.basis = 1;
    c.dyn_weight = 0.3;
    const NetworkParams p1 = init_params(c, 5);
    const BoundParams b1(tape, p1, false);
    const Var out = dynamic_conv(x, b1, "stage0.c1.");
    const Tensor& basis = p1.at("stage0.c1.basis");
    const Tensor& stat = p1.at("stage0.c1.static");
    Tensor blend(stat.shape());
    for (std::size_t i = 0; i < blend.size(); ++i) blend[i] = 0.3 * basis[i] + 0.7 * stat[i];
    const Var expect = conv2d(x, tape.constant(blend), bp["stage0.c1.bias"], 1);
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out.value()[i] == doctest::Approx(expect.value()[i]).epsilon(1e-12));
  }

  TEST_CASE("dynamic conv gradients reach the weight generator") {
    const NetConfig c = small_net();
    const NetworkParams p = init_params(c, 1);
    const std::vector<std::string> names{"stage0.c1.attn_w1", "stage0.c1.attn_b1",
                                         "stage0.c1.attn_w2", "stage0.c1.attn_b2",
                                         "stage0.c1.basis"};
    std::vector<Tensor> in{random_tensor({2, 1, 5, 5}, 3)};
    for (const auto& n : names) in.push_back(p.at(n));
    // Nonzero generator biases so the attention is not uniform.
    in[2] = random_tensor(in[2].shape(), 4);
    in[4] = random_tensor(in[4].shape(), 5);
    const auto r = grad_check(
        [&](Tape& tape, const std::vector<Var>& v) {
          NetworkParams q = p;
          for (std::size_t i = 0; i < names.size(); ++i) q.at(names[i]) = v[i + 1].value();
          const BoundParams bp(tape, q, false);
          // Same math as dynamic_conv, built from the differentiated leaves.
          Var h = silu(add(matmul(global_avg_pool(v[0]), v[1]), v[2]));
          Var attn = softmax(add(matmul(h, v[3]), v[4]));
          const Shape& bs = v[5].shape();
          const std::size_t per = v[5].size() / bs[0];
          Var mixed = matmul(attn, reshape(v[5], {bs[0], per}));
          Var kernel = add(scale(mixed, c.dyn_weight),
                           scale(reshape(bp["stage0.c1.static"], {1, per}), 1.0 - c.dyn_weight));
          Var ref = conv2d(v[0], reshape(kernel, {2, bs[1], bs[2], bs[3], bs[4]}),
                           bp["stage0.c1.bias"], 1);
          Var lib = dynamic_conv(v[0], bp, "stage0.c1.");
          for (std::size_t i = 0; i < ref.size(); ++i) {
            if (std::fabs(ref.value()[i] - lib.value()[i]) > 1e-12) throw Error("mismatch");
          }
          return ref;
        },
        in);
    CHECK(r.max_rel_error < 1e-3);
  }

  TEST_CASE("stage examples") {
    const SceneConfig s = small_scene();
    const Physics phys(s);
    NetConfig c = small_net();
    NetworkParams p = init_params(c, 2);
    zero_all(p, "stage1.c1.");
    zero_all(p, "stage1.c2.");
    p.at("stage1.mu1")[0] = 0.7;
    Tape tape;
    const BoundParams bp(tape, p, false);
    const auto ms = random_measurements(s, 2, 1);
    const NetInput in = make_input(phys, ms, 100.0);
    StageState st;
    st.x = tape.constant(random_tensor({2, 1, 12, 12}, 1));
    st.z = tape.constant(random_tensor({2, 1, 12, 12}, 2));
    st.beta = tape.constant(random_tensor({2, 1, 12, 12}, 3));
    const StageState out = stage_forward(st, in, bp, 1, phys);
    const double mu1 = p.at("stage1.mu1")[0];
    for (std::size_t i = 0; i < out.z.size(); ++i)
      CHECK(out.z.value()[i] == doctest::Approx(mu1 * st.z.value()[i]).epsilon(1e-15));
    for (std::size_t i = 0; i < out.z.size(); ++i)
      CHECK(out.beta.value()[i] ==
            doctest::Approx(st.beta.value()[i] + out.x.value()[i] - out.z.value()[i]));
  }

  TEST_CASE("stage equals a scripted composition of ops") {
    const SceneConfig s = small_scene();
    const Physics phys(s);
    const NetConfig c = small_net();
    const NetworkParams p = init_params(c, 6);
    Tape tape;
    const BoundParams bp(tape, p, false);
    const auto ms = random_measurements(s, 2, 2);
    const NetInput in = make_input(phys, ms, 100.0);
    StageState st;
    st.x = tape.constant(random_tensor({2, 1, 12, 12}, 4));
    st.z = tape.constant(random_tensor({2, 1, 12, 12}, 5));
    st.beta = tape.constant(random_tensor({2, 1, 12, 12}, 6));
    const StageState out = stage_forward(st, in, bp, 1, phys);

    const double rho = std::log1p(std::exp(p.at("stage1.rho_raw")[0]));
    const double theta = std::log1p(std::exp(p.at("stage1.theta_raw")[0]));
    const std::size_t n = 144, m = 16;
    for (std::size_t b = 0; b < 2; ++b) {
      std::vector<double> w(n), x(n);
      for (std::size_t i = 0; i < n; ++i) w[i] = st.z.value()[b * n + i] - st.beta.value()[b * n + i];
      phys.solver().admm_x(std::span(in.y.data()).subspan(b * m, m), w, rho, x);
      for (std::size_t i = 0; i < n; ++i) CHECK(out.x.value()[b * n + i] == doctest::Approx(x[i]).epsilon(1e-12));
    }
    const Var v = add(out.x, st.beta);
    const Var t = conv2d(silu(dynamic_conv(v, bp, "stage1.c1.")), bp["stage1.c2.w"], bp["stage1.c2.b"], 1);
    const Var shr = soft_threshold(t, tape.constant(Tensor::scalar(theta)));
    for (std::size_t i = 0; i < out.z.size(); ++i) {
      const double expect = p.at("stage1.mu1")[0] * st.z.value()[i] + p.at("stage1.mu2")[0] * shr.value()[i];
      CHECK(out.z.value()[i] == doctest::Approx(expect).epsilon(1e-12));
    }

    // x = z with an unchanged pair leaves beta alone.
    StageState fixed = out;
    fixed.z = out.x;
    const Var beta2 = add(fixed.beta, sub(fixed.x, fixed.z));
    CHECK(beta2.value() == fixed.beta.value());
  }

  TEST_CASE("full stage passes a finite-difference check") {
    const auto r = csou::testing::full_stage_gradcheck(8);
    CHECK(r.checked > 300);
    CHECK(r.max_rel_error < 1e-4);
  }

  TEST_CASE("DTG examples") {
    const NetConfig c = small_net();
    NetworkParams p = init_params(c, 3);
    for (const char* b : {"dtg.fe.bias", "dtg.p1.b", "dtg.p2.b", "dtg.fuse.b"})
      for (double& v : p.at(b).data()) v = 0.0;
    Tape tape;
    const BoundParams bp(tape, p, false);
    const Var th = dtg_forward(tape.constant(Tensor({2, 1, 7, 9}, 0.0)), bp);
    CHECK(th.shape() == Shape{2, 1, 7, 9});
    for (double v : th.value().data()) CHECK(v == doctest::Approx(0.6931).epsilon(1e-4));

    const NetworkParams q = init_params(c, 4);
    const BoundParams bq(tape, q, false);
    for (int trial = 0; trial < 1000; ++trial) {
      const Var out = dtg_forward(tape.constant(random_tensor({1, 1, 6, 6}, 100 + trial, -50, 50)), bq);
      bool ok = true;
      for (double v : out.value().data()) ok = ok && v >= 0.0;
      CHECK(ok);
    }
  }

  TEST_CASE("DIR examples") {
    NetConfig c = small_net();
    c.history = 1;
    c.dir_pos = 1;
    NetworkParams p = init_params(c, 3);
    Tape tape;
    const BoundParams bp(tape, p, false);
    const Var z = tape.constant(random_tensor({1, 1, 6, 6}, 1));
    const std::vector<Var> h1{z};
    const Var fused = dir_fuse(h1, bp);
    const Var ref = ad::tanh(conv2d(z, bp["dir.enh0.w"], bp["dir.enh0.b"], 1));
    CHECK(fused.value() == ref.value());

    NetConfig c3 = small_net();
    c3.history = 3;
    c3.dir_pos = 3;
    NetworkParams p3 = init_params(c3, 5);
    const BoundParams b3(tape, p3, false);
    const std::vector<Var> zeros(3, tape.constant(Tensor({1, 1, 6, 6}, 0.0)));
    for (double v : dir_fuse(zeros, b3).value().data()) CHECK(v == 0.0);
    const std::vector<Var> big{tape.constant(random_tensor({1, 1, 6, 6}, 2, -90, 90)),
                               tape.constant(random_tensor({1, 1, 6, 6}, 3, -90, 90)),
                               tape.constant(random_tensor({1, 1, 6, 6}, 4, -90, 90))};
    for (std::size_t i = 0; i < 3; ++i) {
      const Var e = ad::tanh(conv2d(big[i], b3["dir.enh" + std::to_string(i) + ".w"],
                                    b3["dir.enh" + std::to_string(i) + ".b"], 1));
      for (double v : e.value().data()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
      }
    }
    const std::vector<Var> two(zeros.begin(), zeros.begin() + 2);
    CHECK_THROWS_AS(dir_fuse(two, b3), ShapeError);
  }

  TEST_CASE("final reconstruction") {
    const SceneConfig s = small_scene();
    const Physics phys(s);
    const NetConfig c = small_net();
    NetworkParams p = init_params(c, 3);
    // Huge threshold: the shrinkage term vanishes.
    p.at("dtg.fuse.b")[0] = 1e6;
    Tape tape;
    const BoundParams bp(tape, p, false);
    StageState st;
    st.x = tape.constant(random_tensor({1, 1, 12, 12}, 1));
    st.z = tape.constant(random_tensor({1, 1, 12, 12}, 2));
    st.beta = tape.constant(random_tensor({1, 1, 12, 12}, 3));
    const Var f = tape.constant(random_tensor({1, 1, 12, 12}, 4, 0.0, 2.0));
    const Var out = final_reconstruction(st, f, bp, phys);
    const double rho = std::log1p(std::exp(p.at("final.rho_raw")[0]));
    std::vector<double> ref(144);
    phys.solver().solve(f.value().data(), rho, ref);
    for (std::size_t i = 0; i < 144; ++i) CHECK(out.value()[i] == doctest::Approx(std::max(0.0, ref[i])));

    // Scripted composition with a live threshold map.
    const NetworkParams q = init_params(c, 4);
    const BoundParams bq(tape, q, false);
    const Var o2 = final_reconstruction(st, f, bq, phys);
    const Var delta = sub(st.beta, st.z);
    const Var rhs = sub(f, mul(softplus(bq["final.rho_raw"]), soft_threshold(delta, dtg_forward(delta, bq))));
    const Var ref2 = relu(normal_solve(phys.solver(), rhs, softplus(bq["final.rho_raw"])));
    CHECK(o2.value() == ref2.value());

    // Zero states and zero parameters.
    NetworkParams zp = init_params(c, 4);
    for (auto& t : zp.tensors)
      if (t.name.rfind("dtg.", 0) == 0 || t.name.rfind("dir.", 0) == 0)
        for (double& v : t.value.data()) v = 0.0;
    const BoundParams bz(tape, zp, false);
    StageState zs{tape.constant(Tensor({1, 1, 12, 12})), tape.constant(Tensor({1, 1, 12, 12})),
                  tape.constant(Tensor({1, 1, 12, 12}))};
    for (double v : final_reconstruction(zs, tape.constant(Tensor({1, 1, 12, 12})), bz, phys).value().data())
      CHECK(v == 0.0);
  }

  TEST_CASE("net forward: shapes, zero input, determinism") {
    const SceneConfig s;
    const Physics phys(s);
    const NetworkParams p = init_params(NetConfig{}, 1);
    Tape tape;
    const BoundParams bp(tape, p, false);
    const std::vector<Measurement> zero{Measurement(s)};
    const Var out0 = net_forward(make_input(phys, zero, 100.0), bp, phys);
    CHECK(out0.shape() == Shape{1, 1, 33, 33});
    for (double v : out0.value().data()) CHECK(v == 0.0);

    DatasetConfig dc;
    dc.count = 4;
    std::vector<Measurement> ms;
    for (const auto& r : make_records(dc)) ms.push_back(r.measurement);
    const auto a = reconstruct(p, phys, ms, 3);
    const auto b = reconstruct(p, phys, ms, 1);
    REQUIRE(a.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a[i].rows() == 33);
      CHECK(a[i] == b[i]);
    }

    NetConfig ic;
    ic.dir_mode = DirMode::kInline;
    const NetworkParams pi = init_params(ic, 1);
    const auto c = reconstruct(pi, phys, ms);
    CHECK(c.size() == 4);
  }

  TEST_CASE("every parameter receives gradient") {
    const SceneConfig s;
    const Physics phys(s);
    for (DirMode mode : {DirMode::kWindow, DirMode::kInline}) {
      NetConfig c;
      c.dir_mode = mode;
      const NetworkParams p = init_params(c, 11);
      DatasetConfig dc;
      dc.count = 8;
      dc.k_min = 3;
      dc.k_max = 5;
      std::vector<Measurement> ms;
      std::vector<HighResGrid> gt;
      for (const auto& r : make_records(dc)) {
        ms.push_back(r.measurement);
        gt.push_back(embed_scene(r.scene, s));
      }
      Tape tape;
      const BoundParams bp(tape, p, true);
      const NetInput in = make_input(phys, ms, 100.0);
      const Var out = net_forward(in, bp, phys);
      Tensor target(out.shape());
      for (std::size_t b = 0; b < gt.size(); ++b)
        for (std::size_t i = 0; i < 1089; ++i) target[b * 1089 + i] = gt[b].values()[i] / 100.0;
      tape.backward(mse(out, tape.constant(target)));
      for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        CAPTURE(p.tensors[i].name);
        const Tensor g = tape.grad(bp.vars()[i]);
        double norm = 0.0;
        for (double v : g.data()) norm += v * v;
        CHECK(norm > 0.0);
      }
    }
  }

  TEST_CASE("checkpoint round-trip and corruption") {
    const SceneConfig s;
    const Physics phys(s);
    NetConfig c;
    c.dyn_weight = 0.55;
    c.dir_mode = DirMode::kInline;
    const NetworkParams p = init_params(c, 21);
    const auto path = scratch("model.ckpt");
    save_checkpoint(path, p);
    const NetworkParams q = load_checkpoint(path);
    CHECK(q.config.dyn_weight == 0.55);
    CHECK(q.config.dir_mode == DirMode::kInline);
    REQUIRE(q.tensors.size() == p.tensors.size());
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      CHECK(q.tensors[i].name == p.tensors[i].name);
      CHECK(q.tensors[i].value == p.tensors[i].value);
    }
    DatasetConfig dc;
    dc.count = 3;
    std::vector<Measurement> ms;
    for (const auto& r : make_records(dc)) ms.push_back(r.measurement);
    const auto a = reconstruct(p, phys, ms);
    const auto b = reconstruct(q, phys, ms);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    const auto again = scratch("model2.ckpt");
    save_checkpoint(again, q);
    std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
    const std::string s1{std::istreambuf_iterator<char>(f1), {}};
    const std::string s2{std::istreambuf_iterator<char>(f2), {}};
    CHECK(s1 == s2);

    const auto bad = scratch("bad.ckpt");
    std::ofstream(bad, std::ios::binary) << "not-a-checkpoint 1\n";
    CHECK_THROWS_AS(load_checkpoint(bad), BadMagic);
    std::ofstream(bad, std::ios::binary) << "csou-checkpoint 2\n";
    CHECK_THROWS_AS(load_checkpoint(bad), VersionMismatch);
    std::ofstream(bad, std::ios::binary) << s1.substr(0, s1.size() - 7);
    CHECK_THROWS_AS(load_checkpoint(bad), TruncatedRecord);
    CHECK_THROWS_AS(load_checkpoint(scratch("missing.ckpt")), IoError);
  }
}
