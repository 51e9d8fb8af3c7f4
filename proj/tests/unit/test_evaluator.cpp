#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <vector>

#include "csou/evaluator.hpp"
#include "csou/rng.hpp"
#include "doctest.h"

using namespace csou;

namespace {

// Independent PR sweep: for every distinct confidence, the operating point
// keeps predictions at or above it.
double brute_ap(const std::vector<ScoredLabel>& labels, std::size_t truths) {
  if (truths == 0) return labels.empty() ? 1.0 : 0.0;
  std::set<double, std::greater<>> thresholds;
  for (const auto& l : labels) thresholds.insert(l.confidence);
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    std::size_t tp = 0, kept = 0;
    for (const auto& l : labels) {
      if (l.confidence >= t) {
        ++kept;
        tp += l.tp ? 1 : 0;
      }
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(truths);
    ap += static_cast<double>(tp) / static_cast<double>(kept) * (recall - prev_recall);
    prev_recall = recall;
  }
  return ap;
}

Prediction pred_at(double x, double y, double conf) {
  Prediction p;
  p.x = x;
  p.y = y;
  p.confidence = conf;
  return p;
}

// Maximum bipartite matching size by exhaustive search (tiny instances only).
std::size_t max_matching(const std::vector<Prediction>& preds, const SparseScene& truth,
                         double delta, std::size_t i, std::vector<bool>& used) {
  if (i == preds.size()) return 0;
  std::size_t best = max_matching(preds, truth, delta, i + 1, used);
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (used[t]) continue;
    if (std::hypot(preds[i].x - truth.targets[t].x, preds[i].y - truth.targets[t].y) > delta)
      continue;
    used[t] = true;
    best = std::max(best, 1 + max_matching(preds, truth, delta, i + 1, used));
    used[t] = false;
  }
  return best;
}

}  // namespace

TEST_SUITE("evaluator") {
  TEST_CASE("extraction") {
    const SceneConfig cfg;
    HighResGrid g(cfg);
    g.at(22, 13) = 100.0;
    auto preds = extract_targets(g, cfg);
    REQUIRE(preds.size() == 1);
    CHECK(preds[0].x == doctest::Approx(4.0));
    CHECK(preds[0].y == doctest::Approx(7.0));
    CHECK(preds[0].intensity == 100.0);
    CHECK(preds[0].pixel == PixelIndex{7, 4});

    HighResGrid low(cfg);
    low.at(10, 10) = 49.0;
    CHECK(extract_targets(low, cfg).empty());

    HighResGrid two(cfg);
    two.at(5, 5) = 80.0;
    two.at(20, 25) = 120.0;
    CHECK(extract_targets(two, cfg).size() == 2);

    HighResGrid plateau(cfg);
    plateau.at(10, 10) = 90.0;
    plateau.at(10, 11) = 90.0;
    preds = extract_targets(plateau, cfg);
    REQUIRE(preds.size() == 1);
    CHECK(preds[0].hr_col == 10);
  }

  TEST_CASE("matching") {
    SparseScene truth;
    truth.targets = {{4.0, 7.0, 100.0}};
    const std::vector<Prediction> one{pred_at(4.0, 7.0, 1.0)};
    for (double d : {0.01, 0.25, 3.0}) {
      const auto m = match(one, truth, d);
      CHECK(m.tp == 1);
      CHECK(m.fp == 0);
      CHECK(m.fn == 0);
    }
    CHECK(match(one, SparseScene{}, 0.1).fp == 1);

    const std::vector<Prediction> two{pred_at(4.05, 7.0, 0.5), pred_at(4.0, 7.02, 0.9)};
    const auto m = match(two, truth, 0.1);
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.is_tp[1]);
    CHECK(!m.is_tp[0]);
    CHECK(m.truth_index[1] == 0);
    CHECK(m.truth_index[0] == -1);
  }

  TEST_CASE("greedy matching agrees with optimal assignment on separated truths") {
    CounterRng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      const double delta = 0.25;
      SparseScene truth;
      const std::size_t nt = rng.uniform_int(6);
      for (std::size_t t = 0; t < nt; ++t)
        truth.targets.push_back({static_cast<double>(t) * 1.0 + 1.0, 2.0, 100.0});
      std::vector<Prediction> preds;
      const std::size_t np = rng.uniform_int(6);
      for (std::size_t p = 0; p < np; ++p) {
        const std::size_t near = rng.uniform_int(nt + 1);
        const double cx = near < nt ? truth.targets[near].x : 9.0;
        preds.push_back(pred_at(cx + rng.uniform(-0.3, 0.3), 2.0 + rng.uniform(-0.3, 0.3),
                                rng.uniform()));
      }
      const auto m = match(preds, truth, delta);
      std::vector<bool> used(nt, false);
      CHECK(m.tp == max_matching(preds, truth, delta, 0, used));
      CHECK(m.tp + m.fp == np);
      CHECK(m.tp + m.fn == nt);
    }
  }

  TEST_CASE("average precision fixtures") {
    CHECK(average_precision(std::vector<ScoredLabel>{{0.9, true}, {0.5, true}}, 2) == 1.0);
    CHECK(average_precision(std::vector<ScoredLabel>{{0.9, false}, {0.5, false}}, 2) == 0.0);
    const std::vector<ScoredLabel> three{{0.9, true}, {0.8, false}, {0.7, true}};
    CHECK(average_precision(three, 2) == 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
    CHECK(average_precision(three, 2) == doctest::Approx(0.8333).epsilon(1e-4));
    CHECK(average_precision({}, 0) == 1.0);
    CHECK(average_precision(three, 0) == 0.0);
    CHECK(average_precision({}, 3) == 0.0);
  }

  TEST_CASE("average precision equals a brute-force sweep") {
    CounterRng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<ScoredLabel> labels;
      const std::size_t n = rng.uniform_int(12);
      std::size_t tps = 0;
      for (std::size_t i = 0; i < n; ++i) {
        // Coarse confidences so ties occur.
        const ScoredLabel l{static_cast<double>(rng.uniform_int(5)) / 4.0, rng.uniform() < 0.6};
        tps += l.tp ? 1 : 0;
        labels.push_back(l);
      }
      const std::size_t truths = tps + rng.uniform_int(3);
      CHECK(average_precision(labels, truths) == brute_ap(labels, truths));
    }
  }

  TEST_CASE("delta sets") {
    const auto s = standard_deltas();
    REQUIRE(s.size() == 5);
    CHECK(s.front() == doctest::Approx(0.05));
    CHECK(s.back() == doctest::Approx(0.25));
    const auto e = extended_deltas();
    CHECK(e.back() == doctest::Approx(0.50));
    CHECK(std::is_sorted(e.begin(), e.end()));
  }

  TEST_CASE("cso-map: perfect, empty and brute-force toy set") {
    const SceneConfig cfg;
    SparseScene a, b, c;
    a.targets = {{4.0, 7.0, 150.0}, {6.0 + 1.0 / 3.0, 3.0, 120.0}};
    b.targets = {{5.0, 5.0, 200.0}};
    c.targets = {{3.0 - 1.0 / 3.0, 8.0, 90.0}, {7.0, 7.0, 110.0}};
    const std::vector<SparseScene> truths{a, b, c};
    std::vector<HighResGrid> perfect;
    for (const auto& s : truths) perfect.push_back(embed_scene(s, cfg));
    const auto deltas = standard_deltas();
    const APReport rp = cso_map(perfect, truths, cfg, deltas);
    for (const auto& e : rp.entries) CHECK(e.ap == 1.0);
    CHECK(rp.cso_map == 1.0);

    const std::vector<HighResGrid> empty(3, HighResGrid(cfg));
    const APReport re = cso_map(empty, truths, cfg, deltas);
    for (const auto& e : re.entries) {
      CHECK(e.ap == 0.0);
      CHECK(e.fn == 5);
    }

    // Shifted, missing and spurious detections.
    std::vector<HighResGrid> noisy(3, HighResGrid(cfg));
    noisy[0].at(22, 13) = 150.0;  // exact
    noisy[0].at(10, 21) = 60.0;   // one cell off from (6.33, 3)
    noisy[1].at(16, 16) = 55.0;   // exact, low confidence
    noisy[1].at(4, 4) = 180.0;    // spurious
    noisy[2].at(25, 22) = 70.0;   // one cell off from (7, 7)
    const APReport rn = cso_map(noisy, truths, cfg, extended_deltas());
    double mean = 0.0;
    for (const auto& e : rn.entries) {
      std::vector<ScoredLabel> labels;
      std::size_t total = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        const auto preds = extract_targets(noisy[i], cfg);
        std::vector<bool> used(truths[i].size(), false);
        std::vector<std::size_t> order(preds.size());
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
          return preds[l].confidence > preds[r].confidence;
        });
        for (std::size_t j : order) {
          int best = -1;
          double bd = INFINITY;
          for (std::size_t t = 0; t < truths[i].size(); ++t) {
            const double d = std::hypot(preds[j].x - truths[i].targets[t].x,
                                        preds[j].y - truths[i].targets[t].y);
            if (!used[t] && d <= e.delta && d < bd) {
              bd = d;
              best = static_cast<int>(t);
            }
          }
          if (best >= 0) used[static_cast<std::size_t>(best)] = true;
          labels.push_back({preds[j].confidence, best >= 0});
        }
        total += truths[i].size();
      }
      CHECK(e.ap == brute_ap(labels, total));
      mean += e.ap;
    }
    CHECK(rn.cso_map == mean / static_cast<double>(rn.entries.size()));
    for (std::size_t i = 1; i < rn.entries.size(); ++i)
      CHECK(rn.entries[i].ap >= rn.entries[i - 1].ap);
    CHECK(rn.entries.back().ap > rn.entries.front().ap);
  }

  TEST_CASE("report writers") {
    const SceneConfig cfg;
    SparseScene s;
    s.targets = {{4.0, 7.0, 150.0}};
    const std::vector<HighResGrid> recon{embed_scene(s, cfg)};
    const std::vector<SparseScene> truths{s};
    const auto rep = cso_map(recon, truths, cfg, standard_deltas());
    const auto dir = std::filesystem::temp_directory_path() / "csou_unit_eval";
    std::filesystem::create_directories(dir);
    write_report_csv(dir / "r.csv", {{"admm", rep}});
    write_report_json(dir / "r.json", {{"admm", rep}});
    std::ifstream in(dir / "r.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "method,delta,AP,TP,FP,FN,CSO-mAP");
    std::size_t lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    CHECK(lines == 5);
    CHECK(format_report_table({{"admm", rep}}).find("admm") != std::string::npos);
  }
}
