#pragma once

// Target extraction from reconstructed grids and the CSO-mAP protocol:
// predictions are matched to truths within a localization tolerance delta,
// AP is the exact (non-interpolated) area under the pooled PR curve, and
// CSO-mAP is the mean AP over the tolerance set.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "csou/dataset.hpp"
#include "csou/scene.hpp"

namespace csou {

struct Prediction {
  double x = 0.0;  // low-res column coordinate of the cell center
  double y = 0.0;  // low-res row coordinate of the cell center
  PixelIndex pixel;  // re-projected detector pixel
  std::size_t hr_row = 0;
  std::size_t hr_col = 0;
  double intensity = 0.0;
  double confidence = 0.0;
};

// Pixels above `threshold` that are maxima of their 3x3 neighborhood. Plateaus
// keep only the first pixel in raster order.
std::vector<Prediction> extract_targets(const HighResGrid& recon, const SceneConfig& cfg,
                                        double threshold = kExtractionThreshold);

struct MatchResult {
  std::vector<bool> is_tp;       // indexed like the input predictions
  std::vector<int> truth_index;  // matched truth or -1
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

// Greedy: predictions by descending confidence (ties by input order), each
// takes the nearest unmatched truth within `delta` (ties by truth order).
MatchResult match(std::span<const Prediction> preds, const SparseScene& truth, double delta);

struct ScoredLabel {
  double confidence = 0.0;
  bool tp = false;
};

// Sweeps every distinct confidence as a threshold and sums
// precision * delta-recall. No truths: 1 if there are no predictions, else 0.
double average_precision(std::span<const ScoredLabel> labels, std::size_t total_truths);

std::vector<double> standard_deltas();  // 0.05 .. 0.25
std::vector<double> extended_deltas();  // 0.05 .. 0.50

struct ApEntry {
  double delta = 0.0;
  double ap = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct APReport {
  std::vector<ApEntry> entries;
  double cso_map = 0.0;
};

APReport cso_map(std::span<const HighResGrid> recons, std::span<const SparseScene> truths,
                 const SceneConfig& cfg, std::span<const double> deltas);

// Distance from each TP at `delta` to its truth; used to check the grid bound.
std::vector<double> tp_position_errors(std::span<const HighResGrid> recons,
                                       std::span<const SparseScene> truths,
                                       const SceneConfig& cfg, double delta);

// CSV columns: method,delta,AP,TP,FP,FN,CSO-mAP
void write_report_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, APReport>>& reports);
void write_report_json(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, APReport>>& reports);
std::string format_report_table(const std::vector<std::pair<std::string, APReport>>& reports);

}  // namespace csou
