#include "csou/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "csou/errors.hpp"
#include "csou/parallel.hpp"

namespace csou {
namespace {

std::vector<std::size_t> confidence_order(std::span<const Prediction> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].confidence > preds[b].confidence;
  });
  return order;
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

std::vector<Prediction> extract_targets(const HighResGrid& recon, const SceneConfig& cfg,
                                        double threshold) {
  if (recon.rows() != cfg.hr_rows() || recon.cols() != cfg.hr_cols()) {
    throw DimensionError("reconstruction is " + std::to_string(recon.rows()) + "x" +
                         std::to_string(recon.cols()) + ", expected " +
                         std::to_string(cfg.hr_rows()) + "x" + std::to_string(cfg.hr_cols()));
  }
  std::vector<Prediction> out;
  const long rows = static_cast<long>(recon.rows());
  const long cols = static_cast<long>(recon.cols());
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      const double v = recon.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      if (!(v > threshold)) continue;
      bool peak = true;
      for (long dr = -1; dr <= 1 && peak; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const long rr = r + dr;
          const long cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
          const double n = recon.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
          const bool earlier = dr < 0 || (dr == 0 && dc < 0);
          if (n > v || (earlier && n == v)) {
            peak = false;
            break;
          }
        }
      }
      if (!peak) continue;
      Prediction p;
      p.hr_row = static_cast<std::size_t>(r);
      p.hr_col = static_cast<std::size_t>(c);
      const Point center = cell_center(p.hr_row, p.hr_col, cfg.ratio);
      p.x = center.x;
      p.y = center.y;
      p.pixel = reproject(p.hr_row, p.hr_col, cfg);
      p.intensity = v;
      p.confidence = v;
      out.push_back(p);
    }
  }
  return out;
}

MatchResult match(std::span<const Prediction> preds, const SparseScene& truth, double delta) {
  if (!(delta > 0.0)) throw InvalidParameter("matching tolerance must be positive");
  MatchResult res;
  res.is_tp.assign(preds.size(), false);
  res.truth_index.assign(preds.size(), -1);
  std::vector<bool> used(truth.size(), false);
  for (std::size_t pi : confidence_order(preds)) {
    const Prediction& p = preds[pi];
    int best = -1;
    double best_d = 0.0;
    for (std::size_t ti = 0; ti < truth.size(); ++ti) {
      if (used[ti]) continue;
      const double d = std::hypot(p.x - truth.targets[ti].x, p.y - truth.targets[ti].y);
      if (d <= delta && (best < 0 || d < best_d)) {
        best = static_cast<int>(ti);
        best_d = d;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      res.is_tp[pi] = true;
      res.truth_index[pi] = best;
      ++res.tp;
    } else {
      ++res.fp;
    }
  }
  res.fn = truth.size() - res.tp;
  return res;
}

double average_precision(std::span<const ScoredLabel> labels, std::size_t total_truths) {
  if (total_truths == 0) return labels.empty() ? 1.0 : 0.0;
  std::vector<ScoredLabel> sorted(labels.begin(), labels.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ScoredLabel& a, const ScoredLabel& b) {
    return a.confidence > b.confidence;
  });
  const double g = static_cast<double>(total_truths);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].confidence == sorted[i].confidence) {
      if (sorted[j].tp) ++tp;
      ++j;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(j);
    const double recall = static_cast<double>(tp) / g;
    ap += precision * (recall - prev_recall);
    prev_recall = recall;
    i = j;
  }
  return std::clamp(ap, 0.0, 1.0);
}

std::vector<double> standard_deltas() { return {0.05, 0.10, 0.15, 0.20, 0.25}; }

std::vector<double> extended_deltas() {
  std::vector<double> d;
  for (int i = 1; i <= 10; ++i) d.push_back(0.05 * i);
  return d;
}

APReport cso_map(std::span<const HighResGrid> recons, std::span<const SparseScene> truths,
                 const SceneConfig& cfg, std::span<const double> deltas) {
  if (deltas.empty()) throw InvalidParameter("tolerance set must be nonempty");
  if (recons.size() != truths.size()) {
    throw DimensionError("got " + std::to_string(recons.size()) + " reconstructions for " +
                         std::to_string(truths.size()) + " scenes");
  }
  const std::size_t n = recons.size();
  std::vector<std::vector<Prediction>> preds(n);
  parallel_for(n, [&](std::size_t i) { preds[i] = extract_targets(recons[i], cfg); });
  std::size_t total_truths = 0;
  for (const auto& t : truths) total_truths += t.size();

  APReport report;
  for (double delta : deltas) {
    std::vector<MatchResult> matches(n);
    parallel_for(n, [&](std::size_t i) { matches[i] = match(preds[i], truths[i], delta); });
    ApEntry entry;
    entry.delta = delta;
    std::vector<ScoredLabel> labels;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < preds[i].size(); ++p) {
        labels.push_back({preds[i][p].confidence, static_cast<bool>(matches[i].is_tp[p])});
      }
      entry.tp += matches[i].tp;
      entry.fp += matches[i].fp;
      entry.fn += matches[i].fn;
    }
    entry.ap = average_precision(labels, total_truths);
    report.entries.push_back(entry);
  }
  double sum = 0.0;
  for (const auto& e : report.entries) sum += e.ap;
  report.cso_map = sum / static_cast<double>(report.entries.size());
  return report;
}

std::vector<double> tp_position_errors(std::span<const HighResGrid> recons,
                                       std::span<const SparseScene> truths,
                                       const SceneConfig& cfg, double delta) {
  std::vector<double> errors;
  for (std::size_t i = 0; i < recons.size(); ++i) {
    const auto preds = extract_targets(recons[i], cfg);
    const auto m = match(preds, truths[i], delta);
    for (std::size_t p = 0; p < preds.size(); ++p) {
      if (!m.is_tp[p]) continue;
      const Target& t = truths[i].targets[static_cast<std::size_t>(m.truth_index[p])];
      errors.push_back(std::hypot(preds[p].x - t.x, preds[p].y - t.y));
    }
  }
  return errors;
}

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, APReport>>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "method,delta,AP,TP,FP,FN,CSO-mAP\n";
  for (const auto& [method, report] : reports) {
    for (const auto& e : report.entries) {
      out << method << ',' << fmt(e.delta, 2) << ',' << fmt(e.ap, 6) << ',' << e.tp << ','
          << e.fp << ',' << e.fn << ',' << fmt(report.cso_map, 6) << '\n';
    }
  }
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

void write_report_json(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, APReport>>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "{\n  \"reports\": [\n";
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const auto& [method, report] = reports[r];
    out << "    {\"method\": \"" << method << "\", \"cso_map\": " << fmt(report.cso_map, 6)
        << ", \"entries\": [";
    for (std::size_t i = 0; i < report.entries.size(); ++i) {
      const auto& e = report.entries[i];
      out << (i ? ", " : "") << "{\"delta\": " << fmt(e.delta, 2) << ", \"ap\": " << fmt(e.ap, 6)
          << ", \"tp\": " << e.tp << ", \"fp\": " << e.fp << ", \"fn\": " << e.fn << "}";
    }
    out << "]}" << (r + 1 < reports.size() ? "," : "") << "\n";
  }
  out << "  ]\n}\n";
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

std::string format_report_table(const std::vector<std::pair<std::string, APReport>>& reports) {
  std::ostringstream out;
  std::size_t width = 8;
  for (const auto& [method, _] : reports) width = std::max(width, method.size());
  char buf[256];
  std::string header = "Method";
  header.resize(width, ' ');
  out << header << " | CSO-mAP";
  if (!reports.empty()) {
    for (const auto& e : reports.front().second.entries) {
      std::snprintf(buf, sizeof(buf), " | AP_%02d", static_cast<int>(std::lround(e.delta * 100)));
      out << buf;
    }
  }
  out << "\n";
  for (const auto& [method, report] : reports) {
    std::string name = method;
    name.resize(width, ' ');
    std::snprintf(buf, sizeof(buf), " | %7.2f", report.cso_map * 100.0);
    out << name << buf;
    for (const auto& e : report.entries) {
      std::snprintf(buf, sizeof(buf), " | %5.2f", e.ap * 100.0);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace csou
