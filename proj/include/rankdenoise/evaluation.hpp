#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rankdenoise/corpus.hpp"
#include "rankdenoise/encoder.hpp"
#include "rankdenoise/neighbors.hpp"
#include "rankdenoise/pipeline.hpp"
#include "rankdenoise/valuation.hpp"

namespace rankdenoise {

// Agreement between model predictions and expert labels. The 2x2 table is
// (predicted, expert) with a = both say first-better, d = both say second-
// better; tied predictions contribute half a count to each predicted row, so
// a+b+c+d always equals n_pairs and accuracy = (a+d)/n scores ties as 0.5.
struct EvalReport {
  std::size_t n_pairs = 0;
  double accuracy = 0.0;
  double kappa = 0.0;
  double kappa_se = 0.0;
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
  std::size_t ties = 0;
};

// Cohen's kappa (unweighted, two categories) with the large-sample standard
// error, from an explicit table.
EvalReport report_from_confusion(double a, double b, double c, double d, std::size_t ties = 0);

EvalReport evaluate_pairs(const std::vector<DialogPair>& pairs, const DialogStore& store,
                          const ModelState& state);

// Removal experiment: drop training points in ascending Shapley order,
// re-evaluating a KNN comparison predictor after every `step` removals,
// with a random-removal control at the same removal counts.
struct RemovalCurve {
  std::vector<std::size_t> removed;  // removal counts, starting at 0
  std::vector<int> ks;
  struct Series {
    std::vector<double> dev_shapley, test_shapley, dev_random, test_random;
  };
  std::vector<Series> per_k;  // aligned with ks
};

RemovalCurve removal_curve(const NeighborIndex& index, const ShapleyReport& report,
                           const std::vector<DialogPair>& dev_pairs,
                           const std::vector<DialogPair>& test_pairs, const DialogStore& store,
                           const ModelState& state, const std::vector<int>& ks, std::size_t step,
                           uint64_t seed, double max_fraction = 0.5);

// CSV rows: removed_count, series (e.g. "shapley_dev_k5"), accuracy.
void save_removal_curve_csv(const RemovalCurve& curve, const std::filesystem::path& path);

// Ablation grid: every stage combination trained from the same initial
// weights, evaluated on the test pairs. Stage prefixes are computed once and
// shared, so e.g. Stage1+2 and CMADE reuse the identical stage-1 result.
std::map<std::string, EvalReport> run_baselines(const CorpusSplit& corpus,
                                                const PipelineConfig& config,
                                                const TrainLogger& logger = nullptr);

void save_reports_json(const std::map<std::string, EvalReport>& reports,
                       const std::filesystem::path& path);
std::string format_report_table(const std::map<std::string, EvalReport>& reports);
void save_report_json(const EvalReport& report, const std::filesystem::path& path);

}  // namespace rankdenoise
