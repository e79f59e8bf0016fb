#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rankdenoise/corpus.hpp"
#include "rankdenoise/encoder.hpp"

namespace rankdenoise {

// One expert-labeled dev pair seen through the encoder: feature vectors of
// both sides plus the better-than label.
struct DevPairView {
  std::vector<double> p, q;
  int z = 1;  // 1: p's side is better, 0: q's side
};

struct ShapleyReport {
  std::vector<std::string> ids;  // empty for feature-level runs (ids = indices)
  std::vector<double> values;    // s_i, mean over dev pairs
  // Per-dev-pair decomposition, kept for audit: component[p][i] is the
  // Shapley value of point i in the single-sided game of dev pair p.
  std::vector<std::vector<double>> comp_p, comp_q;
  std::vector<double> std_error;  // Monte Carlo estimator only
  int k = 0;
  std::size_t n_dev_pairs = 0;
};

// Signed KNN-regression gap on one dev pair, computed over a subset of the
// training points with the literal 1/K normalization; the empty subset is
// worth exactly 0.
double knn_utility(const std::vector<std::vector<double>>& features,
                   const std::vector<double>& ratings, const std::vector<std::size_t>& subset,
                   const DevPairView& dev_pair, int k);

// Brute-force Shapley by subset enumeration; the ground-truth oracle.
// Refuses more than 12 points.
ShapleyReport shapley_exact(const std::vector<std::vector<double>>& features,
                            const std::vector<double>& ratings,
                            const std::vector<DevPairView>& dev_pairs, int k);

// Closed-form recursion over the distance-sorted training points:
// O(N log N) per dev pair, matches shapley_exact.
ShapleyReport shapley_knn(const std::vector<std::vector<double>>& features,
                          const std::vector<double>& ratings,
                          const std::vector<DevPairView>& dev_pairs, int k,
                          bool keep_components = true);

// Permutation-sampling estimator with per-point standard errors; the
// mid-scale cross-check between enumeration and the closed form.
ShapleyReport shapley_montecarlo(const std::vector<std::vector<double>>& features,
                                 const std::vector<double>& ratings,
                                 const std::vector<DevPairView>& dev_pairs, int k,
                                 std::size_t samples, uint64_t seed);

// Dialog-level wrappers: encode the training set and the pair sides, then
// run the feature-level computation. Ratings come from the dialogs.
std::vector<DevPairView> make_dev_views(const std::vector<DialogPair>& dev_pairs,
                                        const DialogStore& store, const ModelState& state);
ShapleyReport shapley_knn(const std::vector<Dialog>& train, const std::vector<DialogPair>& dev_pairs,
                          const DialogStore& store, const ModelState& state, int k);

enum class RemovalRule { NegativeValues, BottomFraction };

std::string to_string(RemovalRule rule);
RemovalRule removal_rule_from_string(const std::string& s);

struct RemovalPlan {
  std::vector<std::string> order;    // all ids, ascending by value then id
  std::vector<std::string> removal;  // subset marked for removal, same order
};

RemovalPlan plan_removal(const ShapleyReport& report, RemovalRule rule, double fraction = 0.0);

// JSONL {"dialog_id","value"} ascending by value; plain id list per line.
void save_shapley_report(const ShapleyReport& report, const std::filesystem::path& path);
ShapleyReport load_shapley_report(const std::filesystem::path& path);
void save_removal_plan(const RemovalPlan& plan, const std::filesystem::path& path);

}  // namespace rankdenoise
