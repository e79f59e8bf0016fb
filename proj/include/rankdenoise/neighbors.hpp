#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rankdenoise/corpus.hpp"
#include "rankdenoise/encoder.hpp"

namespace rankdenoise {

// Exact nearest-neighbor search structure: one encoded feature row per rated
// dialog, aligned ids and ratings, insertion order preserved.
struct NeighborIndex {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> features;
  std::vector<int> ratings;

  std::size_t size() const { return ids.size(); }
};

NeighborIndex build_index(const std::vector<Dialog>& train, const ModelState& state);

// Feature-level constructor for tests and benchmarks.
NeighborIndex make_index(std::vector<std::string> ids, std::vector<std::vector<double>> features,
                         std::vector<int> ratings);

struct Neighbor {
  std::string id;
  std::size_t index;
  double distance;
};

// Ascending Euclidean distance, ties broken by ascending insertion index;
// returns min(k, available) entries.
std::vector<Neighbor> knn(const NeighborIndex& index, const std::vector<double>& query,
                          std::size_t k, const std::optional<std::string>& exclude_id = {});

// How the neighbor-rating sum is normalized. ByCount is the plain mean over
// the neighbors actually found; ByK divides by k even when fewer exist,
// which is what the Shapley utility needs.
enum class KnnNorm { ByCount, ByK };

double knn_regress(const NeighborIndex& index, const std::vector<double>& query, std::size_t k,
                   KnnNorm norm = KnnNorm::ByCount);
double knn_regress(const NeighborIndex& index, const Dialog& query, const ModelState& state,
                   std::size_t k, KnnNorm norm = KnnNorm::ByCount);

struct SmoothedRating {
  std::string dialog_id;
  double value;
  std::vector<std::string> neighbor_ids;
};

// Replaces each dialog's rating with the mean rating of its k nearest
// neighbors, never counting the dialog itself.
std::vector<SmoothedRating> smooth_labels(const NeighborIndex& index, std::size_t k);

// Uniformly sampled non-tied pairs of smoothed ratings, higher value first.
std::vector<DialogPair> make_stage2_pairs(const std::vector<SmoothedRating>& smoothed,
                                          std::size_t n_pairs, uint64_t seed);

void save_smoothed_ratings(const std::vector<SmoothedRating>& smoothed,
                           const std::filesystem::path& path);

}  // namespace rankdenoise
