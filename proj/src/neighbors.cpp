#include "rankdenoise/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "rankdenoise/parallel.hpp"

namespace rankdenoise {

using ordered_json = nlohmann::ordered_json;

NeighborIndex build_index(const std::vector<Dialog>& train, const ModelState& state) {
  NeighborIndex index;
  index.ids.reserve(train.size());
  index.features.resize(train.size());
  index.ratings.reserve(train.size());
  for (const auto& d : train) {
    if (!d.rating) throw CorpusError("dialog \"" + d.id + "\" has no rating");
    index.ids.push_back(d.id);
    index.ratings.push_back(*d.rating);
  }
  parallel_for(train.size(),
               [&](std::size_t i) { index.features[i] = encode(train[i], state); });
  return index;
}

NeighborIndex make_index(std::vector<std::string> ids, std::vector<std::vector<double>> features,
                         std::vector<int> ratings) {
  if (ids.size() != features.size() || ids.size() != ratings.size()) {
    throw Error("ids, features and ratings must be aligned");
  }
  for (const auto& row : features) {
    if (row.size() != features.front().size()) {
      throw Error("feature rows must all have the same dimension");
    }
  }
  NeighborIndex index;
  index.ids = std::move(ids);
  index.features = std::move(features);
  index.ratings = std::move(ratings);
  return index;
}

namespace {

double distance_sq(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("feature dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

// Candidates ordered by (squared distance, insertion index); the total order
// every neighbor computation in the project agrees on.
std::vector<std::pair<double, std::size_t>> ranked_candidates(const NeighborIndex& index,
                                                              const std::vector<double>& query,
                                                              std::size_t k,
                                                              std::size_t exclude_index) {
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (i == exclude_index) continue;
    cand.emplace_back(distance_sq(index.features[i], query), i);
  }
  const std::size_t kk = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
  cand.resize(kk);
  return cand;
}

constexpr std::size_t kNoExclude = static_cast<std::size_t>(-1);

}  // namespace

std::vector<Neighbor> knn(const NeighborIndex& index, const std::vector<double>& query,
                          std::size_t k, const std::optional<std::string>& exclude_id) {
  if (index.size() == 0) throw Error("empty neighbor index");
  if (k < 1) throw Error("k must be at least 1");
  std::size_t exclude = kNoExclude;
  if (exclude_id) {
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index.ids[i] == *exclude_id) {
        exclude = i;
        break;
      }
    }
  }
  auto cand = ranked_candidates(index, query, k, exclude);
  std::vector<Neighbor> out;
  out.reserve(cand.size());
  for (const auto& [d2, i] : cand) out.push_back({index.ids[i], i, std::sqrt(d2)});
  return out;
}

double knn_regress(const NeighborIndex& index, const std::vector<double>& query, std::size_t k,
                   KnnNorm norm) {
  if (index.size() == 0) throw Error("empty neighbor index");
  if (k < 1) throw Error("k must be at least 1");
  auto cand = ranked_candidates(index, query, k, kNoExclude);
  double sum = 0.0;
  for (const auto& [d2, i] : cand) sum += index.ratings[i];
  return sum / static_cast<double>(norm == KnnNorm::ByK ? k : cand.size());
}

double knn_regress(const NeighborIndex& index, const Dialog& query, const ModelState& state,
                   std::size_t k, KnnNorm norm) {
  return knn_regress(index, encode(query, state), k, norm);
}

std::vector<SmoothedRating> smooth_labels(const NeighborIndex& index, std::size_t k) {
  if (index.size() < 2) throw Error("label smoothing needs at least 2 points");
  if (k < 1) throw Error("k must be at least 1");
  std::vector<SmoothedRating> out(index.size());
  parallel_for(index.size(), [&](std::size_t i) {
    auto cand = ranked_candidates(index, index.features[i], k, i);
    SmoothedRating& s = out[i];
    s.dialog_id = index.ids[i];
    double sum = 0.0;
    s.neighbor_ids.reserve(cand.size());
    for (const auto& [d2, j] : cand) {
      sum += index.ratings[j];
      s.neighbor_ids.push_back(index.ids[j]);
    }
    s.value = sum / static_cast<double>(cand.size());
  });
  return out;
}

std::vector<DialogPair> make_stage2_pairs(const std::vector<SmoothedRating>& smoothed,
                                          std::size_t n_pairs, uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<double> values;
  ids.reserve(smoothed.size());
  values.reserve(smoothed.size());
  for (const auto& s : smoothed) {
    ids.push_back(s.dialog_id);
    values.push_back(s.value);
  }
  return sample_comparison_pairs(ids, values, n_pairs, seed, PairSource::SmoothedDerived);
}

void save_smoothed_ratings(const std::vector<SmoothedRating>& smoothed,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : smoothed) {
    ordered_json j;
    j["dialog_id"] = s.dialog_id;
    j["value"] = s.value;
    j["neighbor_ids"] = s.neighbor_ids;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace rankdenoise
