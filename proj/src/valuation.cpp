#include "rankdenoise/valuation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "json.hpp"

#include "rankdenoise/parallel.hpp"
#include "rankdenoise/rng.hpp"

namespace rankdenoise {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

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

// All training indices sorted by (squared distance to the dev point,
// insertion index) — the same total order the neighbors module uses.
std::vector<std::size_t> distance_order(const std::vector<std::vector<double>>& features,
                                        const std::vector<double>& dev_point) {
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    cand.emplace_back(distance_sq(features[i], dev_point), i);
  }
  std::sort(cand.begin(), cand.end());
  std::vector<std::size_t> order;
  order.reserve(cand.size());
  for (const auto& [d2, i] : cand) order.push_back(i);
  return order;
}

// KNN-regressed rating of one dev point over the subset, with the literal
// 1/K normalization the utility definition uses.
double side_estimate(const std::vector<std::size_t>& order, const std::vector<double>& ratings,
                     const std::vector<char>& in_subset, int k) {
  double sum = 0.0;
  int taken = 0;
  for (std::size_t idx : order) {
    if (!in_subset[idx]) continue;
    sum += ratings[idx];
    if (++taken == k) break;
  }
  return sum / static_cast<double>(k);
}

void check_inputs(const std::vector<std::vector<double>>& features,
                  const std::vector<double>& ratings, const std::vector<DevPairView>& dev_pairs,
                  int k) {
  if (features.size() != ratings.size()) throw Error("features/ratings must be aligned");
  if (features.empty()) throw Error("no training points");
  if (dev_pairs.empty()) throw Error("no dev pairs");
  if (k < 1) throw Error("k must be at least 1");
  for (const auto& p : dev_pairs) {
    if (p.z != 0 && p.z != 1) throw Error("dev pair label must be 0 or 1");
  }
}

}  // namespace

double knn_utility(const std::vector<std::vector<double>>& features,
                   const std::vector<double>& ratings, const std::vector<std::size_t>& subset,
                   const DevPairView& dev_pair, int k) {
  if (features.size() != ratings.size()) throw Error("features/ratings must be aligned");
  if (k < 1) throw Error("k must be at least 1");
  if (dev_pair.z != 0 && dev_pair.z != 1) throw Error("dev pair label must be 0 or 1");
  if (subset.empty()) return 0.0;
  std::vector<char> in_subset(features.size(), 0);
  for (std::size_t idx : subset) {
    if (idx >= features.size()) throw Error("subset index out of range");
    in_subset[idx] = 1;
  }
  const auto order_p = distance_order(features, dev_pair.p);
  const auto order_q = distance_order(features, dev_pair.q);
  const double yp = side_estimate(order_p, ratings, in_subset, k);
  const double yq = side_estimate(order_q, ratings, in_subset, k);
  return dev_pair.z == 1 ? yp - yq : yq - yp;
}

ShapleyReport shapley_exact(const std::vector<std::vector<double>>& features,
                            const std::vector<double>& ratings,
                            const std::vector<DevPairView>& dev_pairs, int k) {
  check_inputs(features, ratings, dev_pairs, k);
  const std::size_t n = features.size();
  if (n > 12) throw Error("shapley_exact enumerates subsets; capped at 12 points");

  // Binomial coefficients C(n-1, s) for the permutation weighting.
  std::vector<double> binom(n, 1.0);
  for (std::size_t s = 1; s < n; ++s) {
    binom[s] = binom[s - 1] * static_cast<double>(n - s) / static_cast<double>(s);
  }

  ShapleyReport report;
  report.k = k;
  report.n_dev_pairs = dev_pairs.size();
  report.values.assign(n, 0.0);

  const std::size_t n_masks = std::size_t{1} << n;
  std::vector<char> in_subset(n, 0);
  std::vector<double> v(n_masks);
  for (const auto& pair : dev_pairs) {
    const auto order_p = distance_order(features, pair.p);
    const auto order_q = distance_order(features, pair.q);
    for (std::size_t mask = 0; mask < n_masks; ++mask) {
      if (mask == 0) {
        v[mask] = 0.0;  // the empty coalition is worth nothing by definition
        continue;
      }
      for (std::size_t i = 0; i < n; ++i) in_subset[i] = (mask >> i) & 1u;
      const double yp = side_estimate(order_p, ratings, in_subset, k);
      const double yq = side_estimate(order_q, ratings, in_subset, k);
      v[mask] = pair.z == 1 ? yp - yq : yq - yp;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t bit = std::size_t{1} << i;
      double s_i = 0.0;
      for (std::size_t mask = 0; mask < n_masks; ++mask) {
        if (mask & bit) continue;
        const auto size = static_cast<std::size_t>(std::popcount(mask));
        s_i += (v[mask | bit] - v[mask]) / binom[size];
      }
      report.values[i] += s_i / static_cast<double>(n);
    }
  }
  const double inv_pairs = 1.0 / static_cast<double>(dev_pairs.size());
  for (double& s : report.values) s *= inv_pairs;
  return report;
}

ShapleyReport shapley_knn(const std::vector<std::vector<double>>& features,
                          const std::vector<double>& ratings,
                          const std::vector<DevPairView>& dev_pairs, int k,
                          bool keep_components) {
  check_inputs(features, ratings, dev_pairs, k);
  const std::size_t n = features.size();
  const std::size_t n_pairs = dev_pairs.size();

  ShapleyReport report;
  report.k = k;
  report.n_dev_pairs = n_pairs;
  report.values.assign(n, 0.0);
  if (keep_components) {
    report.comp_p.assign(n_pairs, {});
    report.comp_q.assign(n_pairs, {});
  }

  // Single-sided game: Shapley values of the KNN estimate of one dev point,
  // by the closed-form recursion over the distance-sorted training points.
  auto side_values = [&](const std::vector<double>& dev_point) {
    const auto order = distance_order(features, dev_point);
    std::vector<double> s(n);
    const double kd = static_cast<double>(k);
    const double nd = static_cast<double>(n);
    s[order[n - 1]] = ratings[order[n - 1]] * std::min<double>(kd, nd) / (kd * nd);
    for (std::size_t m = n - 1; m >= 1; --m) {
      const std::size_t cur = order[m - 1], next = order[m];
      const double md = static_cast<double>(m);
      s[cur] = s[next] + (ratings[cur] - ratings[next]) / kd * (std::min(kd, md) / md);
    }
    return s;
  };

  std::vector<std::vector<double>> per_pair(n_pairs);
  parallel_for(n_pairs, [&](std::size_t pi) {
    const auto& pair = dev_pairs[pi];
    std::vector<double> sp = side_values(pair.p);
    std::vector<double> sq = side_values(pair.q);
    std::vector<double> combined(n);
    for (std::size_t i = 0; i < n; ++i) {
      combined[i] = pair.z == 1 ? sp[i] - sq[i] : sq[i] - sp[i];
    }
    per_pair[pi] = std::move(combined);
    if (keep_components) {
      report.comp_p[pi] = std::move(sp);
      report.comp_q[pi] = std::move(sq);
    }
  });
  // Deterministic reduction: pair order, then point order.
  for (std::size_t pi = 0; pi < n_pairs; ++pi) {
    for (std::size_t i = 0; i < n; ++i) report.values[i] += per_pair[pi][i];
  }
  const double inv_pairs = 1.0 / static_cast<double>(n_pairs);
  for (double& s : report.values) s *= inv_pairs;
  return report;
}

ShapleyReport shapley_montecarlo(const std::vector<std::vector<double>>& features,
                                 const std::vector<double>& ratings,
                                 const std::vector<DevPairView>& dev_pairs, int k,
                                 std::size_t samples, uint64_t seed) {
  check_inputs(features, ratings, dev_pairs, k);
  if (samples < 1) throw Error("need at least one permutation sample");
  const std::size_t n = features.size();

  std::vector<std::vector<std::size_t>> orders_p, orders_q;
  for (const auto& pair : dev_pairs) {
    orders_p.push_back(distance_order(features, pair.p));
    orders_q.push_back(distance_order(features, pair.q));
  }
  // Mean-over-pairs utility of the flagged subset.
  auto utility = [&](const std::vector<char>& in_subset) {
    double acc = 0.0;
    for (std::size_t pi = 0; pi < dev_pairs.size(); ++pi) {
      const double yp = side_estimate(orders_p[pi], ratings, in_subset, k);
      const double yq = side_estimate(orders_q[pi], ratings, in_subset, k);
      acc += dev_pairs[pi].z == 1 ? yp - yq : yq - yp;
    }
    return acc / static_cast<double>(dev_pairs.size());
  };

  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(seed, 0x6d635f73));
  for (std::size_t s = 0; s < samples; ++s) {
    rng.shuffle(perm);
    std::vector<char> in_subset(n, 0);
    double prev = 0.0;  // v(empty)
    for (std::size_t idx : perm) {
      in_subset[idx] = 1;
      const double cur = utility(in_subset);
      const double marginal = cur - prev;
      sum[idx] += marginal;
      sum_sq[idx] += marginal * marginal;
      prev = cur;
    }
  }

  ShapleyReport report;
  report.k = k;
  report.n_dev_pairs = dev_pairs.size();
  report.values.resize(n);
  report.std_error.resize(n);
  const double sd = static_cast<double>(samples);
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = sum[i] / sd;
    report.values[i] = mean;
    const double var = samples > 1 ? std::max(0.0, (sum_sq[i] - sd * mean * mean) / (sd - 1.0)) : 0.0;
    report.std_error[i] = std::sqrt(var / sd);
  }
  return report;
}

std::vector<DevPairView> make_dev_views(const std::vector<DialogPair>& dev_pairs,
                                        const DialogStore& store, const ModelState& state) {
  std::vector<DevPairView> views(dev_pairs.size());
  parallel_for(dev_pairs.size(), [&](std::size_t i) {
    const auto& p = dev_pairs[i];
    views[i].p = encode(store.at(p.first_id), state);
    views[i].q = encode(store.at(p.second_id), state);
    views[i].z = p.label;
  });
  return views;
}

ShapleyReport shapley_knn(const std::vector<Dialog>& train, const std::vector<DialogPair>& dev_pairs,
                          const DialogStore& store, const ModelState& state, int k) {
  std::vector<std::vector<double>> features(train.size());
  std::vector<double> ratings(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i].rating) throw CorpusError("dialog \"" + train[i].id + "\" has no rating");
    ratings[i] = static_cast<double>(*train[i].rating);
  }
  parallel_for(train.size(), [&](std::size_t i) { features[i] = encode(train[i], state); });
  ShapleyReport report = shapley_knn(features, ratings, make_dev_views(dev_pairs, store, state), k,
                                     /*keep_components=*/false);
  report.ids.reserve(train.size());
  for (const auto& d : train) report.ids.push_back(d.id);
  return report;
}

std::string to_string(RemovalRule rule) {
  return rule == RemovalRule::NegativeValues ? "negative" : "bottom_fraction";
}

RemovalRule removal_rule_from_string(const std::string& s) {
  if (s == "negative") return RemovalRule::NegativeValues;
  if (s == "bottom_fraction") return RemovalRule::BottomFraction;
  throw ConfigError("unknown removal rule \"" + s + "\"");
}

namespace {

// (value, id) ascending; ids fall back to the decimal index for
// feature-level reports.
std::vector<std::pair<double, std::string>> sorted_entries(const ShapleyReport& report) {
  if (report.values.empty()) throw Error("empty shapley report");
  if (!report.ids.empty() && report.ids.size() != report.values.size()) {
    throw Error("shapley report ids/values misaligned");
  }
  std::vector<std::pair<double, std::string>> entries;
  entries.reserve(report.values.size());
  for (std::size_t i = 0; i < report.values.size(); ++i) {
    entries.emplace_back(report.values[i],
                         report.ids.empty() ? std::to_string(i) : report.ids[i]);
  }
  std::sort(entries.begin(), entries.end());
  return entries;
}

}  // namespace

RemovalPlan plan_removal(const ShapleyReport& report, RemovalRule rule, double fraction) {
  auto entries = sorted_entries(report);
  RemovalPlan plan;
  plan.order.reserve(entries.size());
  for (const auto& [value, id] : entries) plan.order.push_back(id);

  std::size_t n_remove = 0;
  if (rule == RemovalRule::NegativeValues) {
    while (n_remove < entries.size() && entries[n_remove].first < 0.0) ++n_remove;
  } else {
    if (fraction < 0.0 || fraction >= 1.0) throw Error("removal fraction must be in [0, 1)");
    n_remove = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(entries.size())));
  }
  plan.removal.assign(plan.order.begin(),
                      plan.order.begin() + static_cast<std::ptrdiff_t>(n_remove));
  return plan;
}

void save_shapley_report(const ShapleyReport& report, const std::filesystem::path& path) {
  auto entries = sorted_entries(report);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [value, id] : entries) {
    ordered_json j;
    j["dialog_id"] = id;
    j["value"] = value;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

ShapleyReport load_shapley_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing shapley report " + path.string());
  ShapleyReport report;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      report.ids.push_back(j.at("dialog_id").get<std::string>());
      report.values.push_back(j.at("value").get<double>());
    } catch (const json::exception& e) {
      throw CheckpointError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (report.values.empty()) throw CheckpointError("empty shapley report " + path.string());
  return report;
}

void save_removal_plan(const RemovalPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& id : plan.removal) out << id << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace rankdenoise
