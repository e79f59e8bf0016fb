#include "rankdenoise/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "rankdenoise/parallel.hpp"
#include "rankdenoise/ranker.hpp"
#include "rankdenoise/rng.hpp"

namespace rankdenoise {

using ordered_json = nlohmann::ordered_json;

EvalReport report_from_confusion(double a, double b, double c, double d, std::size_t ties) {
  if (a < 0.0 || b < 0.0 || c < 0.0 || d < 0.0) throw Error("negative confusion cell");
  const double n = a + b + c + d;
  if (!(n > 0.0)) throw Error("empty confusion table");
  EvalReport r;
  r.a = a;
  r.b = b;
  r.c = c;
  r.d = d;
  r.ties = ties;
  r.n_pairs = static_cast<std::size_t>(std::llround(n));
  const double p_o = (a + d) / n;
  const double p_e = ((a + b) * (a + c) + (c + d) * (b + d)) / (n * n);
  r.accuracy = p_o;
  if (1.0 - p_e <= 0.0) {
    // Degenerate marginals: all mass in one cell row/column pairing.
    r.kappa = p_o == 1.0 ? 1.0 : 0.0;
    r.kappa_se = 0.0;
    return r;
  }
  r.kappa = (p_o - p_e) / (1.0 - p_e);
  r.kappa_se = std::sqrt(p_o * (1.0 - p_o) / (n * (1.0 - p_e) * (1.0 - p_e)));
  return r;
}

EvalReport evaluate_pairs(const std::vector<DialogPair>& pairs, const DialogStore& store,
                          const ModelState& state) {
  if (pairs.empty()) throw Error("no pairs to evaluate");
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
  std::size_t ties = 0;

  std::vector<PairPrediction> preds(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    preds[i] = predict_pair(store.at(pairs[i].first_id), store.at(pairs[i].second_id), state);
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const int z = pairs[i].label;
    if (z != 0 && z != 1) throw Error("pair label must be 0 or 1");
    if (preds[i].tie) {
      ++ties;
      // Half a count to each predicted row, in the expert's column.
      if (z == 1) {
        a += 0.5;
        c += 0.5;
      } else {
        b += 0.5;
        d += 0.5;
      }
    } else if (preds[i].z_hat == 1) {
      (z == 1 ? a : b) += 1.0;
    } else {
      (z == 1 ? c : d) += 1.0;
    }
  }
  return report_from_confusion(a, b, c, d, ties);
}

RemovalCurve removal_curve(const NeighborIndex& index, const ShapleyReport& report,
                           const std::vector<DialogPair>& dev_pairs,
                           const std::vector<DialogPair>& test_pairs, const DialogStore& store,
                           const ModelState& state, const std::vector<int>& ks, std::size_t step,
                           uint64_t seed, double max_fraction) {
  const std::size_t n = index.size();
  if (n < 2) throw Error("removal curve needs at least 2 training points");
  if (step < 1) throw Error("step must be at least 1");
  if (ks.empty()) throw Error("no k values given");
  if (max_fraction <= 0.0 || max_fraction >= 1.0) throw Error("max_fraction must be in (0, 1)");
  if (report.values.size() != n) throw Error("shapley report does not match the index");

  // Shapley values aligned with index rows (the report may be sorted).
  std::vector<double> row_value(n);
  if (report.ids.empty()) {
    row_value = report.values;
  } else {
    std::unordered_map<std::string, std::size_t> row_of;
    row_of.reserve(n);
    for (std::size_t i = 0; i < n; ++i) row_of.emplace(index.ids[i], i);
    for (std::size_t i = 0; i < n; ++i) {
      auto it = row_of.find(report.ids[i]);
      if (it == row_of.end()) throw Error("shapley id not in index: " + report.ids[i]);
      row_value[it->second] = report.values[i];
    }
  }

  // Removal orders: ascending (value, id) for the Shapley series, a seeded
  // shuffle for the control.
  std::vector<std::size_t> shapley_order(n);
  for (std::size_t i = 0; i < n; ++i) shapley_order[i] = i;
  std::sort(shapley_order.begin(), shapley_order.end(), [&](std::size_t x, std::size_t y) {
    if (row_value[x] != row_value[y]) return row_value[x] < row_value[y];
    return index.ids[x] < index.ids[y];
  });
  std::vector<std::size_t> random_order = shapley_order;
  std::sort(random_order.begin(), random_order.end());
  Rng rng(mix_seed(seed, 0x72616e64));
  rng.shuffle(random_order);

  // Every query's candidate order over the full index, computed once; each
  // evaluation then just walks the prefix, skipping removed rows.
  struct Query {
    std::vector<std::uint32_t> order;
  };
  std::vector<std::string> query_ids;
  std::unordered_map<std::string, std::size_t> query_of;
  auto intern = [&](const std::string& id) {
    if (query_of.emplace(id, query_ids.size()).second) query_ids.push_back(id);
  };
  for (const auto& p : dev_pairs) {
    intern(p.first_id);
    intern(p.second_id);
  }
  for (const auto& p : test_pairs) {
    intern(p.first_id);
    intern(p.second_id);
  }
  std::vector<Query> queries(query_ids.size());
  parallel_for(query_ids.size(), [&](std::size_t qi) {
    const auto feat = encode(store.at(query_ids[qi]), state);
    std::vector<std::pair<double, std::uint32_t>> cand(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < feat.size(); ++j) {
        const double diff = index.features[i][j] - feat[j];
        acc += diff * diff;
      }
      cand[i] = {acc, static_cast<std::uint32_t>(i)};
    }
    std::sort(cand.begin(), cand.end());
    queries[qi].order.resize(n);
    for (std::size_t i = 0; i < n; ++i) queries[qi].order[i] = cand[i].second;
  });

  const auto max_removed = static_cast<std::size_t>(max_fraction * static_cast<double>(n));
  RemovalCurve curve;
  curve.ks = ks;
  curve.per_k.resize(ks.size());
  for (std::size_t r = 0; r <= max_removed; r += step) curve.removed.push_back(r);

  std::vector<char> removed(n);
  auto run_series = [&](const std::vector<std::size_t>& order, bool is_random) {
    std::fill(removed.begin(), removed.end(), 0);
    std::size_t done = 0;
    for (std::size_t r : curve.removed) {
      while (done < r) removed[order[done++]] = 1;
      for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        const auto k = static_cast<std::size_t>(ks[ki]);
        auto regress = [&](const std::string& id) {
          const auto& q = queries[query_of.at(id)];
          double sum = 0.0;
          std::size_t taken = 0;
          for (std::uint32_t row : q.order) {
            if (removed[row]) continue;
            sum += index.ratings[row];
            if (++taken == k) break;
          }
          return taken == 0 ? 0.0 : sum / static_cast<double>(taken);
        };
        auto accuracy_on = [&](const std::vector<DialogPair>& pairs) {
          double correct = 0.0;
          for (const auto& p : pairs) {
            const double yf = regress(p.first_id);
            const double ys = regress(p.second_id);
            const double zhat = yf > ys ? 1.0 : yf < ys ? 0.0 : 0.5;
            correct += p.label == 1 ? zhat : 1.0 - zhat;
          }
          return pairs.empty() ? 0.0 : correct / static_cast<double>(pairs.size());
        };
        auto& series = curve.per_k[ki];
        (is_random ? series.dev_random : series.dev_shapley).push_back(accuracy_on(dev_pairs));
        (is_random ? series.test_random : series.test_shapley).push_back(accuracy_on(test_pairs));
      }
    }
  };
  run_series(shapley_order, false);
  run_series(random_order, true);
  return curve;
}

void save_removal_curve_csv(const RemovalCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "removed_count,series,accuracy\n";
  for (std::size_t ki = 0; ki < curve.ks.size(); ++ki) {
    const auto& s = curve.per_k[ki];
    const std::string suffix = "_k" + std::to_string(curve.ks[ki]);
    auto emit = [&](const char* name, const std::vector<double>& acc) {
      for (std::size_t i = 0; i < curve.removed.size(); ++i) {
        out << curve.removed[i] << ',' << name << suffix << ',' << format_double(acc[i]) << '\n';
      }
    };
    emit("shapley_dev", s.dev_shapley);
    emit("shapley_test", s.test_shapley);
    emit("random_dev", s.dev_random);
    emit("random_test", s.test_random);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

ModelState apply_stage(int stage, const CorpusSplit& corpus, ModelState state,
                       const PipelineConfig& config, const TrainLogger& logger) {
  switch (stage) {
    case 0: {  // raw-rating pairs, no denoising
      DialogStore store;
      store.add_all(corpus.train);
      const auto pairs =
          raw_rating_pairs(corpus.train, config, mix_seed(config.seed, 0x726177));
      TrainConfig tc = config.stage2;  // same budget as the main pair-training stage
      tc.seed = mix_seed(config.seed, 0x74300000);
      return train_stage(pairs, store, std::move(state), tc, 0, logger);
    }
    case 1:
      return run_stage1(corpus, std::move(state), config, logger);
    case 2:
      return run_stage2(corpus, std::move(state), config, logger).state;
    case 3:
      return run_stage3(corpus, std::move(state), config, logger).state;
    default:
      throw Error("unknown stage");
  }
}

}  // namespace

std::map<std::string, EvalReport> run_baselines(const CorpusSplit& corpus,
                                                const PipelineConfig& config,
                                                const TrainLogger& logger) {
  validate_corpus(corpus);
  if (corpus.test_pairs.empty()) throw Error("no test pairs to evaluate baselines on");

  const std::vector<std::pair<std::string, std::vector<int>>> rows = {
      {"RawPairwise", {0}},    {"Stage1Only", {1}},    {"Stage2Only", {2}},
      {"Stage3Only", {3}},     {"Stage1+2", {1, 2}},   {"Stage1+3", {1, 3}},
      {"Stage2+3", {2, 3}},    {"CMADE", {1, 2, 3}},
  };

  // Shared stage prefixes are trained once: Stage1+2, Stage1+3 and CMADE all
  // continue from the identical stage-1 state.
  std::map<std::string, ModelState> cache;
  cache[""] = init_state(config.encoder);

  DialogStore eval_store;
  eval_store.add_all(corpus.train);
  eval_store.add_all(corpus.eval_dialogs);

  std::map<std::string, EvalReport> reports;
  for (const auto& [name, stages] : rows) {
    std::string key;
    for (int stage : stages) {
      std::string parent = key;
      key += key.empty() ? std::to_string(stage) : "," + std::to_string(stage);
      if (!cache.count(key)) {
        cache[key] = apply_stage(stage, corpus, cache.at(parent), config, logger);
      }
    }
    reports[name] = evaluate_pairs(corpus.test_pairs, eval_store, cache.at(key));
  }
  return reports;
}

namespace {

ordered_json report_to_json(const EvalReport& r) {
  ordered_json j;
  j["n_pairs"] = r.n_pairs;
  j["accuracy"] = r.accuracy;
  j["kappa"] = r.kappa;
  j["kappa_se"] = r.kappa_se;
  j["confusion"] = {{"a", r.a}, {"b", r.b}, {"c", r.c}, {"d", r.d}};
  j["ties"] = r.ties;
  return j;
}

}  // namespace

void save_report_json(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << report_to_json(report).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void save_reports_json(const std::map<std::string, EvalReport>& reports,
                       const std::filesystem::path& path) {
  ordered_json j;
  for (const auto& [name, report] : reports) j[name] = report_to_json(report);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::string format_report_table(const std::map<std::string, EvalReport>& reports) {
  std::size_t width = 8;
  for (const auto& [name, r] : reports) width = std::max(width, name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width) + 2) << "model"
      << std::right << std::setw(10) << "accuracy" << std::setw(10) << "kappa"
      << std::setw(10) << "se" << std::setw(8) << "pairs" << '\n';
  out << std::string(width + 40, '-') << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& [name, r] : reports) {
    out << std::left << std::setw(static_cast<int>(width) + 2) << name
        << std::right << std::setw(10) << r.accuracy << std::setw(10) << r.kappa
        << std::setw(10) << r.kappa_se << std::setw(8) << r.n_pairs << '\n';
  }
  return out.str();
}

}  // namespace rankdenoise
