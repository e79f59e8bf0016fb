#include "rankdenoise/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

#include "rankdenoise/rng.hpp"

namespace rankdenoise {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::SGD ? "SGD" : "Adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "SGD" || s == "sgd") return OptimizerKind::SGD;
  if (s == "Adam" || s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer \"" + s + "\"");
}

void validate_config(const TrainConfig& config) {
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (config.batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (config.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (config.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(config.clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

double posterior(double o_i, double o_j) {
  // t = e^{-|d|} <= 1, so t/(1+t) never overflows and the winning side is
  // 1 - losing side, which makes posterior(a,b) + posterior(b,a) == 1 exact.
  const double d = o_i - o_j;
  const double t = std::exp(-std::abs(d));
  const double lose = t / (1.0 + t);
  return d >= 0.0 ? 1.0 - lose : lose;
}

double pair_loss(double o_i, double o_j, int z) {
  if (z != 0 && z != 1) throw Error("pair label must be 0 or 1");
  const double d = z == 1 ? o_i - o_j : o_j - o_i;
  // softplus(-d), split so exp never sees a positive argument
  return d >= 0.0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d));
}

std::vector<double> lambda_weights(const std::vector<double>& scores,
                                   const std::vector<IndexPair>& pairs) {
  std::vector<double> lambda(scores.size(), 0.0);
  for (const auto& [i, j] : pairs) {
    if (i >= scores.size() || j >= scores.size()) throw Error("pair index out of range");
    // d/do_i of softplus(o_j - o_i) is -sigma(o_j - o_i); +sigma for o_j.
    // Both sides share the same double, so each pair cancels exactly.
    const double s = posterior(scores[j], scores[i]);
    lambda[i] -= s;
    lambda[j] += s;
  }
  return lambda;
}

BatchGradient batch_gradient(const std::vector<const SparseVector*>& batch,
                             const std::vector<IndexPair>& pairs, const ModelState& state) {
  const ParamLayout layout(state.config);
  BatchGradient out;
  out.grad.assign(layout.total(), 0.0);
  out.n_pairs = pairs.size();

  // Fold duplicates into integer multiplicities: m identical pairs contribute
  // fl(m * t) instead of m rounded additions, so doubling every multiplicity
  // scales every contribution by exactly 2.
  std::map<std::pair<std::size_t, std::size_t>, double> mult;
  for (const auto& [i, j] : pairs) {
    if (i >= batch.size() || j >= batch.size()) throw Error("pair index out of range");
    mult[{i, j}] += 1.0;
  }

  std::vector<Activations> acts;
  acts.reserve(batch.size());
  std::vector<double> scores(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    acts.push_back(forward_raw(*batch[b], state));
    scores[b] = acts.back().score;
    ++out.forward_passes;
  }

  std::vector<double> lambda(batch.size(), 0.0);
  double correct = 0.0;
  for (const auto& [key, m] : mult) {
    const auto [i, j] = key;
    const double s = posterior(scores[j], scores[i]);
    lambda[i] -= m * s;
    lambda[j] += m * s;
    out.loss += m * pair_loss(scores[i], scores[j], 1);
    correct += m * (scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0);
  }
  out.pair_accuracy = pairs.empty() ? 0.0 : correct / static_cast<double>(pairs.size());

  for (std::size_t b = 0; b < batch.size(); ++b) {
    accumulate_score_grad(*batch[b], acts[b], state, lambda[b], out.grad);
    ++out.backward_passes;
  }
  return out;
}

BatchGradient batch_gradient(const std::vector<Dialog>& batch, const std::vector<IndexPair>& pairs,
                             const ModelState& state) {
  std::vector<SparseVector> raw;
  raw.reserve(batch.size());
  for (const auto& d : batch) raw.push_back(featurize_raw(d, state.config));
  std::vector<const SparseVector*> ptrs;
  ptrs.reserve(raw.size());
  for (const auto& x : raw) ptrs.push_back(&x);
  return batch_gradient(ptrs, pairs, state);
}

void apply_update(ModelState& state, const std::vector<double>& grad, const TrainConfig& config) {
  validate_config(config);
  const std::size_t n = state.params.size();
  if (grad.size() != n) throw Error("gradient/parameter size mismatch");

  double norm_sq = 0.0;
  for (double g : grad) norm_sq += g * g;
  const double norm = std::sqrt(norm_sq);
  const double scale = norm > config.clip_norm ? config.clip_norm / norm : 1.0;
  const double lr = config.learning_rate;

  if (config.weight_decay > 0.0) {
    const double shrink = 1.0 - lr * config.weight_decay;
    for (double& p : state.params) p *= shrink;
  }

  ++state.step;
  if (config.optimizer == OptimizerKind::SGD) {
    for (std::size_t i = 0; i < n; ++i) state.params[i] -= lr * scale * grad[i];
    return;
  }
  if (state.m.size() != n) state.m.assign(n, 0.0);
  if (state.v.size() != n) state.v.assign(n, 0.0);
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = scale * grad[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mhat = state.m[i] / corr1;
    const double vhat = state.v[i] / corr2;
    state.params[i] -= lr * mhat / (std::sqrt(vhat) + config.adam_eps);
  }
}

ModelState train_stage(const std::vector<DialogPair>& pairs, const DialogStore& store,
                       ModelState state, const TrainConfig& config, int stage,
                       const TrainLogger& logger) {
  validate_config(config);
  if (pairs.empty() || config.epochs == 0) return state;

  // Featurize every referenced dialog once, in order of first appearance.
  std::vector<SparseVector> raw;
  std::unordered_map<std::string, std::size_t> local;
  auto intern = [&](const std::string& id) {
    auto it = local.find(id);
    if (it != local.end()) return it->second;
    const std::size_t idx = raw.size();
    raw.push_back(featurize_raw(store.at(id), state.config));
    local.emplace(id, idx);
    return idx;
  };
  std::vector<IndexPair> oriented;
  oriented.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.label != 0 && p.label != 1) throw Error("pair label must be 0 or 1");
    const std::size_t a = intern(p.first_id), b = intern(p.second_id);
    oriented.push_back(p.label == 1 ? IndexPair{a, b} : IndexPair{b, a});
  }
  const std::size_t n_dialogs = raw.size();
  std::vector<std::vector<std::size_t>> adjacency(n_dialogs);  // dialog -> pair indices
  for (std::size_t p = 0; p < oriented.size(); ++p) {
    adjacency[oriented[p].i].push_back(p);
    adjacency[oriented[p].j].push_back(p);
  }

  std::vector<std::size_t> dialog_stamp(n_dialogs, 0), pair_stamp(oriented.size(), 0);
  std::size_t stamp = 0;
  std::vector<std::size_t> local_of(n_dialogs, 0);

  std::vector<std::size_t> order(oriented.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, 0x65706f63ULL + static_cast<uint64_t>(epoch)));
    rng.shuffle(order);

    int batch_no = 0;
    std::vector<std::size_t> members;
    auto flush = [&]() {
      if (members.size() < 2) {
        members.clear();
        return;
      }
      std::vector<const SparseVector*> batch;
      batch.reserve(members.size());
      for (std::size_t k = 0; k < members.size(); ++k) {
        local_of[members[k]] = k;
        batch.push_back(&raw[members[k]]);
      }
      // Train on every stage pair that falls fully inside this batch.
      std::vector<IndexPair> batch_pairs;
      for (std::size_t member : members) {
        for (std::size_t p : adjacency[member]) {
          if (pair_stamp[p] == stamp) continue;
          const auto& ip = oriented[p];
          if (dialog_stamp[ip.i] == stamp && dialog_stamp[ip.j] == stamp) {
            pair_stamp[p] = stamp;
            batch_pairs.push_back({local_of[ip.i], local_of[ip.j]});
          }
        }
      }
      members.clear();
      if (batch_pairs.empty()) return;

      BatchGradient bg = batch_gradient(batch, batch_pairs, state);
      const double mean_loss = bg.loss / static_cast<double>(bg.n_pairs);
      if (!std::isfinite(mean_loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at stage " << stage << " epoch " << epoch << " batch " << batch_no;
        throw TrainingDiverged(msg.str());
      }
      const double inv = 1.0 / static_cast<double>(bg.n_pairs);
      for (double& g : bg.grad) g *= inv;
      apply_update(state, bg.grad, config);
      if (logger) logger({stage, epoch, batch_no, mean_loss, bg.pair_accuracy});
      ++batch_no;
    };

    ++stamp;
    for (std::size_t p : order) {
      for (std::size_t end : {oriented[p].i, oriented[p].j}) {
        if (dialog_stamp[end] != stamp) {
          dialog_stamp[end] = stamp;
          members.push_back(end);
        }
      }
      if (members.size() >= static_cast<std::size_t>(config.batch_size)) {
        flush();
        ++stamp;
      }
    }
    flush();
  }
  return state;
}

PairPrediction predict_pair(const Dialog& first, const Dialog& second, const ModelState& state) {
  const double o1 = score(first, state);
  const double o2 = score(second, state);
  PairPrediction pred;
  pred.probability = posterior(o1, o2);
  pred.tie = o1 == o2;
  pred.z_hat = o1 >= o2 ? 1 : 0;
  return pred;
}

}  // namespace rankdenoise
