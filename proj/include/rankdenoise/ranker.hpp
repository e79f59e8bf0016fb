#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rankdenoise/corpus.hpp"
#include "rankdenoise/encoder.hpp"

namespace rankdenoise {

enum class OptimizerKind { SGD, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;  // dialogs per batch, not pairs
  int epochs = 5;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled shrink applied before the step
  double clip_norm = 5.0;      // global gradient norm cap
  uint64_t seed = 1;
};

void validate_config(const TrainConfig& config);

// P(first beats second) = logistic(o_i - o_j). Written so that
// posterior(a,b) + posterior(b,a) == 1 holds exactly in floating point.
double posterior(double o_i, double o_j);

// Cross entropy of the posterior against z, in softplus form: stable for
// score gaps up to ~700 either way.
double pair_loss(double o_i, double o_j, int z);

// Oriented pair of batch-local indices; first is the better dialog (z = 1).
struct IndexPair {
  std::size_t i, j;
};

// lambda[i] = exact d/do_i of the summed pair loss; one pass over the pairs.
std::vector<double> lambda_weights(const std::vector<double>& scores,
                                   const std::vector<IndexPair>& pairs);

struct BatchGradient {
  std::vector<double> grad;    // summed over pairs
  double loss = 0.0;           // summed pair loss
  double pair_accuracy = 0.0;  // fraction with o_i > o_j, ties as 0.5
  std::size_t n_pairs = 0;
  // Pass counters back the O(|batch|) cost claim: both stay equal to the
  // number of distinct dialogs no matter how many pairs reference them.
  std::size_t forward_passes = 0;
  std::size_t backward_passes = 0;
};

// One forward pass per dialog, lambda weighting, one backward pass per
// dialog. Duplicate pairs are folded into integer multiplicities so that
// doubling every pair scales the gradient exactly.
BatchGradient batch_gradient(const std::vector<const SparseVector*>& batch,
                             const std::vector<IndexPair>& pairs, const ModelState& state);

// Convenience overload that featurizes the dialogs first.
BatchGradient batch_gradient(const std::vector<Dialog>& batch, const std::vector<IndexPair>& pairs,
                             const ModelState& state);

// Clips, applies weight decay, then one SGD or Adam step; bumps state.step.
void apply_update(ModelState& state, const std::vector<double>& grad, const TrainConfig& config);

struct TrainLogRecord {
  int stage = 0;
  int epoch = 0;
  int batch = 0;
  double loss = 0.0;  // mean pair loss in the batch
  double pair_accuracy = 0.0;
};
using TrainLogger = std::function<void(const TrainLogRecord&)>;

// Mini-batch training over oriented pairs: per epoch, walk the shuffled pair
// list collecting dialogs until batch_size distinct ones are in hand, train
// on every stage pair that falls inside the batch, repeat. Deterministic for
// a fixed seed. Throws TrainingDiverged on a non-finite loss.
ModelState train_stage(const std::vector<DialogPair>& pairs, const DialogStore& store,
                       ModelState state, const TrainConfig& config, int stage,
                       const TrainLogger& logger = nullptr);

struct PairPrediction {
  double probability;  // P(first beats second)
  int z_hat;           // 1 if first scored higher; ties fall back to 1
  bool tie;
};

PairPrediction predict_pair(const Dialog& first, const Dialog& second, const ModelState& state);

}  // namespace rankdenoise
