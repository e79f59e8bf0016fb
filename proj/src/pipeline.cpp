#include "rankdenoise/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <unordered_set>

#include "json.hpp"

#include "rankdenoise/hash.hpp"
#include "rankdenoise/rng.hpp"

namespace rankdenoise {

using ordered_json = nlohmann::ordered_json;

void validate_config(const PipelineConfig& config) {
  if (config.corpus_dir.empty()) throw ConfigError("corpus_dir must not be empty");
  if (config.checkpoint_dir.empty()) throw ConfigError("checkpoint_dir must not be empty");
  if (config.report_dir.empty()) throw ConfigError("report_dir must not be empty");
  validate_synth_config(config.synth);
  validate_config(config.encoder);
  validate_config(config.stage1);
  validate_config(config.stage2);
  validate_config(config.stage3);
  if (config.k_smooth < 1) throw ConfigError("k_smooth must be at least 1");
  if (config.k_shapley < 1) throw ConfigError("k_shapley must be at least 1");
  if (config.smooth_iterations < 1) throw ConfigError("smooth_iterations must be at least 1");
  if (!(config.pair_multiplier > 0.0)) throw ConfigError("pair_multiplier must be positive");
  if (config.removal_fraction < 0.0 || config.removal_fraction >= 1.0) {
    throw ConfigError("removal_fraction must be in [0, 1)");
  }
}

namespace {

ordered_json train_config_json(const TrainConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["optimizer"] = to_string(c.optimizer);
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["clip_norm"] = c.clip_norm;
  j["seed"] = c.seed;
  return j;
}

}  // namespace

std::string config_hash(const PipelineConfig& config) {
  // Semantic fields only: paths are deployment detail, not experiment identity.
  ordered_json j;
  ordered_json synth;
  synth["n_train"] = config.synth.n_train;
  synth["n_dev_pairs"] = config.synth.n_dev_pairs;
  synth["n_test_pairs"] = config.synth.n_test_pairs;
  synth["turns_per_dialog"] = config.synth.turns_per_dialog;
  synth["vocab_size"] = config.synth.vocab_size;
  synth["n_topics"] = config.synth.n_topics;
  synth["noise_level"] = config.synth.noise_level;
  synth["quality_skew"] = config.synth.quality_skew;
  synth["p_positive"] = config.synth.p_positive;
  synth["positive_mean"] = config.synth.positive_mean;
  synth["p_negative"] = config.synth.p_negative;
  synth["negative_mean"] = config.synth.negative_mean;
  synth["p_jitter"] = config.synth.p_jitter;
  synth["jitter_sigma"] = config.synth.jitter_sigma;
  synth["positive_tilt"] = config.synth.positive_tilt;
  synth["p_uniform"] = config.synth.p_uniform;
  synth["negative_tilt"] = config.synth.negative_tilt;
  synth["pair_margin"] = config.synth.pair_margin;
  synth["fail_scale"] = config.synth.fail_scale;
  synth["hop_scale"] = config.synth.hop_scale;
  synth["enthusiasm_scale"] = config.synth.enthusiasm_scale;
  synth["echo_base"] = config.synth.echo_base;
  synth["echo_gain"] = config.synth.echo_gain;
  j["synth"] = synth;
  ordered_json enc;
  enc["hash_dim"] = config.encoder.hash_dim;
  enc["hidden_dim"] = config.encoder.hidden_dim;
  enc["feature_dim"] = config.encoder.feature_dim;
  enc["ngram_orders"] = config.encoder.ngram_orders;
  enc["init_seed"] = config.encoder.init_seed;
  j["encoder"] = enc;
  j["stage1"] = train_config_json(config.stage1);
  j["stage2"] = train_config_json(config.stage2);
  j["stage3"] = train_config_json(config.stage3);
  j["k_smooth"] = config.k_smooth;
  j["k_shapley"] = config.k_shapley;
  j["smooth_iterations"] = config.smooth_iterations;
  j["pair_multiplier"] = config.pair_multiplier;
  j["removal_rule"] = to_string(config.removal_rule);
  j["removal_fraction"] = config.removal_fraction;
  j["seed"] = config.seed;

  const std::string canonical = j.dump();
  const uint64_t h = fnv1a64(canonical.data(), canonical.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<DialogPair> raw_rating_pairs(const std::vector<Dialog>& train,
                                         const PipelineConfig& config, uint64_t seed) {
  const auto n_pairs = static_cast<std::size_t>(std::max<long long>(
      1, std::llround(config.pair_multiplier * static_cast<double>(train.size()))));
  return make_rating_pairs(train, n_pairs, seed);
}

ModelState run_stage1(const CorpusSplit& corpus, ModelState state, const PipelineConfig& config,
                      const TrainLogger& logger) {
  const auto s1 = make_stage1_pairs(corpus.train, mix_seed(config.seed, 0x7331));
  DialogStore store;
  store.add_all(corpus.train);
  store.add_all(s1.fakes);
  TrainConfig tc = config.stage1;
  tc.seed = mix_seed(config.seed, 0x74310000);
  return train_stage(s1.pairs, store, std::move(state), tc, 1, logger);
}

Stage2Result run_stage2(const CorpusSplit& corpus, ModelState state, const PipelineConfig& config,
                        const TrainLogger& logger) {
  DialogStore store;
  store.add_all(corpus.train);
  Stage2Result result;
  result.state = std::move(state);
  const auto n_pairs = static_cast<std::size_t>(std::max<long long>(
      1, std::llround(config.pair_multiplier * static_cast<double>(corpus.train.size()))));
  for (int it = 0; it < config.smooth_iterations; ++it) {
    // Re-encode with the current parameters each round: smoothing and
    // fine-tuning alternate, so the neighborhood structure tracks the model.
    const auto index = build_index(corpus.train, result.state);
    result.smoothed = smooth_labels(index, config.k_smooth);
    const auto pairs = make_stage2_pairs(result.smoothed, n_pairs,
                                         mix_seed(config.seed, 0x73320000 + it));
    TrainConfig tc = config.stage2;
    tc.seed = mix_seed(config.seed, 0x74320000 + it);
    result.state = train_stage(pairs, store, std::move(result.state), tc, 2, logger);
  }
  return result;
}

Stage3Result run_stage3(const CorpusSplit& corpus, ModelState state, const PipelineConfig& config,
                        const TrainLogger& logger) {
  if (corpus.dev_pairs.empty()) throw Error("stage 3 needs dev pairs for data valuation");
  DialogStore store;
  store.add_all(corpus.train);
  store.add_all(corpus.eval_dialogs);

  Stage3Result result;
  result.report = shapley_knn(corpus.train, corpus.dev_pairs, store, state, config.k_shapley);
  result.plan = plan_removal(result.report, config.removal_rule, config.removal_fraction);

  std::unordered_set<std::string> dropped(result.plan.removal.begin(),
                                          result.plan.removal.end());
  std::vector<Dialog> cleaned;
  cleaned.reserve(corpus.train.size());
  for (const auto& d : corpus.train) {
    if (!dropped.count(d.id)) cleaned.push_back(d);
  }

  if (cleaned.size() < 2) {
    std::cerr << "warning: removal left fewer than 2 dialogs, skipping fine-tune\n";
    result.state = std::move(state);
    return result;
  }
  const auto pairs = raw_rating_pairs(cleaned, config, mix_seed(config.seed, 0x7333));
  TrainConfig tc = config.stage3;
  tc.seed = mix_seed(config.seed, 0x74330000);
  result.state = train_stage(pairs, store, std::move(state), tc, 3, logger);
  return result;
}

}  // namespace rankdenoise
