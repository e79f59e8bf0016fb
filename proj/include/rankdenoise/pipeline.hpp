#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rankdenoise/corpus.hpp"
#include "rankdenoise/encoder.hpp"
#include "rankdenoise/neighbors.hpp"
#include "rankdenoise/ranker.hpp"
#include "rankdenoise/valuation.hpp"

namespace rankdenoise {

// Everything one experiment needs, loadable from a single TOML file.
struct PipelineConfig {
  std::filesystem::path corpus_dir = "corpus";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path report_dir = "reports";

  SynthConfig synth;
  EncoderConfig encoder;

  // Stage budgets: stage 1 trains its discriminator to convergence; stage 2
  // retrains briefly on smoothed pairs; stage 3 fine-tunes gently on the
  // cleaned raw pairs so it refines rather than overwrites stage 2.
  TrainConfig stage1;
  TrainConfig stage2 = {.epochs = 2};
  TrainConfig stage3 = {.learning_rate = 3e-4, .epochs = 2};

  int k_smooth = 50;
  int k_shapley = 50;
  int smooth_iterations = 1;

  // Derived comparison pairs sampled per stage, as a multiple of the number
  // of dialogs being paired.
  double pair_multiplier = 2.0;

  RemovalRule removal_rule = RemovalRule::NegativeValues;
  double removal_fraction = 0.1;  // only used by BottomFraction

  uint64_t seed = 1;
};

void validate_config(const PipelineConfig& config);

// Stable hash of every semantic field (hex string); used by the manifest to
// detect that a checkpoint was produced under a different configuration.
std::string config_hash(const PipelineConfig& config);

// The three training stages as pure state transforms: no file IO, fully
// determined by (corpus, incoming state, config). Stage 2 and 3 derive their
// own pairs; every stage fine-tunes the incoming state in place.
ModelState run_stage1(const CorpusSplit& corpus, ModelState state, const PipelineConfig& config,
                      const TrainLogger& logger = nullptr);

struct Stage2Result {
  ModelState state;
  std::vector<SmoothedRating> smoothed;  // from the last smoothing iteration
};
Stage2Result run_stage2(const CorpusSplit& corpus, ModelState state, const PipelineConfig& config,
                        const TrainLogger& logger = nullptr);

struct Stage3Result {
  ModelState state;
  ShapleyReport report;
  RemovalPlan plan;
};
Stage3Result run_stage3(const CorpusSplit& corpus, ModelState state, const PipelineConfig& config,
                        const TrainLogger& logger = nullptr);

// Comparison pairs drawn from raw self-reported ratings; the no-denoising
// training signal used by the RawPairwise baseline and stage 3.
std::vector<DialogPair> raw_rating_pairs(const std::vector<Dialog>& train,
                                         const PipelineConfig& config, uint64_t seed);

}  // namespace rankdenoise
