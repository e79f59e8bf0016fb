#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rankdenoise/errors.hpp"

namespace rankdenoise {

enum class Role { System, User };

// Provenance of a comparison pair.
enum class PairSource { Expert, SmoothedDerived, RawDerived, Perturbation };

std::string to_string(Role role);
std::string to_string(PairSource source);
Role role_from_string(const std::string& s);
PairSource pair_source_from_string(const std::string& s);

struct Turn {
  Role role = Role::System;
  std::string text;

  bool operator==(const Turn&) const = default;
};

struct Dialog {
  std::string id;
  std::vector<Turn> turns;
  std::optional<int> rating;  // Likert 1..5 when present
  std::map<std::string, std::string> meta;

  bool operator==(const Dialog&) const = default;
};

// Oriented comparison: label 1 means first is the better dialog.
struct DialogPair {
  std::string first_id;
  std::string second_id;
  int label = 1;
  PairSource source = PairSource::Expert;

  bool operator==(const DialogPair&) const = default;
};

struct CorpusSplit {
  std::vector<Dialog> train;
  std::vector<Dialog> eval_dialogs;  // dialogs referenced by dev/test pairs
  std::vector<DialogPair> dev_pairs;
  std::vector<DialogPair> test_pairs;

  bool operator==(const CorpusSplit&) const = default;
};

// Non-owning id -> dialog lookup over one or more dialog vectors.
class DialogStore {
 public:
  DialogStore() = default;

  void add_all(const std::vector<Dialog>& dialogs);
  void add(const Dialog& dialog);

  const Dialog* find(const std::string& id) const;
  const Dialog& at(const std::string& id) const;  // throws CorpusError
  std::size_t size() const { return map_.size(); }

 private:
  std::unordered_map<std::string, const Dialog*> map_;
};

struct SynthConfig {
  int n_train = 3000;
  int n_dev_pairs = 200;
  int n_test_pairs = 200;
  int turns_per_dialog = 10;
  // Small vocabulary on purpose: every word then recurs often enough for the
  // hashed n-gram model to learn word-level patterns (such as echoes) from a
  // few hundred dialogs instead of memorizing one-off tokens. Many small
  // topics keep raw lexical neighborhoods fragmented, so feature learning has
  // room to improve them.
  int vocab_size = 96;
  int n_topics = 48;

  // Scales the whole rating-noise mixture; 0 gives ratings that are a
  // deterministic monotone function of the latent quality.
  double noise_level = 1.0;

  // Latent quality is u^quality_skew for u ~ U(0,1).
  double quality_skew = 0.72;

  // Rating noise: rating = clamp(round(1 + 4q + eps)) where eps is drawn
  // from a mixture of an upward push (generous raters), a downward push
  // (frustrated raters) and symmetric jitter. Probabilities are multiplied
  // by noise_level. Defaults are calibrated so that 10k dialogs reproduce
  // the target marginals (10.7, 11.2, 15.7, 18.4, 44.0)% within +-2% and
  // about one third of expert pairs with distinct ratings have the rating
  // order contradict the latent order.
  double p_positive = 0.44;
  double positive_mean = 5.0;
  double p_negative = 0.10;
  double negative_mean = 3.0;
  double p_jitter = 0.16;
  double jitter_sigma = 0.9;

  // The push probabilities can lean toward the dialog's actual quality:
  // p_positive is weighted by q^positive_tilt, p_negative by
  // (1-q)^negative_tilt. The calibrated default is quality-blind pushes.
  double positive_tilt = 0.0;
  double negative_tilt = 0.0;

  // Fraction of raters who pick a score uniformly at random, ignoring the
  // dialog entirely.
  double p_uniform = 0.18;

  // Minimal latent-quality gap for expert-labeled pairs. Pairs closer than
  // this are the "cannot tell" cases and are never emitted.
  double pair_margin = 0.06;

  // Text shape: per-turn probabilities scale with (1 - q) for breakdown
  // markers and topic switches, with q for enthusiasm markers.
  double fail_scale = 0.6;
  double hop_scale = 0.3;
  double enthusiasm_scale = 0.45;

  // Each turn opens by repeating the previous turn's last word ("echo") with
  // probability echo_base + echo_gain * q; coherent dialogs follow up on what
  // was just said, broken ones do not.
  double echo_base = 0.5;
  double echo_gain = 0.5;
};

// JSONL directory layout: train.jsonl, eval_dialogs.jsonl, dev_pairs.jsonl,
// test_pairs.jsonl. UTF-8, LF line endings, fixed key order.
CorpusSplit load_corpus(const std::filesystem::path& dir);
void save_corpus(const CorpusSplit& corpus, const std::filesystem::path& dir);

void validate_dialog(const Dialog& dialog);
void validate_corpus(const CorpusSplit& corpus);
void validate_synth_config(const SynthConfig& config);

// Generates a split with hidden latent qualities in meta["q"], ratings from
// the latent-conditioned noise model and expert pair labels taken from the
// latent ordering (never from the noisy ratings).
CorpusSplit synthesize(const SynthConfig& config, uint64_t seed);

// Returns a copy of `dialog` with one uniformly chosen turn of `role`
// replaced by a same-role turn text from a different dialog in `pool`.
// The copy keeps the id, drops the rating.
Dialog perturb(const Dialog& dialog, const std::vector<Dialog>& pool, Role role, uint64_t seed);

struct Stage1Pairs {
  std::vector<DialogPair> pairs;  // (real, fake, z=1), two per dialog
  std::vector<Dialog> fakes;      // materialized perturbed dialogs
};

Stage1Pairs make_stage1_pairs(const std::vector<Dialog>& train, uint64_t seed);

// Samples unordered id pairs uniformly without replacement, discards ties,
// orients each pair so the higher value comes first (label 1). Emits a
// warning and returns everything found when fewer than n_pairs exist.
std::vector<DialogPair> sample_comparison_pairs(const std::vector<std::string>& ids,
                                                const std::vector<double>& values,
                                                std::size_t n_pairs, uint64_t seed,
                                                PairSource source);

// Pairs derived from raw self-reported ratings; ties discarded.
std::vector<DialogPair> make_rating_pairs(const std::vector<Dialog>& dialogs,
                                          std::size_t n_pairs, uint64_t seed);

// Shortest round-trip decimal form of a double (used for meta values).
std::string format_double(double v);

}  // namespace rankdenoise
