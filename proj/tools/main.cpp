// rank-denoise: train and evaluate a pairwise dialog-comparison model on
// noisy self-reported ratings. Three denoising stages: perturbation
// pretraining, neighbor label smoothing, and Shapley-valued data removal.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rankdenoise/corpus.hpp"
#include "rankdenoise/encoder.hpp"
#include "rankdenoise/errors.hpp"
#include "rankdenoise/evaluation.hpp"
#include "rankdenoise/hash.hpp"
#include "rankdenoise/neighbors.hpp"
#include "rankdenoise/pipeline.hpp"
#include "rankdenoise/ranker.hpp"
#include "rankdenoise/valuation.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace rankdenoise;

namespace {

struct Paths {
  fs::path corpus, checkpoints, reports;

  fs::path stage_ckpt(int n) const {
    return checkpoints / ("stage" + std::to_string(n) + ".ckpt");
  }
  fs::path manifest() const { return checkpoints / "manifest.json"; }
  fs::path stage_log(int n) const {
    return reports / ("stage" + std::to_string(n) + "_log.jsonl");
  }
};

Paths resolve_paths(const PipelineConfig& cfg, const std::string& out_dir) {
  auto rebase = [&](const fs::path& p) {
    return (out_dir.empty() || p.is_absolute()) ? p : fs::path(out_dir) / p;
  };
  return Paths{rebase(cfg.corpus_dir), rebase(cfg.checkpoint_dir), rebase(cfg.report_dir)};
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hash_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return hex64(fnv1a64(std::string_view(bytes.data(), bytes.size())));
}

ordered_json input_hashes(const Paths& paths) {
  ordered_json j;
  for (const char* name :
       {"train.jsonl", "eval_dialogs.jsonl", "dev_pairs.jsonl", "test_pairs.jsonl"}) {
    const fs::path p = paths.corpus / name;
    if (fs::exists(p)) j[name] = hash_file(p);
  }
  return j;
}

ordered_json read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return ordered_json::object();
  try {
    ordered_json j;
    in >> j;
    return j.is_object() ? j : ordered_json::object();
  } catch (const nlohmann::json::exception&) {
    return ordered_json::object();
  }
}

void write_json_atomic(const ordered_json& j, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

bool manifest_matches(const ordered_json& m, const PipelineConfig& cfg, const Paths& paths) {
  return m.contains("config_hash") && m["config_hash"] == config_hash(cfg) &&
         m.contains("inputs") && m["inputs"] == input_hashes(paths);
}

// Records a completed stage. Later stages are dropped: they were trained on a
// state that no longer matches the checkpoint on disk.
void record_stage(const Paths& paths, const PipelineConfig& cfg, int stage,
                  const ModelState& state) {
  ordered_json m = read_manifest(paths.manifest());
  if (!manifest_matches(m, cfg, paths)) {
    m = ordered_json::object();
    m["config_hash"] = config_hash(cfg);
    m["inputs"] = input_hashes(paths);
    m["stages"] = ordered_json::object();
  }
  if (!m.contains("stages") || !m["stages"].is_object()) m["stages"] = ordered_json::object();
  ordered_json rec;
  rec["checkpoint"] = paths.stage_ckpt(stage).filename().string();
  rec["step"] = state.step;
  m["stages"]["stage" + std::to_string(stage)] = rec;
  for (int later = stage + 1; later <= 3; ++later) {
    m["stages"].erase("stage" + std::to_string(later));
  }
  write_json_atomic(m, paths.manifest());
}

TrainLogger jsonl_logger(std::ofstream& out) {
  return [&out](const TrainLogRecord& r) {
    ordered_json j;
    j["stage"] = r.stage;
    j["epoch"] = r.epoch;
    j["batch"] = r.batch;
    j["loss"] = r.loss;
    j["pair_accuracy"] = r.pair_accuracy;
    out << j.dump() << '\n';
  };
}

int cmd_generate(const PipelineConfig& cfg, const Paths& paths) {
  const CorpusSplit corpus = synthesize(cfg.synth, cfg.seed);
  save_corpus(corpus, paths.corpus);

  std::array<std::size_t, 5> counts{};
  for (const auto& d : corpus.train) {
    if (d.rating) ++counts[static_cast<std::size_t>(*d.rating - 1)];
  }
  const double n = static_cast<double>(corpus.train.size());
  // Published rating distribution this generator is calibrated against.
  static constexpr double kTargetPct[5] = {10.7, 11.2, 15.7, 18.4, 44.0};
  std::printf("wrote corpus to %s\n", paths.corpus.string().c_str());
  std::printf("  train dialogs: %zu   dev pairs: %zu   test pairs: %zu\n", corpus.train.size(),
              corpus.dev_pairs.size(), corpus.test_pairs.size());
  std::printf("  rating  count  share  target\n");
  for (int r = 0; r < 5; ++r) {
    std::printf("  %6d %6zu %5.1f%% %5.1f%%\n", r + 1, counts[static_cast<std::size_t>(r)],
                100.0 * static_cast<double>(counts[static_cast<std::size_t>(r)]) / n,
                kTargetPct[r]);
  }
  return 0;
}

ModelState load_prior_state(const Paths& paths, int prev_stage, bool from_scratch,
                            const PipelineConfig& cfg) {
  if (from_scratch || prev_stage < 1) return init_state(cfg.encoder);
  const fs::path p = paths.stage_ckpt(prev_stage);
  if (!fs::exists(p)) {
    throw CheckpointError("missing " + p.string() + " — run stage" +
                          std::to_string(prev_stage) + " first or pass --from-scratch");
  }
  ModelState state = load_checkpoint(p);
  if (!(state.config == cfg.encoder)) {
    throw CheckpointError(p.string() + " was trained with a different encoder config");
  }
  return state;
}

// Trains one stage, writes its artifacts, checkpoint and manifest entry.
ModelState advance_stage(int stage, const CorpusSplit& corpus, ModelState state,
                         const PipelineConfig& cfg, const Paths& paths) {
  fs::create_directories(paths.checkpoints);
  fs::create_directories(paths.reports);
  std::ofstream log(paths.stage_log(stage), std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + paths.stage_log(stage).string());
  const TrainLogger logger = jsonl_logger(log);

  switch (stage) {
    case 1:
      state = run_stage1(corpus, std::move(state), cfg, logger);
      break;
    case 2: {
      Stage2Result r = run_stage2(corpus, std::move(state), cfg, logger);
      state = std::move(r.state);
      save_smoothed_ratings(r.smoothed, paths.reports / "smoothed_ratings.jsonl");
      break;
    }
    case 3: {
      Stage3Result r = run_stage3(corpus, std::move(state), cfg, logger);
      state = std::move(r.state);
      save_shapley_report(r.report, paths.reports / "shapley.jsonl");
      save_removal_plan(r.plan, paths.reports / "removal_plan.txt");
      std::printf("  removed %zu of %zu training dialogs\n", r.plan.removal.size(),
                  corpus.train.size());
      break;
    }
    default:
      throw Error("unknown stage");
  }
  save_checkpoint(state, paths.stage_ckpt(stage));
  record_stage(paths, cfg, stage, state);
  std::printf("stage%d complete: step=%llu, checkpoint=%s\n", stage,
              static_cast<unsigned long long>(state.step),
              paths.stage_ckpt(stage).string().c_str());
  return state;
}

int cmd_stage(int stage, const PipelineConfig& cfg, const Paths& paths, bool from_scratch) {
  const CorpusSplit corpus = load_corpus(paths.corpus);
  ModelState state = load_prior_state(paths, stage - 1, from_scratch || stage == 1, cfg);
  advance_stage(stage, corpus, std::move(state), cfg, paths);
  return 0;
}

void print_report(const std::string& name, const EvalReport& r) {
  std::printf("%s: accuracy=%.3f kappa=%.3f (se=%.3f, n=%zu, ties=%zu)\n", name.c_str(),
              r.accuracy, r.kappa, r.kappa_se, r.n_pairs, r.ties);
}

int cmd_evaluate(const PipelineConfig& cfg, const Paths& paths, const std::string& which,
                 const std::vector<int>& ks, int step) {
  const CorpusSplit corpus = load_corpus(paths.corpus);
  fs::create_directories(paths.reports);
  DialogStore store;
  store.add_all(corpus.train);
  store.add_all(corpus.eval_dialogs);

  if (which == "test" || which == "dev") {
    const fs::path p = paths.stage_ckpt(3);
    if (!fs::exists(p)) {
      throw CheckpointError("missing " + p.string() + " — run the pipeline first");
    }
    const ModelState state = load_checkpoint(p);
    const auto& pairs = which == "test" ? corpus.test_pairs : corpus.dev_pairs;
    const EvalReport report = evaluate_pairs(pairs, store, state);
    save_report_json(report, paths.reports / ("eval_" + which + ".json"));
    print_report(which, report);
    return 0;
  }
  if (which == "baselines") {
    const auto reports = run_baselines(corpus, cfg, nullptr);
    save_reports_json(reports, paths.reports / "baselines.json");
    std::cout << format_report_table(reports);
    return 0;
  }
  // removal-curve: needs the post-smoothing encoder and the shapley report.
  const fs::path ckpt = paths.stage_ckpt(2);
  if (!fs::exists(ckpt)) {
    throw CheckpointError("missing " + ckpt.string() + " — run stage2 first");
  }
  const fs::path shap = paths.reports / "shapley.jsonl";
  if (!fs::exists(shap)) {
    throw CheckpointError("missing " + shap.string() + " — run stage3 first");
  }
  const ModelState state = load_checkpoint(ckpt);
  const ShapleyReport report = load_shapley_report(shap);
  const NeighborIndex index = build_index(corpus.train, state);
  const int eff_step =
      step > 0 ? step
               : std::max(1, static_cast<int>(corpus.train.size()) / 40);
  const RemovalCurve curve =
      removal_curve(index, report, corpus.dev_pairs, corpus.test_pairs, store, state, ks,
                    static_cast<std::size_t>(eff_step), cfg.seed);
  const fs::path out = paths.reports / "removal_curve.csv";
  save_removal_curve_csv(curve, out);
  std::printf("wrote %s (%zu removal steps, %zu k values)\n", out.string().c_str(),
              curve.removed.size(), curve.ks.size());
  return 0;
}

int cmd_pipeline(const PipelineConfig& cfg, const Paths& paths, bool generate,
                 bool from_scratch) {
  if (!fs::exists(paths.corpus / "train.jsonl")) {
    if (!generate) {
      throw IoError("no corpus at " + paths.corpus.string() + " — pass --generate");
    }
    cmd_generate(cfg, paths);
  } else if (generate) {
    std::printf("corpus already present at %s, keeping it\n", paths.corpus.string().c_str());
  }
  const CorpusSplit corpus = load_corpus(paths.corpus);

  int done = 0;
  ModelState state = init_state(cfg.encoder);
  if (!from_scratch) {
    const ordered_json m = read_manifest(paths.manifest());
    if (manifest_matches(m, cfg, paths) && m.contains("stages")) {
      for (int n = 3; n >= 1; --n) {
        if (!m["stages"].contains("stage" + std::to_string(n))) continue;
        const fs::path p = paths.stage_ckpt(n);
        if (!fs::exists(p)) continue;
        try {
          ModelState loaded = load_checkpoint(p);
          if (loaded.config == cfg.encoder) {
            state = std::move(loaded);
            done = n;
            break;
          }
        } catch (const CheckpointError&) {
          // Unreadable checkpoint: fall through to earlier stages.
        }
      }
    }
  }
  if (done > 0) std::printf("resuming after stage%d\n", done);
  for (int n = done + 1; n <= 3; ++n) {
    state = advance_stage(n, corpus, std::move(state), cfg, paths);
  }

  DialogStore store;
  store.add_all(corpus.train);
  store.add_all(corpus.eval_dialogs);
  const EvalReport report = evaluate_pairs(corpus.test_pairs, store, state);
  save_report_json(report, paths.reports / "eval_test.json");
  print_report("test", report);
  return 0;
}

void add_train_options(CLI::App& app, const std::string& prefix, TrainConfig& tc,
                       std::string& optimizer_name) {
  const std::string group = prefix + " training";
  auto opt = [&](const std::string& key, auto& field, const std::string& help) {
    app.add_option("--" + prefix + "." + key, field, help)->group(group);
  };
  opt("learning_rate", tc.learning_rate, "Optimizer step size");
  opt("batch_size", tc.batch_size, "Dialogs per batch");
  opt("epochs", tc.epochs, "Passes over the stage's pairs");
  app.add_option("--" + prefix + ".optimizer", optimizer_name, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->group(group);
  opt("adam_beta1", tc.adam_beta1, "Adam first-moment decay");
  opt("adam_beta2", tc.adam_beta2, "Adam second-moment decay");
  opt("adam_eps", tc.adam_eps, "Adam denominator floor");
  opt("weight_decay", tc.weight_decay, "Decoupled weight decay");
  opt("clip_norm", tc.clip_norm, "Global gradient-norm clip (0 disables)");
}

// Reads a TOML-subset config file: "key = value" lines, [section] headers
// that prefix later keys as "section.key", single- or double-quoted strings,
// [a, b] arrays, and # comments.  Entries come back in file order as
// (long-option-name-without-dashes, value tokens) pairs; run() turns each
// into command-line tokens so the normal option machinery (type conversion,
// range checks, unknown-flag rejection) applies to config values too.
std::vector<std::pair<std::string, std::vector<std::string>>> read_config_file(
    const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not readable: " + path.string());
  auto trim = [](std::string s) {
    const char* ws = " \t\r\n";
    const auto a = s.find_first_not_of(ws);
    if (a == std::string::npos) return std::string();
    return s.substr(a, s.find_last_not_of(ws) - a + 1);
  };
  auto unquote = [&trim](std::string s) {
    s = trim(std::move(s));
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
      return s.substr(1, s.size() - 2);
    return s;
  };
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;
  std::string section, line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (text.front() == '[') {
      const auto close = text.find(']');
      if (close == std::string::npos)
        throw ConfigError("unterminated section header at " + where);
      section = trim(text.substr(1, close - 1));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value at " + where);
    const std::string key = trim(text.substr(0, eq));
    std::string raw = trim(text.substr(eq + 1));
    if (key.empty() || raw.empty()) throw ConfigError("expected key = value at " + where);
    std::vector<std::string> values;
    if (raw.front() == '[') {
      const auto close = raw.find(']');
      if (close == std::string::npos) throw ConfigError("unterminated array at " + where);
      const std::string inner = raw.substr(1, close - 1);
      for (std::size_t start = 0; start <= inner.size();) {
        auto comma = inner.find(',', start);
        if (comma == std::string::npos) comma = inner.size();
        std::string item = unquote(inner.substr(start, comma - start));
        if (!item.empty()) values.push_back(std::move(item));
        start = comma + 1;
      }
      if (values.empty()) throw ConfigError("empty array at " + where);
    } else if (raw.front() == '"' || raw.front() == '\'') {
      const auto close = raw.find(raw.front(), 1);
      if (close == std::string::npos) throw ConfigError("unterminated string at " + where);
      values.push_back(raw.substr(1, close - 1));
    } else {
      raw = trim(raw.substr(0, raw.find('#')));  // strip a trailing comment
      if (raw.empty()) throw ConfigError("expected key = value at " + where);
      values.push_back(std::move(raw));
    }
    entries.emplace_back(section.empty() ? key : section + "." + key, std::move(values));
  }
  return entries;
}

int run(int argc, char** argv) {
  CLI::App app{
      "rank-denoise: denoises self-reported dialog ratings and trains a\n"
      "pairwise dialog-comparison model (perturbation pretraining, neighbor\n"
      "label smoothing, Shapley-valued data removal)."};
  app.option_defaults()->always_capture_default();
  // --config is documented here but handled before the parse below: [section]
  // keys become --section.key tokens injected ahead of the explicit command
  // line, so typed flags always take precedence over the file.
  app.set_config("--config", "",
                 "TOML config file; [synth] n_train = ... sets --synth.n_train, "
                 "top-level keys set plain options, explicit flags win");
  app.require_subcommand(1);

  PipelineConfig cfg;
  std::string out_dir;
  std::string rule_name = to_string(cfg.removal_rule);
  std::string opt1 = to_string(cfg.stage1.optimizer);
  std::string opt2 = to_string(cfg.stage2.optimizer);
  std::string opt3 = to_string(cfg.stage3.optimizer);
  std::string corpus_dir = cfg.corpus_dir.string();
  std::string checkpoint_dir = cfg.checkpoint_dir.string();
  std::string report_dir = cfg.report_dir.string();

  app.add_option("--seed", cfg.seed, "Global random seed");
  app.add_option("--out", out_dir, "Base directory prepended to relative paths");
  app.add_option("--corpus-dir", corpus_dir, "Corpus directory");
  app.add_option("--checkpoint-dir", checkpoint_dir, "Checkpoint directory");
  app.add_option("--report-dir", report_dir, "Report directory");
  app.add_option("--k-smooth", cfg.k_smooth, "Neighbors for label smoothing")
      ->check(CLI::PositiveNumber);
  app.add_option("--k-shapley", cfg.k_shapley, "Neighbors for data valuation")
      ->check(CLI::PositiveNumber);
  app.add_option("--smooth-iterations", cfg.smooth_iterations,
                 "Smooth/fine-tune rounds in stage 2")
      ->check(CLI::PositiveNumber);
  app.add_option("--pair-multiplier", cfg.pair_multiplier,
                 "Derived pairs per dialog in stages 2/3");
  app.add_option("--removal-rule", rule_name, "negative or bottom_fraction")
      ->check(CLI::IsMember({"negative", "bottom_fraction"}));
  app.add_option("--removal-fraction", cfg.removal_fraction,
                 "Fraction removed under bottom_fraction");

  auto synth = [&](const std::string& key, auto& field, const std::string& help) {
    app.add_option("--synth." + key, field, help)->group("synthetic corpus");
  };
  synth("n_train", cfg.synth.n_train, "Training dialogs");
  synth("n_dev_pairs", cfg.synth.n_dev_pairs, "Expert dev pairs");
  synth("n_test_pairs", cfg.synth.n_test_pairs, "Expert test pairs");
  synth("turns_per_dialog", cfg.synth.turns_per_dialog, "Turns per dialog");
  synth("vocab_size", cfg.synth.vocab_size, "Pseudo-word vocabulary size");
  synth("n_topics", cfg.synth.n_topics, "Topic count");
  synth("noise_level", cfg.synth.noise_level, "Rating noise scale in [0,1]");
  synth("quality_skew", cfg.synth.quality_skew, "Latent quality u^skew");
  synth("p_positive", cfg.synth.p_positive, "Positive-push noise probability");
  synth("positive_mean", cfg.synth.positive_mean, "Positive-push mean");
  synth("p_negative", cfg.synth.p_negative, "Negative-push noise probability");
  synth("negative_mean", cfg.synth.negative_mean, "Negative-push mean");
  synth("p_jitter", cfg.synth.p_jitter, "Gaussian jitter probability");
  synth("jitter_sigma", cfg.synth.jitter_sigma, "Gaussian jitter stddev");
  synth("positive_tilt", cfg.synth.positive_tilt, "q-weighting of the positive push");
  synth("negative_tilt", cfg.synth.negative_tilt, "(1-q)-weighting of the negative push");
  synth("p_uniform", cfg.synth.p_uniform, "Probability of a uniform random rating");
  synth("pair_margin", cfg.synth.pair_margin, "Min latent gap in expert pairs");
  synth("fail_scale", cfg.synth.fail_scale, "Breakdown-turn rate scale");
  synth("hop_scale", cfg.synth.hop_scale, "Topic-hop rate scale");
  synth("enthusiasm_scale", cfg.synth.enthusiasm_scale, "Enthusiasm phrase scale");
  synth("echo_base", cfg.synth.echo_base, "Echo probability at q=0");
  synth("echo_gain", cfg.synth.echo_gain, "Echo probability slope in q");

  auto enc = [&](const std::string& key, auto& field, const std::string& help) {
    app.add_option("--encoder." + key, field, help)->group("encoder");
  };
  enc("hash_dim", cfg.encoder.hash_dim, "Hashed n-gram buckets");
  enc("hidden_dim", cfg.encoder.hidden_dim, "Hidden layer width");
  enc("feature_dim", cfg.encoder.feature_dim, "Dialog feature dimension");
  enc("init_seed", cfg.encoder.init_seed, "Parameter init seed");
  app.add_option("--encoder.ngram_orders", cfg.encoder.ngram_orders, "N-gram orders")
      ->group("encoder");

  add_train_options(app, "stage1", cfg.stage1, opt1);
  add_train_options(app, "stage2", cfg.stage2, opt2);
  add_train_options(app, "stage3", cfg.stage3, opt3);

  CLI::App* c_generate = app.add_subcommand("generate", "Synthesize a corpus");
  CLI::App* c_stage1 = app.add_subcommand("stage1", "Perturbation pretraining");
  CLI::App* c_stage2 = app.add_subcommand("stage2", "Label-smoothing fine-tune");
  CLI::App* c_stage3 = app.add_subcommand("stage3", "Valuation, removal, fine-tune");
  CLI::App* c_evaluate = app.add_subcommand("evaluate", "Score checkpoints / run baselines");
  CLI::App* c_pipeline = app.add_subcommand("pipeline", "Stages 1-3 end to end, then evaluate");

  bool s2_scratch = false, s3_scratch = false, pipe_scratch = false, pipe_generate = false;
  c_stage2->add_flag("--from-scratch", s2_scratch, "Start from a fresh model (skip stage1.ckpt)");
  c_stage3->add_flag("--from-scratch", s3_scratch, "Start from a fresh model (skip stage2.ckpt)");
  c_pipeline->add_flag("--from-scratch", pipe_scratch, "Ignore existing checkpoints");
  c_pipeline->add_flag("--generate", pipe_generate, "Synthesize the corpus if absent");

  std::string which = "test";
  std::vector<int> curve_ks = {1, 5, 25, 50, 100};
  int curve_step = 0;
  c_evaluate->add_option("--which", which, "What to evaluate")
      ->check(CLI::IsMember({"test", "dev", "baselines", "removal-curve"}));
  c_evaluate->add_option("--ks", curve_ks, "k values for the removal curve");
  c_evaluate->add_option("--step", curve_step, "Removal increment (0 = corpus size / 40)");

  app.name(fs::path(argv[0]).filename().string());

  // Pull --config out of the raw arguments ourselves; everything else is
  // forwarded to the parser untouched.
  std::vector<std::string> given(argv + 1, argv + argc);
  std::string config_file;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < given.size(); ++i) {
    if (given[i] == "--config") {
      if (i + 1 >= given.size()) throw ConfigError("--config needs a file path");
      config_file = given[++i];
    } else if (given[i].rfind("--config=", 0) == 0) {
      config_file = given[i].substr(9);
    } else {
      rest.push_back(given[i]);
    }
  }

  std::vector<std::string> tokens;
  if (!config_file.empty()) {
    for (auto& [name, values] : read_config_file(config_file)) {
      const std::string flag = "--" + name;
      const bool explicitly_set =
          std::any_of(rest.begin(), rest.end(), [&](const std::string& t) {
            return t == flag || t.rfind(flag + "=", 0) == 0;
          });
      if (explicitly_set) continue;  // typed flags beat the config file
      if (values.size() == 1) {
        tokens.push_back(flag + "=" + values.front());
      } else {
        tokens.push_back(flag);
        tokens.insert(tokens.end(), values.begin(), values.end());
      }
    }
  }
  tokens.insert(tokens.end(), rest.begin(), rest.end());

  try {
    std::reverse(tokens.begin(), tokens.end());  // CLI11 consumes from the back
    app.parse(std::move(tokens));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return 1;  // bad flags or config file: invalid configuration
  }

  cfg.removal_rule = removal_rule_from_string(rule_name);
  cfg.stage1.optimizer = optimizer_from_string(opt1);
  cfg.stage2.optimizer = optimizer_from_string(opt2);
  cfg.stage3.optimizer = optimizer_from_string(opt3);
  cfg.corpus_dir = corpus_dir;
  cfg.checkpoint_dir = checkpoint_dir;
  cfg.report_dir = report_dir;
  validate_config(cfg);
  const Paths paths = resolve_paths(cfg, out_dir);

  if (c_generate->parsed()) return cmd_generate(cfg, paths);
  if (c_stage1->parsed()) return cmd_stage(1, cfg, paths, true);
  if (c_stage2->parsed()) return cmd_stage(2, cfg, paths, s2_scratch);
  if (c_stage3->parsed()) return cmd_stage(3, cfg, paths, s3_scratch);
  if (c_evaluate->parsed()) return cmd_evaluate(cfg, paths, which, curve_ks, curve_step);
  if (c_pipeline->parsed()) return cmd_pipeline(cfg, paths, pipe_generate, pipe_scratch);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const Error& e) {
    // Corpus and IO problems: bad or missing input data.
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
