#include "rankdenoise/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "rankdenoise/rng.hpp"

namespace rankdenoise {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string to_string(Role role) { return role == Role::System ? "System" : "User"; }

std::string to_string(PairSource source) {
  switch (source) {
    case PairSource::Expert: return "Expert";
    case PairSource::SmoothedDerived: return "SmoothedDerived";
    case PairSource::RawDerived: return "RawDerived";
    case PairSource::Perturbation: return "Perturbation";
  }
  return "Expert";
}

Role role_from_string(const std::string& s) {
  if (s == "System") return Role::System;
  if (s == "User") return Role::User;
  throw CorpusError("unknown role \"" + s + "\"");
}

PairSource pair_source_from_string(const std::string& s) {
  if (s == "Expert") return PairSource::Expert;
  if (s == "SmoothedDerived") return PairSource::SmoothedDerived;
  if (s == "RawDerived") return PairSource::RawDerived;
  if (s == "Perturbation") return PairSource::Perturbation;
  throw CorpusError("unknown pair source \"" + s + "\"");
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void DialogStore::add(const Dialog& dialog) {
  auto [it, inserted] = map_.emplace(dialog.id, &dialog);
  if (!inserted) throw CorpusError("duplicate dialog id \"" + dialog.id + "\"");
}

void DialogStore::add_all(const std::vector<Dialog>& dialogs) {
  for (const auto& d : dialogs) add(d);
}

const Dialog* DialogStore::find(const std::string& id) const {
  auto it = map_.find(id);
  return it == map_.end() ? nullptr : it->second;
}

const Dialog& DialogStore::at(const std::string& id) const {
  const Dialog* d = find(id);
  if (!d) throw CorpusError("unresolved dialog reference \"" + id + "\"");
  return *d;
}

namespace {

bool is_blank(const std::string& text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

void validate_dialog(const Dialog& dialog) {
  if (dialog.id.empty()) throw CorpusError("dialog with empty id");
  if (dialog.turns.empty()) throw CorpusError("dialog \"" + dialog.id + "\" has no turns");
  for (std::size_t i = 0; i < dialog.turns.size(); ++i) {
    const Turn& t = dialog.turns[i];
    if (t.text.empty() || is_blank(t.text)) {
      throw CorpusError("dialog \"" + dialog.id + "\" turn " + std::to_string(i) + " has empty text");
    }
    if (i > 0 && t.role == dialog.turns[i - 1].role) {
      throw CorpusError("dialog \"" + dialog.id + "\" roles do not alternate at turn " +
                        std::to_string(i));
    }
  }
  if (dialog.rating && (*dialog.rating < 1 || *dialog.rating > 5)) {
    throw CorpusError("dialog \"" + dialog.id + "\" rating " + std::to_string(*dialog.rating) +
                      " outside {1..5}");
  }
}

void validate_corpus(const CorpusSplit& corpus) {
  if (corpus.train.empty()) throw CorpusError("empty training corpus");
  DialogStore store;
  store.add_all(corpus.train);
  store.add_all(corpus.eval_dialogs);  // also rejects ids shared with train
  for (const auto& d : corpus.train) validate_dialog(d);
  for (const auto& d : corpus.eval_dialogs) validate_dialog(d);

  auto check_pairs = [&](const std::vector<DialogPair>& pairs, const char* which) {
    for (const auto& p : pairs) {
      if (p.first_id == p.second_id) {
        throw CorpusError(std::string(which) + " pair references the same dialog \"" +
                          p.first_id + "\" twice");
      }
      if (p.label != 0 && p.label != 1) {
        throw CorpusError(std::string(which) + " pair label must be 0 or 1");
      }
      store.at(p.first_id);
      store.at(p.second_id);
    }
  };
  check_pairs(corpus.dev_pairs, "dev");
  check_pairs(corpus.test_pairs, "test");

  std::unordered_set<std::string> dev_keys;
  auto key = [](const DialogPair& p) {
    return p.first_id < p.second_id ? p.first_id + "\x1f" + p.second_id
                                    : p.second_id + "\x1f" + p.first_id;
  };
  for (const auto& p : corpus.dev_pairs) dev_keys.insert(key(p));
  for (const auto& p : corpus.test_pairs) {
    if (dev_keys.count(key(p))) {
      throw CorpusError("pair (" + p.first_id + ", " + p.second_id +
                        ") appears in both dev and test");
    }
  }
}

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------

namespace {

ordered_json dialog_to_json(const Dialog& d) {
  ordered_json turns = ordered_json::array();
  for (const auto& t : d.turns) {
    turns.push_back(ordered_json{{"role", to_string(t.role)}, {"text", t.text}});
  }
  ordered_json j;
  j["id"] = d.id;
  j["turns"] = std::move(turns);
  if (d.rating) j["rating"] = *d.rating;
  ordered_json meta = ordered_json::object();
  for (const auto& [k, v] : d.meta) meta[k] = v;  // std::map keeps key order stable
  j["meta"] = std::move(meta);
  return j;
}

ordered_json pair_to_json(const DialogPair& p) {
  ordered_json j;
  j["first_id"] = p.first_id;
  j["second_id"] = p.second_id;
  j["label"] = p.label;
  j["source"] = to_string(p.source);
  return j;
}

Dialog dialog_from_json(const json& j) {
  Dialog d;
  d.id = j.at("id").get<std::string>();
  const json& turns = j.at("turns");
  if (!turns.is_array()) throw CorpusError("\"turns\" must be an array");
  for (const auto& tj : turns) {
    Turn t;
    t.role = role_from_string(tj.at("role").get<std::string>());
    t.text = tj.at("text").get<std::string>();
    d.turns.push_back(std::move(t));
  }
  if (j.contains("rating") && !j.at("rating").is_null()) {
    if (!j.at("rating").is_number_integer()) throw CorpusError("\"rating\" must be an integer");
    d.rating = j.at("rating").get<int>();
  }
  if (j.contains("meta") && !j.at("meta").is_null()) {
    for (const auto& [k, v] : j.at("meta").items()) {
      d.meta[k] = v.get<std::string>();
    }
  }
  return d;
}

DialogPair pair_from_json(const json& j) {
  DialogPair p;
  p.first_id = j.at("first_id").get<std::string>();
  p.second_id = j.at("second_id").get<std::string>();
  if (!j.at("label").is_number_integer()) throw CorpusError("\"label\" must be an integer");
  p.label = j.at("label").get<int>();
  p.source = pair_source_from_string(j.at("source").get<std::string>());
  return p;
}

template <class Item, class Parse>
std::vector<Item> read_jsonl(const fs::path& path, Parse&& parse, bool required) {
  std::vector<Item> items;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (required) throw IoError("cannot open " + path.string());
    return items;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      items.push_back(parse(json::parse(line)));
    } catch (const json::exception& e) {
      throw CorpusError(path.filename().string() + ":" + std::to_string(line_no) +
                        ": malformed JSON line: " + e.what());
    } catch (const CorpusError& e) {
      throw CorpusError(path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

template <class Item, class Emit>
void write_jsonl(const fs::path& path, const std::vector<Item>& items, Emit&& emit) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& item : items) {
    out << emit(item).dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

CorpusSplit load_corpus(const fs::path& dir) {
  CorpusSplit corpus;
  corpus.train = read_jsonl<Dialog>(dir / "train.jsonl", dialog_from_json, true);
  if (corpus.train.empty()) throw CorpusError("empty training corpus");
  corpus.eval_dialogs = read_jsonl<Dialog>(dir / "eval_dialogs.jsonl", dialog_from_json, false);
  corpus.dev_pairs = read_jsonl<DialogPair>(dir / "dev_pairs.jsonl", pair_from_json, false);
  corpus.test_pairs = read_jsonl<DialogPair>(dir / "test_pairs.jsonl", pair_from_json, false);
  validate_corpus(corpus);
  return corpus;
}

void save_corpus(const CorpusSplit& corpus, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  write_jsonl(dir / "train.jsonl", corpus.train, dialog_to_json);
  write_jsonl(dir / "eval_dialogs.jsonl", corpus.eval_dialogs, dialog_to_json);
  write_jsonl(dir / "dev_pairs.jsonl", corpus.dev_pairs, pair_to_json);
  write_jsonl(dir / "test_pairs.jsonl", corpus.test_pairs, pair_to_json);
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

constexpr uint64_t kTrainStream = 0x74726169;
constexpr uint64_t kEvalStream = 0x6576616c;
constexpr uint64_t kPerturbStream = 0x70657274;

const char* const kSyllables[] = {"ka", "ro", "mi", "ta", "lu", "ne", "so", "vi",
                                  "da", "pe", "no", "ri", "mu", "te", "la", "ko",
                                  "si", "ba", "fe", "yo", "ha", "zu", "ce", "ma"};
constexpr int kSyllableCount = 24;

std::string pseudo_word(int i) {
  std::string w = kSyllables[i % kSyllableCount];
  w += kSyllables[(i / kSyllableCount) % kSyllableCount];
  if (i >= kSyllableCount * kSyllableCount) {
    w += kSyllables[(i / (kSyllableCount * kSyllableCount)) % kSyllableCount];
  }
  return w;
}

const char* const kSystemBreakdowns[] = {
    "hmm i did not quite get that could you say it once more",
    "sorry i am not sure what you mean can you rephrase that",
    "i think i misheard you please repeat that",
    "sorry i lost track of what we were talking about",
};

const char* const kUserBreakdowns[] = {
    "what",
    "you already said that",
    "that is not what i asked",
    "never mind forget it",
    "i have to go now bye",
};

const char* const kUserEnthusiasm[] = {
    "that sounds great i love it",
    "nice one tell me more",
    "haha that is really fun",
};

const char* const kSystemEnthusiasm[] = {
    "glad you like it",
    "great choice i enjoyed that too",
};

struct Vocabulary {
  std::vector<std::string> words;
  int n_topics = 1;
  int per_topic = 1;

  const std::string& topic_word(int topic, std::size_t k) const {
    return words[static_cast<std::size_t>(topic) * per_topic + k % per_topic];
  }
};

Vocabulary build_vocabulary(const SynthConfig& cfg) {
  Vocabulary v;
  v.n_topics = cfg.n_topics;
  v.per_topic = cfg.vocab_size / cfg.n_topics;
  const int usable = v.per_topic * v.n_topics;
  v.words.reserve(usable);
  for (int i = 0; i < usable; ++i) v.words.push_back(pseudo_word(i));
  return v;
}

template <std::size_t N>
const char* pick(const char* const (&arr)[N], Rng& rng) {
  return arr[rng.index(N)];
}

double sample_quality(const SynthConfig& cfg, Rng& rng) {
  return std::pow(rng.uniform(), cfg.quality_skew);
}

int sample_rating(double q, const SynthConfig& cfg, Rng& rng) {
  double eps = 0.0;
  const double u = rng.uniform();
  // Push probabilities lean toward the user's actual experience: satisfied
  // users round up to 5, unhappy ones slam the floor. tilt=0 makes the
  // pushes quality-blind.
  const double pu = cfg.noise_level * cfg.p_uniform;
  const double pp = cfg.noise_level * cfg.p_positive * std::pow(q, cfg.positive_tilt);
  const double pn = cfg.noise_level * cfg.p_negative * std::pow(1.0 - q, cfg.negative_tilt);
  const double pj = cfg.noise_level * cfg.p_jitter;
  if (u < pu) {
    return 1 + static_cast<int>(rng.index(5));  // rater ignores the dialog
  }
  if (u < pu + pp) {
    eps = rng.exponential(cfg.positive_mean);
  } else if (u < pu + pp + pn) {
    eps = -rng.exponential(cfg.negative_mean);
  } else if (u < pu + pp + pn + pj) {
    eps = rng.normal(0.0, cfg.jitter_sigma);
  }
  const long r = std::lround(1.0 + 4.0 * q + eps);
  return static_cast<int>(std::clamp<long>(r, 1, 5));
}

std::string last_word(const std::string& text) {
  const auto pos = text.find_last_of(' ');
  return pos == std::string::npos ? text : text.substr(pos + 1);
}

Dialog generate_dialog(std::string id, double q, const SynthConfig& cfg, const Vocabulary& vocab,
                       Rng& rng) {
  Dialog d;
  d.id = std::move(id);
  d.meta["q"] = format_double(q);

  int topic = static_cast<int>(rng.index(vocab.n_topics));
  const double p_fail = std::min(0.85, cfg.fail_scale * (1.0 - q));
  const double p_hop = std::min(0.85, cfg.hop_scale * (1.0 - q));
  const double p_enth = std::min(0.85, cfg.enthusiasm_scale * q);
  const double p_echo = std::clamp(cfg.echo_base + cfg.echo_gain * q, 0.0, 1.0);

  for (int t = 0; t < cfg.turns_per_dialog; ++t) {
    Turn turn;
    turn.role = (t % 2 == 0) ? Role::System : Role::User;
    std::string text;
    // Coherent speakers pick up the last thing said before adding their own.
    if (t > 0 && rng.bernoulli(p_echo)) {
      text = last_word(d.turns.back().text);
    }
    auto append = [&text](const std::string& w) {
      if (!text.empty()) text += ' ';
      text += w;
    };
    if (rng.bernoulli(p_fail)) {
      append(turn.role == Role::System ? pick(kSystemBreakdowns, rng)
                                       : pick(kUserBreakdowns, rng));
    } else {
      if (t > 0 && rng.bernoulli(p_hop)) {
        topic = static_cast<int>(rng.index(vocab.n_topics));
      }
      const std::size_t n_words = 2 + rng.index(4);
      for (std::size_t w = 0; w < n_words; ++w) {
        append(vocab.topic_word(topic, rng.index(vocab.per_topic)));
      }
      if (rng.bernoulli(p_enth)) {
        append(turn.role == Role::System ? pick(kSystemEnthusiasm, rng)
                                         : pick(kUserEnthusiasm, rng));
      }
    }
    turn.text = std::move(text);
    d.turns.push_back(std::move(turn));
  }
  return d;
}

}  // namespace

void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.n_train < 2) throw ConfigError("n_train must be at least 2");
  if (cfg.n_dev_pairs < 0 || cfg.n_test_pairs < 0) throw ConfigError("pair counts must be >= 0");
  if (cfg.turns_per_dialog < 2) throw ConfigError("turns_per_dialog must be at least 2");
  if (cfg.n_topics < 1 || cfg.vocab_size < cfg.n_topics) {
    throw ConfigError("vocab_size must cover at least one word per topic");
  }
  auto frac = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!frac(cfg.noise_level) || !frac(cfg.p_positive) || !frac(cfg.p_negative) ||
      !frac(cfg.p_jitter) || !frac(cfg.p_uniform)) {
    throw ConfigError("invalid noise mixture fractions");
  }
  if (cfg.positive_tilt < 0.0 || cfg.negative_tilt < 0.0) {
    throw ConfigError("push tilts must be >= 0");
  }
  // The tilted branch probabilities must form a sub-distribution at every
  // quality level; checked on a fine grid since the supremum has no closed
  // form for arbitrary tilts.
  for (int i = 0; i <= 1000; ++i) {
    const double q = static_cast<double>(i) / 1000.0;
    const double total = cfg.p_uniform + cfg.p_positive * std::pow(q, cfg.positive_tilt) +
                         cfg.p_negative * std::pow(1.0 - q, cfg.negative_tilt) + cfg.p_jitter;
    if (total > 1.0 + 1e-9) {
      throw ConfigError("noise mixture exceeds probability 1 at quality " + format_double(q));
    }
  }
  if (cfg.pair_margin < 0.0 || cfg.pair_margin >= 1.0) {
    throw ConfigError("pair_margin must be in [0, 1)");
  }
  // quality = u^skew needs skew > 0; skew = 0 collapses every dialog onto
  // q = 1 and the pair-margin rejection loop would never terminate.
  if (cfg.quality_skew <= 0.0) throw ConfigError("quality_skew must be positive");
  if (cfg.fail_scale < 0.0 || cfg.hop_scale < 0.0 || cfg.enthusiasm_scale < 0.0) {
    throw ConfigError("text shape scales must be >= 0");
  }
  if (cfg.positive_mean <= 0.0 || cfg.negative_mean <= 0.0 || cfg.jitter_sigma < 0.0) {
    throw ConfigError("noise scales must be positive");
  }
  if (cfg.echo_base < 0.0 || cfg.echo_base > 1.0) {
    throw ConfigError("echo_base must be in [0, 1]");
  }
}

namespace {

std::string padded_id(const char* prefix, int i, const char* suffix = "") {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%06d%s", prefix, i, suffix);
  return buf;
}

}  // namespace

CorpusSplit synthesize(const SynthConfig& cfg, uint64_t seed) {
  validate_synth_config(cfg);
  const Vocabulary vocab = build_vocabulary(cfg);

  CorpusSplit corpus;
  corpus.train.reserve(cfg.n_train);
  for (int i = 0; i < cfg.n_train; ++i) {
    Rng rng(mix_seed(seed, kTrainStream + static_cast<uint64_t>(i)));
    const double q = sample_quality(cfg, rng);
    Dialog d = generate_dialog(padded_id("tr", i), q, cfg, vocab, rng);
    d.rating = sample_rating(q, cfg, rng);
    corpus.train.push_back(std::move(d));
  }

  const int n_pairs = cfg.n_dev_pairs + cfg.n_test_pairs;
  corpus.eval_dialogs.reserve(2 * n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    Rng rng(mix_seed(seed, kEvalStream + static_cast<uint64_t>(i)));
    const double qa = sample_quality(cfg, rng);
    double qb = sample_quality(cfg, rng);
    while (std::abs(qa - qb) < cfg.pair_margin) qb = sample_quality(cfg, rng);

    Dialog a = generate_dialog(padded_id("ev", i, "a"), qa, cfg, vocab, rng);
    a.rating = sample_rating(qa, cfg, rng);
    Dialog b = generate_dialog(padded_id("ev", i, "b"), qb, cfg, vocab, rng);
    b.rating = sample_rating(qb, cfg, rng);

    DialogPair pair;
    pair.first_id = a.id;
    pair.second_id = b.id;
    pair.label = qa > qb ? 1 : 0;  // ground truth from the latent quality
    pair.source = PairSource::Expert;
    corpus.eval_dialogs.push_back(std::move(a));
    corpus.eval_dialogs.push_back(std::move(b));
    (i < cfg.n_dev_pairs ? corpus.dev_pairs : corpus.test_pairs).push_back(std::move(pair));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Dialog-flow perturbation
// ---------------------------------------------------------------------------

Dialog perturb(const Dialog& dialog, const std::vector<Dialog>& pool, Role role, uint64_t seed) {
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < dialog.turns.size(); ++i) {
    if (dialog.turns[i].role == role) targets.push_back(i);
  }
  if (targets.empty()) {
    throw CorpusError("dialog \"" + dialog.id + "\" has no " + to_string(role) +
                      " turn to perturb");
  }
  Rng rng(mix_seed(seed, kPerturbStream));
  const std::size_t target = targets[rng.index(targets.size())];
  const std::string& original = dialog.turns[target].text;

  std::vector<const std::string*> donors;
  for (const auto& other : pool) {
    if (other.id == dialog.id) continue;
    for (const auto& t : other.turns) {
      if (t.role == role && t.text != original) donors.push_back(&t.text);
    }
  }
  if (donors.empty()) {
    throw CorpusError("no replacement " + to_string(role) + " utterance available for dialog \"" +
                      dialog.id + "\"");
  }
  Dialog fake = dialog;
  fake.turns[target].text = *donors[rng.index(donors.size())];
  fake.rating.reset();
  return fake;
}

Stage1Pairs make_stage1_pairs(const std::vector<Dialog>& train, uint64_t seed) {
  if (train.size() < 2) {
    throw CorpusError("stage 1 needs at least 2 dialogs for cross-dialog replacement");
  }
  Stage1Pairs out;
  out.pairs.reserve(2 * train.size());
  out.fakes.reserve(2 * train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Dialog& real = train[i];
    Dialog fake_user = perturb(real, train, Role::User, mix_seed(seed, 2 * i));
    fake_user.id = real.id + "~fakeU";
    Dialog fake_system = perturb(real, train, Role::System, mix_seed(seed, 2 * i + 1));
    fake_system.id = real.id + "~fakeS";
    out.pairs.push_back({real.id, fake_user.id, 1, PairSource::Perturbation});
    out.pairs.push_back({real.id, fake_system.id, 1, PairSource::Perturbation});
    out.fakes.push_back(std::move(fake_user));
    out.fakes.push_back(std::move(fake_system));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Comparison-pair sampling
// ---------------------------------------------------------------------------

std::vector<DialogPair> sample_comparison_pairs(const std::vector<std::string>& ids,
                                                const std::vector<double>& values,
                                                std::size_t n_pairs, uint64_t seed,
                                                PairSource source) {
  if (ids.size() != values.size()) throw Error("ids/values length mismatch");
  if (ids.size() < 2) throw CorpusError("need at least 2 rated dialogs to form pairs");
  const std::size_t n = ids.size();
  const unsigned long long total = static_cast<unsigned long long>(n) * (n - 1) / 2;

  // Ties per value group.
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  unsigned long long tied = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const unsigned long long m = j - i;
    tied += m * (m - 1) / 2;
    i = j;
  }
  const unsigned long long non_tied = total - tied;

  auto oriented = [&](std::size_t i, std::size_t j) {
    DialogPair p;
    const bool first_higher = values[i] > values[j];
    p.first_id = first_higher ? ids[i] : ids[j];
    p.second_id = first_higher ? ids[j] : ids[i];
    p.label = 1;
    p.source = source;
    return p;
  };

  std::vector<DialogPair> out;
  if (non_tied == 0) {
    std::cerr << "warning: all comparison values tied, no pairs emitted\n";
    return out;
  }
  if (n_pairs >= non_tied) {
    if (n_pairs > non_tied) {
      std::cerr << "warning: only " << non_tied << " non-tied pairs available (requested "
                << n_pairs << ")\n";
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (values[i] != values[j]) out.push_back(oriented(i, j));
      }
    }
    return out;
  }

  Rng rng(mix_seed(seed, 0x70616972));
  if (3 * n_pairs >= total) {
    // Dense request: enumerate and shuffle.
    std::vector<std::pair<uint32_t, uint32_t>> all;
    all.reserve(non_tied);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (values[i] != values[j]) all.emplace_back(i, j);
      }
    }
    rng.shuffle(all);
    all.resize(n_pairs);
    out.reserve(n_pairs);
    for (auto [i, j] : all) out.push_back(oriented(i, j));
    return out;
  }

  std::unordered_set<uint64_t> seen;
  out.reserve(n_pairs);
  while (out.size() < n_pairs) {
    std::size_t i = rng.index(n);
    std::size_t j = rng.index(n - 1);
    if (j >= i) ++j;
    if (i > j) std::swap(i, j);
    if (values[i] == values[j]) continue;
    const uint64_t key = static_cast<uint64_t>(i) * n + j;
    if (!seen.insert(key).second) continue;
    out.push_back(oriented(i, j));
  }
  return out;
}

std::vector<DialogPair> make_rating_pairs(const std::vector<Dialog>& dialogs, std::size_t n_pairs,
                                          uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<double> ratings;
  ids.reserve(dialogs.size());
  ratings.reserve(dialogs.size());
  for (const auto& d : dialogs) {
    if (!d.rating) throw CorpusError("dialog \"" + d.id + "\" has no rating");
    ids.push_back(d.id);
    ratings.push_back(static_cast<double>(*d.rating));
  }
  return sample_comparison_pairs(ids, ratings, n_pairs, seed, PairSource::RawDerived);
}

}  // namespace rankdenoise
