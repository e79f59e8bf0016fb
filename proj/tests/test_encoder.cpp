#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "rankdenoise/encoder.hpp"
#include "rankdenoise/errors.hpp"
#include "rankdenoise/hash.hpp"

using namespace rankdenoise;
using oracles::make_dialog;
namespace fs = std::filesystem;

namespace {

EncoderConfig small_config() {
  EncoderConfig config;
  config.hash_dim = 64;
  config.hidden_dim = 8;
  config.feature_dim = 4;
  return config;
}

// Straight-line reimplementation of the hashed n-gram features for tiny
// inputs: role-tagged lowercased tokens, n-grams joined with 0x1e, FNV-1a,
// low bit as sign, remaining bits as bucket, then L2 normalization.
std::map<uint32_t, double> reference_features(const Dialog& dialog, const EncoderConfig& config) {
  std::vector<std::string> tokens;
  for (const auto& turn : dialog.turns) {
    std::string word;
    auto flush = [&] {
      if (!word.empty()) {
        tokens.push_back(to_string(turn.role) + ":" + word);
        word.clear();
      }
    };
    for (char c : turn.text) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        flush();
      } else {
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
    }
    flush();
  }
  std::map<uint32_t, double> acc;
  for (int order : config.ngram_orders) {
    const auto n = static_cast<std::size_t>(order);
    for (std::size_t s = 0; s + n <= tokens.size(); ++s) {
      std::string gram;
      for (std::size_t i = 0; i < n; ++i) {
        if (i) gram += '\x1e';
        gram += tokens[s + i];
      }
      const uint64_t h = fnv1a64(gram);
      acc[static_cast<uint32_t>((h >> 1) % static_cast<uint64_t>(config.hash_dim))] +=
          (h & 1u) ? 1.0 : -1.0;
    }
  }
  for (auto it = acc.begin(); it != acc.end();) {
    it = (it->second == 0.0) ? acc.erase(it) : std::next(it);
  }
  double norm = 0.0;
  for (const auto& [_, v] : acc) norm += v * v;
  if (norm > 0.0) {
    for (auto& [_, v] : acc) v /= std::sqrt(norm);
  }
  return acc;
}

}  // namespace

TEST_CASE("validate_config rejects degenerate settings") {
  CHECK_NOTHROW(validate_config(EncoderConfig{}));
  auto reject = [](auto mutate) {
    EncoderConfig config;
    mutate(config);
    CHECK_THROWS_AS(validate_config(config), ConfigError);
  };
  reject([](EncoderConfig& c) { c.hash_dim = 0; });
  reject([](EncoderConfig& c) { c.hidden_dim = 0; });
  reject([](EncoderConfig& c) { c.feature_dim = -1; });
  reject([](EncoderConfig& c) { c.ngram_orders = {}; });
  reject([](EncoderConfig& c) { c.ngram_orders = {0}; });
  reject([](EncoderConfig& c) { c.ngram_orders = {2, 2}; });
  reject([](EncoderConfig& c) { c.ngram_orders = {2, 1}; });
}

TEST_CASE("EncoderConfig equality covers every field") {
  const EncoderConfig base;
  CHECK(base == EncoderConfig{});
  EncoderConfig other = base;
  other.hash_dim += 1;
  CHECK_FALSE(base == other);
  other = base;
  other.ngram_orders = {1};
  CHECK_FALSE(base == other);
  other = base;
  other.init_seed += 1;
  CHECK_FALSE(base == other);
}

TEST_CASE("ParamLayout packs every parameter exactly once") {
  EncoderConfig config;
  config.hash_dim = 3;
  config.hidden_dim = 2;
  config.feature_dim = 2;
  const ParamLayout layout(config);
  CHECK(layout.total() == 3 * 2 + 2 + 2 * 2 + 2 + 2 + 1);

  std::set<std::size_t> seen;
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 3; ++i) seen.insert(layout.w1(h, i));
  for (std::size_t h = 0; h < 2; ++h) seen.insert(layout.b1(h));
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t h = 0; h < 2; ++h) seen.insert(layout.w2(f, h));
  for (std::size_t f = 0; f < 2; ++f) seen.insert(layout.b2(f));
  for (std::size_t f = 0; f < 2; ++f) seen.insert(layout.head(f));
  seen.insert(layout.head_bias());
  CHECK(seen.size() == layout.total());
  CHECK(*seen.rbegin() == layout.total() - 1);

  // Bucket-major first layer: consecutive hidden units of one hash bucket
  // are adjacent in memory.
  CHECK(layout.w1(0, 1) == layout.w1(1, 1) - 1 + 0);  // same bucket, next unit
  CHECK(layout.w1(0, 1) - layout.w1(0, 0) == config.hidden_dim);
}

TEST_CASE("init_state draws Glorot weights and zero biases") {
  const EncoderConfig config = small_config();
  const ModelState state = init_state(config);
  const ParamLayout layout(config);

  CHECK(state.config == config);
  CHECK(state.params.size() == layout.total());
  CHECK(state.m.empty());
  CHECK(state.v.empty());
  CHECK(state.step == 0);

  const double bound1 = std::sqrt(6.0 / (config.hash_dim + config.hidden_dim));
  const double bound2 = std::sqrt(6.0 / (config.hidden_dim + config.feature_dim));
  const double boundh = std::sqrt(6.0 / (config.feature_dim + 1));
  double max_w1 = 0.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(config.hash_dim); ++i) {
    for (std::size_t h = 0; h < static_cast<std::size_t>(config.hidden_dim); ++h) {
      const double w = state.params[layout.w1(h, i)];
      CHECK(std::abs(w) <= bound1);
      max_w1 = std::max(max_w1, std::abs(w));
    }
  }
  CHECK(max_w1 > 0.0);
  for (std::size_t h = 0; h < static_cast<std::size_t>(config.hidden_dim); ++h) {
    CHECK(state.params[layout.b1(h)] == 0.0);
  }
  for (std::size_t f = 0; f < static_cast<std::size_t>(config.feature_dim); ++f) {
    for (std::size_t h = 0; h < static_cast<std::size_t>(config.hidden_dim); ++h) {
      CHECK(std::abs(state.params[layout.w2(f, h)]) <= bound2);
    }
    CHECK(state.params[layout.b2(f)] == 0.0);
    CHECK(std::abs(state.params[layout.head(f)]) <= boundh);
  }
  CHECK(state.params[layout.head_bias()] == 0.0);

  // Seeded: identical seeds agree, different seeds do not.
  CHECK(init_state(config).params == state.params);
  EncoderConfig other = config;
  other.init_seed = 2;
  CHECK(init_state(other).params != state.params);
}

TEST_CASE("featurize_raw matches an independent reimplementation") {
  const EncoderConfig config = small_config();
  const Dialog dialog =
      make_dialog("d", {"Alpha beta gamma", "delta ALPHA", "beta beta epsilon"});
  const SparseVector x = featurize_raw(dialog, config);

  const auto expected = reference_features(dialog, config);
  REQUIRE(x.nnz() == expected.size());
  std::size_t i = 0;
  for (const auto& [bucket, value] : expected) {
    CHECK(x.idx[i] == bucket);
    CHECK(x.val[i] == doctest::Approx(value).epsilon(1e-12));
    ++i;
  }
}

TEST_CASE("featurize_raw output is sorted, unit-norm and deterministic") {
  const EncoderConfig config;  // production dims
  const Dialog dialog = make_dialog(
      "d", {"the quick brown fox", "jumps over the lazy dog", "again and again", "yes indeed"});
  const SparseVector x = featurize_raw(dialog, config);
  REQUIRE(x.nnz() > 0);
  REQUIRE(x.idx.size() == x.val.size());
  for (std::size_t i = 1; i < x.idx.size(); ++i) CHECK(x.idx[i] > x.idx[i - 1]);
  for (uint32_t idx : x.idx) CHECK(idx < static_cast<uint32_t>(config.hash_dim));
  double norm = 0.0;
  for (double v : x.val) norm += v * v;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));

  const SparseVector y = featurize_raw(dialog, config);
  CHECK(x.idx == y.idx);
  CHECK(x.val == y.val);
}

TEST_CASE("featurize_raw lowercases words but distinguishes roles") {
  const EncoderConfig config;
  const SparseVector upper = featurize_raw(make_dialog("a", {"Hello World", "FINE day"}), config);
  const SparseVector lower = featurize_raw(make_dialog("b", {"hello world", "fine day"}), config);
  CHECK(upper.idx == lower.idx);
  CHECK(upper.val == lower.val);

  // Same words, shifted one turn: role tags change every token.
  Dialog shifted = make_dialog("c", {"placeholder", "hello world", "fine day"});
  shifted.turns.erase(shifted.turns.begin());
  shifted.turns[0].role = Role::User;
  shifted.turns[1].role = Role::System;
  const SparseVector swapped = featurize_raw(shifted, config);
  CHECK(upper.idx != swapped.idx);
}

TEST_CASE("bigrams cross turn boundaries") {
  EncoderConfig config;
  config.ngram_orders = {2};  // bigrams only
  // One single-word turn: no bigram can form inside a turn.
  CHECK(featurize_raw(make_dialog("a", {"x"}), config).nnz() == 0);
  // Two single-word turns: exactly one bigram, spanning the boundary.
  CHECK(featurize_raw(make_dialog("b", {"x", "y"}), config).nnz() == 1);
}

TEST_CASE("featurize_raw on empty text yields the zero vector") {
  EncoderConfig config;
  Dialog d;
  d.id = "w";
  d.turns.push_back({Role::System, "   "});  // whitespace only
  const SparseVector x = featurize_raw(d, config);
  CHECK(x.nnz() == 0);
}

TEST_CASE("forward_raw computes relu(W1 x + b1) through the head by hand") {
  EncoderConfig config;
  config.hash_dim = 2;
  config.hidden_dim = 2;
  config.feature_dim = 1;
  ModelState state = init_state(config);
  const ParamLayout layout(config);
  // W1 = [[1, -1], [2, 0.5]] (unit h, bucket i), b1 = (0.25, -2)
  state.params[layout.w1(0, 0)] = 1.0;
  state.params[layout.w1(0, 1)] = -1.0;
  state.params[layout.w1(1, 0)] = 2.0;
  state.params[layout.w1(1, 1)] = 0.5;
  state.params[layout.b1(0)] = 0.25;
  state.params[layout.b1(1)] = -2.0;
  // W2 = [3, -1], b2 = 0.5; head = 2, head bias = -1.
  state.params[layout.w2(0, 0)] = 3.0;
  state.params[layout.w2(0, 1)] = -1.0;
  state.params[layout.b2(0)] = 0.5;
  state.params[layout.head(0)] = 2.0;
  state.params[layout.head_bias()] = -1.0;

  SparseVector x;
  x.idx = {0, 1};
  x.val = {0.5, 1.0};
  const Activations act = forward_raw(x, state);
  // h_pre = (1*0.5 - 1*1 + 0.25, 2*0.5 + 0.5*1 - 2) = (-0.25, -0.5)
  CHECK(act.h_pre[0] == doctest::Approx(-0.25));
  CHECK(act.h_pre[1] == doctest::Approx(-0.5));
  CHECK(act.h[0] == 0.0);  // relu clips both
  CHECK(act.h[1] == 0.0);
  CHECK(act.phi[0] == doctest::Approx(0.5));  // only the bias survives
  CHECK(act.score == doctest::Approx(2.0 * 0.5 - 1.0));

  // Flip the signs so the relu passes values through.
  SparseVector y;
  y.idx = {0};
  y.val = {1.0};
  const Activations act2 = forward_raw(y, state);
  // h_pre = (1 + 0.25, 2 - 2) = (1.25, 0); h = (1.25, 0)
  CHECK(act2.h_pre[0] == doctest::Approx(1.25));
  CHECK(act2.h[0] == doctest::Approx(1.25));
  CHECK(act2.h[1] == 0.0);
  // phi = 3*1.25 - 1*0 + 0.5 = 4.25; score = 2*4.25 - 1 = 7.5
  CHECK(act2.phi[0] == doctest::Approx(4.25));
  CHECK(act2.score == doctest::Approx(7.5));
}

TEST_CASE("forward_raw rejects a state whose buffers do not match its config") {
  ModelState state = init_state(small_config());
  state.params.pop_back();
  SparseVector x;
  CHECK_THROWS_AS(forward_raw(x, state), CheckpointError);
}

TEST_CASE("encode and score agree with forward_raw") {
  const EncoderConfig config = small_config();
  const ModelState state = oracles::random_state(config, 5);
  const Dialog dialog = make_dialog("d", {"some words here", "and some more", "final turn"});

  const Activations act = forward_raw(featurize_raw(dialog, config), state);
  const std::vector<double> phi = encode(dialog, state);
  REQUIRE(phi.size() == static_cast<std::size_t>(config.feature_dim));
  for (std::size_t f = 0; f < phi.size(); ++f) CHECK(phi[f] == act.phi[f]);
  CHECK(score(dialog, state) == act.score);
}

TEST_CASE("accumulate_score_grad matches finite differences of the score") {
  const EncoderConfig config = small_config();
  ModelState state = oracles::random_state(config, 11, 0.5);
  const Dialog dialog = make_dialog("d", {"gradient check words", "more tokens here", "tail"});
  const SparseVector x = featurize_raw(dialog, config);
  REQUIRE(x.nnz() > 0);

  const ParamLayout layout(config);
  const Activations act = forward_raw(x, state);
  std::vector<double> grad(layout.total(), 0.0);
  accumulate_score_grad(x, act, state, 1.0, grad);

  // Probe a spread of coordinates from every parameter block.
  std::vector<std::size_t> coords = {layout.w1(0, static_cast<std::size_t>(x.idx[0])),
                                     layout.w1(3, static_cast<std::size_t>(x.idx[0])),
                                     layout.b1(0),
                                     layout.b1(5),
                                     layout.w2(1, 2),
                                     layout.b2(2),
                                     layout.head(0),
                                     layout.head(3),
                                     layout.head_bias()};
  const double h = 1e-6;
  for (std::size_t coord : coords) {
    ModelState probe = state;
    probe.params[coord] += h;
    const double up = forward_raw(x, probe).score;
    probe.params[coord] -= 2 * h;
    const double down = forward_raw(x, probe).score;
    const double fd = (up - down) / (2 * h);
    CHECK(grad[coord] == doctest::Approx(fd).epsilon(1e-5));
  }

  // coeff scales linearly and calls accumulate.
  std::vector<double> grad2(layout.total(), 0.0);
  accumulate_score_grad(x, act, state, -2.5, grad2);
  accumulate_score_grad(x, act, state, 0.5, grad2);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    CHECK(grad2[i] == doctest::Approx(-2.0 * grad[i]).epsilon(1e-12));
  }

  std::vector<double> wrong(layout.total() - 1, 0.0);
  CHECK_THROWS_AS(accumulate_score_grad(x, act, state, 1.0, wrong), Error);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  const fs::path dir = fs::temp_directory_path() / "rankdenoise_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path path = dir / "model.ckpt";

  ModelState state = oracles::random_state(small_config(), 21);
  SUBCASE("fresh state without moments") {}
  SUBCASE("trained state with moments") {
    state.m.assign(state.params.size(), 0.125);
    state.v.assign(state.params.size(), 0.25);
    state.m[3] = -1.5;
    state.v[7] = 9.75;
    state.step = 1234567;
  }

  save_checkpoint(state, path);
  CHECK(fs::exists(path));
  // The atomic-rename strategy must not leave temp files behind.
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    (void)e;
    ++files;
  }
  CHECK(files == 1);

  const ModelState loaded = load_checkpoint(path);
  CHECK(loaded.config == state.config);
  CHECK(loaded.params == state.params);
  CHECK(loaded.m == state.m);
  CHECK(loaded.v == state.v);
  CHECK(loaded.step == state.step);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loading rejects damaged files") {
  const fs::path dir = fs::temp_directory_path() / "rankdenoise_test_ckpt_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path path = dir / "model.ckpt";
  const ModelState state = oracles::random_state(small_config(), 31);

  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(path), CheckpointError); }
  SUBCASE("wrong magic") {
    std::ofstream(path, std::ios::binary) << "definitely not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  SUBCASE("truncated payload") {
    save_checkpoint(state, path);
    const auto size = fs::file_size(path);
    fs::resize_file(path, size / 2);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  SUBCASE("trailing garbage") {
    save_checkpoint(state, path);
    std::ofstream(path, std::ios::binary | std::ios::app) << "extra";
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  SUBCASE("non-finite parameter") {
    ModelState poisoned = state;
    poisoned.params[5] = std::numeric_limits<double>::quiet_NaN();
    save_checkpoint(poisoned, path);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  SUBCASE("inconsistent state refuses to save") {
    ModelState broken = state;
    broken.m.assign(3, 0.0);  // moment size mismatch
    CHECK_THROWS_AS(save_checkpoint(broken, path), CheckpointError);
  }
  fs::remove_all(dir);
}
