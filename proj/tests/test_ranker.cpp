#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rankdenoise/errors.hpp"
#include "rankdenoise/ranker.hpp"
#include "rankdenoise/rng.hpp"

using namespace rankdenoise;
using oracles::make_dialog;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig config;
  config.hash_dim = 32;
  config.hidden_dim = 6;
  config.feature_dim = 3;
  return config;
}

// Random sparse vectors standing in for featurized dialogs.
std::vector<SparseVector> random_batch(Rng& rng, std::size_t n, int hash_dim) {
  std::vector<SparseVector> batch(n);
  for (auto& x : batch) {
    const std::size_t nnz = 1 + rng.index(6);
    std::set<uint32_t> idx;
    while (idx.size() < nnz) idx.insert(static_cast<uint32_t>(rng.index(hash_dim)));
    for (uint32_t i : idx) {
      x.idx.push_back(i);
      x.val.push_back(rng.uniform(-1.0, 1.0));
    }
  }
  return batch;
}

std::vector<const SparseVector*> views(const std::vector<SparseVector>& batch) {
  std::vector<const SparseVector*> out;
  for (const auto& x : batch) out.push_back(&x);
  return out;
}

}  // namespace

TEST_CASE("posterior is a logistic with exact float antisymmetry") {
  CHECK(posterior(0.0, 0.0) == 0.5);
  CHECK(posterior(1.0, 0.0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  CHECK(posterior(0.0, 1.0) == doctest::Approx(1.0 - 0.7310585786300049).epsilon(1e-15));

  Rng rng(4);
  for (int t = 0; t < 2000; ++t) {
    const double a = rng.uniform(-40.0, 40.0);
    const double b = rng.uniform(-40.0, 40.0);
    // Bitwise identity, not approximate: P(a,b) + P(b,a) == 1.
    CHECK(posterior(a, b) + posterior(b, a) == 1.0);
  }
  // Extreme gaps saturate without overflow: the losing side keeps a
  // denormal-range remnant instead of collapsing to an infinity or NaN.
  CHECK(posterior(700.0, 0.0) == 1.0);
  CHECK(posterior(0.0, 700.0) > 0.0);
  CHECK(posterior(0.0, 700.0) < 1e-300);
  CHECK(std::isfinite(posterior(-700.0, 700.0)));
}

TEST_CASE("pair_loss is the softplus cross entropy") {
  // Equal scores: both labels cost exactly ln 2.
  CHECK(pair_loss(0.0, 0.0, 1) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(pair_loss(3.5, 3.5, 0) == doctest::Approx(0.6931471805599453).epsilon(1e-15));

  // softplus(-1) for a unit gap in the favored direction.
  CHECK(pair_loss(1.0, 0.0, 1) == doctest::Approx(0.31326168751822286).epsilon(1e-14));

  // Identity with -log of the posterior where the naive form is stable.
  Rng rng(9);
  for (int t = 0; t < 500; ++t) {
    const double a = rng.uniform(-20.0, 20.0);
    const double b = rng.uniform(-20.0, 20.0);
    CHECK(pair_loss(a, b, 1) == doctest::Approx(-std::log(posterior(a, b))).epsilon(1e-10));
    CHECK(pair_loss(a, b, 0) == doctest::Approx(-std::log(posterior(b, a))).epsilon(1e-10));
    // Relabeling symmetry: loss(a, b, z) == loss(b, a, 1-z).
    CHECK(pair_loss(a, b, 1) == pair_loss(b, a, 0));
  }

  // Stable at gaps that overflow exp().
  CHECK(std::isfinite(pair_loss(-700.0, 700.0, 1)));
  CHECK(pair_loss(-700.0, 700.0, 1) == doctest::Approx(1400.0).epsilon(1e-12));
  CHECK(pair_loss(700.0, -700.0, 1) == 0.0);
}

TEST_CASE("lambda_weights reproduces a frozen hand-computed example") {
  // Scores (0.5, -0.5, 1.0), pairs (0 beats 1) and (2 beats 0):
  // lambda_0 = -sigmoid(-1) + sigmoid(-0.5) * ... worked out offline to:
  const std::vector<double> scores = {0.5, -0.5, 1.0};
  const std::vector<IndexPair> pairs = {{0, 1}, {2, 0}};
  const auto lambda = lambda_weights(scores, pairs);
  REQUIRE(lambda.size() == 3);
  CHECK(lambda[0] == doctest::Approx(0.1085992474281503).epsilon(1e-13));
  CHECK(lambda[1] == doctest::Approx(0.2689414213699951).epsilon(1e-13));
  CHECK(lambda[2] == doctest::Approx(-0.3775406687981454).epsilon(1e-13));

  // Independent derivation: lambda_i = sum over pairs of d pair_loss / d o_i,
  // with d/do_i = -sigmoid(o_j - o_i) for the winner and the negation for
  // the loser.
  std::vector<double> expect(scores.size(), 0.0);
  for (const auto& p : pairs) {
    const double sig = 1.0 / (1.0 + std::exp(scores[p.i] - scores[p.j]));
    expect[p.i] -= sig;
    expect[p.j] += sig;
  }
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(lambda[i] == doctest::Approx(expect[i]).epsilon(1e-13));
  }

  // Finite-difference check against the summed pair loss.
  const double h = 1e-7;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto loss_at = [&](double delta) {
      std::vector<double> s = scores;
      s[i] += delta;
      double total = 0.0;
      for (const auto& p : pairs) total += pair_loss(s[p.i], s[p.j], 1);
      return total;
    };
    CHECK(lambda[i] == doctest::Approx((loss_at(h) - loss_at(-h)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("lambda_weights validates its inputs") {
  CHECK_THROWS_AS(lambda_weights({1.0, 2.0}, {{0, 2}}), Error);  // index out of range
  CHECK(lambda_weights({1.0, 2.0}, {}).size() == 2);             // no pairs: all zeros
  for (double v : lambda_weights({1.0, 2.0}, {})) CHECK(v == 0.0);
}

TEST_CASE("batch_gradient equals per-pair backprop on random instances") {
  Rng rng(77);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 3 + rng.index(6);
    const auto batch = random_batch(rng, n, tiny_encoder().hash_dim);
    const auto ptrs = views(batch);
    std::vector<IndexPair> pairs;
    const std::size_t n_pairs = 1 + rng.index(8);
    for (std::size_t p = 0; p < n_pairs; ++p) {
      const std::size_t i = rng.index(n);
      std::size_t j = rng.index(n);
      while (j == i) j = rng.index(n);
      pairs.push_back({i, j});
    }
    const ModelState state = oracles::random_state(tiny_encoder(), 1000 + t, 0.6);

    const BatchGradient got = batch_gradient(ptrs, pairs, state);
    const auto want_grad = oracles::naive_pair_gradient(ptrs, pairs, state);
    const double want_loss = oracles::naive_pair_loss_sum(ptrs, pairs, state);

    CHECK(got.n_pairs == pairs.size());
    CHECK(oracles::rel_err(got.loss, want_loss) < 1e-10);
    CHECK(oracles::grad_rel_err(got.grad, want_grad) < 1e-10);
  }
}

TEST_CASE("duplicate pairs double the gradient exactly") {
  Rng rng(5);
  const auto batch = random_batch(rng, 4, tiny_encoder().hash_dim);
  const auto ptrs = views(batch);
  const std::vector<IndexPair> once = {{0, 1}, {2, 3}, {1, 3}};
  std::vector<IndexPair> twice = once;
  twice.insert(twice.end(), once.begin(), once.end());
  const ModelState state = oracles::random_state(tiny_encoder(), 3, 0.4);

  const BatchGradient a = batch_gradient(ptrs, once, state);
  const BatchGradient b = batch_gradient(ptrs, twice, state);
  CHECK(b.loss == doctest::Approx(2.0 * a.loss).epsilon(1e-14));
  REQUIRE(a.grad.size() == b.grad.size());
  for (std::size_t i = 0; i < a.grad.size(); ++i) {
    // Folded multiplicities make this exact, not approximate.
    CHECK(b.grad[i] == 2.0 * a.grad[i]);
  }
  CHECK(b.n_pairs == 6);
}

TEST_CASE("batch_gradient cost scales with dialogs, not pairs") {
  Rng rng(15);
  const auto batch = random_batch(rng, 5, tiny_encoder().hash_dim);
  const auto ptrs = views(batch);
  const ModelState state = oracles::random_state(tiny_encoder(), 8);

  // 8 pairs (with repeats): still exactly one forward and one backward pass
  // per batch dialog, never two per pair.
  const std::vector<IndexPair> many = {{0, 1}, {1, 2}, {2, 0}, {0, 1}, {1, 0}, {2, 1}, {0, 2}, {1, 2}};
  const BatchGradient g = batch_gradient(ptrs, many, state);
  CHECK(g.forward_passes == batch.size());
  CHECK(g.backward_passes == batch.size());
  CHECK(g.n_pairs == 8);

  const BatchGradient g1 = batch_gradient(ptrs, {{0, 1}}, state);
  CHECK(g1.forward_passes == batch.size());
  CHECK(g1.backward_passes == batch.size());
}

TEST_CASE("pair_accuracy counts wins and half-credits ties") {
  EncoderConfig config = tiny_encoder();
  ModelState state = init_state(config);
  std::fill(state.params.begin(), state.params.end(), 0.0);  // every score is 0
  Rng rng(21);
  const auto batch = random_batch(rng, 3, config.hash_dim);
  const auto ptrs = views(batch);
  const std::vector<IndexPair> pairs = {{0, 1}, {1, 2}};
  const BatchGradient g = batch_gradient(ptrs, pairs, state);
  CHECK(g.pair_accuracy == 0.5);  // all ties
  CHECK(g.loss == doctest::Approx(2.0 * 0.6931471805599453).epsilon(1e-14));
}

TEST_CASE("dialog-level batch_gradient matches the featurized overload") {
  const EncoderConfig config = tiny_encoder();
  const ModelState state = oracles::random_state(config, 2, 0.5);
  const std::vector<Dialog> dialogs = {
      make_dialog("a", {"alpha beta", "gamma delta"}),
      make_dialog("b", {"epsilon zeta", "eta theta"}),
      make_dialog("c", {"iota kappa", "lambda mu"}),
  };
  std::vector<SparseVector> feats;
  for (const auto& d : dialogs) feats.push_back(featurize_raw(d, config));
  const std::vector<IndexPair> pairs = {{0, 1}, {2, 1}};
  const BatchGradient a = batch_gradient(dialogs, pairs, state);
  const BatchGradient b = batch_gradient(views(feats), pairs, state);
  CHECK(a.loss == b.loss);
  CHECK(a.grad == b.grad);
}

TEST_CASE("batch_gradient rejects out-of-range pair indices") {
  Rng rng(3);
  const auto batch = random_batch(rng, 2, tiny_encoder().hash_dim);
  const ModelState state = oracles::random_state(tiny_encoder(), 4);
  CHECK_THROWS_AS(batch_gradient(views(batch), {{0, 5}}, state), Error);
}

TEST_CASE("apply_update takes a plain SGD step with decoupled weight decay") {
  EncoderConfig config;
  config.hash_dim = 2;
  config.hidden_dim = 1;
  config.feature_dim = 1;
  ModelState state = init_state(config);
  std::fill(state.params.begin(), state.params.end(), 1.0);

  TrainConfig train;
  train.optimizer = OptimizerKind::SGD;
  train.learning_rate = 0.1;
  train.weight_decay = 0.5;
  train.clip_norm = 1e9;  // no clipping in this case
  std::vector<double> grad(state.params.size(), 2.0);
  apply_update(state, grad, train);

  // Decoupled decay first: p *= (1 - lr * wd) = 0.95, then p -= lr * g.
  for (double p : state.params) CHECK(p == doctest::Approx(1.0 * 0.95 - 0.1 * 2.0).epsilon(1e-14));
  CHECK(state.step == 1);
  CHECK(state.m.empty());  // SGD keeps no moments
}

TEST_CASE("apply_update clips the global gradient norm") {
  EncoderConfig config;
  config.hash_dim = 2;
  config.hidden_dim = 1;
  config.feature_dim = 1;
  ModelState state = init_state(config);
  std::fill(state.params.begin(), state.params.end(), 0.0);

  TrainConfig train;
  train.optimizer = OptimizerKind::SGD;
  train.learning_rate = 1.0;
  train.weight_decay = 0.0;
  train.clip_norm = 1.0;
  // Gradient of norm 10 gets scaled to norm 1 before the step.
  std::vector<double> grad(state.params.size(), 10.0 / std::sqrt(static_cast<double>(state.params.size())));
  apply_update(state, grad, train);
  double norm = 0.0;
  for (double p : state.params) norm += p * p;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("apply_update implements Adam with bias correction") {
  EncoderConfig config;
  config.hash_dim = 1;
  config.hidden_dim = 1;
  config.feature_dim = 1;
  ModelState state = init_state(config);
  std::fill(state.params.begin(), state.params.end(), 0.0);

  TrainConfig train;
  train.optimizer = OptimizerKind::Adam;
  train.learning_rate = 0.01;
  train.weight_decay = 0.0;
  train.clip_norm = 1e9;
  train.adam_beta1 = 0.9;
  train.adam_beta2 = 0.999;
  train.adam_eps = 1e-8;

  const std::vector<double> g1(state.params.size(), 3.0);
  apply_update(state, g1, train);
  CHECK(state.step == 1);
  REQUIRE(state.m.size() == state.params.size());
  // After one step with constant gradient g: m_hat = g, v_hat = g^2, so the
  // step is -lr * g / (|g| + eps) = -lr * sign(g) almost exactly.
  const double expected1 = -0.01 * 3.0 / (3.0 + 1e-8);
  for (double p : state.params) CHECK(p == doctest::Approx(expected1).epsilon(1e-12));

  // Second step with a different gradient, checked against a scalar replay.
  const std::vector<double> g2(state.params.size(), -1.0);
  apply_update(state, g2, train);
  CHECK(state.step == 2);
  double m = 0.0, v = 0.0, p_ref = 0.0;
  for (int step = 1; step <= 2; ++step) {
    const double g = (step == 1) ? 3.0 : -1.0;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double m_hat = m / (1.0 - std::pow(0.9, step));
    const double v_hat = v / (1.0 - std::pow(0.999, step));
    p_ref -= 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8);
  }
  for (double p : state.params) CHECK(p == doctest::Approx(p_ref).epsilon(1e-12));
}

TEST_CASE("apply_update validates sizes and the config") {
  ModelState state = init_state(tiny_encoder());
  TrainConfig train;
  CHECK_THROWS_AS(apply_update(state, std::vector<double>(3, 0.0), train), Error);

  auto reject = [&](auto mutate) {
    TrainConfig bad;
    mutate(bad);
    std::vector<double> grad(state.params.size(), 0.0);
    CHECK_THROWS_AS(apply_update(state, grad, bad), ConfigError);
  };
  reject([](TrainConfig& c) { c.learning_rate = 0.0; });
  reject([](TrainConfig& c) { c.batch_size = 1; });
  reject([](TrainConfig& c) { c.epochs = -1; });
  reject([](TrainConfig& c) { c.weight_decay = -0.1; });
  reject([](TrainConfig& c) { c.clip_norm = 0.0; });
}

TEST_CASE("optimizer names round-trip") {
  CHECK(optimizer_from_string(to_string(OptimizerKind::SGD)) == OptimizerKind::SGD);
  CHECK(optimizer_from_string(to_string(OptimizerKind::Adam)) == OptimizerKind::Adam);
  CHECK_THROWS_AS(optimizer_from_string("lbfgs"), ConfigError);
}

TEST_CASE("train_stage is deterministic and learns a separable problem") {
  // Two clusters of dialogs with disjoint vocabulary; winners always come
  // from the first cluster.
  std::vector<Dialog> dialogs;
  std::vector<DialogPair> pairs;
  Rng rng(31);
  const std::vector<std::string> good_words = {"bright", "clear", "crisp", "sharp"};
  const std::vector<std::string> bad_words = {"murky", "dull", "fuzzy", "dim"};
  for (int i = 0; i < 24; ++i) {
    auto pick = [&](const std::vector<std::string>& pool) {
      return pool[rng.index(pool.size())] + " " + pool[rng.index(pool.size())];
    };
    dialogs.push_back(make_dialog("g" + std::to_string(i), {pick(good_words), pick(good_words)}));
    dialogs.push_back(make_dialog("b" + std::to_string(i), {pick(bad_words), pick(bad_words)}));
    pairs.push_back({"g" + std::to_string(i), "b" + std::to_string(i), 1, PairSource::Expert});
  }
  DialogStore store;
  store.add_all(dialogs);

  EncoderConfig enc = tiny_encoder();
  enc.hash_dim = 256;  // room to keep the two vocabularies separated
  TrainConfig train;
  train.epochs = 30;
  train.batch_size = 8;
  train.seed = 3;

  std::vector<TrainLogRecord> log;
  const ModelState init = init_state(enc);
  const ModelState trained = train_stage(
      pairs, store, init, train, 1, [&](const TrainLogRecord& r) { log.push_back(r); });

  // The logger saw every epoch, tagged with the requested stage.
  REQUIRE_FALSE(log.empty());
  CHECK(log.front().stage == 1);
  CHECK(log.back().epoch == train.epochs - 1);
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].loss >= 0.0);
  }

  // Training separates the clusters: every held pair ranked correctly.
  int correct = 0;
  for (const auto& p : pairs) {
    const auto pred = predict_pair(store.at(p.first_id), store.at(p.second_id), trained);
    if (!pred.tie && pred.z_hat == 1) ++correct;
  }
  CHECK(correct == static_cast<int>(pairs.size()));
  // And the final loss beats the ln 2 starting point decisively.
  CHECK(log.back().loss < 0.2);

  // Bitwise determinism across runs.
  const ModelState again = train_stage(pairs, store, init, train, 1);
  CHECK(again.params == trained.params);
  CHECK(again.step == trained.step);

  // A different shuffle seed trains a different model.
  TrainConfig other = train;
  other.seed = 4;
  CHECK(train_stage(pairs, store, init, other, 1).params != trained.params);
}

TEST_CASE("train_stage with no pairs is a no-op") {
  DialogStore store;
  const ModelState init = init_state(tiny_encoder());
  const ModelState out = train_stage({}, store, init, TrainConfig{}, 1);
  CHECK(out.params == init.params);
  CHECK(out.step == init.step);
}

TEST_CASE("train_stage raises TrainingDiverged on exploding updates") {
  std::vector<Dialog> dialogs = {make_dialog("a", {"one two", "three four"}),
                                 make_dialog("b", {"five six", "seven eight"})};
  DialogStore store;
  store.add_all(dialogs);
  const std::vector<DialogPair> pairs = {{"a", "b", 1, PairSource::Expert}};
  TrainConfig train;
  train.optimizer = OptimizerKind::SGD;
  train.learning_rate = 1e155;  // one step overflows the scores
  train.clip_norm = 1e300;
  train.weight_decay = 0.0;
  train.epochs = 50;
  CHECK_THROWS_AS(train_stage(pairs, store, init_state(tiny_encoder()), train, 1),
                  TrainingDiverged);
}

TEST_CASE("predict_pair reports ties and orients by score") {
  const EncoderConfig config = tiny_encoder();
  const Dialog a = make_dialog("a", {"alpha beta", "gamma delta"});
  const Dialog b = make_dialog("b", {"epsilon zeta", "eta theta"});

  // All-zero parameters: every dialog scores identically.
  ModelState zero = init_state(config);
  std::fill(zero.params.begin(), zero.params.end(), 0.0);
  const PairPrediction tied = predict_pair(a, b, zero);
  CHECK(tied.tie);
  CHECK(tied.probability == 0.5);
  CHECK(tied.z_hat == 1);  // documented fallback

  const ModelState state = oracles::random_state(config, 6, 0.5);
  const PairPrediction p_ab = predict_pair(a, b, state);
  const PairPrediction p_ba = predict_pair(b, a, state);
  CHECK_FALSE(p_ab.tie);
  CHECK(p_ab.probability + p_ba.probability == 1.0);
  CHECK(p_ab.z_hat + p_ba.z_hat == 1);
  CHECK(p_ab.probability == posterior(score(a, state), score(b, state)));
  CHECK((p_ab.z_hat == 1) == (score(a, state) > score(b, state)));
}
