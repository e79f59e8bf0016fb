#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rankdenoise/corpus.hpp"

namespace rankdenoise {

// Stand-in for a heavyweight sequence encoder: hashed token n-grams feeding a
// two-layer feed-forward network phi, plus a linear scoring head o = f(phi(x)).
// Everything is differentiable by hand, so gradients are exact and testable.
struct EncoderConfig {
  int hash_dim = 4096;
  int hidden_dim = 128;
  int feature_dim = 64;
  std::vector<int> ngram_orders = {1, 2};  // sorted, unique
  uint64_t init_seed = 1;
};

void validate_config(const EncoderConfig& config);
bool operator==(const EncoderConfig& a, const EncoderConfig& b);

// Sparse vector with strictly increasing indices; the hashed n-gram bag.
struct SparseVector {
  std::vector<uint32_t> idx;
  std::vector<double> val;
  std::size_t nnz() const { return idx.size(); }
};

// Offsets into the flat parameter vector. Order: W1 (stored bucket-major:
// one contiguous hidden-sized row per hash bucket, so sparse input rows are
// cache-friendly), b1, W2 (feature x hidden), b2, head, head bias.
struct ParamLayout {
  std::size_t hash_dim, hidden_dim, feature_dim;

  explicit ParamLayout(const EncoderConfig& c)
      : hash_dim(c.hash_dim), hidden_dim(c.hidden_dim), feature_dim(c.feature_dim) {}

  std::size_t w1(std::size_t h, std::size_t i) const { return i * hidden_dim + h; }
  std::size_t b1(std::size_t h) const { return hidden_dim * hash_dim + h; }
  std::size_t w2(std::size_t f, std::size_t h) const {
    return hidden_dim * hash_dim + hidden_dim + f * hidden_dim + h;
  }
  std::size_t b2(std::size_t f) const { return w2(feature_dim, 0) + f; }
  std::size_t head(std::size_t f) const { return b2(feature_dim) + f; }
  std::size_t head_bias() const { return head(feature_dim); }
  std::size_t total() const { return head_bias() + 1; }
};

struct ModelState {
  EncoderConfig config;
  std::vector<double> params;
  std::vector<double> m, v;  // Adam moments; empty until the first update
  uint64_t step = 0;
};

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
ModelState init_state(const EncoderConfig& config);

// Role-tagged lowercased whitespace tokens over the whole turn sequence,
// n-grams of the configured orders (crossing turn boundaries), signed 64-bit
// hashing into hash_dim buckets, L2-normalized unless all-zero.
SparseVector featurize_raw(const Dialog& dialog, const EncoderConfig& config);

struct Activations {
  std::vector<double> h_pre;  // W1 x + b1
  std::vector<double> h;      // relu(h_pre)
  std::vector<double> phi;    // W2 h + b2
  double score = 0.0;         // head . phi + head_bias
};

Activations forward_raw(const SparseVector& x, const ModelState& state);

std::vector<double> encode(const Dialog& dialog, const ModelState& state);
double score(const Dialog& dialog, const ModelState& state);

// Accumulates coeff * d(score)/d(theta) into grad, reusing the activations of
// the forward pass that produced them (one backward pass per call).
void accumulate_score_grad(const SparseVector& x, const Activations& act, const ModelState& state,
                           double coeff, std::vector<double>& grad);

// Binary checkpoint: dims, n-gram orders, init seed, step counter, parameters
// and (when present) optimizer moments. Written to a temp file and renamed so
// a crash never leaves a half-written checkpoint behind.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace rankdenoise
