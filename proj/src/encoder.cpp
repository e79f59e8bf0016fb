#include "rankdenoise/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "rankdenoise/hash.hpp"
#include "rankdenoise/rng.hpp"

namespace rankdenoise {

namespace fs = std::filesystem;

void validate_config(const EncoderConfig& config) {
  if (config.hash_dim < 1 || config.hidden_dim < 1 || config.feature_dim < 1) {
    throw ConfigError("encoder dimensions must be at least 1");
  }
  if (config.ngram_orders.empty()) throw ConfigError("ngram_orders must be non-empty");
  for (std::size_t i = 0; i < config.ngram_orders.size(); ++i) {
    if (config.ngram_orders[i] < 1) throw ConfigError("n-gram orders must be at least 1");
    if (i > 0 && config.ngram_orders[i] <= config.ngram_orders[i - 1]) {
      throw ConfigError("ngram_orders must be strictly increasing");
    }
  }
}

bool operator==(const EncoderConfig& a, const EncoderConfig& b) {
  return a.hash_dim == b.hash_dim && a.hidden_dim == b.hidden_dim &&
         a.feature_dim == b.feature_dim && a.ngram_orders == b.ngram_orders &&
         a.init_seed == b.init_seed;
}

SparseVector featurize_raw(const Dialog& dialog, const EncoderConfig& config) {
  // Role-tagged lowercased token stream over the whole dialog; n-grams cross
  // turn boundaries so the flow between turns is visible to the model.
  std::vector<std::string> tokens;
  for (const auto& turn : dialog.turns) {
    const std::string tag = to_string(turn.role) + ":";
    std::size_t pos = 0;
    const std::string& text = turn.text;
    while (pos < text.size()) {
      while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
      std::size_t end = pos;
      while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
      if (end > pos) {
        std::string tok = tag;
        for (std::size_t i = pos; i < end; ++i) {
          tok += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
        }
        tokens.push_back(std::move(tok));
      }
      pos = end;
    }
  }

  std::vector<std::pair<uint32_t, double>> hits;
  for (int order : config.ngram_orders) {
    const auto n = static_cast<std::size_t>(order);
    if (tokens.size() < n) continue;
    for (std::size_t start = 0; start + n <= tokens.size(); ++start) {
      std::string gram = tokens[start];
      for (std::size_t i = 1; i < n; ++i) {
        gram += '\x1e';
        gram += tokens[start + i];
      }
      const uint64_t h = fnv1a64(gram);
      const double sign = (h & 1u) ? 1.0 : -1.0;
      const auto bucket = static_cast<uint32_t>((h >> 1) % static_cast<uint64_t>(config.hash_dim));
      hits.emplace_back(bucket, sign);
    }
  }

  std::sort(hits.begin(), hits.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseVector out;
  for (std::size_t i = 0; i < hits.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < hits.size() && hits[j].first == hits[i].first) sum += hits[j++].second;
    if (sum != 0.0) {
      out.idx.push_back(hits[i].first);
      out.val.push_back(sum);
    }
    i = j;
  }
  double norm_sq = 0.0;
  for (double v : out.val) norm_sq += v * v;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& v : out.val) v *= inv;
  }
  return out;
}

ModelState init_state(const EncoderConfig& config) {
  validate_config(config);
  ModelState state;
  state.config = config;
  const ParamLayout layout(config);
  state.params.assign(layout.total(), 0.0);

  Rng rng(mix_seed(config.init_seed, 0x696e6974));
  auto fill = [&rng, &state](std::size_t begin, std::size_t end, double bound) {
    for (std::size_t i = begin; i < end; ++i) state.params[i] = rng.uniform(-bound, bound);
  };
  const double b1 = std::sqrt(6.0 / (layout.hash_dim + layout.hidden_dim));
  const double b2 = std::sqrt(6.0 / (layout.hidden_dim + layout.feature_dim));
  const double bh = std::sqrt(6.0 / (layout.feature_dim + 1));
  fill(0, layout.hash_dim * layout.hidden_dim, b1);
  fill(layout.w2(0, 0), layout.w2(layout.feature_dim, 0), b2);
  fill(layout.head(0), layout.head(layout.feature_dim), bh);
  return state;
}

Activations forward_raw(const SparseVector& x, const ModelState& state) {
  const ParamLayout layout(state.config);
  if (state.params.size() != layout.total()) {
    throw CheckpointError("model state does not match its encoder config");
  }
  const double* p = state.params.data();
  Activations act;
  act.h_pre.assign(layout.hidden_dim, 0.0);
  for (std::size_t h = 0; h < layout.hidden_dim; ++h) act.h_pre[h] = p[layout.b1(h)];
  for (std::size_t n = 0; n < x.nnz(); ++n) {
    const double v = x.val[n];
    const double* row = p + layout.w1(0, x.idx[n]);  // W1 is bucket-major
    for (std::size_t h = 0; h < layout.hidden_dim; ++h) act.h_pre[h] += row[h] * v;
  }
  act.h.resize(layout.hidden_dim);
  for (std::size_t h = 0; h < layout.hidden_dim; ++h) {
    act.h[h] = act.h_pre[h] > 0.0 ? act.h_pre[h] : 0.0;
  }
  act.phi.resize(layout.feature_dim);
  for (std::size_t f = 0; f < layout.feature_dim; ++f) {
    double acc = p[layout.b2(f)];
    const double* row = p + layout.w2(f, 0);
    for (std::size_t h = 0; h < layout.hidden_dim; ++h) acc += row[h] * act.h[h];
    act.phi[f] = acc;
  }
  double o = p[layout.head_bias()];
  for (std::size_t f = 0; f < layout.feature_dim; ++f) o += p[layout.head(f)] * act.phi[f];
  act.score = o;
  return act;
}

std::vector<double> encode(const Dialog& dialog, const ModelState& state) {
  return forward_raw(featurize_raw(dialog, state.config), state).phi;
}

double score(const Dialog& dialog, const ModelState& state) {
  return forward_raw(featurize_raw(dialog, state.config), state).score;
}

void accumulate_score_grad(const SparseVector& x, const Activations& act, const ModelState& state,
                           double coeff, std::vector<double>& grad) {
  const ParamLayout layout(state.config);
  if (grad.size() != layout.total()) throw Error("gradient buffer has the wrong size");
  const double* p = state.params.data();
  double* g = grad.data();

  g[layout.head_bias()] += coeff;
  for (std::size_t f = 0; f < layout.feature_dim; ++f) g[layout.head(f)] += coeff * act.phi[f];

  // dphi[f] = coeff * head[f]; feeds b2, W2 and, through relu, b1 and W1.
  std::vector<double> dh(layout.hidden_dim, 0.0);
  for (std::size_t f = 0; f < layout.feature_dim; ++f) {
    const double dphi = coeff * p[layout.head(f)];
    g[layout.b2(f)] += dphi;
    double* grow = g + layout.w2(f, 0);
    const double* wrow = p + layout.w2(f, 0);
    for (std::size_t h = 0; h < layout.hidden_dim; ++h) {
      grow[h] += dphi * act.h[h];
      dh[h] += dphi * wrow[h];
    }
  }
  for (std::size_t h = 0; h < layout.hidden_dim; ++h) {
    if (act.h_pre[h] > 0.0) {
      g[layout.b1(h)] += dh[h];
    } else {
      dh[h] = 0.0;  // relu subgradient 0 at and below the kink
    }
  }
  for (std::size_t n = 0; n < x.nnz(); ++n) {
    const double v = x.val[n];
    double* grow = g + layout.w1(0, x.idx[n]);
    for (std::size_t h = 0; h < layout.hidden_dim; ++h) grow[h] += dh[h] * v;
  }
}

namespace {

constexpr char kMagic[8] = {'R', 'D', 'N', 'C', 'K', 'P', '0', '1'};

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

void save_checkpoint(const ModelState& state, const fs::path& path) {
  const ParamLayout layout(state.config);
  const bool moments_ok = (state.m.empty() && state.v.empty()) ||
                          (state.m.size() == state.params.size() &&
                           state.v.size() == state.params.size());
  if (state.params.size() != layout.total() || !moments_ok) {
    throw CheckpointError("refusing to save a model state with inconsistent shapes");
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, static_cast<uint32_t>(state.config.hash_dim));
    write_pod(out, static_cast<uint32_t>(state.config.hidden_dim));
    write_pod(out, static_cast<uint32_t>(state.config.feature_dim));
    write_pod(out, static_cast<uint32_t>(state.config.ngram_orders.size()));
    for (int order : state.config.ngram_orders) write_pod(out, static_cast<int32_t>(order));
    write_pod(out, state.config.init_seed);
    write_pod(out, state.step);
    const uint8_t has_moments = state.m.empty() ? 0 : 1;
    write_pod(out, has_moments);
    write_pod(out, static_cast<uint64_t>(state.params.size()));
    write_doubles(out, state.params);
    if (has_moments) {
      write_doubles(out, state.m);
      write_doubles(out, state.v);
    }
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

ModelState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file: " + path.string());
  }
  ModelState state;
  uint32_t hash_dim = 0, hidden_dim = 0, feature_dim = 0, n_orders = 0;
  read_pod(in, hash_dim);
  read_pod(in, hidden_dim);
  read_pod(in, feature_dim);
  read_pod(in, n_orders);
  if (!in || n_orders == 0 || n_orders > 16) {
    throw CheckpointError("corrupt checkpoint header: " + path.string());
  }
  state.config.hash_dim = static_cast<int>(hash_dim);
  state.config.hidden_dim = static_cast<int>(hidden_dim);
  state.config.feature_dim = static_cast<int>(feature_dim);
  state.config.ngram_orders.resize(n_orders);
  for (auto& order : state.config.ngram_orders) {
    int32_t o = 0;
    read_pod(in, o);
    order = o;
  }
  read_pod(in, state.config.init_seed);
  read_pod(in, state.step);
  uint8_t has_moments = 0;
  read_pod(in, has_moments);
  uint64_t n_params = 0;
  read_pod(in, n_params);
  validate_config(state.config);
  const ParamLayout layout(state.config);
  if (!in || n_params != layout.total()) {
    throw CheckpointError("checkpoint shape mismatch in " + path.string());
  }
  read_doubles(in, state.params, n_params);
  if (has_moments) {
    read_doubles(in, state.m, n_params);
    read_doubles(in, state.v, n_params);
  }
  if (!in) throw CheckpointError("truncated checkpoint " + path.string());
  in.peek();
  if (!in.eof()) throw CheckpointError("trailing bytes after checkpoint payload in " + path.string());
  for (double p : state.params) {
    if (!std::isfinite(p)) throw CheckpointError("non-finite parameter in " + path.string());
  }
  return state;
}

}  // namespace rankdenoise
