#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "copacrr/autodiff.hpp"
#include "copacrr/binary_io.hpp"
#include "copacrr/corpus.hpp"
#include "copacrr/embedding.hpp"
#include "copacrr/error.hpp"
#include "copacrr/ops.hpp"
#include "copacrr/tensor.hpp"

namespace copacrr {

enum class LossKind : std::uint8_t { cross_entropy = 0, max_margin = 1 };

inline const char* loss_name(LossKind k) {
  return k == LossKind::cross_entropy ? "cross_entropy" : "max_margin";
}

struct ModelConfig {
  std::size_t l_q = 16;  ///< query rows
  std::size_t l_d = 800; ///< document columns (first-k truncation)
  std::size_t l_g = 3;   ///< longest n-gram; kernels exist for 2..l_g
  std::size_t n_f = 32;  ///< filters per kernel size
  std::size_t n_s = 3;   ///< k for k-max pooling
  std::size_t n_c = 4;   ///< cascade positions
  std::size_t w_c = 4;   ///< context half-window
  std::vector<std::size_t> hidden_sizes{16, 16};
  bool cascade = true;
  bool disamb = true;
  bool shuffle = true;
  LossKind loss = LossKind::cross_entropy;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string(name) + " must be at least 1");
    };
    positive(l_q, "l_q");
    positive(l_d, "l_d");
    positive(l_g, "l_g");
    positive(n_f, "n_f");
    positive(n_s, "n_s");
    positive(n_c, "n_c");
    for (std::size_t h : hidden_sizes) positive(h, "hidden layer size");
  }

  /// Cascade fractions (s+1)/n_c, ending at exactly 1.
  std::vector<double> cpos() const {
    std::vector<double> out;
    for (std::size_t s = 0; s < n_c; ++s) out.push_back(static_cast<double>(s + 1) / static_cast<double>(n_c));
    return out;
  }

  /// Prefix lengths ceil(cpos[s] * l_d) pooled for each segment, computed in
  /// integers so the last one is l_d exactly. A single full-length segment
  /// when the cascade is off.
  std::vector<std::size_t> segment_bounds() const {
    if (!cascade) return {l_d};
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < n_c; ++s) out.push_back(((s + 1) * l_d + n_c - 1) / n_c);
    return out;
  }

  /// "PACRR", "Co-PACRR", or the enabled component letters, e.g. "CS-PACRR".
  std::string variant_name() const {
    std::string letters;
    if (cascade) letters += 'C';
    if (disamb) letters += 'D';
    if (shuffle) letters += 'S';
    if (letters.empty()) return "PACRR";
    if (letters == "CDS") return "Co-PACRR";
    return letters + "-PACRR";
  }
};

/// Components toggles for all eight variants, in reporting order.
struct VariantToggles {
  const char* name;
  bool cascade, disamb, shuffle;
};

inline constexpr VariantToggles kVariants[] = {
    {"PACRR", false, false, false},   {"C-PACRR", true, false, false},
    {"D-PACRR", false, true, false},  {"S-PACRR", false, false, true},
    {"CD-PACRR", true, true, false},  {"CS-PACRR", true, false, true},
    {"DS-PACRR", false, true, true},  {"Co-PACRR", true, true, true},
};

inline ModelConfig with_variant(ModelConfig config, const VariantToggles& v) {
  config.cascade = v.cascade;
  config.disamb = v.disamb;
  config.shuffle = v.shuffle;
  return config;
}

/// Signals per query row after pooling, plus the IDF column.
inline std::size_t pooled_feature_width(const ModelConfig& c) {
  return c.l_g * c.n_s * (c.disamb ? 2 : 1) * (c.cascade ? c.n_c : 1) + 1;
}

inline std::size_t dense_input_width(const ModelConfig& c) { return c.l_q * pooled_feature_width(c); }

inline std::size_t parameter_count(const ModelConfig& c) {
  std::size_t n = 0;
  for (std::size_t g = 2; g <= c.l_g; ++g) n += g * g * c.n_f;
  std::size_t in = dense_input_width(c);
  for (std::size_t h : c.hidden_sizes) {
    n += in * h + h;
    in = h;
  }
  return n + in + 1;
}

/// Trainable weights. Declared order: kernels for g = 2..l_g, then
/// (weights, bias) per dense layer, the last layer producing one output.
struct ModelParams {
  std::vector<Tensor> kernels;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& k : kernels) out.push_back(&k);
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(&weights[l]);
      out.push_back(&biases[l]);
    }
    return out;
  }
  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& k : kernels) out.push_back(&k);
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(&weights[l]);
      out.push_back(&biases[l]);
    }
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const Tensor* t : tensors()) n += t->size();
    return n;
  }

  /// Digest over all parameter bits, for determinism checks.
  std::uint64_t checksum() const {
    Fnv1a h;
    for (const Tensor* t : tensors()) h.update(t->data(), t->size() * sizeof(double));
    return h.digest();
  }

  bool operator==(const ModelParams&) const = default;
};

/// Shapes of every parameter tensor in declared order.
inline std::vector<Shape> parameter_shapes(const ModelConfig& c) {
  std::vector<Shape> shapes;
  for (std::size_t g = 2; g <= c.l_g; ++g) shapes.push_back({g, g, c.n_f});
  std::size_t in = dense_input_width(c);
  std::vector<std::size_t> outs = c.hidden_sizes;
  outs.push_back(1);
  for (std::size_t o : outs) {
    shapes.push_back({in, o});
    shapes.push_back({o});
    in = o;
  }
  return shapes;
}

inline ModelParams zero_params(const ModelConfig& c) {
  c.validate();
  ModelParams p;
  auto shapes = parameter_shapes(c);
  const std::size_t n_kernels = c.l_g - 1;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (i < n_kernels) {
      p.kernels.emplace_back(shapes[i]);
    } else if ((i - n_kernels) % 2 == 0) {
      p.weights.emplace_back(shapes[i]);
    } else {
      p.biases.emplace_back(shapes[i]);
    }
  }
  return p;
}

/// Uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
inline ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zero_params(c);
  std::mt19937_64 rng(seed);
  auto fill = [&](Tensor& t, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values()) v = dist(rng);
  };
  for (auto& k : p.kernels) {
    const double g2 = static_cast<double>(k.dim(0) * k.dim(1));
    fill(k, g2, g2 * static_cast<double>(c.n_f));
  }
  for (auto& w : p.weights) fill(w, static_cast<double>(w.dim(0)), static_cast<double>(w.dim(1)));
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Parameter leaves bound into one graph. Several forward passes over the same
/// binding accumulate their gradients into the same leaves.
struct ParamVars {
  std::vector<Var> kernels;
  std::vector<Var> weights;
  std::vector<Var> biases;

  std::vector<Var> all() const {
    std::vector<Var> out(kernels);
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(weights[l]);
      out.push_back(biases[l]);
    }
    return out;
  }
};

inline ParamVars bind_params(Graph& graph, const ModelParams& params, bool trainable = true) {
  ParamVars v;
  auto leaf = [&](const Tensor& t) { return trainable ? graph.parameter(t) : graph.constant(t); };
  for (const auto& k : params.kernels) v.kernels.push_back(leaf(k));
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    v.weights.push_back(leaf(params.weights[l]));
    v.biases.push_back(leaf(params.biases[l]));
  }
  return v;
}

/// Pooled signals for one (n-gram size, cascade segment) pair.
struct PoolTrace {
  std::size_t ngram = 0;    ///< 1 for the raw similarity matrix
  std::size_t segment = 0;
  std::size_t prefix = 0;   ///< columns pooled
  std::vector<double> values;               ///< l_q x n_s
  std::vector<std::ptrdiff_t> positions;    ///< l_q x n_s
};

struct ScoreOutput {
  double rel = 0.0;
  std::vector<PoolTrace> trace;
};

inline void check_input(const SimInput& in, const ModelConfig& c) {
  if (in.sim.shape() != Shape{c.l_q, c.l_d}) {
    throw ShapeError("sim has shape " + shape_string(in.sim.shape()) + ", config expects " +
                     shape_string({c.l_q, c.l_d}));
  }
  if (in.querysim.shape() != Shape{c.l_d}) {
    throw ShapeError("querysim has shape " + shape_string(in.querysim.shape()) + ", config expects " +
                     shape_string({c.l_d}));
  }
  if (in.idf.shape() != Shape{c.l_q}) {
    throw ShapeError("idf has shape " + shape_string(in.idf.shape()) + ", config expects " +
                     shape_string({c.l_q}));
  }
}

inline void check_params(const ModelParams& p, const ModelConfig& c) {
  auto shapes = parameter_shapes(c);
  auto tensors = p.tensors();
  if (tensors.size() != shapes.size()) {
    throw ShapeError("model has " + std::to_string(tensors.size()) + " parameter tensors, config needs " +
                     std::to_string(shapes.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (tensors[i]->shape() != shapes[i]) {
      throw ShapeError("parameter " + std::to_string(i) + " has shape " + shape_string(tensors[i]->shape()) +
                       ", config needs " + shape_string(shapes[i]));
    }
  }
}

/// Builds the pooled signal matrix P (l_q x pooled_feature_width): for each
/// n-gram size g = 1..l_g and each cascade segment, the n_s strongest values
/// per query row followed, with disambiguation on, by the querysim entries at
/// their positions; the normalized IDF is the last column.
inline Var pooled_features(Graph& graph, const SimInput& input, const ParamVars& params,
                           const ModelConfig& config, std::vector<PoolTrace>* trace = nullptr) {
  check_input(input, config);
  Var sim = graph.constant(input.sim);
  Var querysim = graph.constant(input.querysim);

  std::vector<Var> maps{sim};
  for (const Var& kernel : params.kernels) {
    maps.push_back(ops::max_over_filters(graph, ops::conv2d_same(graph, sim, kernel)));
  }

  const auto bounds = config.segment_bounds();
  std::vector<Var> blocks;
  for (std::size_t g = 0; g < maps.size(); ++g) {
    for (std::size_t s = 0; s < bounds.size(); ++s) {
      ops::PooledRows pooled = ops::kmax_rows(graph, maps[g], config.n_s, bounds[s]);
      blocks.push_back(pooled.values);
      if (config.disamb) {
        blocks.push_back(ops::gather(graph, querysim, pooled.positions, {config.l_q, config.n_s}));
      }
      if (trace) {
        auto values = graph.value(pooled.values).values();
        trace->push_back(PoolTrace{g + 1, s, bounds[s], std::vector<double>(values.begin(), values.end()),
                                   std::move(pooled.positions)});
      }
    }
  }
  blocks.push_back(graph.constant(input.idf.reshaped({config.l_q, 1})));
  return ops::concat_columns(graph, blocks);
}

/// Dense stack over the flattened signal matrix: ReLU hidden layers, linear output.
inline Var combine(Graph& graph, Var pooled, const ParamVars& params) {
  Var h = ops::flatten(graph, pooled);
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const bool last = l + 1 == params.weights.size();
    h = ops::dense(graph, h, params.weights[l], params.biases[l],
                   last ? ops::Activation::identity : ops::Activation::relu);
  }
  return h;
}

/// Relevance score node. `row_perm` shuffles the rows of P before combining.
inline Var forward_graph(Graph& graph, const SimInput& input, const ParamVars& params,
                         const ModelConfig& config, std::optional<std::span<const std::size_t>> row_perm = std::nullopt,
                         std::vector<PoolTrace>* trace = nullptr) {
  Var pooled = pooled_features(graph, input, params, config, trace);
  if (row_perm) pooled = ops::permute_rows(graph, pooled, *row_perm);
  return combine(graph, pooled, params);
}

inline ScoreOutput forward(const SimInput& input, const ModelParams& params, const ModelConfig& config,
                           std::optional<std::span<const std::size_t>> row_perm = std::nullopt,
                           bool with_trace = false) {
  Graph graph;
  ParamVars vars = bind_params(graph, params, false);
  ScoreOutput out;
  Var rel = forward_graph(graph, input, vars, config, row_perm, with_trace ? &out.trace : nullptr);
  out.rel = graph.value(rel).item();
  if (!std::isfinite(out.rel)) throw NumericalError("non-finite relevance score");
  return out;
}

/// Inference score: rows stay in query order.
inline double score_inference(const SimInput& input, const ModelParams& params, const ModelConfig& config) {
  return forward(input, params, config).rel;
}

/// Uniform random permutation of [0, n).
template <typename Rng>
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

/// Standard deviation of the score over `draws` random row orders.
inline double permutation_score_stddev(const SimInput& input, const ModelParams& params,
                                       const ModelConfig& config, std::uint64_t seed, std::size_t draws = 16) {
  std::mt19937_64 rng(seed);
  std::vector<double> scores;
  for (std::size_t i = 0; i < draws; ++i) {
    auto perm = random_permutation(config.l_q, rng);
    scores.push_back(forward(input, params, config, std::span<const std::size_t>(perm)).rel);
  }
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  return std::sqrt(var / static_cast<double>(scores.size()));
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian layout:
//   8 bytes  magic "COPACRR1"
//   u32      format version (1)
//   u32 x 7  l_q, l_d, l_g, n_f, n_s, n_c, w_c
//   u32      hidden layer count H, then H x u32 sizes
//   u8 x 4   cascade, disamb, shuffle, loss (0 = cross entropy, 1 = max margin)
//   u32      tensor count T
//   T x      { u32 rank, rank x u32 dims, prod(dims) x f32 values }
//   u64      FNV-1a 64 of every preceding byte

inline constexpr std::string_view kCheckpointMagic = "COPACRR1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

inline std::string encode_checkpoint(const ModelConfig& c, const ModelParams& p) {
  check_params(p, c);
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  for (std::size_t v : {c.l_q, c.l_d, c.l_g, c.n_f, c.n_s, c.n_c, c.w_c}) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(c.hidden_sizes.size()));
  for (std::size_t h : c.hidden_sizes) w.u32(static_cast<std::uint32_t>(h));
  w.u8(c.cascade);
  w.u8(c.disamb);
  w.u8(c.shuffle);
  w.u8(static_cast<std::uint8_t>(c.loss));
  auto tensors = p.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) {
    w.u32(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t->values()) w.f32(static_cast<float>(v));
  }
  Fnv1a h;
  h.update(w.view());
  w.u64(h.digest());
  return std::string(w.view());
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  if (bytes.size() < 8 + 8) throw DataError(source + ": checkpoint too short");
  {
    ByteReader tail(bytes.substr(bytes.size() - 8), source);
    Fnv1a h;
    h.update(bytes.substr(0, bytes.size() - 8));
    if (tail.u64() != h.digest()) throw DataError(source + ": checkpoint checksum mismatch");
  }
  ByteReader r(bytes.substr(0, bytes.size() - 8), source);
  if (r.raw(kCheckpointMagic.size()) != kCheckpointMagic) throw DataError(source + ": bad checkpoint magic");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw DataError(source + ": unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ModelConfig& c = ck.config;
  for (std::size_t* f : {&c.l_q, &c.l_d, &c.l_g, &c.n_f, &c.n_s, &c.n_c, &c.w_c}) *f = r.u32();
  c.hidden_sizes.assign(r.u32(), 0);
  for (auto& h : c.hidden_sizes) h = r.u32();
  c.cascade = r.u8() != 0;
  c.disamb = r.u8() != 0;
  c.shuffle = r.u8() != 0;
  const auto loss = r.u8();
  if (loss > 1) throw DataError(source + ": unknown loss code " + std::to_string(loss));
  c.loss = static_cast<LossKind>(loss);
  c.validate();

  ck.params = zero_params(c);
  auto tensors = ck.params.tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size()) {
    throw DataError(source + ": checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                    std::to_string(tensors.size()));
  }
  for (Tensor* t : tensors) {
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    if (shape != t->shape()) {
      throw DataError(source + ": tensor shape " + shape_string(shape) + " does not match config shape " +
                      shape_string(t->shape()));
    }
    for (double& v : t->values()) v = r.f32();
  }
  if (r.remaining() != 0) throw DataError(source + ": trailing bytes in checkpoint");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& c, const ModelParams& p) {
  const std::string bytes = encode_checkpoint(c, p);
  write_file_atomically(path, [&](std::ostream& out) { out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); },
                        std::ios::out | std::ios::binary);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace copacrr
