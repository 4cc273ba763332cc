#pragma once

// Differentiable operations used by the ranking model. Each op computes its
// forward value eagerly and registers a backward rule on the graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "copacrr/autodiff.hpp"
#include "copacrr/error.hpp"
#include "copacrr/tensor.hpp"

namespace copacrr::ops {

inline constexpr std::ptrdiff_t kNoPosition = -1;

// ---------------------------------------------------------------------------
// Convolution

/// 2-D cross-correlation of a single-channel matrix with `n_f` square kernels,
/// zero "same" padding anchored at floor(g/2):
///   out[i,j,f] = sum_{a,b} in[i+a-g/2, j+b-g/2] * kernels[a,b,f].
inline Var conv2d_same(Graph& graph, Var input, Var kernels) {
  const Tensor& in = graph.value(input);
  const Tensor& ker = graph.value(kernels);
  expect_rank(in, 2, "conv2d_same input");
  expect_rank(ker, 3, "conv2d_same kernels");
  const std::size_t g = ker.dim(0);
  if (ker.dim(1) != g) {
    throw ShapeError("conv2d_same: kernel dimension 1 (" + std::to_string(ker.dim(1)) +
                     ") must equal dimension 0 (" + std::to_string(g) + ")");
  }
  if (g < 2) throw ShapeError("conv2d_same: kernel size must be at least 2, got " + std::to_string(g));
  const std::size_t filters = ker.dim(2);
  if (filters == 0) throw ShapeError("conv2d_same: kernel dimension 2 (filters) is 0");

  const std::size_t rows = in.dim(0);
  const std::size_t cols = in.dim(1);
  const auto half = static_cast<std::ptrdiff_t>(g / 2);
  const auto r = static_cast<std::ptrdiff_t>(rows);
  const auto c = static_cast<std::ptrdiff_t>(cols);

  Tensor out({rows, cols, filters});
  const double* x = in.data();
  const double* k = ker.data();
  double* y = out.data();
  for (std::ptrdiff_t i = 0; i < r; ++i) {
    for (std::size_t a = 0; a < g; ++a) {
      const std::ptrdiff_t ii = i + static_cast<std::ptrdiff_t>(a) - half;
      if (ii < 0 || ii >= r) continue;
      for (std::ptrdiff_t j = 0; j < c; ++j) {
        double* yp = y + (i * c + j) * static_cast<std::ptrdiff_t>(filters);
        for (std::size_t b = 0; b < g; ++b) {
          const std::ptrdiff_t jj = j + static_cast<std::ptrdiff_t>(b) - half;
          if (jj < 0 || jj >= c) continue;
          const double xv = x[ii * c + jj];
          if (xv == 0.0) continue;
          const double* kp = k + (a * g + b) * filters;
          for (std::size_t f = 0; f < filters; ++f) yp[f] += xv * kp[f];
        }
      }
    }
  }

  return graph.add(std::move(out), {input, kernels}, [=](Graph& gr, const Tensor& dy) {
    Tensor* dx = gr.grad_sink(input);
    Tensor* dk = gr.grad_sink(kernels);
    const Tensor& xin = gr.value(input);
    const Tensor& kin = gr.value(kernels);
    const double* dyp = dy.data();
    for (std::ptrdiff_t i = 0; i < r; ++i) {
      for (std::ptrdiff_t j = 0; j < c; ++j) {
        const double* dyo = dyp + (i * c + j) * static_cast<std::ptrdiff_t>(filters);
        if (std::all_of(dyo, dyo + filters, [](double v) { return v == 0.0; })) continue;
        for (std::size_t a = 0; a < g; ++a) {
          const std::ptrdiff_t ii = i + static_cast<std::ptrdiff_t>(a) - half;
          if (ii < 0 || ii >= r) continue;
          for (std::size_t b = 0; b < g; ++b) {
            const std::ptrdiff_t jj = j + static_cast<std::ptrdiff_t>(b) - half;
            if (jj < 0 || jj >= c) continue;
            const std::size_t tap = (a * g + b) * filters;
            if (dk) {
              const double xv = xin[static_cast<std::size_t>(ii * c + jj)];
              double* dkp = dk->data() + tap;
              for (std::size_t f = 0; f < filters; ++f) dkp[f] += xv * dyo[f];
            }
            if (dx) {
              const double* kp = kin.data() + tap;
              double acc = 0.0;
              for (std::size_t f = 0; f < filters; ++f) acc += kp[f] * dyo[f];
              (*dx)[static_cast<std::size_t>(ii * c + jj)] += acc;
            }
          }
        }
      }
    }
  });
}

/// Max over the trailing (filter) axis. Ties resolve to the lowest filter
/// index, which is also the only index receiving gradient.
inline Var max_over_filters(Graph& graph, Var input) {
  const Tensor& in = graph.value(input);
  expect_rank(in, 3, "max_over_filters input");
  const std::size_t rows = in.dim(0), cols = in.dim(1), filters = in.dim(2);
  if (filters == 0) throw ShapeError("max_over_filters: filter dimension is 0");

  Tensor out({rows, cols});
  std::vector<std::size_t> argmax(rows * cols);
  for (std::size_t cell = 0; cell < rows * cols; ++cell) {
    const double* p = in.data() + cell * filters;
    std::size_t best = 0;
    for (std::size_t f = 1; f < filters; ++f) {
      if (p[f] > p[best]) best = f;
    }
    argmax[cell] = best;
    out[cell] = p[best];
  }

  return graph.add(std::move(out), {input},
                   [=, argmax = std::move(argmax)](Graph& gr, const Tensor& dy) {
                     Tensor* dx = gr.grad_sink(input);
                     for (std::size_t cell = 0; cell < argmax.size(); ++cell) {
                       (*dx)[cell * filters + argmax[cell]] += dy[cell];
                     }
                   });
}

// ---------------------------------------------------------------------------
// k-max pooling

struct KMaxResult {
  std::vector<double> values;
  std::vector<std::ptrdiff_t> positions;
};

/// The k largest entries of `row` in descending order with their source
/// indices. Equal values keep index order. Rows shorter than k are padded
/// with value 0 and position kNoPosition.
inline KMaxResult kmax_with_positions(std::span<const double> row, std::size_t k) {
  if (k == 0) throw ConfigError("kmax_with_positions: k must be at least 1");
  KMaxResult out;
  out.values.reserve(k + 1);
  out.positions.reserve(k + 1);
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double v = row[j];
    if (out.values.size() == k && !(v > out.values.back())) continue;
    std::size_t at = out.values.size();
    while (at > 0 && out.values[at - 1] < v) --at;
    out.values.insert(out.values.begin() + static_cast<std::ptrdiff_t>(at), v);
    out.positions.insert(out.positions.begin() + static_cast<std::ptrdiff_t>(at),
                         static_cast<std::ptrdiff_t>(j));
    if (out.values.size() > k) {
      out.values.pop_back();
      out.positions.pop_back();
    }
  }
  out.values.resize(k, 0.0);
  out.positions.resize(k, kNoPosition);
  return out;
}

/// Pooled values plus the source column of each slot (row-major, rows x k).
struct PooledRows {
  Var values;
  std::vector<std::ptrdiff_t> positions;
};

/// Row-wise k-max over the column prefix [0, prefix) of a matrix.
inline PooledRows kmax_rows(Graph& graph, Var input, std::size_t k, std::size_t prefix) {
  const Tensor& in = graph.value(input);
  expect_rank(in, 2, "kmax_rows input");
  if (k == 0) throw ConfigError("kmax_rows: k must be at least 1");
  const std::size_t rows = in.dim(0), cols = in.dim(1);
  if (prefix > cols) {
    throw ShapeError("kmax_rows: prefix " + std::to_string(prefix) + " exceeds " +
                     std::to_string(cols) + " columns");
  }

  Tensor out({rows, k});
  std::vector<std::ptrdiff_t> positions(rows * k);
  for (std::size_t i = 0; i < rows; ++i) {
    KMaxResult pooled = kmax_with_positions(in.values().subspan(i * cols, prefix), k);
    std::copy(pooled.values.begin(), pooled.values.end(), out.data() + i * k);
    std::copy(pooled.positions.begin(), pooled.positions.end(), positions.begin() + i * k);
  }

  Var result = graph.add(std::move(out), {input}, [=](Graph& gr, const Tensor& dy) {
    Tensor* dx = gr.grad_sink(input);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t s = 0; s < k; ++s) {
        const std::ptrdiff_t p = positions[i * k + s];
        if (p != kNoPosition) (*dx)[i * cols + static_cast<std::size_t>(p)] += dy[i * k + s];
      }
    }
  });
  return {result, std::move(positions)};
}

/// k-max over a single vector; the result is a length-k vector.
inline PooledRows kmax(Graph& graph, Var row, std::size_t k) {
  const Tensor& in = graph.value(row);
  expect_rank(in, 1, "kmax input");
  const std::size_t n = in.size();
  Var as_matrix = graph.add(in.reshaped({1, n}), {row}, [=](Graph& gr, const Tensor& dy) {
    Tensor* dx = gr.grad_sink(row);
    for (std::size_t j = 0; j < n; ++j) (*dx)[j] += dy[j];
  });
  PooledRows pooled = kmax_rows(graph, as_matrix, k, n);
  Var flat = graph.add(graph.value(pooled.values).reshaped({k}), {pooled.values},
                       [src = pooled.values, k](Graph& gr, const Tensor& dy) {
                         Tensor* dx = gr.grad_sink(src);
                         for (std::size_t j = 0; j < k; ++j) (*dx)[j] += dy[j];
                       });
  return {flat, std::move(pooled.positions)};
}

// ---------------------------------------------------------------------------
// Reshaping and gathering

/// out[t] = source[positions[t]], or 0 where the position is kNoPosition.
inline Var gather(Graph& graph, Var source, std::vector<std::ptrdiff_t> positions, Shape shape) {
  const Tensor& src = graph.value(source);
  expect_rank(src, 1, "gather source");
  if (shape_size(shape) != positions.size()) {
    throw ShapeError("gather: " + std::to_string(positions.size()) +
                     " positions do not fill shape " + shape_string(shape));
  }
  Tensor out(std::move(shape));
  for (std::size_t t = 0; t < positions.size(); ++t) {
    const std::ptrdiff_t p = positions[t];
    if (p == kNoPosition) continue;
    if (p < 0 || static_cast<std::size_t>(p) >= src.size()) {
      throw ShapeError("gather: position " + std::to_string(p) + " outside source of length " +
                       std::to_string(src.size()));
    }
    out[t] = src[static_cast<std::size_t>(p)];
  }
  return graph.add(std::move(out), {source},
                   [=, positions = std::move(positions)](Graph& gr, const Tensor& dy) {
                     Tensor* dx = gr.grad_sink(source);
                     for (std::size_t t = 0; t < positions.size(); ++t) {
                       if (positions[t] != kNoPosition) {
                         (*dx)[static_cast<std::size_t>(positions[t])] += dy[t];
                       }
                     }
                   });
}

/// Concatenates matrices with equal row counts along the column axis.
inline Var concat_columns(Graph& graph, const std::vector<Var>& blocks) {
  if (blocks.empty()) throw ShapeError("concat_columns: no blocks");
  const std::size_t rows = graph.value(blocks.front()).dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Tensor& t = graph.value(blocks[b]);
    expect_rank(t, 2, "concat_columns block");
    if (t.dim(0) != rows) {
      throw ShapeError("concat_columns: block " + std::to_string(b) + " has dimension 0 = " +
                       std::to_string(t.dim(0)) + ", expected " + std::to_string(rows));
    }
    widths.push_back(t.dim(1));
    total += t.dim(1);
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Tensor& t = graph.value(blocks[b]);
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy_n(t.data() + i * widths[b], widths[b], out.data() + i * total + offset);
    }
    offset += widths[b];
  }
  return graph.add(std::move(out), blocks,
                   [=, widths = std::move(widths)](Graph& gr, const Tensor& dy) {
                     std::size_t off = 0;
                     for (std::size_t b = 0; b < blocks.size(); ++b) {
                       if (Tensor* dx = gr.grad_sink(blocks[b])) {
                         for (std::size_t i = 0; i < rows; ++i) {
                           for (std::size_t w = 0; w < widths[b]; ++w) {
                             (*dx)[i * widths[b] + w] += dy[i * total + off + w];
                           }
                         }
                       }
                       off += widths[b];
                     }
                   });
}

inline bool is_permutation_of(std::span<const std::size_t> perm, std::size_t n) {
  if (perm.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (std::size_t p : perm) {
    if (p >= n || seen[p]) return false;
    seen[p] = true;
  }
  return true;
}

inline std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm) {
  if (!is_permutation_of(perm, perm.size())) throw ConfigError("inverse_permutation: not a bijection");
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

/// out[i] = in[perm[i]] for a matrix's rows.
inline Var permute_rows(Graph& graph, Var input, std::span<const std::size_t> perm) {
  const Tensor& in = graph.value(input);
  expect_rank(in, 2, "permute_rows input");
  const std::size_t rows = in.dim(0), cols = in.dim(1);
  if (!is_permutation_of(perm, rows)) {
    throw ConfigError("permute_rows: permutation is not a bijection on [0, " +
                      std::to_string(rows) + ")");
  }
  std::vector<std::size_t> order(perm.begin(), perm.end());
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(in.data() + order[i] * cols, cols, out.data() + i * cols);
  }
  return graph.add(std::move(out), {input},
                   [=, order = std::move(order)](Graph& gr, const Tensor& dy) {
                     Tensor* dx = gr.grad_sink(input);
                     for (std::size_t i = 0; i < rows; ++i) {
                       for (std::size_t j = 0; j < cols; ++j) {
                         (*dx)[order[i] * cols + j] += dy[i * cols + j];
                       }
                     }
                   });
}

inline Var flatten(Graph& graph, Var input) {
  const Tensor& in = graph.value(input);
  const std::size_t n = in.size();
  return graph.add(in.reshaped({n}), {input}, [=](Graph& gr, const Tensor& dy) {
    Tensor* dx = gr.grad_sink(input);
    for (std::size_t i = 0; i < n; ++i) (*dx)[i] += dy[i];
  });
}

inline Var sum(Graph& graph, Var input) {
  const Tensor& in = graph.value(input);
  double total = 0.0;
  for (double v : in.values()) total += v;
  return graph.add(Tensor::scalar(total), {input}, [=](Graph& gr, const Tensor& dy) {
    Tensor* dx = gr.grad_sink(input);
    for (double& v : dx->values()) v += dy[0];
  });
}

// ---------------------------------------------------------------------------
// Dense layer

enum class Activation { identity, relu };

/// out[n] = act(sum_m in[m] * weights[m,n] + bias[n]).
inline Var dense(Graph& graph, Var input, Var weights, Var bias, Activation act) {
  const Tensor& x = graph.value(input);
  const Tensor& w = graph.value(weights);
  const Tensor& b = graph.value(bias);
  expect_rank(x, 1, "dense input");
  expect_rank(w, 2, "dense weights");
  expect_rank(b, 1, "dense bias");
  const std::size_t m = x.size(), n = w.dim(1);
  if (w.dim(0) != m) {
    throw ShapeError("dense: weights dimension 0 is " + std::to_string(w.dim(0)) +
                     " but input has " + std::to_string(m) + " entries");
  }
  if (b.size() != n) {
    throw ShapeError("dense: bias dimension 0 is " + std::to_string(b.size()) +
                     " but weights dimension 1 is " + std::to_string(n));
  }

  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i) {
    const double xv = x[i];
    if (xv == 0.0) continue;
    const double* wr = w.data() + i * n;
    for (std::size_t o = 0; o < n; ++o) out[o] += xv * wr[o];
  }
  for (std::size_t o = 0; o < n; ++o) {
    out[o] += b[o];
    if (act == Activation::relu) out[o] = out[o] > 0.0 ? out[o] : 0.0;
  }

  return graph.add(out, {input, weights, bias}, [=](Graph& gr, const Tensor& dy) {
    std::vector<double> dz(n);
    for (std::size_t o = 0; o < n; ++o) {
      dz[o] = (act == Activation::relu && !(out[o] > 0.0)) ? 0.0 : dy[o];
    }
    const Tensor& xv = gr.value(input);
    const Tensor& wv = gr.value(weights);
    if (Tensor* db = gr.grad_sink(bias)) {
      for (std::size_t o = 0; o < n; ++o) (*db)[o] += dz[o];
    }
    if (Tensor* dw = gr.grad_sink(weights)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double xi = xv[i];
        if (xi == 0.0) continue;
        double* row = dw->data() + i * n;
        for (std::size_t o = 0; o < n; ++o) row[o] += xi * dz[o];
      }
    }
    if (Tensor* dx = gr.grad_sink(input)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* row = wv.data() + i * n;
        double acc = 0.0;
        for (std::size_t o = 0; o < n; ++o) acc += row[o] * dz[o];
        (*dx)[i] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pairwise losses

/// -log(e^pos / (e^pos + e^neg)), shifted by max(pos, neg) before exponentiating.
inline double pairwise_ce_value(double rel_pos, double rel_neg) {
  const double m = std::max(rel_pos, rel_neg);
  return (m - rel_pos) + std::log1p(std::exp(-std::abs(rel_pos - rel_neg)));
}

/// Probability that the positive document wins: sigma(pos - neg).
inline double pairwise_win_probability(double rel_pos, double rel_neg) {
  const double d = rel_pos - rel_neg;
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

inline double pairwise_margin_value(double rel_pos, double rel_neg) {
  return std::max(0.0, 1.0 - rel_pos + rel_neg);
}

inline Var pairwise_ce_loss(Graph& graph, Var pos, Var neg) {
  const double a = graph.value(pos).item();
  const double b = graph.value(neg).item();
  const double lose = 1.0 - pairwise_win_probability(a, b);
  return graph.add(Tensor::scalar(pairwise_ce_value(a, b)), {pos, neg},
                   [=](Graph& gr, const Tensor& dy) {
                     if (Tensor* da = gr.grad_sink(pos)) (*da)[0] -= lose * dy[0];
                     if (Tensor* db = gr.grad_sink(neg)) (*db)[0] += lose * dy[0];
                   });
}

/// Hinge max(0, 1 - pos + neg); the subgradient at the kink is 0.
inline Var pairwise_margin_loss(Graph& graph, Var pos, Var neg) {
  const double a = graph.value(pos).item();
  const double b = graph.value(neg).item();
  const double slope = (1.0 - a + b) > 0.0 ? 1.0 : 0.0;
  return graph.add(Tensor::scalar(pairwise_margin_value(a, b)), {pos, neg},
                   [=](Graph& gr, const Tensor& dy) {
                     if (Tensor* da = gr.grad_sink(pos)) (*da)[0] -= slope * dy[0];
                     if (Tensor* db = gr.grad_sink(neg)) (*db)[0] += slope * dy[0];
                   });
}

}  // namespace copacrr::ops
