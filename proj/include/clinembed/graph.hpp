#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "clinembed/error.hpp"
#include "clinembed/rng.hpp"
#include "clinembed/tensor.hpp"

namespace clinembed {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
template <typename T>
void mm_nt(const T* g, const T* b, T* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const T* grow = g + static_cast<size_t>(i) * n;
    T* crow = c + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T* brow = b + static_cast<size_t>(p) * n;
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
template <typename T>
void mm_tn(const T* a, const T* g, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    const T* grow = g + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

// Out-of-place permutation of a dense row-major array.
template <typename T>
std::vector<T> permute_raw(const std::vector<T>& data,
                           const std::vector<int>& in_shape,
                           const std::vector<int>& axes) {
  const int r = static_cast<int>(in_shape.size());
  std::vector<int> out_shape(r);
  for (int k = 0; k < r; ++k) out_shape[k] = in_shape[axes[k]];

  std::vector<size_t> in_strides(r, 1);
  for (int k = r - 2; k >= 0; --k) {
    in_strides[k] = in_strides[k + 1] * static_cast<size_t>(in_shape[k + 1]);
  }

  std::vector<T> out(data.size());
  std::vector<int> coord(r, 0);
  for (size_t flat = 0; flat < out.size(); ++flat) {
    size_t in_flat = 0;
    for (int k = 0; k < r; ++k) {
      in_flat += static_cast<size_t>(coord[k]) * in_strides[axes[k]];
    }
    out[flat] = data[in_flat];
    for (int k = r - 1; k >= 0; --k) {
      if (++coord[k] < out_shape[k]) break;
      coord[k] = 0;
    }
  }
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// Reverse-mode autodiff tape. Nodes are appended in execution order, which is
// also their topological order; backward walks the tape in reverse. One graph
// owns one forward/backward pass and is not thread-safe.
template <typename T>
class Graph {
 public:
  struct Ref {
    int id = -1;
  };

  explicit Graph(uint64_t seed = 0) : rng_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Rng& rng() { return rng_; }
  size_t node_count() const { return nodes_.size(); }

  const Tensor<T>& value(Ref r) const { return node(r).value; }

  bool requires_grad(Ref r) const { return node(r).requires_grad; }

  // Gradient of the last backward() loss with respect to node r.
  const std::vector<T>& grad(Ref r) const {
    const Node& n = node(r);
    if (!n.requires_grad) {
      throw UsageError("node does not require gradients");
    }
    if (n.grad.empty()) {
      throw UsageError("backward() has not been run on this graph");
    }
    return n.grad;
  }

  // Leaf node. Gradient participation follows t.requires_grad.
  Ref input(Tensor<T> t) {
    return push(std::move(t), nullptr);
  }

  Ref constant(Tensor<T> t) {
    t.requires_grad = false;
    return push(std::move(t), nullptr);
  }

  Ref matmul(Ref a, Ref b) {
    const Tensor<T>& ta = value(a);
    const Tensor<T>& tb = value(b);
    int batches, m, k, n;
    if (ta.rank() == 2 && tb.rank() == 2) {
      batches = 1;
      m = ta.shape[0];
      k = ta.shape[1];
      n = tb.shape[1];
      if (tb.shape[0] != k) {
        throw ShapeError("matmul: inner dimensions disagree, " +
                         shape_str(ta.shape) + " vs " + shape_str(tb.shape));
      }
    } else if (ta.rank() == 3 && tb.rank() == 3) {
      batches = ta.shape[0];
      m = ta.shape[1];
      k = ta.shape[2];
      n = tb.shape[2];
      if (tb.shape[0] != batches || tb.shape[1] != k) {
        throw ShapeError("matmul: batched shapes disagree, " +
                         shape_str(ta.shape) + " vs " + shape_str(tb.shape));
      }
    } else {
      throw ShapeError("matmul: expected two 2-d or two 3-d tensors, got " +
                       shape_str(ta.shape) + " and " + shape_str(tb.shape));
    }

    std::vector<int> out_shape =
        (ta.rank() == 2) ? std::vector<int>{m, n} : std::vector<int>{batches, m, n};
    Tensor<T> out(out_shape, T(0));
    for (int bi = 0; bi < batches; ++bi) {
      detail::mm_nn(ta.data.data() + static_cast<size_t>(bi) * m * k,
                    tb.data.data() + static_cast<size_t>(bi) * k * n,
                    out.data.data() + static_cast<size_t>(bi) * m * n, m, k, n);
    }

    out.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(out), [this, a, b, batches, m, k, n](Ref self) {
      const std::vector<T>& g = nodes_[self.id].grad;
      const Tensor<T>& ta2 = value(a);
      const Tensor<T>& tb2 = value(b);
      for (int bi = 0; bi < batches; ++bi) {
        const T* gptr = g.data() + static_cast<size_t>(bi) * m * n;
        const T* aptr = ta2.data.data() + static_cast<size_t>(bi) * m * k;
        const T* bptr = tb2.data.data() + static_cast<size_t>(bi) * k * n;
        if (nodes_[a.id].requires_grad) {
          detail::mm_nt(gptr, bptr,
                        nodes_[a.id].grad.data() + static_cast<size_t>(bi) * m * k,
                        m, n, k);
        }
        if (nodes_[b.id].requires_grad) {
          detail::mm_tn(aptr, gptr,
                        nodes_[b.id].grad.data() + static_cast<size_t>(bi) * k * n,
                        m, k, n);
        }
      }
    });
  }

  // Elementwise add of equal shapes, or row-broadcast add of a rank-1 bias
  // over the last dimension.
  Ref add(Ref a, Ref b) {
    const Tensor<T>& ta = value(a);
    const Tensor<T>& tb = value(b);
    const bool broadcast =
        tb.rank() == 1 && ta.rank() > 1 && ta.shape.back() == tb.shape[0];
    if (!broadcast && ta.shape != tb.shape) {
      throw ShapeError("add: shapes disagree, " + shape_str(ta.shape) +
                       " vs " + shape_str(tb.shape));
    }

    Tensor<T> out = ta;
    if (broadcast) {
      const int d = tb.shape[0];
      const size_t rows = ta.numel() / static_cast<size_t>(d);
      for (size_t r = 0; r < rows; ++r) {
        T* row = out.data.data() + r * d;
        for (int j = 0; j < d; ++j) row[j] += tb.data[j];
      }
    } else {
      for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    }

    out.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(out), [this, a, b, broadcast](Ref self) {
      const std::vector<T>& g = nodes_[self.id].grad;
      if (nodes_[a.id].requires_grad) {
        std::vector<T>& ga = nodes_[a.id].grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nodes_[b.id].requires_grad) {
        std::vector<T>& gb = nodes_[b.id].grad;
        if (broadcast) {
          const size_t d = gb.size();
          const size_t rows = g.size() / d;
          for (size_t r = 0; r < rows; ++r) {
            const T* row = g.data() + r * d;
            for (size_t j = 0; j < d; ++j) gb[j] += row[j];
          }
        } else {
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      }
    });
  }

  // Multiply by a compile-time constant scalar (not a graph node).
  Ref scale(Ref a, T factor) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v *= factor;
    out.requires_grad = node(a).requires_grad;
    return push(std::move(out), [this, a, factor](Ref self) {
      if (!nodes_[a.id].requires_grad) return;
      const std::vector<T>& g = nodes_[self.id].grad;
      std::vector<T>& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
  }

  Ref relu(Ref a) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v = std::max(v, T(0));
    out.requires_grad = node(a).requires_grad;
    return push(std::move(out), [this, a](Ref self) {
      if (!nodes_[a.id].requires_grad) return;
      const std::vector<T>& g = nodes_[self.id].grad;
      const std::vector<T>& x = nodes_[a.id].value.data;
      std::vector<T>& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        if (x[i] > T(0)) ga[i] += g[i];
      }
    });
  }

  // Softmax along `axis` with max-subtraction. Non-last axes are handled by
  // permuting the axis to the back and permuting the result back again.
  Ref softmax(Ref a, int axis = -1) {
    const Tensor<T>& ta = value(a);
    const int r = ta.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
      throw UsageError("softmax: axis out of range for " + shape_str(ta.shape));
    }
    if (axis == r - 1) return softmax_last(a);

    std::vector<int> fwd(r), inv(r);
    int pos = 0;
    for (int k = 0; k < r; ++k) {
      if (k != axis) fwd[pos++] = k;
    }
    fwd[r - 1] = axis;
    for (int k = 0; k < r; ++k) inv[fwd[k]] = k;
    return permute(softmax_last(permute(a, fwd)), inv);
  }

  // Layer normalization over the last dimension with learned gain and bias.
  Ref layer_norm(Ref x, Ref gain, Ref bias, T eps = T(1e-5)) {
    const Tensor<T>& tx = value(x);
    const Tensor<T>& tg = value(gain);
    const Tensor<T>& tb = value(bias);
    const int d = tx.shape.back();
    if (tg.rank() != 1 || tg.shape[0] != d || tb.rank() != 1 ||
        tb.shape[0] != d) {
      throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) +
                       "], got " + shape_str(tg.shape) + " and " +
                       shape_str(tb.shape));
    }
    const size_t rows = tx.numel() / static_cast<size_t>(d);

    Tensor<T> out(tx.shape, T(0));
    std::vector<T> means(rows), inv_std(rows);
    for (size_t r = 0; r < rows; ++r) {
      const T* row = tx.data.data() + r * d;
      T mean = T(0);
      for (int j = 0; j < d; ++j) mean += row[j];
      mean /= static_cast<T>(d);
      T var = T(0);
      for (int j = 0; j < d; ++j) {
        const T c = row[j] - mean;
        var += c * c;
      }
      var /= static_cast<T>(d);
      const T inv = T(1) / std::sqrt(var + eps);
      means[r] = mean;
      inv_std[r] = inv;
      T* orow = out.data.data() + r * d;
      for (int j = 0; j < d; ++j) {
        orow[j] = (row[j] - mean) * inv * tg.data[j] + tb.data[j];
      }
    }

    out.requires_grad = node(x).requires_grad || node(gain).requires_grad ||
                        node(bias).requires_grad;
    return push(std::move(out),
                [this, x, gain, bias, d, rows, means = std::move(means),
                 inv_std = std::move(inv_std)](Ref self) {
      const std::vector<T>& g = nodes_[self.id].grad;
      const std::vector<T>& xv = nodes_[x.id].value.data;
      const std::vector<T>& gv = nodes_[gain.id].value.data;
      std::vector<T> xhat(static_cast<size_t>(d));
      for (size_t r = 0; r < rows; ++r) {
        const T* xrow = xv.data() + r * d;
        const T* grow = g.data() + r * d;
        for (int j = 0; j < d; ++j) {
          xhat[j] = (xrow[j] - means[r]) * inv_std[r];
        }
        if (nodes_[gain.id].requires_grad) {
          std::vector<T>& gg = nodes_[gain.id].grad;
          for (int j = 0; j < d; ++j) gg[j] += grow[j] * xhat[j];
        }
        if (nodes_[bias.id].requires_grad) {
          std::vector<T>& gb = nodes_[bias.id].grad;
          for (int j = 0; j < d; ++j) gb[j] += grow[j];
        }
        if (nodes_[x.id].requires_grad) {
          T m1 = T(0), m2 = T(0);
          for (int j = 0; j < d; ++j) {
            const T dxh = grow[j] * gv[j];
            m1 += dxh;
            m2 += dxh * xhat[j];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          std::vector<T>& gx = nodes_[x.id].grad;
          T* gxrow = gx.data() + r * d;
          for (int j = 0; j < d; ++j) {
            const T dxh = grow[j] * gv[j];
            gxrow[j] += inv_std[r] * (dxh - m1 - xhat[j] * m2);
          }
        }
      }
    });
  }

  // Gathers rows of `table` ([vocab, d]) for each id; output shape is
  // id_shape + [d].
  Ref embedding_lookup(Ref table, const std::vector<int32_t>& ids,
                       const std::vector<int>& id_shape) {
    const Tensor<T>& tt = value(table);
    if (tt.rank() != 2) {
      throw ShapeError("embedding_lookup: table must be 2-d, got " +
                       shape_str(tt.shape));
    }
    const int vocab = tt.shape[0];
    const int d = tt.shape[1];
    if (ids.size() != shape_numel(id_shape)) {
      throw ShapeError("embedding_lookup: id count " +
                       std::to_string(ids.size()) + " does not match " +
                       shape_str(id_shape));
    }
    for (int32_t id : ids) {
      if (id < 0 || id >= vocab) {
        throw InputError("embedding_lookup: id " + std::to_string(id) +
                         " out of range [0, " + std::to_string(vocab) + ")");
      }
    }

    std::vector<int> out_shape = id_shape;
    out_shape.push_back(d);
    Tensor<T> out(out_shape, T(0));
    for (size_t p = 0; p < ids.size(); ++p) {
      const T* src = tt.data.data() + static_cast<size_t>(ids[p]) * d;
      std::copy(src, src + d, out.data.data() + p * d);
    }

    out.requires_grad = node(table).requires_grad;
    return push(std::move(out), [this, table, ids, d](Ref self) {
      if (!nodes_[table.id].requires_grad) return;
      const std::vector<T>& g = nodes_[self.id].grad;
      std::vector<T>& gt = nodes_[table.id].grad;
      for (size_t p = 0; p < ids.size(); ++p) {
        T* dst = gt.data() + static_cast<size_t>(ids[p]) * d;
        const T* src = g.data() + p * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }

  // Inverted dropout: elements are zeroed with probability `rate` and
  // survivors scaled by 1/(1-rate). The mask comes from this graph's seeded
  // stream, so a fixed construction seed fixes every mask.
  Ref dropout(Ref a, T rate) {
    if (!(rate >= T(0) && rate < T(1))) {
      throw UsageError("dropout: rate must be in [0, 1), got " +
                       std::to_string(static_cast<double>(rate)));
    }
    const Tensor<T>& ta = value(a);
    std::vector<T> mask(ta.numel());
    const T keep_scale = T(1) / (T(1) - rate);
    for (auto& m : mask) {
      m = (static_cast<T>(rng_.uniform()) < rate) ? T(0) : keep_scale;
    }

    Tensor<T> out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
    out.requires_grad = node(a).requires_grad;
    return push(std::move(out), [this, a, mask = std::move(mask)](Ref self) {
      if (!nodes_[a.id].requires_grad) return;
      const std::vector<T>& g = nodes_[self.id].grad;
      std::vector<T>& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
    });
  }

  // Weighted token-level cross entropy: sum_i weights[i] * (-log p(target_i))
  // over rows of `logits` [n, classes]. InfoNCE and reconstruction losses both
  // reduce to this with suitable weights.
  Ref cross_entropy(Ref logits, const std::vector<int32_t>& targets,
                    const std::vector<T>& weights) {
    const Tensor<T>& tl = value(logits);
    if (tl.rank() != 2) {
      throw ShapeError("cross_entropy: logits must be 2-d, got " +
                       shape_str(tl.shape));
    }
    const int n = tl.shape[0];
    const int classes = tl.shape[1];
    if (targets.size() != static_cast<size_t>(n) ||
        weights.size() != static_cast<size_t>(n)) {
      throw ShapeError("cross_entropy: expected " + std::to_string(n) +
                       " targets and weights, got " +
                       std::to_string(targets.size()) + " and " +
                       std::to_string(weights.size()));
    }
    for (int32_t t : targets) {
      if (t < 0 || t >= classes) {
        throw InputError("cross_entropy: target id " + std::to_string(t) +
                         " out of range [0, " + std::to_string(classes) + ")");
      }
    }

    T loss = T(0);
    for (int i = 0; i < n; ++i) {
      const T* row = tl.data.data() + static_cast<size_t>(i) * classes;
      T mx = row[0];
      for (int j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
      T z = T(0);
      for (int j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
      loss += weights[i] * (mx + std::log(z) - row[targets[i]]);
    }
    if (!std::isfinite(static_cast<double>(loss))) {
      throw NumericError("cross_entropy: non-finite loss");
    }

    Tensor<T> out({1}, loss);
    out.requires_grad = node(logits).requires_grad;
    return push(std::move(out),
                [this, logits, targets, weights, n, classes](Ref self) {
      if (!nodes_[logits.id].requires_grad) return;
      const T gscale = nodes_[self.id].grad[0];
      const std::vector<T>& lv = nodes_[logits.id].value.data;
      std::vector<T>& gl = nodes_[logits.id].grad;
      for (int i = 0; i < n; ++i) {
        const T* row = lv.data() + static_cast<size_t>(i) * classes;
        T* grow = gl.data() + static_cast<size_t>(i) * classes;
        T mx = row[0];
        for (int j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        T z = T(0);
        for (int j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
        const T w = gscale * weights[i];
        for (int j = 0; j < classes; ++j) {
          T p = std::exp(row[j] - mx) / z;
          if (j == targets[i]) p -= T(1);
          grow[j] += w * p;
        }
      }
    });
  }

  // All-pairs cosine similarity between rows: a [n, d] x b [m, d] -> [n, m].
  Ref cosine_matrix(Ref a, Ref b) {
    const Tensor<T>& ta = value(a);
    const Tensor<T>& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[1]) {
      throw ShapeError("cosine_matrix: expected [n,d] and [m,d], got " +
                       shape_str(ta.shape) + " and " + shape_str(tb.shape));
    }
    const int n = ta.shape[0];
    const int m = tb.shape[0];
    const int d = ta.shape[1];

    auto inv_norms = [d](const Tensor<T>& t, const char* which) {
      std::vector<T> inv(t.shape[0]);
      for (int i = 0; i < t.shape[0]; ++i) {
        const T* row = t.data.data() + static_cast<size_t>(i) * d;
        T sq = T(0);
        for (int j = 0; j < d; ++j) sq += row[j] * row[j];
        if (sq <= T(0)) {
          throw NumericError(std::string("cosine_matrix: zero-norm row ") +
                             std::to_string(i) + " in " + which + " input");
        }
        inv[i] = T(1) / std::sqrt(sq);
      }
      return inv;
    };
    std::vector<T> inva = inv_norms(ta, "first");
    std::vector<T> invb = inv_norms(tb, "second");

    Tensor<T> out({n, m}, T(0));
    for (int i = 0; i < n; ++i) {
      const T* arow = ta.data.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < m; ++j) {
        const T* brow = tb.data.data() + static_cast<size_t>(j) * d;
        T dot = T(0);
        for (int p = 0; p < d; ++p) dot += arow[p] * brow[p];
        out.data[static_cast<size_t>(i) * m + j] = dot * inva[i] * invb[j];
      }
    }

    out.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(out),
                [this, a, b, n, m, d, inva = std::move(inva),
                 invb = std::move(invb)](Ref self) {
      const std::vector<T>& g = nodes_[self.id].grad;
      const std::vector<T>& c = nodes_[self.id].value.data;
      const std::vector<T>& av = nodes_[a.id].value.data;
      const std::vector<T>& bv = nodes_[b.id].value.data;
      if (nodes_[a.id].requires_grad) {
        std::vector<T>& ga = nodes_[a.id].grad;
        for (int i = 0; i < n; ++i) {
          const T* grow = g.data() + static_cast<size_t>(i) * m;
          const T* crow = c.data() + static_cast<size_t>(i) * m;
          const T* arow = av.data() + static_cast<size_t>(i) * d;
          T* garow = ga.data() + static_cast<size_t>(i) * d;
          T gc = T(0);
          for (int j = 0; j < m; ++j) gc += grow[j] * crow[j];
          for (int p = 0; p < d; ++p) {
            T acc = T(0);
            for (int j = 0; j < m; ++j) {
              acc += grow[j] * bv[static_cast<size_t>(j) * d + p] * invb[j];
            }
            garow[p] += inva[i] * (acc - gc * arow[p] * inva[i]);
          }
        }
      }
      if (nodes_[b.id].requires_grad) {
        std::vector<T>& gb = nodes_[b.id].grad;
        for (int j = 0; j < m; ++j) {
          const T* brow = bv.data() + static_cast<size_t>(j) * d;
          T* gbrow = gb.data() + static_cast<size_t>(j) * d;
          T gc = T(0);
          for (int i = 0; i < n; ++i) {
            gc += g[static_cast<size_t>(i) * m + j] *
                  c[static_cast<size_t>(i) * m + j];
          }
          for (int p = 0; p < d; ++p) {
            T acc = T(0);
            for (int i = 0; i < n; ++i) {
              acc += g[static_cast<size_t>(i) * m + j] *
                     av[static_cast<size_t>(i) * d + p] * inva[i];
            }
            gbrow[p] += invb[j] * (acc - gc * brow[p] * invb[j]);
          }
        }
      }
    });
  }

  // Concatenate along the last axis.
  Ref concat(Ref a, Ref b) {
    const Tensor<T>& ta = value(a);
    const Tensor<T>& tb = value(b);
    if (ta.rank() != tb.rank()) {
      throw ShapeError("concat: rank mismatch, " + shape_str(ta.shape) +
                       " vs " + shape_str(tb.shape));
    }
    for (int k = 0; k + 1 < ta.rank(); ++k) {
      if (ta.shape[k] != tb.shape[k]) {
        throw ShapeError("concat: leading dims disagree, " +
                         shape_str(ta.shape) + " vs " + shape_str(tb.shape));
      }
    }
    const int da = ta.shape.back();
    const int db = tb.shape.back();
    std::vector<int> out_shape = ta.shape;
    out_shape.back() = da + db;
    const size_t rows = ta.numel() / static_cast<size_t>(da);

    Tensor<T> out(out_shape, T(0));
    for (size_t r = 0; r < rows; ++r) {
      std::copy(ta.data.begin() + r * da, ta.data.begin() + (r + 1) * da,
                out.data.begin() + r * (da + db));
      std::copy(tb.data.begin() + r * db, tb.data.begin() + (r + 1) * db,
                out.data.begin() + r * (da + db) + da);
    }

    out.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(out), [this, a, b, da, db, rows](Ref self) {
      const std::vector<T>& g = nodes_[self.id].grad;
      for (size_t r = 0; r < rows; ++r) {
        const T* grow = g.data() + r * (da + db);
        if (nodes_[a.id].requires_grad) {
          T* ga = nodes_[a.id].grad.data() + r * da;
          for (int j = 0; j < da; ++j) ga[j] += grow[j];
        }
        if (nodes_[b.id].requires_grad) {
          T* gb = nodes_[b.id].grad.data() + r * db;
          for (int j = 0; j < db; ++j) gb[j] += grow[da + j];
        }
      }
    });
  }

  // Mean over axis 1 of [batch, seq, d], restricted to positions with a
  // nonzero mask entry. mask has batch*seq entries.
  Ref mean_pool(Ref states, const std::vector<T>& mask) {
    const Tensor<T>& tx = value(states);
    if (tx.rank() != 3) {
      throw ShapeError("mean_pool: expected [batch, seq, d], got " +
                       shape_str(tx.shape));
    }
    const int batch = tx.shape[0];
    const int seq = tx.shape[1];
    const int d = tx.shape[2];
    if (mask.size() != static_cast<size_t>(batch) * seq) {
      throw ShapeError("mean_pool: mask size " + std::to_string(mask.size()) +
                       " does not match batch*seq " +
                       std::to_string(static_cast<size_t>(batch) * seq));
    }

    std::vector<T> counts(batch);
    for (int b = 0; b < batch; ++b) {
      int cnt = 0;
      for (int s = 0; s < seq; ++s) {
        if (mask[static_cast<size_t>(b) * seq + s] != T(0)) ++cnt;
      }
      if (cnt == 0) {
        throw InputError("mean_pool: row " + std::to_string(b) +
                         " has no unmasked positions");
      }
      counts[b] = static_cast<T>(cnt);
    }

    Tensor<T> out({batch, d}, T(0));
    for (int b = 0; b < batch; ++b) {
      T* orow = out.data.data() + static_cast<size_t>(b) * d;
      for (int s = 0; s < seq; ++s) {
        if (mask[static_cast<size_t>(b) * seq + s] == T(0)) continue;
        const T* xrow =
            tx.data.data() + (static_cast<size_t>(b) * seq + s) * d;
        for (int j = 0; j < d; ++j) orow[j] += xrow[j];
      }
      for (int j = 0; j < d; ++j) orow[j] /= counts[b];
    }

    out.requires_grad = node(states).requires_grad;
    return push(std::move(out),
                [this, states, mask, batch, seq, d,
                 counts = std::move(counts)](Ref self) {
      if (!nodes_[states.id].requires_grad) return;
      const std::vector<T>& g = nodes_[self.id].grad;
      std::vector<T>& gx = nodes_[states.id].grad;
      for (int b = 0; b < batch; ++b) {
        const T* grow = g.data() + static_cast<size_t>(b) * d;
        for (int s = 0; s < seq; ++s) {
          if (mask[static_cast<size_t>(b) * seq + s] == T(0)) continue;
          T* gxrow = gx.data() + (static_cast<size_t>(b) * seq + s) * d;
          for (int j = 0; j < d; ++j) gxrow[j] += grow[j] / counts[b];
        }
      }
    });
  }

  Ref reshape(Ref a, std::vector<int> new_shape) {
    const Tensor<T>& ta = value(a);
    if (shape_numel(new_shape) != ta.numel()) {
      throw ShapeError("reshape: cannot view " + shape_str(ta.shape) + " as " +
                       shape_str(new_shape));
    }
    Tensor<T> out(new_shape, ta.data);
    out.requires_grad = node(a).requires_grad;
    return push(std::move(out), [this, a](Ref self) {
      if (!nodes_[a.id].requires_grad) return;
      const std::vector<T>& g = nodes_[self.id].grad;
      std::vector<T>& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  Ref permute(Ref a, const std::vector<int>& axes) {
    const Tensor<T>& ta = value(a);
    const int r = ta.rank();
    if (static_cast<int>(axes.size()) != r) {
      throw UsageError("permute: axes length must equal rank " +
                       std::to_string(r));
    }
    std::vector<bool> seen(r, false);
    for (int ax : axes) {
      if (ax < 0 || ax >= r || seen[ax]) {
        throw UsageError("permute: axes must be a permutation of 0.." +
                         std::to_string(r - 1));
      }
      seen[ax] = true;
    }

    std::vector<int> out_shape(r);
    for (int k = 0; k < r; ++k) out_shape[k] = ta.shape[axes[k]];
    Tensor<T> out(out_shape, detail::permute_raw(ta.data, ta.shape, axes));

    std::vector<int> inverse(r);
    for (int k = 0; k < r; ++k) inverse[axes[k]] = k;

    out.requires_grad = node(a).requires_grad;
    return push(std::move(out),
                [this, a, inverse = std::move(inverse)](Ref self) {
      if (!nodes_[a.id].requires_grad) return;
      std::vector<T> gperm = detail::permute_raw(
          nodes_[self.id].grad, nodes_[self.id].value.shape, inverse);
      std::vector<T>& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < gperm.size(); ++i) ga[i] += gperm[i];
    });
  }

  Ref transpose_last2(Ref a) {
    const int r = value(a).rank();
    if (r < 2) {
      throw ShapeError("transpose_last2: rank must be >= 2");
    }
    std::vector<int> axes(r);
    for (int k = 0; k < r; ++k) axes[k] = k;
    std::swap(axes[r - 1], axes[r - 2]);
    return permute(a, axes);
  }

  // Mean binary cross entropy on logits against {0,1} targets.
  Ref sigmoid_bce(Ref logits, const std::vector<T>& targets) {
    const Tensor<T>& tl = value(logits);
    if (tl.numel() != targets.size()) {
      throw ShapeError("sigmoid_bce: " + std::to_string(targets.size()) +
                       " targets for " + std::to_string(tl.numel()) +
                       " logits");
    }
    for (T y : targets) {
      if (y != T(0) && y != T(1)) {
        throw InputError("sigmoid_bce: targets must be 0 or 1");
      }
    }
    const size_t n = targets.size();
    T loss = T(0);
    for (size_t i = 0; i < n; ++i) {
      const T x = tl.data[i];
      loss += std::max(x, T(0)) - x * targets[i] +
              std::log1p(std::exp(-std::abs(x)));
    }
    loss /= static_cast<T>(n);
    if (!std::isfinite(static_cast<double>(loss))) {
      throw NumericError("sigmoid_bce: non-finite loss");
    }

    Tensor<T> out({1}, loss);
    out.requires_grad = node(logits).requires_grad;
    return push(std::move(out), [this, logits, targets, n](Ref self) {
      if (!nodes_[logits.id].requires_grad) return;
      const T gscale = nodes_[self.id].grad[0] / static_cast<T>(n);
      const std::vector<T>& lv = nodes_[logits.id].value.data;
      std::vector<T>& gl = nodes_[logits.id].grad;
      for (size_t i = 0; i < n; ++i) {
        gl[i] += gscale * (detail::stable_sigmoid(lv[i]) - targets[i]);
      }
    });
  }

  // Mean squared error against fixed targets.
  Ref mse(Ref pred, const std::vector<T>& targets) {
    const Tensor<T>& tp = value(pred);
    if (tp.numel() != targets.size()) {
      throw ShapeError("mse: " + std::to_string(targets.size()) +
                       " targets for " + std::to_string(tp.numel()) +
                       " predictions");
    }
    const size_t n = targets.size();
    T loss = T(0);
    for (size_t i = 0; i < n; ++i) {
      const T diff = tp.data[i] - targets[i];
      loss += diff * diff;
    }
    loss /= static_cast<T>(n);
    if (!std::isfinite(static_cast<double>(loss))) {
      throw NumericError("mse: non-finite loss");
    }

    Tensor<T> out({1}, loss);
    out.requires_grad = node(pred).requires_grad;
    return push(std::move(out), [this, pred, targets, n](Ref self) {
      if (!nodes_[pred.id].requires_grad) return;
      const T gscale = nodes_[self.id].grad[0] * T(2) / static_cast<T>(n);
      const std::vector<T>& pv = nodes_[pred.id].value.data;
      std::vector<T>& gp = nodes_[pred.id].grad;
      for (size_t i = 0; i < n; ++i) {
        gp[i] += gscale * (pv[i] - targets[i]);
      }
    });
  }

  // Reverse pass from a scalar loss. Gradients accumulate into every node
  // with requires_grad on the path; repeated calls recompute from scratch.
  void backward(Ref loss) {
    Node& ln = node(loss);
    if (ln.value.numel() != 1) {
      throw UsageError("backward: loss must be scalar, got shape " +
                       shape_str(ln.value.shape));
    }
    if (!ln.requires_grad) {
      throw UsageError("backward: loss does not depend on any gradient-"
                       "requiring tensor");
    }
    for (Node& n : nodes_) {
      if (n.requires_grad) n.grad.assign(n.value.numel(), T(0));
    }
    ln.grad[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backprop) n.backprop(Ref{i});
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::function<void(Ref)> backprop;
  };

  const Node& node(Ref r) const {
    if (r.id < 0 || r.id >= static_cast<int>(nodes_.size())) {
      throw UsageError("invalid graph node reference");
    }
    return nodes_[static_cast<size_t>(r.id)];
  }

  Node& node(Ref r) {
    return const_cast<Node&>(static_cast<const Graph*>(this)->node(r));
  }

  Ref push(Tensor<T> value, std::function<void(Ref)> backprop) {
#ifndef NDEBUG
    if (!all_finite(value.data)) {
      throw NumericError("non-finite value produced by a forward operation");
    }
#endif
    Node n;
    n.requires_grad = value.requires_grad;
    n.value = std::move(value);
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Ref{static_cast<int>(nodes_.size() - 1)};
  }

  Ref softmax_last(Ref a) {
    const Tensor<T>& ta = value(a);
    const int d = ta.shape.back();
    const size_t rows = ta.numel() / static_cast<size_t>(d);

    Tensor<T> out(ta.shape, T(0));
    for (size_t r = 0; r < rows; ++r) {
      const T* row = ta.data.data() + r * d;
      T* orow = out.data.data() + r * d;
      T mx = row[0];
      for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
      T z = T(0);
      for (int j = 0; j < d; ++j) {
        orow[j] = std::exp(row[j] - mx);
        z += orow[j];
      }
      for (int j = 0; j < d; ++j) orow[j] /= z;
    }

    out.requires_grad = node(a).requires_grad;
    return push(std::move(out), [this, a, d, rows](Ref self) {
      if (!nodes_[a.id].requires_grad) return;
      const std::vector<T>& g = nodes_[self.id].grad;
      const std::vector<T>& p = nodes_[self.id].value.data;
      std::vector<T>& ga = nodes_[a.id].grad;
      for (size_t r = 0; r < rows; ++r) {
        const T* grow = g.data() + r * d;
        const T* prow = p.data() + r * d;
        T dot = T(0);
        for (int j = 0; j < d; ++j) dot += grow[j] * prow[j];
        T* garow = ga.data() + r * d;
        for (int j = 0; j < d; ++j) {
          garow[j] += prow[j] * (grow[j] - dot);
        }
      }
    });
  }

  std::vector<Node> nodes_;
  Rng rng_;
};

}  // namespace clinembed
