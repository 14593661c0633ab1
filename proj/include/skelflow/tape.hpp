// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "skelflow/tensor.hpp"

namespace skelflow {

/// Reverse-mode autodiff over dense tensors.
///
/// Every op appends a node holding the forward value and a closure that
/// scatters the node's gradient into its inputs. Gradients are only
/// propagated into nodes created with needs_grad = true (frozen parameters
/// participate in the forward pass and pass gradients through, but their own
/// gradients are never materialized).
///
/// All kernels run single-threaded with a fixed reduction order, so forward
/// and backward are bit-deterministic for fixed inputs.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;           // allocated lazily during backward
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;  // empty for leaves
  };

  int leaf(Tensor<T> value, bool needs_grad = false) {
    check_finite(value, "leaf");
    return push(std::move(value), needs_grad, nullptr);
  }

  /// Leaf that skips the finite check (noise tensors are checked at creation).
  int leaf_unchecked(Tensor<T> value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, nullptr);
  }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  const Tensor<T>& grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    require(n.needs_grad, errc::config_mismatch, "grad requested for a node without needs_grad");
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. `loss` must be a
  /// scalar (numel == 1) node.
  void backward(int loss) {
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    require(ln.value.numel() == 1, errc::shape_mismatch, "backward expects a scalar loss");
    for (Node& n : nodes_)
      if (n.needs_grad) n.grad = Tensor<T>::zeros(n.value.shape);
    if (!ln.needs_grad) return;  // nothing trainable upstream
    ln.grad.data[0] = T(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad && n.back) n.back(*this, i);
    }
    for (const Node& n : nodes_) {
      if (n.needs_grad && !n.grad.all_finite())
        fail(errc::non_finite_gradient, "gradient contains NaN/Inf");
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- ops ---------------------------------------------------------------

  /// y = x + b, same shapes.
  int add(int x, int b) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& bv = val(b);
    require(xv.same_shape(bv), errc::shape_mismatch,
            "add: " + shape_str(xv.shape) + " vs " + shape_str(bv.shape));
    Tensor<T> y = xv;
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] += bv.data[i];
    return push_op(std::move(y), {x, b}, [x, b](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      t.accum(x, [&](Tensor<T>& d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d.data[i] += g.data[i];
      });
      t.accum(b, [&](Tensor<T>& d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d.data[i] += g.data[i];
      });
    });
  }

  /// y[i,:] = x[i,:] + r  (r broadcast across rows; r has numel == cols(x))
  int add_row(int x, int r) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& rv = val(r);
    int M = xv.rows(), F = xv.cols();
    require(static_cast<int>(rv.numel()) == F, errc::shape_mismatch, "add_row: width mismatch");
    Tensor<T> y = xv;
    for (int i = 0; i < M; ++i) axpy(T(1), rv.data.data(), y.row(i), F);
    return push_op(std::move(y), {x, r}, [x, r, M, F](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      t.accum(x, [&](Tensor<T>& d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d.data[i] += g.data[i];
      });
      t.accum(r, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i) axpy(T(1), g.row(i), d.data.data(), F);
      });
    });
  }

  /// y = c * x for a compile-time constant scalar c.
  int scale(int x, double c) {
    Tensor<T> y = val(x);
    T cc = static_cast<T>(c);
    for (auto& v : y.data) v *= cc;
    return push_op(std::move(y), {x}, [x, cc](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      t.accum(x, [&](Tensor<T>& d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d.data[i] += cc * g.data[i];
      });
    });
  }

  /// Exact GELU: y = 0.5 x (1 + erf(x / sqrt(2))).
  int gelu(int x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      double v = static_cast<double>(xv.data[i]);
      y.data[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * 0.7071067811865475)));
    }
    return push_op(std::move(y), {x}, [x](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& xv = t.val(x);
      t.accum(x, [&](Tensor<T>& d) {
        for (std::size_t i = 0; i < d.numel(); ++i) {
          double v = static_cast<double>(xv.data[i]);
          double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475));
          double pdf = std::exp(-0.5 * v * v) * 0.3989422804014327;
          d.data[i] += g.data[i] * static_cast<T>(cdf + v * pdf);
        }
      });
    });
  }

  /// y = x w + b.  x: MxK, w: KxN, b: N.
  int linear(int x, int w, int b) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const Tensor<T>& bv = val(b);
    int M = xv.rows(), K = xv.cols();
    require(wv.rank() == 2 && wv.dim(0) == K, errc::shape_mismatch,
            "linear: x " + shape_str(xv.shape) + " vs w " + shape_str(wv.shape));
    int N = wv.dim(1);
    require(static_cast<int>(bv.numel()) == N, errc::shape_mismatch, "linear: bias width");
    Tensor<T> y({M, N});
    for (int i = 0; i < M; ++i) std::memcpy(y.row(i), bv.data.data(), sizeof(T) * N);
    matmul_acc(xv.data.data(), wv.data.data(), y.data.data(), M, K, N);
    return push_op(std::move(y), {x, w, b}, [x, w, b, M, K, N](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& xv = t.val(x);
      const Tensor<T>& wv = t.val(w);
      t.accum(x, [&](Tensor<T>& d) {
        // dx[i,k] = dot(g[i,:], w[k,:])
        for (int i = 0; i < M; ++i) {
          const T* gi = g.row(i);
          T* di = d.row(i);
          for (int k = 0; k < K; ++k) di[k] += dot_fixed(gi, wv.row(k), N);
        }
      });
      t.accum(w, [&](Tensor<T>& d) {
        // dw[k,:] += x[i,k] * g[i,:]
        for (int i = 0; i < M; ++i) {
          const T* xi = xv.row(i);
          const T* gi = g.row(i);
          for (int k = 0; k < K; ++k) axpy(xi[k], gi, d.row(k), N);
        }
      });
      t.accum(b, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i) axpy(T(1), g.row(i), d.data.data(), N);
      });
    });
  }

  /// Row-wise layer norm with affine parameters. scale/shift have numel == cols(x).
  int layer_norm(int x, int scale_id, int shift_id, double eps = 1e-5) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& sv = val(scale_id);
    const Tensor<T>& bv = val(shift_id);
    int M = xv.rows(), F = xv.cols();
    require(static_cast<int>(sv.numel()) == F && static_cast<int>(bv.numel()) == F,
            errc::shape_mismatch, "layer_norm: parameter width");
    Tensor<T> y(xv.shape);
    Tensor<T> xhat(xv.shape);
    Tensor<T> inv_std({M});
    for (int i = 0; i < M; ++i) {
      const T* xi = xv.row(i);
      double mu = 0;
      for (int j = 0; j < F; ++j) mu += xi[j];
      mu /= F;
      double var = 0;
      for (int j = 0; j < F; ++j) {
        double c = xi[j] - mu;
        var += c * c;
      }
      var /= F;
      double is = 1.0 / std::sqrt(var + eps);
      inv_std.data[i] = static_cast<T>(is);
      T* hi = xhat.row(i);
      T* yi = y.row(i);
      for (int j = 0; j < F; ++j) {
        hi[j] = static_cast<T>((xi[j] - mu) * is);
        yi[j] = sv.data[j] * hi[j] + bv.data[j];
      }
    }
    auto xhat_p = std::make_shared<Tensor<T>>(std::move(xhat));
    auto istd_p = std::make_shared<Tensor<T>>(std::move(inv_std));
    return push_op(std::move(y), {x, scale_id, shift_id},
                   [x, scale_id, shift_id, M, F, xhat_p, istd_p](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& sv = t.val(scale_id);
      t.accum(scale_id, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i) {
          const T* gi = g.row(i);
          const T* hi = xhat_p->row(i);
          for (int j = 0; j < F; ++j) d.data[j] += gi[j] * hi[j];
        }
      });
      t.accum(shift_id, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i) axpy(T(1), g.row(i), d.data.data(), F);
      });
      t.accum(x, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i) {
          const T* gi = g.row(i);
          const T* hi = xhat_p->row(i);
          double m1 = 0, m2 = 0;  // mean(gh), mean(gh*xhat)
          for (int j = 0; j < F; ++j) {
            double gh = static_cast<double>(gi[j]) * sv.data[j];
            m1 += gh;
            m2 += gh * hi[j];
          }
          m1 /= F;
          m2 /= F;
          double is = istd_p->data[i];
          T* di = d.row(i);
          for (int j = 0; j < F; ++j) {
            double gh = static_cast<double>(gi[j]) * sv.data[j];
            di[j] += static_cast<T>(is * (gh - m1 - hi[j] * m2));
          }
        }
      });
    });
  }

  /// Row-wise softmax with max-shift.
  int softmax_rows(int x) {
    const Tensor<T>& xv = val(x);
    int M = xv.rows(), N = xv.cols();
    Tensor<T> y(xv.shape);
    for (int i = 0; i < M; ++i) softmax_row(xv.row(i), y.row(i), N);
    return push_op(std::move(y), {x}, [x, M, N](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& y = t.nodes_[self].value;
      t.accum(x, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i) {
          const T* gi = g.row(i);
          const T* yi = y.row(i);
          double s = 0;
          for (int j = 0; j < N; ++j) s += static_cast<double>(gi[j]) * yi[j];
          T* di = d.row(i);
          for (int j = 0; j < N; ++j) di[j] += yi[j] * static_cast<T>(gi[j] - s);
        }
      });
    });
  }

  /// Gather rows: out.shape = idx.shape + [F]. Gradient scatters additively.
  int embedding_lookup(int table, const ITensor& idx) {
    const Tensor<T>& tv = val(table);
    require(tv.rank() == 2, errc::shape_mismatch, "embedding_lookup: table must be KxF");
    int K = tv.dim(0), F = tv.dim(1);
    for (int v : idx.data)
      require(v >= 0 && v < K, errc::index_out_of_range,
              "embedding index " + std::to_string(v) + " not in [0," + std::to_string(K) + ")");
    Shape out_shape = idx.shape;
    out_shape.push_back(F);
    Tensor<T> y(out_shape);
    for (std::size_t i = 0; i < idx.numel(); ++i)
      std::memcpy(y.data.data() + i * F, tv.row(idx.data[i]), sizeof(T) * F);
    auto idx_p = std::make_shared<ITensor>(idx);
    return push_op(std::move(y), {table}, [table, idx_p, F](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      t.accum(table, [&](Tensor<T>& d) {
        for (std::size_t i = 0; i < idx_p->numel(); ++i)
          axpy(T(1), g.data.data() + i * F, d.row(idx_p->data[i]), F);
      });
    });
  }

  /// Pairwise additive attention bias from code tables:
  ///   out[i,j] = dot(q[i], tq[idx[i,j]]) + dot(k[j], tk[idx[i,j]])
  /// q,k: NxF; tq,tk: RxF; idx: MxN integer codes (usually M == N).
  int pair_bias(int q, int k, int tq, int tk, const ITensor& idx) {
    const Tensor<T>& qv = val(q);
    const Tensor<T>& kv = val(k);
    const Tensor<T>& tqv = val(tq);
    const Tensor<T>& tkv = val(tk);
    require(idx.shape.size() == 2, errc::shape_mismatch, "pair_bias: idx must be 2-D");
    int M = idx.shape[0], N = idx.shape[1];
    int F = qv.cols();
    require(qv.rows() == M && kv.rows() == N && kv.cols() == F, errc::shape_mismatch,
            "pair_bias: q/k shapes");
    int R = tqv.dim(0);
    require(tqv.dim(1) == F && tkv.dim(0) == R && tkv.dim(1) == F, errc::shape_mismatch,
            "pair_bias: table shapes");
    for (int v : idx.data)
      require(v >= 0 && v < R, errc::index_out_of_range, "pair_bias: code out of range");
    Tensor<T> y({M, N});
    for (int i = 0; i < M; ++i) {
      const T* qi = qv.row(i);
      T* yi = y.row(i);
      for (int j = 0; j < N; ++j) {
        int c = idx.at(i, j);
        yi[j] = dot_fixed(qi, tqv.row(c), F) + dot_fixed(kv.row(j), tkv.row(c), F);
      }
    }
    auto idx_p = std::make_shared<ITensor>(idx);
    return push_op(std::move(y), {q, k, tq, tk}, [q, k, tq, tk, idx_p, M, N, F](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& qv = t.val(q);
      const Tensor<T>& kv = t.val(k);
      const Tensor<T>& tqv = t.val(tq);
      const Tensor<T>& tkv = t.val(tk);
      t.accum(q, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j)
            axpy(g.at(i, j), tqv.row(idx_p->at(i, j)), d.row(i), F);
      });
      t.accum(k, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j)
            axpy(g.at(i, j), tkv.row(idx_p->at(i, j)), d.row(j), F);
      });
      t.accum(tq, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j)
            axpy(g.at(i, j), qv.row(i), d.row(idx_p->at(i, j)), F);
      });
      t.accum(tk, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j)
            axpy(g.at(i, j), kv.row(j), d.row(idx_p->at(i, j)), F);
      });
    });
  }

  /// Single-head attention with optional additive score bias and value bias:
  ///   s[i,j] = (dot(q[i],k[j]) + sb[i,j]) / sqrt(F)
  ///   out[i] = sum_j softmax(s)[i,j] * (v[j] + vb[i,j,:])
  /// sb: MxN (or -1), vb: MxNxF (or -1). The bias is added before the shared
  /// 1/sqrt(F) scale.
  int biased_attention(int q, int k, int v, int sb = -1, int vb = -1) {
    const Tensor<T>& qv = val(q);
    const Tensor<T>& kv = val(k);
    const Tensor<T>& vv = val(v);
    int M = qv.rows(), F = qv.cols(), N = kv.rows();
    require(kv.cols() == F && vv.rows() == N && vv.cols() == F, errc::shape_mismatch,
            "biased_attention: q/k/v shapes");
    if (sb >= 0)
      require(val(sb).rows() == M && val(sb).cols() == N, errc::shape_mismatch,
              "biased_attention: score bias shape");
    if (vb >= 0)
      require(val(vb).rank() == 3 && val(vb).dim(0) == M && val(vb).dim(1) == N &&
                  val(vb).dim(2) == F,
              errc::shape_mismatch, "biased_attention: value bias shape");
    T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(F)));

    Tensor<T> probs({M, N});
    {
      Tensor<T> srow({N});
      for (int i = 0; i < M; ++i) {
        const T* qi = qv.row(i);
        for (int j = 0; j < N; ++j) {
          T s = dot_fixed(qi, kv.row(j), F);
          if (sb >= 0) s += val(sb).at(i, j);
          srow.data[j] = s * inv_sqrt;
        }
        softmax_row(srow.data.data(), probs.row(i), N);
      }
    }
    Tensor<T> y({M, F});
    for (int i = 0; i < M; ++i) {
      const T* pi = probs.row(i);
      T* yi = y.row(i);
      for (int j = 0; j < N; ++j) axpy(pi[j], vv.row(j), yi, F);
      if (vb >= 0) {
        const T* vbi = val(vb).data.data() + static_cast<std::size_t>(i) * N * F;
        for (int j = 0; j < N; ++j) axpy(pi[j], vbi + static_cast<std::size_t>(j) * F, yi, F);
      }
    }
    auto probs_p = std::make_shared<Tensor<T>>(std::move(probs));
    std::vector<int> ins = {q, k, v};
    if (sb >= 0) ins.push_back(sb);
    if (vb >= 0) ins.push_back(vb);
    return push_op(std::move(y), ins,
                   [q, k, v, sb, vb, probs_p, M, N, F, inv_sqrt](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& qv = t.val(q);
      const Tensor<T>& kv = t.val(k);
      const Tensor<T>& vv = t.val(v);
      const Tensor<T>& p = *probs_p;

      // ds[i,j] = p_ij * (gp_ij - sum_l p_il gp_il), gp_ij = g_i . (v_j + vb_ij)
      Tensor<T> ds({M, N});
      for (int i = 0; i < M; ++i) {
        const T* gi = g.row(i);
        const T* pi = p.row(i);
        T* dsi = ds.row(i);
        double acc = 0;
        for (int j = 0; j < N; ++j) {
          T gp = dot_fixed(gi, vv.row(j), F);
          if (vb >= 0)
            gp += dot_fixed(gi,
                            t.val(vb).data.data() + (static_cast<std::size_t>(i) * N + j) * F, F);
          dsi[j] = gp;
          acc += static_cast<double>(pi[j]) * gp;
        }
        for (int j = 0; j < N; ++j) dsi[j] = pi[j] * (dsi[j] - static_cast<T>(acc));
      }

      t.accum(q, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i) {
          const T* dsi = ds.row(i);
          T* di = d.row(i);
          for (int j = 0; j < N; ++j) axpy(inv_sqrt * dsi[j], kv.row(j), di, F);
        }
      });
      t.accum(k, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i) {
          const T* dsi = ds.row(i);
          const T* qi = qv.row(i);
          for (int j = 0; j < N; ++j) axpy(inv_sqrt * dsi[j], qi, d.row(j), F);
        }
      });
      t.accum(v, [&](Tensor<T>& d) {
        for (int i = 0; i < M; ++i) {
          const T* pi = p.row(i);
          const T* gi = g.row(i);
          for (int j = 0; j < N; ++j) axpy(pi[j], gi, d.row(j), F);
        }
      });
      if (sb >= 0)
        t.accum(sb, [&](Tensor<T>& d) {
          for (std::size_t i = 0; i < d.numel(); ++i) d.data[i] += inv_sqrt * ds.data[i];
        });
      if (vb >= 0)
        t.accum(vb, [&](Tensor<T>& d) {
          for (int i = 0; i < M; ++i) {
            const T* pi = p.row(i);
            const T* gi = g.row(i);
            T* di = d.data.data() + static_cast<std::size_t>(i) * N * F;
            for (int j = 0; j < N; ++j) axpy(pi[j], gi, di + static_cast<std::size_t>(j) * F, F);
          }
        });
    });
  }

  /// Multi-head scaled dot-product attention on already-projected q/k/v.
  /// Heads are contiguous column slices; per-head scale 1/sqrt(F/heads).
  int multihead_attention(int q, int k, int v, int heads) {
    const Tensor<T>& qv = val(q);
    const Tensor<T>& kv = val(k);
    const Tensor<T>& vv = val(v);
    int M = qv.rows(), F = qv.cols(), N = kv.rows();
    require(kv.cols() == F && vv.rows() == N && vv.cols() == F, errc::shape_mismatch,
            "multihead_attention: q/k/v shapes");
    require(heads >= 1 && F % heads == 0, errc::config_mismatch,
            "multihead_attention: F must be divisible by heads");
    int Dh = F / heads;
    T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(Dh)));

    // probs laid out [head][M][N]
    auto probs_p = std::make_shared<Tensor<T>>(Shape{heads, M, N});
    Tensor<T> y({M, F});
    {
      // contiguous per-head copies of k (transposed) for cache-friendly scores
      Tensor<T> kt({Dh, N});
      Tensor<T> srow({N});
      for (int h = 0; h < heads; ++h) {
        int c0 = h * Dh;
        for (int j = 0; j < N; ++j)
          for (int c = 0; c < Dh; ++c) kt.at(c, j) = kv.at(j, c0 + c);
        T* ph = probs_p->data.data() + static_cast<std::size_t>(h) * M * N;
        for (int i = 0; i < M; ++i) {
          const T* qi = qv.row(i) + c0;
          for (int j = 0; j < N; ++j) srow.data[j] = T(0);
          for (int c = 0; c < Dh; ++c) axpy(qi[c], kt.row(c), srow.data.data(), N);
          for (int j = 0; j < N; ++j) srow.data[j] *= inv_sqrt;
          softmax_row(srow.data.data(), ph + static_cast<std::size_t>(i) * N, N);
        }
        for (int i = 0; i < M; ++i) {
          const T* pi = ph + static_cast<std::size_t>(i) * N;
          T* yi = y.row(i) + c0;
          for (int j = 0; j < N; ++j) axpy(pi[j], vv.row(j) + c0, yi, Dh);
        }
      }
    }
    return push_op(std::move(y), {q, k, v}, [q, k, v, heads, probs_p, M, N, F](Tape& t, int self) {
      int Dh = F / heads;
      T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(Dh)));
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& qv = t.val(q);
      const Tensor<T>& kv = t.val(k);
      const Tensor<T>& vv = t.val(v);
      Tensor<T> ds({M, N});
      for (int h = 0; h < heads; ++h) {
        int c0 = h * Dh;
        const T* ph = probs_p->data.data() + static_cast<std::size_t>(h) * M * N;
        for (int i = 0; i < M; ++i) {
          const T* gi = g.row(i) + c0;
          const T* pi = ph + static_cast<std::size_t>(i) * N;
          T* dsi = ds.row(i);
          double acc = 0;
          for (int j = 0; j < N; ++j) {
            T gp = dot_fixed(gi, vv.row(j) + c0, Dh);
            dsi[j] = gp;
            acc += static_cast<double>(pi[j]) * gp;
          }
          for (int j = 0; j < N; ++j) dsi[j] = pi[j] * (dsi[j] - static_cast<T>(acc));
        }
        t.accum(q, [&](Tensor<T>& d) {
          for (int i = 0; i < M; ++i) {
            const T* dsi = ds.row(i);
            T* di = d.row(i) + c0;
            for (int j = 0; j < N; ++j) axpy(inv_sqrt * dsi[j], kv.row(j) + c0, di, Dh);
          }
        });
        t.accum(k, [&](Tensor<T>& d) {
          for (int i = 0; i < M; ++i) {
            const T* dsi = ds.row(i);
            const T* qi = qv.row(i) + c0;
            for (int j = 0; j < N; ++j) axpy(inv_sqrt * dsi[j], qi, d.row(j) + c0, Dh);
          }
        });
        t.accum(v, [&](Tensor<T>& d) {
          for (int i = 0; i < M; ++i) {
            const T* pi = ph + static_cast<std::size_t>(i) * N;
            const T* gi = g.row(i) + c0;
            for (int j = 0; j < N; ++j) axpy(pi[j], gi, d.row(j) + c0, Dh);
          }
        });
      }
    });
  }

  /// Scalar loss: mean((x - target)^2) over all elements. target is a constant.
  int mse_against(int x, const Tensor<T>& target) {
    const Tensor<T>& xv = val(x);
    require(xv.same_shape(target), errc::shape_mismatch, "mse_against: shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      double dlt = static_cast<double>(xv.data[i]) - static_cast<double>(target.data[i]);
      acc += dlt * dlt;
    }
    std::size_t n = xv.numel();
    Tensor<T> y({1});
    y.data[0] = static_cast<T>(acc / static_cast<double>(n));
    auto tgt = std::make_shared<Tensor<T>>(target);
    return push_op(std::move(y), {x}, [x, tgt, n](Tape& t, int self) {
      T g = t.nodes_[self].grad.data[0];
      const Tensor<T>& xv = t.val(x);
      T c = static_cast<T>(2.0 / static_cast<double>(n)) * g;
      t.accum(x, [&](Tensor<T>& d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d.data[i] += c * (xv.data[i] - tgt->data[i]);
      });
    });
  }

  /// Scalar projection: sum(x * r) for a constant r (used by gradient checks).
  int dot_const(int x, const Tensor<T>& r) {
    const Tensor<T>& xv = val(x);
    require(xv.same_shape(r), errc::shape_mismatch, "dot_const: shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < xv.numel(); ++i)
      acc += static_cast<double>(xv.data[i]) * static_cast<double>(r.data[i]);
    Tensor<T> y({1});
    y.data[0] = static_cast<T>(acc);
    auto rp = std::make_shared<Tensor<T>>(r);
    return push_op(std::move(y), {x}, [x, rp](Tape& t, int self) {
      T g = t.nodes_[self].grad.data[0];
      t.accum(x, [&](Tensor<T>& d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d.data[i] += g * rp->data[i];
      });
    });
  }

 private:
  static void softmax_row(const T* x, T* y, int n) {
    T mx = x[0];
    for (int j = 1; j < n; ++j) mx = x[j] > mx ? x[j] : mx;
    double sum = 0;
    for (int j = 0; j < n; ++j) {
      double e = std::exp(static_cast<double>(x[j] - mx));
      y[j] = static_cast<T>(e);
      sum += e;
    }
    T inv = static_cast<T>(1.0 / sum);
    for (int j = 0; j < n; ++j) y[j] *= inv;
  }

  static void check_finite(const Tensor<T>& v, const char* op) {
    if (!v.all_finite()) fail(errc::non_finite_value, std::string(op) + " produced NaN/Inf");
  }

  int push(Tensor<T> value, bool needs_grad, std::function<void(Tape&, int)> back) {
    nodes_.push_back(Node{std::move(value), {}, needs_grad, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int push_op(Tensor<T> value, const std::vector<int>& inputs, std::function<void(Tape&, int)> back) {
    check_finite(value, "op");
    bool ng = false;
    for (int i : inputs) ng = ng || nodes_[static_cast<std::size_t>(i)].needs_grad;
    return push(std::move(value), ng, ng ? std::move(back) : nullptr);
  }

  /// Run `fn` against the gradient buffer of `id` if that node wants a gradient.
  template <typename Fn>
  void accum(int id, Fn&& fn) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad) fn(n.grad);
  }

  std::vector<Node> nodes_;
};

}  // namespace skelflow
