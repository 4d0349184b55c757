#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mssda/errors.hpp"
#include "mssda/nn/tensor.hpp"

namespace mssda::nn {

/// Tape for reverse-mode differentiation. Nodes are appended in evaluation
/// order, so walking the tape backwards visits every node after all of its
/// consumers. One graph per thread; reset() between steps.
template <std::floating_point T>
class Graph {
 public:
  struct Var {
    std::size_t id = 0;
  };
  using BackFn = std::function<void(Graph&, std::size_t self)>;

  Var input(Tensor<T> value) {
    ensure_recording();
    nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
    return Var{nodes_.size() - 1};
  }

  // Leaf bound to a parameter; gradients are added into p.grad by backward().
  Var parameter(Parameter<T>& p) {
    ensure_recording();
    nodes_.push_back(Node{p.value, {}, true, &p, {}});
    return Var{nodes_.size() - 1};
  }

  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackFn back) {
    ensure_recording();
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(back) : BackFn{}});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient buffer of a node; only valid during or after backward().
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var loss) {
    if (done_) throw StateError("backward() called twice on the same graph; call reset() first");
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
      throw InputError("backward() needs a scalar loss, got shape " + shape_string(root.value.shape()));
    }
    done_ = true;
    if (!root.requires_grad) return;
    grad(loss)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.back) n.back(*this, i);
      if (n.param != nullptr) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
      }
    }
  }

  void reset() {
    nodes_.clear();
    done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }
  bool differentiated() const { return done_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackFn back;
  };

  void ensure_recording() const {
    if (done_) throw StateError("graph already differentiated; call reset() before recording");
  }

  std::vector<Node> nodes_;
  bool done_ = false;
};

template <std::floating_point T>
using Var = typename Graph<T>::Var;

// ---------------------------------------------------------------------------
// Elementwise and reduction ops

template <std::floating_point T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  if (va.shape() != vb.shape()) {
    throw InputError("add: shape mismatch " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  }
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    for (auto p : {a, b}) {
      if (!gr.requires_grad(p)) continue;
      auto& gp = gr.grad(p);
      for (std::size_t i = 0; i < gy.size(); ++i) gp[i] += gy[i];
    }
  });
}

template <std::floating_point T>
Var<T> scale(Graph<T>& g, Var<T> a, T factor) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.buffer()) v *= factor;
  return g.record(std::move(out), {a}, [a, factor](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    auto& ga = gr.grad(a);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += factor * gy[i];
  });
}

template <std::floating_point T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  if (va.shape() != vb.shape()) {
    throw InputError("mul: shape mismatch " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  }
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    const auto& va2 = gr.value(a);
    const auto& vb2 = gr.value(b);
    if (gr.requires_grad(a)) {
      auto& ga = gr.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * vb2[i];
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * va2[i];
    }
  });
}

template <std::floating_point T>
Var<T> sum(Graph<T>& g, Var<T> a) {
  const auto& va = g.value(a);
  T s{0};
  for (auto v : va.data()) s += v;
  return g.record(Tensor<T>::scalar(s), {a}, [a](Graph<T>& gr, std::size_t self) {
    const T gy = gr.grad(Var<T>{self})[0];
    auto& ga = gr.grad(a);
    for (auto& v : ga.buffer()) v += gy;
  });
}

template <std::floating_point T>
Var<T> mean(Graph<T>& g, Var<T> a) {
  const auto n = static_cast<T>(g.value(a).size());
  return scale(g, sum(g, a), T{1} / n);
}

// Copies the value into a fresh leaf; no gradient flows back.
template <std::floating_point T>
Var<T> detach(Graph<T>& g, Var<T> a) {
  return g.input(g.value(a));
}

template <std::floating_point T>
Var<T> relu(Graph<T>& g, Var<T> x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.buffer()) v = v > T{0} ? v : T{0};
  return g.record(std::move(out), {x}, [x](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    const auto& vx = gr.value(x);
    auto& gx = gr.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (vx[i] > T{0}) gx[i] += gy[i];
    }
  });
}

/// Identity on the forward pass; multiplies the upstream gradient by -lambda.
template <std::floating_point T>
Var<T> grad_reverse(Graph<T>& g, Var<T> x, T lambda) {
  if (!(lambda >= T{0})) throw InputError("grad_reverse: lambda must be nonnegative");
  return g.record(g.value(x), {x}, [x, lambda](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    auto& gx = gr.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += -lambda * gy[i];
  });
}

// ---------------------------------------------------------------------------
// Layers

inline std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                        std::size_t padding) {
  const auto padded = static_cast<long long>(length + 2 * padding);
  if (stride == 0 || padded < static_cast<long long>(kernel)) return 0;
  return static_cast<std::size_t>((padded - static_cast<long long>(kernel)) / static_cast<long long>(stride)) + 1;
}

/// x: [B, Cin, L], w: [Cout, Cin, K], b: [Cout] -> [B, Cout, Lout].
template <std::floating_point T>
Var<T> conv1d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t padding) {
  const auto& vx = g.value(x);
  const auto& vw = g.value(w);
  const auto& vb = g.value(b);
  if (vx.rank() != 3 || vw.rank() != 3 || vb.rank() != 1 || vx.dim(1) != vw.dim(1) || vb.dim(0) != vw.dim(0)) {
    throw InputError("conv1d: incompatible shapes x=" + shape_string(vx.shape()) + " w=" + shape_string(vw.shape()) +
                     " b=" + shape_string(vb.shape()));
  }
  const std::size_t batch = vx.dim(0), cin = vx.dim(1), len = vx.dim(2);
  const std::size_t cout = vw.dim(0), kernel = vw.dim(2);
  const std::size_t lout = conv1d_output_length(len, kernel, stride, padding);
  if (lout == 0) throw InputError("conv1d: output length < 1 for input length " + std::to_string(len));

  // For kernel tap k, valid output positions are those whose input index
  // lo*stride - padding + k falls inside [0, len).
  auto tap_range = [=](std::size_t k) {
    const long long off = static_cast<long long>(k) - static_cast<long long>(padding);
    long long lo_begin = off >= 0 ? 0 : (-off + static_cast<long long>(stride) - 1) / static_cast<long long>(stride);
    long long last_in = static_cast<long long>(len) - 1 - off;
    long long lo_end = last_in < 0 ? 0 : last_in / static_cast<long long>(stride) + 1;
    lo_end = std::min<long long>(lo_end, static_cast<long long>(lout));
    if (lo_begin > lo_end) lo_begin = lo_end;
    return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(lo_begin), static_cast<std::size_t>(lo_end));
  };

  Tensor<T> out({batch, cout, lout});
  const T* px = vx.data().data();
  const T* pw = vw.data().data();
  T* py = out.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* yrow = py + (n * cout + co) * lout;
      std::fill(yrow, yrow + lout, vb[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xrow = px + (n * cin + ci) * len;
        const T* wrow = pw + (co * cin + ci) * kernel;
        for (std::size_t k = 0; k < kernel; ++k) {
          const auto [b0, b1] = tap_range(k);
          const T wk = wrow[k];
          const long long off = static_cast<long long>(k) - static_cast<long long>(padding);
          for (std::size_t lo = b0; lo < b1; ++lo) yrow[lo] += wk * xrow[static_cast<long long>(lo * stride) + off];
        }
      }
    }
  }

  return g.record(std::move(out), {x, w, b}, [=](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    const T* pgy = gy.data().data();
    const T* px2 = gr.value(x).data().data();
    const T* pw2 = gr.value(w).data().data();
    T* pgx = gr.requires_grad(x) ? gr.grad(x).data().data() : nullptr;
    T* pgw = gr.requires_grad(w) ? gr.grad(w).data().data() : nullptr;
    T* pgb = gr.requires_grad(b) ? gr.grad(b).data().data() : nullptr;
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t co = 0; co < cout; ++co) {
        const T* gyrow = pgy + (n * cout + co) * lout;
        if (pgb) {
          T s{0};
          for (std::size_t lo = 0; lo < lout; ++lo) s += gyrow[lo];
          pgb[co] += s;
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T* xrow = px2 + (n * cin + ci) * len;
          T* gxrow = pgx ? pgx + (n * cin + ci) * len : nullptr;
          const std::size_t wbase = (co * cin + ci) * kernel;
          for (std::size_t k = 0; k < kernel; ++k) {
            const auto [b0, b1] = tap_range(k);
            const long long off = static_cast<long long>(k) - static_cast<long long>(padding);
            if (pgw) {
              T s{0};
              for (std::size_t lo = b0; lo < b1; ++lo) s += gyrow[lo] * xrow[static_cast<long long>(lo * stride) + off];
              pgw[wbase + k] += s;
            }
            if (gxrow) {
              const T wk = pw2[wbase + k];
              for (std::size_t lo = b0; lo < b1; ++lo) gxrow[static_cast<long long>(lo * stride) + off] += wk * gyrow[lo];
            }
          }
        }
      }
    }
  });
}

/// x: [B, In], w: [Out, In], b: [Out] -> [B, Out].
template <std::floating_point T>
Var<T> linear(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b) {
  const auto& vx = g.value(x);
  const auto& vw = g.value(w);
  const auto& vb = g.value(b);
  if (vx.rank() != 2 || vw.rank() != 2 || vb.rank() != 1 || vx.dim(1) != vw.dim(1) || vb.dim(0) != vw.dim(0)) {
    throw InputError("linear: incompatible shapes x=" + shape_string(vx.shape()) + " w=" + shape_string(vw.shape()) +
                     " b=" + shape_string(vb.shape()));
  }
  const std::size_t batch = vx.dim(0), in = vx.dim(1), outf = vw.dim(0);
  Tensor<T> out({batch, outf});
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xr = &vx[n * in];
    for (std::size_t o = 0; o < outf; ++o) {
      const T* wr = &vw[o * in];
      T s = vb[o];
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
      out[n * outf + o] = s;
    }
  }
  return g.record(std::move(out), {x, w, b}, [=](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    const auto& vx2 = gr.value(x);
    const auto& vw2 = gr.value(w);
    T* pgx = gr.requires_grad(x) ? gr.grad(x).data().data() : nullptr;
    T* pgw = gr.requires_grad(w) ? gr.grad(w).data().data() : nullptr;
    T* pgb = gr.requires_grad(b) ? gr.grad(b).data().data() : nullptr;
    for (std::size_t n = 0; n < batch; ++n) {
      const T* xr = &vx2[n * in];
      for (std::size_t o = 0; o < outf; ++o) {
        const T go = gy[n * outf + o];
        if (pgb) pgb[o] += go;
        if (pgw) {
          T* gwr = pgw + o * in;
          for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
        }
        if (pgx) {
          const T* wr = &vw2[o * in];
          T* gxr = pgx + n * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
        }
      }
    }
  });
}

/// [B, C, L] -> [B, C], mean over positions.
template <std::floating_point T>
Var<T> global_avg_pool(Graph<T>& g, Var<T> x) {
  const auto& vx = g.value(x);
  if (vx.rank() != 3) throw InputError("global_avg_pool: expected rank-3 input, got " + shape_string(vx.shape()));
  const std::size_t batch = vx.dim(0), ch = vx.dim(1), len = vx.dim(2);
  Tensor<T> out({batch, ch});
  for (std::size_t r = 0; r < batch * ch; ++r) {
    T s{0};
    for (std::size_t l = 0; l < len; ++l) s += vx[r * len + l];
    out[r] = s / static_cast<T>(len);
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    auto& gx = gr.grad(x);
    const T inv = T{1} / static_cast<T>(len);
    for (std::size_t r = 0; r < batch * ch; ++r) {
      const T v = gy[r] * inv;
      for (std::size_t l = 0; l < len; ++l) gx[r * len + l] += v;
    }
  });
}

/// [B, ...] -> [B, prod(...)].
template <std::floating_point T>
Var<T> flatten(Graph<T>& g, Var<T> x) {
  const auto& vx = g.value(x);
  const std::size_t batch = vx.dim(0);
  Tensor<T> out = vx.reshaped({batch, vx.size() / batch});
  return g.record(std::move(out), {x}, [x](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    auto& gx = gr.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

/// Divides each row of a [B, D] tensor by its L2 norm.
template <std::floating_point T>
Var<T> l2_normalize_rows(Graph<T>& g, Var<T> x) {
  const auto& vx = g.value(x);
  if (vx.rank() != 2) throw InputError("l2_normalize_rows: expected rank-2 input");
  const std::size_t rows = vx.dim(0), cols = vx.dim(1);
  Tensor<T> out(vx.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T s{0};
    for (std::size_t c = 0; c < cols; ++c) s += vx.at(r, c) * vx.at(r, c);
    norms[r] = std::max(std::sqrt(s), std::numeric_limits<T>::epsilon());
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = vx.at(r, c) / norms[r];
  }
  return g.record(std::move(out), {x}, [=, norms = std::move(norms)](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.grad(Var<T>{self});
    const auto& y = gr.value(Var<T>{self});
    auto& gx = gr.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t c = 0; c < cols; ++c) dot += y.at(r, c) * gy.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) gx.at(r, c) += (gy.at(r, c) - y.at(r, c) * dot) / norms[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

/// Row-wise softmax of a [B, K] tensor (no gradient).
template <std::floating_point T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    T m = logits.at(r, 0);
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, logits.at(r, j));
    T z{0};
    for (std::size_t j = 0; j < k; ++j) z += (p.at(r, j) = std::exp(logits.at(r, j) - m));
    for (std::size_t j = 0; j < k; ++j) p.at(r, j) /= z;
  }
  return p;
}

/// Mean over rows of -log softmax(logits)[label]; log-sum-exp stabilized.
template <std::floating_point T>
Var<T> cross_entropy(Graph<T>& g, Var<T> logits, std::span<const int> labels) {
  const auto& vl = g.value(logits);
  if (vl.rank() != 2) throw InputError("cross_entropy: logits must be [n, classes]");
  const std::size_t n = vl.dim(0), k = vl.dim(1);
  if (labels.size() != n) {
    throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  Tensor<T> probs = softmax_rows(vl);
  T loss{0};
  for (std::size_t r = 0; r < n; ++r) {
    T m = vl.at(r, 0);
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, vl.at(r, j));
    T z{0};
    for (std::size_t j = 0; j < k; ++j) z += std::exp(vl.at(r, j) - m);
    loss += (m + std::log(z)) - vl.at(r, static_cast<std::size_t>(labels[r]));
  }
  loss /= static_cast<T>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return g.record(Tensor<T>::scalar(loss), {logits},
                  [=, probs = std::move(probs), ys = std::move(ys)](Graph<T>& gr, std::size_t self) {
                    const T gy = gr.grad(Var<T>{self})[0] / static_cast<T>(n);
                    auto& gl = gr.grad(logits);
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t j = 0; j < k; ++j) {
                        const T target = static_cast<std::size_t>(ys[r]) == j ? T{1} : T{0};
                        gl.at(r, j) += gy * (probs.at(r, j) - target);
                      }
                    }
                  });
}

/// In-batch contrastive objective over paired embeddings h (originals) and
/// ht (augmented views), both [n, d]:
///   mean_i -log( exp(h_i.ht_i) / (sum_j exp(h_i.ht_j) + sum_{j!=i} exp(h_i.h_j)) )
/// Dot products are used as-is; callers normalize rows beforehand.
template <std::floating_point T>
Var<T> contrastive_loss(Graph<T>& g, Var<T> h, Var<T> ht) {
  const auto& vh = g.value(h);
  const auto& vt = g.value(ht);
  if (vh.rank() != 2 || vh.shape() != vt.shape()) {
    throw InputError("contrastive_loss: embeddings must share shape [n, d], got " + shape_string(vh.shape()) +
                     " and " + shape_string(vt.shape()));
  }
  const std::size_t n = vh.dim(0), d = vh.dim(1);
  auto dot = [d](const T* a, const T* b) {
    T s{0};
    for (std::size_t c = 0; c < d; ++c) s += a[c] * b[c];
    return s;
  };
  // a(i,j) = softmax weight of exp(h_i.ht_j); b(i,j) = weight of exp(h_i.h_j), b(i,i) = 0.
  std::vector<T> wa(n * n), wb(n * n, T{0});
  T loss{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T* hi = &vh[i * d];
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      wa[i * n + j] = dot(hi, &vt[j * d]);
      m = std::max(m, wa[i * n + j]);
      if (j != i) {
        wb[i * n + j] = dot(hi, &vh[j * d]);
        m = std::max(m, wb[i * n + j]);
      }
    }
    const T positive = wa[i * n + i];
    T z{0};
    for (std::size_t j = 0; j < n; ++j) {
      wa[i * n + j] = std::exp(wa[i * n + j] - m);
      z += wa[i * n + j];
      if (j != i) {
        wb[i * n + j] = std::exp(wb[i * n + j] - m);
        z += wb[i * n + j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      wa[i * n + j] /= z;
      wb[i * n + j] /= z;
    }
    loss += (m + std::log(z)) - positive;
  }
  loss /= static_cast<T>(n);

  return g.record(Tensor<T>::scalar(loss), {h, ht},
                  [=, wa = std::move(wa), wb = std::move(wb)](Graph<T>& gr, std::size_t self) {
                    const T gy = gr.grad(Var<T>{self})[0] / static_cast<T>(n);
                    const auto& vh2 = gr.value(h);
                    const auto& vt2 = gr.value(ht);
                    const bool need_h = gr.requires_grad(h);
                    const bool need_t = gr.requires_grad(ht);
                    T* gh = need_h ? gr.grad(h).data().data() : nullptr;
                    T* gt = need_t ? gr.grad(ht).data().data() : nullptr;
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < n; ++j) {
                        const T a = wa[i * n + j] - (i == j ? T{1} : T{0});
                        const T b = wb[i * n + j];
                        for (std::size_t c = 0; c < d; ++c) {
                          if (gh) {
                            gh[i * d + c] += gy * (a * vt2[j * d + c] + b * vh2[j * d + c]);
                            gh[j * d + c] += gy * b * vh2[i * d + c];
                          }
                          if (gt) gt[j * d + c] += gy * a * vh2[i * d + c];
                        }
                      }
                    }
                  });
}

}  // namespace mssda::nn
