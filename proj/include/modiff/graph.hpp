#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "modiff/tensor.hpp"

namespace modiff {

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(Tensor t) {
  return std::make_shared<Tensor>(std::move(t));
}

// Reverse-mode tape. Operations execute eagerly and append one record each;
// backward() replays the records once, in reverse, accumulating gradients
// into the operands' grad buffers. Graphs are single-threaded and
// single-shot: build, call backward() at most once, discard.
class Graph {
 public:
  // Wraps a value that takes part in the graph but needs no gradient of its
  // own (inputs, conditions). Parameters are passed in directly as
  // TensorPtr leaves; anything never produced by a node is a leaf.
  TensorPtr constant(Tensor value) { return make_tensor(std::move(value)); }

  std::size_t node_count() const { return nodes_.size(); }

  // ---- arithmetic -------------------------------------------------------

  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->cols() != b->rows())
      throw DimensionError("matmul: inner dimensions do not match");
    auto out = make_tensor(Tensor::matrix(a->rows(), b->cols()));
    detail::mm_nn(a->data(), b->data(), out->data(), a->rows(), a->cols(),
                  b->cols(), false);
    push("matmul", {a, b}, out, [a, b, out] {
      const auto& g = out->grad();
      // dA += dC * B^T ; dB += A^T * dC
      detail::mm_nt_acc(g.data(), b->data(), a->grad().data(), a->rows(),
                        b->cols(), a->cols());
      detail::mm_tn_acc(a->data(), g.data(), b->grad().data(), a->rows(),
                        a->cols(), b->cols());
    });
    return out;
  }

  TensorPtr transpose(const TensorPtr& a) {
    auto out = make_tensor(transpose_plain(*a));
    push("transpose", {a}, out, [a, out] {
      auto& ga = a->grad();
      const auto& g = out->grad();
      const std::size_t r = a->rows(), c = a->cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
    return out;
  }

  TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "add");
    auto out = clone_shape(a);
    for (std::size_t i = 0; i < a->size(); ++i)
      (*out)[i] = (*a)[i] + (*b)[i];
    push("add", {a, b}, out, [a, b, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      auto& gb = b->grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    });
    return out;
  }

  TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "sub");
    auto out = clone_shape(a);
    for (std::size_t i = 0; i < a->size(); ++i)
      (*out)[i] = (*a)[i] - (*b)[i];
    push("sub", {a, b}, out, [a, b, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      auto& gb = b->grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
    });
    return out;
  }

  TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mul");
    auto out = clone_shape(a);
    for (std::size_t i = 0; i < a->size(); ++i)
      (*out)[i] = (*a)[i] * (*b)[i];
    push("mul", {a, b}, out, [a, b, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      auto& gb = b->grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * (*b)[i];
        gb[i] += g[i] * (*a)[i];
      }
    });
    return out;
  }

  TensorPtr scale(const TensorPtr& a, double s) {
    auto out = clone_shape(a);
    for (std::size_t i = 0; i < a->size(); ++i) (*out)[i] = (*a)[i] * s;
    push("scale", {a}, out, [a, out, s] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
    return out;
  }

  // a (m x n) plus a length-n bias added to every row.
  TensorPtr add_rowwise(const TensorPtr& a, const TensorPtr& bias) {
    if (bias->size() != a->cols())
      throw DimensionError("add_rowwise: bias length != columns");
    auto out = clone_shape(a);
    const std::size_t m = a->rows(), n = a->cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        (*out)[i * n + j] = (*a)[i * n + j] + (*bias)[j];
    push("add_rowwise", {a, bias}, out, [a, bias, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      auto& gb = bias->grad();
      const std::size_t m = a->rows(), n = a->cols();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          ga[i * n + j] += g[i * n + j];
          gb[j] += g[i * n + j];
        }
    });
    return out;
  }

  // a (m x n) scaled per column by a length-n row vector.
  TensorPtr mul_rowwise(const TensorPtr& a, const TensorPtr& row) {
    if (row->size() != a->cols())
      throw DimensionError("mul_rowwise: vector length != columns");
    auto out = clone_shape(a);
    const std::size_t m = a->rows(), n = a->cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        (*out)[i * n + j] = (*a)[i * n + j] * (*row)[j];
    push("mul_rowwise", {a, row}, out, [a, row, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      auto& gr = row->grad();
      const std::size_t m = a->rows(), n = a->cols();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          ga[i * n + j] += g[i * n + j] * (*row)[j];
          gr[j] += g[i * n + j] * (*a)[i * n + j];
        }
    });
    return out;
  }

  // ---- nonlinearities ---------------------------------------------------

  TensorPtr relu(const TensorPtr& a) {
    auto out = clone_shape(a);
    for (std::size_t i = 0; i < a->size(); ++i)
      (*out)[i] = (*a)[i] > 0.0 ? (*a)[i] : 0.0;
    push("relu", {a}, out, [a, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if ((*a)[i] > 0.0) ga[i] += g[i];
    });
    return out;
  }

  TensorPtr sigmoid(const TensorPtr& a) {
    auto out = clone_shape(a);
    for (std::size_t i = 0; i < a->size(); ++i)
      (*out)[i] = 1.0 / (1.0 + std::exp(-(*a)[i]));
    push("sigmoid", {a}, out, [a, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = (*out)[i];
        ga[i] += g[i] * y * (1.0 - y);
      }
    });
    return out;
  }

  // tanh-approximated GELU; smooth, which keeps finite-difference gradient
  // checks well conditioned.
  TensorPtr gelu(const TensorPtr& a) {
    constexpr double kC0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kC1 = 0.044715;
    auto out = clone_shape(a);
    for (std::size_t i = 0; i < a->size(); ++i) {
      const double x = (*a)[i];
      (*out)[i] = 0.5 * x * (1.0 + std::tanh(kC0 * (x + kC1 * x * x * x)));
    }
    push("gelu", {a}, out, [a, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = (*a)[i];
        const double u = kC0 * (x + kC1 * x * x * x);
        const double t = std::tanh(u);
        const double du = kC0 * (1.0 + 3.0 * kC1 * x * x);
        ga[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
      }
    });
    return out;
  }

  // Row-wise softmax, stabilized by max subtraction.
  TensorPtr softmax_rows(const TensorPtr& a) {
    auto out = clone_shape(a);
    const std::size_t m = a->rows(), n = a->cols();
    if (n == 0) throw DimensionError("softmax: empty rows");
    for (std::size_t i = 0; i < m; ++i) {
      const double* x = a->data() + i * n;
      double* y = out->data() + i * n;
      double mx = x[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
      }
      for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
    }
    push("softmax", {a}, out, [a, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      const std::size_t m = a->rows(), n = a->cols();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = out->data() + i * n;
        const double* gy = g.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j)
          ga[i * n + j] += y[j] * (gy[j] - dot);
      }
    });
    return out;
  }

  // Per-row normalization to zero mean / unit variance, then an affine map
  // with length-d gain and bias.
  TensorPtr layer_norm(const TensorPtr& a, const TensorPtr& gain,
                       const TensorPtr& bias, double eps = 1e-5) {
    const std::size_t m = a->rows(), n = a->cols();
    if (gain->size() != n || bias->size() != n)
      throw DimensionError("layer_norm: gain/bias length != columns");
    if (eps <= 0.0) throw DimensionError("layer_norm: eps must be positive");
    auto out = clone_shape(a);
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv_std = std::make_shared<std::vector<double>>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double* x = a->data() + i * n;
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += x[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[i] = is;
      for (std::size_t j = 0; j < n; ++j) {
        const double h = (x[j] - mean) * is;
        (*xhat)[i * n + j] = h;
        (*out)[i * n + j] = (*gain)[j] * h + (*bias)[j];
      }
    }
    push("layer_norm", {a, gain, bias}, out,
         [a, gain, bias, out, xhat, inv_std] {
           const auto& g = out->grad();
           auto& ga = a->grad();
           auto& gg = gain->grad();
           auto& gb = bias->grad();
           const std::size_t m = a->rows(), n = a->cols();
           for (std::size_t i = 0; i < m; ++i) {
             const double* h = xhat->data() + i * n;
             const double* gy = g.data() + i * n;
             double sum_dh = 0.0, sum_dh_h = 0.0;
             for (std::size_t j = 0; j < n; ++j) {
               const double dh = gy[j] * (*gain)[j];
               sum_dh += dh;
               sum_dh_h += dh * h[j];
               gg[j] += gy[j] * h[j];
               gb[j] += gy[j];
             }
             const double inv_n = 1.0 / static_cast<double>(n);
             for (std::size_t j = 0; j < n; ++j) {
               const double dh = gy[j] * (*gain)[j];
               ga[i * n + j] += (*inv_std)[i] *
                                (dh - sum_dh * inv_n - h[j] * sum_dh_h * inv_n);
             }
           }
         });
    return out;
  }

  // ---- reductions and reshapes ------------------------------------------

  // Column means over rows: (m x n) -> (1 x n).
  TensorPtr mean_rows(const TensorPtr& a) {
    const std::size_t m = a->rows(), n = a->cols();
    auto out = make_tensor(Tensor::matrix(1, n));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*out)[j] += (*a)(i, j);
    for (std::size_t j = 0; j < n; ++j) (*out)[j] /= static_cast<double>(m);
    push("mean_rows", {a}, out, [a, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      const std::size_t m = a->rows(), n = a->cols();
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv_m;
    });
    return out;
  }

  TensorPtr sum_rows(const TensorPtr& a) {
    const std::size_t m = a->rows(), n = a->cols();
    auto out = make_tensor(Tensor::matrix(1, n));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*out)[j] += (*a)(i, j);
    push("sum_rows", {a}, out, [a, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      const std::size_t m = a->rows(), n = a->cols();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j];
    });
    return out;
  }

  // Mean over every entry: any shape -> (1 x 1) scalar.
  TensorPtr mean_all(const TensorPtr& a) {
    auto out = make_tensor(Tensor::matrix(1, 1));
    double acc = 0.0;
    for (std::size_t i = 0; i < a->size(); ++i) acc += (*a)[i];
    (*out)[0] = acc / static_cast<double>(a->size());
    push("mean_all", {a}, out, [a, out] {
      const double g = out->grad()[0] / static_cast<double>(a->size());
      auto& ga = a->grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
    return out;
  }

  TensorPtr concat_rows(const TensorPtr& a, const TensorPtr& b) {
    if (a->cols() != b->cols())
      throw DimensionError("concat_rows: column counts differ");
    const std::size_t n = a->cols(), ma = a->rows(), mb = b->rows();
    auto out = make_tensor(Tensor::matrix(ma + mb, n));
    std::copy(a->data(), a->data() + ma * n, out->data());
    std::copy(b->data(), b->data() + mb * n, out->data() + ma * n);
    push("concat_rows", {a, b}, out, [a, b, out] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      auto& gb = b->grad();
      const std::size_t na = a->size();
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
      for (std::size_t i = 0; i < b->size(); ++i) gb[i] += g[na + i];
    });
    return out;
  }

  TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no operands");
    const std::size_t m = parts.front()->rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
      if (p->rows() != m) throw DimensionError("concat_cols: row counts differ");
      n += p->cols();
    }
    auto out = make_tensor(Tensor::matrix(m, n));
    std::size_t off = 0;
    for (const auto& p : parts) {
      for (std::size_t i = 0; i < m; ++i)
        std::copy(p->data() + i * p->cols(), p->data() + (i + 1) * p->cols(),
                  out->data() + i * n + off);
      off += p->cols();
    }
    push("concat_cols", parts, out, [parts, out] {
      const auto& g = out->grad();
      const std::size_t m = out->rows(), n = out->cols();
      std::size_t off = 0;
      for (const auto& p : parts) {
        auto& gp = p->grad();
        const std::size_t pc = p->cols();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < pc; ++j)
            gp[i * pc + j] += g[i * n + off + j];
        off += pc;
      }
    });
    return out;
  }

  // Rows [r0, r1) of a.
  TensorPtr slice_rows(const TensorPtr& a, std::size_t r0, std::size_t r1) {
    if (r0 >= r1 || r1 > a->rows())
      throw DimensionError("slice_rows: range out of bounds");
    const std::size_t n = a->cols();
    auto out = make_tensor(Tensor::matrix(r1 - r0, n));
    std::copy(a->data() + r0 * n, a->data() + r1 * n, out->data());
    push("slice_rows", {a}, out, [a, out, r0, n] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[r0 * n + i] += g[i];
    });
    return out;
  }

  // Columns [c0, c1) of a.
  TensorPtr slice_cols(const TensorPtr& a, std::size_t c0, std::size_t c1) {
    if (c0 >= c1 || c1 > a->cols())
      throw DimensionError("slice_cols: range out of bounds");
    const std::size_t m = a->rows(), n = a->cols(), w = c1 - c0;
    auto out = make_tensor(Tensor::matrix(m, w));
    for (std::size_t i = 0; i < m; ++i)
      std::copy(a->data() + i * n + c0, a->data() + i * n + c1,
                out->data() + i * w);
    push("slice_cols", {a}, out, [a, out, c0, w] {
      const auto& g = out->grad();
      auto& ga = a->grad();
      const std::size_t m = a->rows(), n = a->cols();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j)
          ga[i * n + c0 + j] += g[i * w + j];
    });
    return out;
  }

  // ---- backward ----------------------------------------------------------

  // Seeds the scalar loss with gradient 1 and replays the tape in reverse,
  // visiting each record exactly once. Gradients accumulate into whatever
  // grad buffers the operands already carry, so batching sums naturally.
  void backward(const TensorPtr& loss) {
    if (loss->size() != 1)
      throw DimensionError("backward: loss must be a scalar");
    require_finite(*loss, "loss");
    loss->grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output->has_grad()) it->backward_fn();
    }
    for (const auto& node : nodes_) {
      for (const auto& t : node.tensors)
        if (t->has_grad() && !std::all_of(t->grad_view().begin(),
                                          t->grad_view().end(),
                                          [](double v) { return std::isfinite(v); }))
          throw NumericError(std::string("non-finite gradient after ") +
                             node.name);
    }
  }

 private:
  struct Node {
    const char* name;
    std::vector<TensorPtr> tensors;  // inputs then output
    TensorPtr output;
    std::function<void()> backward_fn;
  };

  static TensorPtr clone_shape(const TensorPtr& a) {
    return make_tensor(Tensor(a->shape()));
  }

  static void require_same_shape(const TensorPtr& a, const TensorPtr& b,
                                 const char* what) {
    if (!a->same_shape(*b))
      throw DimensionError(std::string(what) + ": shapes differ");
  }

  void push(const char* name, std::vector<TensorPtr> inputs,
            const TensorPtr& out, std::function<void()> fn) {
    require_finite(*out, name);
    // grad buffers of all operands must exist before the closure runs
    for (auto& t : inputs) t->grad();
    out->grad();
    inputs.push_back(out);
    nodes_.push_back(Node{name, std::move(inputs), out, std::move(fn)});
  }

  std::vector<Node> nodes_;
};

}  // namespace modiff
