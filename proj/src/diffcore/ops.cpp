// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/diffcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace viewmatch::diffcore {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstMatMap<T> view(const Tensor<T>& t, std::int64_t rows, std::int64_t cols, std::int64_t offset = 0) {
  return ConstMatMap<T>(t.raw() + offset, rows, cols);
}
template <typename T>
MatMap<T> view(Tensor<T>& t, std::int64_t rows, std::int64_t cols, std::int64_t offset = 0) {
  return MatMap<T>(t.raw() + offset, rows, cols);
}

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <typename T>
Var<T> unary(const char* kind, Var<T> a, T (*f)(T), T (*df)(T, T)) {
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->record(kind, std::move(y), {a.id}, [ai = a.id, df](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ai)) return;
    const Tensor<T>& g = t.grad_buffer(self);
    const Tensor<T>& xv = t.value(ai);
    const Tensor<T>& yv = t.value(self);
    Tensor<T>& gx = t.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

// Strides of `b` broadcast against output shape `out` (0 on broadcast axes).
std::vector<std::int64_t> broadcast_strides(const Shape& out, const Shape& b) {
  require(b.size() <= out.size(), "add: cannot broadcast " + shape_string(b) + " into " + shape_string(out));
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t stride = 1;
  for (std::size_t k = 0; k < b.size(); ++k) {
    std::size_t bi = b.size() - 1 - k;
    std::size_t oi = out.size() - 1 - k;
    require(b[bi] == out[oi] || b[bi] == 1,
            "add: cannot broadcast " + shape_string(b) + " into " + shape_string(out));
    strides[oi] = (b[bi] == 1) ? 0 : stride;
    stride *= b[bi];
  }
  return strides;
}

// Calls f(out_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& bstrides, F&& f) {
  const std::size_t rank = out.size();
  const std::int64_t n = shape_numel(out);
  if (rank == 0) {
    if (n == 1) f(0, 0);
    return;
  }
  const std::int64_t inner = out.back();
  const std::int64_t inner_stride = bstrides.back();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t boff = 0;
  for (std::int64_t base = 0; base < n; base += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(base + j, boff + j * inner_stride);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      boff += bstrides[ax];
      if (idx[ax] < out[ax]) break;
      boff -= bstrides[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

// Unfolds one image [C,H,W] into columns [C*k*k, Ho*Wo].
template <typename T>
void im2col(const T* img, std::int64_t channels, std::int64_t height, std::int64_t width, int k,
            int stride, int pad, std::int64_t out_h, std::int64_t out_w, T* cols) {
  const std::int64_t plane = out_h * out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * plane;
        for (std::int64_t oi = 0; oi < out_h; ++oi) {
          const std::int64_t ii = oi * stride - pad + ki;
          for (std::int64_t oj = 0; oj < out_w; ++oj) {
            const std::int64_t jj = oj * stride - pad + kj;
            row[oi * out_w + oj] = (ii >= 0 && ii < height && jj >= 0 && jj < width)
                                       ? img[(c * height + ii) * width + jj]
                                       : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::int64_t channels, std::int64_t height, std::int64_t width, int k,
            int stride, int pad, std::int64_t out_h, std::int64_t out_w, T* img) {
  const std::int64_t plane = out_h * out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * plane;
        for (std::int64_t oi = 0; oi < out_h; ++oi) {
          const std::int64_t ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= height) continue;
          for (std::int64_t oj = 0; oj < out_w; ++oj) {
            const std::int64_t jj = oj * stride - pad + kj;
            if (jj < 0 || jj >= width) continue;
            img[(c * height + ii) * width + jj] += row[oi * out_w + oj];
          }
        }
      }
    }
  }
}

struct ConvGeometry {
  int k;
  int stride;
  int pad;
};

ConvGeometry conv_geometry(std::int64_t k, int stride) {
  if (k == 3 && stride == 2) return {3, 2, 1};
  if (k == 1 && stride == 1) return {1, 1, 0};
  throw ShapeError("conv2d: only 3x3 stride 2 and 1x1 stride 1 kernels are supported (got k=" +
                   std::to_string(k) + ", stride=" + std::to_string(stride) + ")");
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "matmul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul: incompatible shapes " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const auto n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor<T> c(Shape{n, m});
  view(c, n, m).noalias() = view(av, n, k) * view(bv, k, m);
  return a.tape->record("matmul", std::move(c), {a.id, b.id},
                        [ai = a.id, bi = b.id, n, k, m](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.grad_buffer(self);
                          if (t.requires_grad(ai)) {
                            view(t.grad_buffer(ai), n, k).noalias() +=
                                view(g, n, m) * view(t.value(bi), k, m).transpose();
                          }
                          if (t.requires_grad(bi)) {
                            view(t.grad_buffer(bi), k, m).noalias() +=
                                view(t.value(ai), n, k).transpose() * view(g, n, m);
                          }
                        });
}

template <typename T>
Var<T> matmul_transposed(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "matmul_transposed");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
          "matmul_transposed: incompatible shapes " + shape_string(av.shape()) + " x " +
              shape_string(bv.shape()) + "^T");
  const auto n = av.dim(0), k = av.dim(1), m = bv.dim(0);
  Tensor<T> c(Shape{n, m});
  view(c, n, m).noalias() = view(av, n, k) * view(bv, m, k).transpose();
  return a.tape->record("matmul", std::move(c), {a.id, b.id},
                        [ai = a.id, bi = b.id, n, k, m](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.grad_buffer(self);
                          if (t.requires_grad(ai)) {
                            view(t.grad_buffer(ai), n, k).noalias() += view(g, n, m) * view(t.value(bi), m, k);
                          }
                          if (t.requires_grad(bi)) {
                            view(t.grad_buffer(bi), m, k).noalias() +=
                                view(g, n, m).transpose() * view(t.value(ai), n, k);
                          }
                        });
}

template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "batched_matmul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1),
          "batched_matmul: incompatible shapes " + shape_string(av.shape()) + " x " +
              shape_string(bv.shape()));
  const auto batch = av.dim(0), n = av.dim(1), k = av.dim(2), m = bv.dim(2);
  Tensor<T> c(Shape{batch, n, m});
  for (std::int64_t s = 0; s < batch; ++s) {
    view(c, n, m, s * n * m).noalias() = view(av, n, k, s * n * k) * view(bv, k, m, s * k * m);
  }
  return a.tape->record(
      "matmul", std::move(c), {a.id, b.id}, [ai = a.id, bi = b.id, batch, n, k, m](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        for (std::int64_t s = 0; s < batch; ++s) {
          if (t.requires_grad(ai)) {
            view(t.grad_buffer(ai), n, k, s * n * k).noalias() +=
                view(g, n, m, s * n * m) * view(t.value(bi), k, m, s * k * m).transpose();
          }
          if (t.requires_grad(bi)) {
            view(t.grad_buffer(bi), k, m, s * k * m).noalias() +=
                view(t.value(ai), n, k, s * n * k).transpose() * view(g, n, m, s * n * m);
          }
        }
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> c = av;
  if (av.shape() == bv.shape()) {
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += bv[i];
    return a.tape->record("add", std::move(c), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
      const Tensor<T>& g = t.grad_buffer(self);
      for (auto id : {ai, bi}) {
        if (!t.requires_grad(id)) continue;
        Tensor<T>& gi = t.grad_buffer(id);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  }
  auto strides = broadcast_strides(av.shape(), bv.shape());
  for_each_broadcast(av.shape(), strides, [&](std::int64_t o, std::int64_t bi) { c[o] += bv[bi]; });
  return a.tape->record("add", std::move(c), {a.id, b.id},
                        [ai = a.id, bi = b.id, strides](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.grad_buffer(self);
                          if (t.requires_grad(ai)) {
                            Tensor<T>& ga = t.grad_buffer(ai);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          }
                          if (t.requires_grad(bi)) {
                            Tensor<T>& gb = t.grad_buffer(bi);
                            for_each_broadcast(g.shape(), strides,
                                               [&](std::int64_t o, std::int64_t b) { gb[b] += g[o]; });
                          }
                        });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "sub");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.shape() == bv.shape(), "sub: shape mismatch " + shape_string(av.shape()) + " vs " +
                                        shape_string(bv.shape()));
  Tensor<T> c = av;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= bv[i];
  return a.tape->record("sub", std::move(c), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    if (t.requires_grad(ai)) {
      Tensor<T>& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Tensor<T>& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "mul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.shape() == bv.shape(), "mul: shape mismatch " + shape_string(av.shape()) + " vs " +
                                        shape_string(bv.shape()));
  Tensor<T> c = av;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= bv[i];
  return a.tape->record("mul", std::move(c), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    if (t.requires_grad(ai)) {
      Tensor<T>& ga = t.grad_buffer(ai);
      const Tensor<T>& bv = t.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      Tensor<T>& gb = t.grad_buffer(bi);
      const Tensor<T>& av = t.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
  const T f = static_cast<T>(factor);
  Tensor<T> c = a.value();
  for (auto& v : c.storage()) v *= f;
  return a.tape->record("scale", std::move(c), {a.id}, [ai = a.id, f](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ai)) return;
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * f;
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  if (a.tape->tracking_kinks()) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      h = (h ^ static_cast<std::uint64_t>(x[i] > T{0})) * 0x100000001b3ULL;
      zeros += x[i] == T{0};
    }
    a.tape->note_kink_pattern(h, zeros);
  }
  return a.tape->record("relu", std::move(y), {a.id}, [ai = a.id](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ai)) return;
    const Tensor<T>& g = t.grad_buffer(self);
    const Tensor<T>& xv = t.value(ai);
    Tensor<T>& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T{0}) ga[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary<T>(
      "sigmoid", a,
      [](T x) -> T {
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) -> T { return y * (T{1} - y); });
}

template <typename T>
Var<T> sin(Var<T> a) {
  return unary<T>("sin", a, [](T x) -> T { return std::sin(x); }, [](T x, T) -> T { return std::cos(x); });
}

template <typename T>
Var<T> cos(Var<T> a) {
  return unary<T>("cos", a, [](T x) -> T { return std::cos(x); }, [](T x, T) -> T { return -std::sin(x); });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> y = a.value().reshaped(std::move(shape));
  return a.tape->record("reshape", std::move(y), {a.id}, [ai = a.id](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ai)) return;
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> slice_last(Var<T> a, std::int64_t begin, std::int64_t end) {
  const Tensor<T>& x = a.value();
  require(x.rank() >= 1, "slice_last: scalar input");
  const std::int64_t cols = x.dim(-1);
  require(0 <= begin && begin < end && end <= cols,
          "slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
              shape_string(x.shape()));
  const std::int64_t rows = static_cast<std::int64_t>(x.size()) / cols;
  const std::int64_t width = end - begin;
  Shape shape = x.shape();
  shape.back() = width;
  Tensor<T> y(shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(x.raw() + r * cols + begin, width, y.raw() + r * width);
  }
  return a.tape->record("slice", std::move(y), {a.id},
                        [ai = a.id, rows, cols, begin, width](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(ai)) return;
                          const Tensor<T>& g = t.grad_buffer(self);
                          Tensor<T>& ga = t.grad_buffer(ai);
                          for (std::int64_t r = 0; r < rows; ++r) {
                            for (std::int64_t c = 0; c < width; ++c) ga[r * cols + begin + c] += g[r * width + c];
                          }
                        });
}

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_last: no inputs");
  Tape<T>* tape = parts.front().tape;
  const Shape& first = parts.front().shape();
  require(!first.empty(), "concat_last: scalar input");
  const std::int64_t rows = shape_numel(first) / first.back();
  std::vector<std::int64_t> widths;
  std::vector<std::size_t> ids;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require(p.tape == tape, "concat_last: operands on different tapes");
    const Shape& s = p.shape();
    require(s.size() == first.size() && std::equal(s.begin(), s.end() - 1, first.begin()),
            "concat_last: leading axes differ " + shape_string(s) + " vs " + shape_string(first));
    widths.push_back(s.back());
    ids.push_back(p.id);
    total += s.back();
  }
  Shape shape = first;
  shape.back() = total;
  Tensor<T> y(shape);
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& x = parts[k].value();
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy_n(x.raw() + r * widths[k], widths[k], y.raw() + r * total + offset);
    }
    offset += widths[k];
  }
  return tape->record("concat", std::move(y), ids, [ids, widths, rows, total](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor<T>& gk = t.grad_buffer(ids[k]);
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * total + offset + c];
        }
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  double acc = 0.0;
  for (const T& v : a.value().data()) acc += static_cast<double>(v);
  return a.tape->record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {a.id},
                        [ai = a.id](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(ai)) return;
                          const T g = t.grad_buffer(self)[0];
                          for (auto& v : t.grad_buffer(ai).storage()) v += g;
                        });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const auto n = static_cast<double>(a.value().size());
  require(n > 0, "mean: empty input");
  double acc = 0.0;
  for (const T& v : a.value().data()) acc += static_cast<double>(v);
  return a.tape->record("mean", Tensor<T>::scalar(static_cast<T>(acc / n)), {a.id},
                        [ai = a.id, n](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(ai)) return;
                          const T g = static_cast<T>(t.grad_buffer(self)[0] / n);
                          for (auto& v : t.grad_buffer(ai).storage()) v += g;
                        });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "mse");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.shape() == bv.shape() && av.size() > 0,
          "mse: shape mismatch " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  const auto n = static_cast<double>(av.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    acc += d * d;
  }
  return a.tape->record("mse", Tensor<T>::scalar(static_cast<T>(acc / n)), {a.id, b.id},
                        [ai = a.id, bi = b.id, n](Tape<T>& t, std::size_t self) {
                          const T g = static_cast<T>(2.0 * t.grad_buffer(self)[0] / n);
                          const Tensor<T>& av = t.value(ai);
                          const Tensor<T>& bv = t.value(bi);
                          if (t.requires_grad(ai)) {
                            Tensor<T>& ga = t.grad_buffer(ai);
                            for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * (av[i] - bv[i]);
                          }
                          if (t.requires_grad(bi)) {
                            Tensor<T>& gb = t.grad_buffer(bi);
                            for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= g * (av[i] - bv[i]);
                          }
                        });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& labels) {
  const Tensor<T>& x = logits.value();
  require(x.rank() == 2, "softmax_cross_entropy: logits must be [N,C], got " + shape_string(x.shape()));
  const auto n = x.dim(0), c = x.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == n && n > 0,
          "softmax_cross_entropy: label count does not match batch");
  Tensor<T> probs(x.shape());
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    require(label >= 0 && label < c, "softmax_cross_entropy: label out of range");
    const T* row = x.raw() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    for (std::int64_t j = 0; j < c; ++j) {
      probs[static_cast<std::size_t>(r * c + j)] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
    loss += (std::log(z) + mx) - static_cast<double>(row[label]);
  }
  return logits.tape->record(
      "softmax_cross_entropy", Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(n))), {logits.id},
      [li = logits.id, probs = std::move(probs), labels, n, c](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(li)) return;
        const T g = static_cast<T>(t.grad_buffer(self)[0] / static_cast<double>(n));
        Tensor<T>& gl = t.grad_buffer(li);
        for (std::int64_t r = 0; r < n; ++r) {
          for (std::int64_t j = 0; j < c; ++j) {
            const auto i = static_cast<std::size_t>(r * c + j);
            const T onehot = (j == labels[static_cast<std::size_t>(r)]) ? T{1} : T{0};
            gl[i] += g * (probs[i] - onehot);
          }
        }
      });
}

template <typename T>
Var<T> normalize_rows(Var<T> a) {
  const Tensor<T>& x = a.value();
  require(x.rank() == 2, "normalize_rows: expected [N,D], got " + shape_string(x.shape()));
  const auto n = x.dim(0), d = x.dim(1);
  Tensor<T> y(x.shape());
  std::vector<T> norms(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double v = x[static_cast<std::size_t>(r * d + j)];
      ss += v * v;
    }
    const T norm = static_cast<T>(std::max(std::sqrt(ss), 1e-12));
    norms[static_cast<std::size_t>(r)] = norm;
    for (std::int64_t j = 0; j < d; ++j) {
      y[static_cast<std::size_t>(r * d + j)] = x[static_cast<std::size_t>(r * d + j)] / norm;
    }
  }
  return a.tape->record("normalize_rows", std::move(y), {a.id},
                        [ai = a.id, norms = std::move(norms), n, d](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(ai)) return;
                          const Tensor<T>& g = t.grad_buffer(self);
                          const Tensor<T>& yv = t.value(self);
                          Tensor<T>& ga = t.grad_buffer(ai);
                          for (std::int64_t r = 0; r < n; ++r) {
                            const std::size_t base = static_cast<std::size_t>(r * d);
                            double dot = 0.0;
                            for (std::int64_t j = 0; j < d; ++j) dot += static_cast<double>(g[base + j]) * yv[base + j];
                            const T inv = T{1} / norms[static_cast<std::size_t>(r)];
                            for (std::int64_t j = 0; j < d; ++j) {
                              ga[base + j] += (g[base + j] - static_cast<T>(dot) * yv[base + j]) * inv;
                            }
                          }
                        });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride) {
  require_same_tape(x, w, "conv2d");
  require_same_tape(x, bias, "conv2d");
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  require(xv.rank() == 4 && wv.rank() == 4 && wv.dim(1) == xv.dim(1) && wv.dim(2) == wv.dim(3),
          "conv2d: incompatible input " + shape_string(xv.shape()) + " and kernel " + shape_string(wv.shape()));
  require(bias.value().shape() == Shape{wv.dim(0)}, "conv2d: bias must be [out_channels]");
  const ConvGeometry geo = conv_geometry(wv.dim(2), stride);
  const auto batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3), cout = wv.dim(0);
  const std::int64_t oh = (h + 2 * geo.pad - geo.k) / geo.stride + 1;
  const std::int64_t ow = (wd + 2 * geo.pad - geo.k) / geo.stride + 1;
  const std::int64_t kdim = cin * geo.k * geo.k;
  const std::int64_t plane = oh * ow;
  Tensor<T> y(Shape{batch, cout, oh, ow});
  std::vector<T> cols(static_cast<std::size_t>(kdim * plane));
  const auto wmat = view(wv, cout, kdim);
  const T* bv = bias.value().raw();
  for (std::int64_t s = 0; s < batch; ++s) {
    im2col(xv.raw() + s * cin * h * wd, cin, h, wd, geo.k, geo.stride, geo.pad, oh, ow, cols.data());
    auto out = view(y, cout, plane, s * cout * plane);
    out.noalias() = wmat * ConstMatMap<T>(cols.data(), kdim, plane);
    for (std::int64_t o = 0; o < cout; ++o) out.row(o).array() += bv[o];
  }
  return x.tape->record(
      "conv2d", std::move(y), {x.id, w.id, bias.id},
      [xi = x.id, wi = w.id, bi = bias.id, geo, batch, cin, h, wd, cout, oh, ow, kdim, plane](Tape<T>& t,
                                                                                          std::size_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        const Tensor<T>& xv = t.value(xi);
        std::vector<T> cols(static_cast<std::size_t>(kdim * plane));
        std::vector<T> dcols(static_cast<std::size_t>(kdim * plane));
        const auto wmat = view(t.value(wi), cout, kdim);
        for (std::int64_t s = 0; s < batch; ++s) {
          const auto gout = view(g, cout, plane, s * cout * plane);
          if (t.requires_grad(wi)) {
            im2col(xv.raw() + s * cin * h * wd, cin, h, wd, geo.k, geo.stride, geo.pad, oh, ow, cols.data());
            view(t.grad_buffer(wi), cout, kdim).noalias() +=
                gout * ConstMatMap<T>(cols.data(), kdim, plane).transpose();
          }
          if (t.requires_grad(bi)) {
            Tensor<T>& gb = t.grad_buffer(bi);
            // Plain loop: Eigen's vectorized sum() peels by buffer alignment,
            // which makes the rounding depend on where the allocator put g.
            const T* gp = g.raw() + s * cout * plane;
            for (std::int64_t o = 0; o < cout; ++o) {
              T acc{0};
              for (std::int64_t p = 0; p < plane; ++p) acc += gp[o * plane + p];
              gb[static_cast<std::size_t>(o)] += acc;
            }
          }
          if (t.requires_grad(xi)) {
            MatMap<T>(dcols.data(), kdim, plane).noalias() = wmat.transpose() * gout;
            col2im(dcols.data(), cin, h, wd, geo.k, geo.stride, geo.pad, oh, ow,
                   t.grad_buffer(xi).raw() + s * cin * h * wd);
          }
        }
      });
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> bias) {
  require_same_tape(x, w, "conv_transpose2d");
  require_same_tape(x, bias, "conv_transpose2d");
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  require(xv.rank() == 4 && wv.rank() == 4 && wv.dim(0) == xv.dim(1) && wv.dim(2) == 3 && wv.dim(3) == 3,
          "conv_transpose2d: incompatible input " + shape_string(xv.shape()) + " and kernel " +
              shape_string(wv.shape()));
  require(bias.value().shape() == Shape{wv.dim(1)}, "conv_transpose2d: bias must be [out_channels]");
  const ConvGeometry geo{3, 2, 1};
  const auto batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3), cout = wv.dim(1);
  const std::int64_t oh = 2 * h, ow = 2 * wd;
  const std::int64_t kdim = cout * 9;
  const std::int64_t plane = h * wd;
  Tensor<T> y(Shape{batch, cout, oh, ow});
  std::vector<T> cols(static_cast<std::size_t>(kdim * plane));
  const auto wmat = view(wv, cin, kdim);
  const T* bv = bias.value().raw();
  for (std::int64_t s = 0; s < batch; ++s) {
    MatMap<T>(cols.data(), kdim, plane).noalias() = wmat.transpose() * view(xv, cin, plane, s * cin * plane);
    T* out = y.raw() + s * cout * oh * ow;
    col2im(cols.data(), cout, oh, ow, geo.k, geo.stride, geo.pad, h, wd, out);
    for (std::int64_t o = 0; o < cout; ++o) {
      for (std::int64_t p = 0; p < oh * ow; ++p) out[o * oh * ow + p] += bv[o];
    }
  }
  return x.tape->record(
      "conv_transpose2d", std::move(y), {x.id, w.id, bias.id},
      [xi = x.id, wi = w.id, bi = bias.id, geo, batch, cin, h, wd, cout, oh, ow, kdim, plane](Tape<T>& t,
                                                                                          std::size_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        std::vector<T> cols(static_cast<std::size_t>(kdim * plane));
        for (std::int64_t s = 0; s < batch; ++s) {
          const T* gout = g.raw() + s * cout * oh * ow;
          im2col(gout, cout, oh, ow, geo.k, geo.stride, geo.pad, h, wd, cols.data());
          const auto gcols = ConstMatMap<T>(cols.data(), kdim, plane);
          if (t.requires_grad(wi)) {
            view(t.grad_buffer(wi), cin, kdim).noalias() +=
                view(t.value(xi), cin, plane, s * cin * plane) * gcols.transpose();
          }
          if (t.requires_grad(xi)) {
            view(t.grad_buffer(xi), cin, plane, s * cin * plane).noalias() +=
                view(t.value(wi), cin, kdim) * gcols;
          }
          if (t.requires_grad(bi)) {
            Tensor<T>& gb = t.grad_buffer(bi);
            for (std::int64_t o = 0; o < cout; ++o) {
              T acc{0};
              for (std::int64_t p = 0; p < oh * ow; ++p) acc += gout[o * oh * ow + p];
              gb[static_cast<std::size_t>(o)] += acc;
            }
          }
        }
      });
}

#define VIEWMATCH_INSTANTIATE_OPS(T)                                              \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                      \
  template Var<T> matmul_transposed<T>(Var<T>, Var<T>);                           \
  template Var<T> batched_matmul<T>(Var<T>, Var<T>);                              \
  template Var<T> add<T>(Var<T>, Var<T>);                                         \
  template Var<T> sub<T>(Var<T>, Var<T>);                                         \
  template Var<T> mul<T>(Var<T>, Var<T>);                                         \
  template Var<T> scale<T>(Var<T>, double);                                       \
  template Var<T> relu<T>(Var<T>);                                                \
  template Var<T> sigmoid<T>(Var<T>);                                             \
  template Var<T> sin<T>(Var<T>);                                                 \
  template Var<T> cos<T>(Var<T>);                                                 \
  template Var<T> reshape<T>(Var<T>, Shape);                                      \
  template Var<T> slice_last<T>(Var<T>, std::int64_t, std::int64_t);              \
  template Var<T> concat_last<T>(const std::vector<Var<T>>&);                     \
  template Var<T> sum<T>(Var<T>);                                                 \
  template Var<T> mean<T>(Var<T>);                                                \
  template Var<T> mse<T>(Var<T>, Var<T>);                                         \
  template Var<T> softmax_cross_entropy<T>(Var<T>, const std::vector<int>&);      \
  template Var<T> normalize_rows<T>(Var<T>);                                      \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, int);                         \
  template Var<T> conv_transpose2d<T>(Var<T>, Var<T>, Var<T>);

VIEWMATCH_INSTANTIATE_OPS(float)
VIEWMATCH_INSTANTIATE_OPS(double)

}  // namespace viewmatch::diffcore
