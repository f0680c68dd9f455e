#include "xmsleep/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include <Eigen/Core>

namespace xmsleep::diff {

namespace {

template <typename T>
using NodeRef = Node<T>&;

// C[M,N] += A[M,K] . B[K,N], row-major.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> am(a, Eigen::Index(m), Eigen::Index(k));
  Eigen::Map<const Mat> bm(b, Eigen::Index(k), Eigen::Index(n));
  Eigen::Map<Mat> cm(c, Eigen::Index(m), Eigen::Index(n));
  cm.noalias() += am * bm;
}

// C[M,N] += A[M,K] . B^T with B stored as [N,K].
template <typename T>
void gemm_acc_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> am(a, Eigen::Index(m), Eigen::Index(k));
  Eigen::Map<const Mat> bm(b, Eigen::Index(n), Eigen::Index(k));
  Eigen::Map<Mat> cm(c, Eigen::Index(m), Eigen::Index(n));
  cm.noalias() += am * bm.transpose();
}

// C[M,N] += A^T . B with A stored as [K,M].
template <typename T>
void gemm_acc_at(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> am(a, Eigen::Index(k), Eigen::Index(m));
  Eigen::Map<const Mat> bm(b, Eigen::Index(k), Eigen::Index(n));
  Eigen::Map<Mat> cm(c, Eigen::Index(m), Eigen::Index(n));
  cm.noalias() += am.transpose() * bm;
}

template <typename T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  return out;
}

std::size_t suffix_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - b.size())) {
    return numel(b);
  }
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " +
                       shape_str(a));
}

template <typename T>
bool wants_grad(const std::shared_ptr<Node<T>>& n) {
  return n && n->requires_grad;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t nb = suffix_broadcast(a.shape(), b.shape(), "add");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); i += nb)
    for (std::size_t j = 0; j < nb; ++j) y[i + j] = av[i + j] + bv[j];
  return Tensor<T>::make_result(a.shape(), std::move(y), {a.node(), b.node()},
                                [nb](Node<T>& self) {
                                  auto& pa = self.parents[0];
                                  auto& pb = self.parents[1];
                                  const auto& g = self.grad;
                                  if (pa->requires_grad) {
                                    auto& ga = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                  }
                                  if (pb->requires_grad) {
                                    auto& gb = pb->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); i += nb)
                                      for (std::size_t j = 0; j < nb; ++j) gb[j] += g[i + j];
                                  }
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t nb = suffix_broadcast(a.shape(), b.shape(), "sub");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); i += nb)
    for (std::size_t j = 0; j < nb; ++j) y[i + j] = av[i + j] - bv[j];
  return Tensor<T>::make_result(a.shape(), std::move(y), {a.node(), b.node()},
                                [nb](Node<T>& self) {
                                  auto& pa = self.parents[0];
                                  auto& pb = self.parents[1];
                                  const auto& g = self.grad;
                                  if (pa->requires_grad) {
                                    auto& ga = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                  }
                                  if (pb->requires_grad) {
                                    auto& gb = pb->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); i += nb)
                                      for (std::size_t j = 0; j < nb; ++j) gb[j] -= g[i + j];
                                  }
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t nb = suffix_broadcast(a.shape(), b.shape(), "mul");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); i += nb)
    for (std::size_t j = 0; j < nb; ++j) y[i + j] = av[i + j] * bv[j];
  return Tensor<T>::make_result(a.shape(), std::move(y), {a.node(), b.node()},
                                [nb](Node<T>& self) {
                                  auto& pa = self.parents[0];
                                  auto& pb = self.parents[1];
                                  const auto& g = self.grad;
                                  if (pa->requires_grad) {
                                    auto& ga = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); i += nb)
                                      for (std::size_t j = 0; j < nb; ++j)
                                        ga[i + j] += g[i + j] * pb->value[j];
                                  }
                                  if (pb->requires_grad) {
                                    auto& gb = pb->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); i += nb)
                                      for (std::size_t j = 0; j < nb; ++j)
                                        gb[j] += g[i + j] * pa->value[i + j];
                                  }
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> y(a.data().begin(), a.data().end());
  for (auto& v : y) v *= s;
  return Tensor<T>::make_result(a.shape(), std::move(y), {a.node()}, [s](Node<T>& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> y(x.data().begin(), x.data().end());
  for (auto& v : y) v = v > T(0) ? v : T(0);
  return Tensor<T>::make_result(x.shape(), std::move(y), {x.node()}, [](Node<T>& self) {
    auto& gxv = self.parents[0]->ensure_grad();
    T* gx = gxv.data();
    const T* y = self.value.data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < gxv.size(); ++i) gx[i] += y[i] > T(0) ? g[i] : T(0);
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> y(x.data().begin(), x.data().end());
  for (auto& v : y) v = std::tanh(v);
  return Tensor<T>::make_result(x.shape(), std::move(y), {x.node()}, [](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw DimensionError("affine: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  const std::size_t k = w.dim(0);
  const std::size_t n = w.dim(1);
  const std::size_t m = x.numel() / k;
  if (b.defined() && (b.rank() != 1 || b.dim(0) != n)) {
    throw DimensionError("affine: bias " + shape_str(b.shape()) + " does not match output width " +
                         std::to_string(n));
  }
  std::vector<T> y(m * n, T(0));
  if (b.defined()) {
    const auto bv = b.data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), y.begin() + i * n);
  }
  gemm_acc(x.data().data(), w.data().data(), y.data(), m, k, n);

  Shape out = x.shape();
  out.back() = n;
  std::vector<std::shared_ptr<Node<T>>> parents{x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  return Tensor<T>::make_result(std::move(out), std::move(y), std::move(parents),
                                [m, k, n](Node<T>& self) {
                                  auto& px = self.parents[0];
                                  auto& pw = self.parents[1];
                                  const T* g = self.grad.data();
                                  if (px->requires_grad) {
                                    auto wt = transposed(pw->value.data(), k, n);
                                    gemm_acc(g, wt.data(), px->ensure_grad().data(), m, n, k);
                                  }
                                  if (pw->requires_grad) {
                                    auto xt = transposed(px->value.data(), m, k);
                                    gemm_acc(xt.data(), g, pw->ensure_grad().data(), k, m, n);
                                  }
                                  if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                                    auto& gb = self.parents[2]->ensure_grad();
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                                  }
                                });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
  return affine(x, w, Tensor<T>());
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw DimensionError("bmm: incompatible batches " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t groups = a.dim(0);
  const std::size_t m = a.dim(1);
  const std::size_t k = a.dim(2);
  const std::size_t kb = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t p = transpose_b ? b.dim(1) : b.dim(2);
  if (kb != k) {
    throw DimensionError("bmm: inner dims differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<T> y(groups * m * p, T(0));
  for (std::size_t g = 0; g < groups; ++g) {
    const T* ag = a.data().data() + g * m * k;
    const T* bg = b.data().data() + g * k * p;
    T* yg = y.data() + g * m * p;
    if (transpose_b) {
      auto bt = transposed(bg, p, k);
      gemm_acc(ag, bt.data(), yg, m, k, p);
    } else {
      gemm_acc(ag, bg, yg, m, k, p);
    }
  }
  return Tensor<T>::make_result(
      {groups, m, p}, std::move(y), {a.node(), b.node()},
      [groups, m, k, p, transpose_b](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        T* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
        T* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
        for (std::size_t g = 0; g < groups; ++g) {
          const T* gy = self.grad.data() + g * m * p;
          const T* av = pa->value.data() + g * m * k;
          const T* bv = pb->value.data() + g * k * p;
          if (transpose_b) {
            // y = a . b^T with b stored [p,k].
            if (ga) gemm_acc(gy, bv, ga + g * m * k, m, p, k);
            if (gb) {
              auto gyt = transposed(gy, m, p);
              gemm_acc(gyt.data(), av, gb + g * k * p, p, m, k);
            }
          } else {
            if (ga) {
              auto bt = transposed(bv, k, p);
              gemm_acc(gy, bt.data(), ga + g * m * k, m, p, k);
            }
            if (gb) {
              auto at = transposed(av, m, k);
              gemm_acc(at.data(), gy, gb + g * k * p, k, m, p);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> y(x.data().begin(), x.data().end());
  return Tensor<T>::make_result(std::move(shape), std::move(y), {x.node()}, [](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (perm.size() != r) throw DimensionError("permute: rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid axis order");
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = in[perm[i]];

  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t s = 0;
    for (std::size_t d = 0; d < r; ++d) s += idx[d] * in_stride[perm[d]];
    src[o] = s;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<T> y(n);
  const auto xv = x.data();
  for (std::size_t o = 0; o < n; ++o) y[o] = xv[src[o]];
  return Tensor<T>::make_result(std::move(out), std::move(y), {x.node()},
                                [src = std::move(src)](Node<T>& self) {
                                  auto& gx = self.parents[0]->ensure_grad();
                                  for (std::size_t o = 0; o < src.size(); ++o)
                                    gx[src[o]] += self.grad[o];
                                });
}

template <typename T>
Tensor<T> transpose_last(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last: rank < 2");
  std::vector<std::size_t> perm(x.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw DimensionError("concat_last: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t da = a.shape().back();
  const std::size_t db = b.shape().back();
  const std::size_t rows = a.numel() / da;
  std::vector<T> y(rows * (da + db));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * da, da, y.begin() + r * (da + db));
    std::copy_n(b.data().begin() + r * db, db, y.begin() + r * (da + db) + da);
  }
  Shape out = a.shape();
  out.back() = da + db;
  return Tensor<T>::make_result(std::move(out), std::move(y), {a.node(), b.node()},
                                [rows, da, db](Node<T>& self) {
                                  auto& pa = self.parents[0];
                                  auto& pb = self.parents[1];
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const T* g = self.grad.data() + r * (da + db);
                                    if (pa->requires_grad) {
                                      T* ga = pa->ensure_grad().data() + r * da;
                                      for (std::size_t j = 0; j < da; ++j) ga[j] += g[j];
                                    }
                                    if (pb->requires_grad) {
                                      T* gb = pb->ensure_grad().data() + r * db;
                                      for (std::size_t j = 0; j < db; ++j) gb[j] += g[da + j];
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  const auto xv = x.data();
  std::vector<T> y(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xv[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(xv[base + k * inner] - mx);
        y[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) y[base + k * inner] /= total;
    }
  }
  return Tensor<T>::make_result(x.shape(), std::move(y), {x.node()},
                                [outer, inner, n](Node<T>& self) {
                                  auto& gx = self.parents[0]->ensure_grad();
                                  const auto& y = self.value;
                                  const auto& g = self.grad;
                                  for (std::size_t o = 0; o < outer; ++o) {
                                    for (std::size_t in = 0; in < inner; ++in) {
                                      const std::size_t base = o * n * inner + in;
                                      T s = 0;
                                      for (std::size_t k = 0; k < n; ++k)
                                        s += g[base + k * inner] * y[base + k * inner];
                                      for (std::size_t k = 0; k < n; ++k) {
                                        const std::size_t i = base + k * inner;
                                        gx[i] += y[i] * (g[i] - s);
                                      }
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma/beta width does not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(rows);
  std::vector<T> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(y), {x.node(), gamma.node(), beta.node()},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& g = self.grad;
        if (pg->requires_grad) {
          auto& gg = pg->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (pb->requires_grad) {
          auto& gb = pb->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (px->requires_grad) {
          auto& gx = px->ensure_grad();
          const auto& gamma_v = pg->value;
          std::vector<T> gh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_gh = 0;
            T mean_ghx = 0;
            for (std::size_t j = 0; j < d; ++j) {
              gh[j] = g[r * d + j] * gamma_v[j];
              mean_gh += gh[j];
              mean_ghx += gh[j] * xhat[r * d + j];
            }
            mean_gh /= T(d);
            mean_ghx /= T(d);
            for (std::size_t j = 0; j < d; ++j)
              gx[r * d + j] += inv_std[r] * (gh[j] - mean_gh - xhat[r * d + j] * mean_ghx);
          }
        }
      });
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                 Padding padding) {
  if (x.rank() != 3 || w.rank() != 3) {
    throw DimensionError("conv1d: expected x[B,Cin,T] and w[Cout,Cin,K], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t cin = x.dim(1);
  const std::size_t len = x.dim(2);
  const std::size_t cout = w.dim(0);
  const std::size_t ksize = w.dim(2);
  if (w.dim(1) != cin) {
    throw DimensionError("conv1d: input has " + std::to_string(cin) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
  }
  if (stride < 1) throw InputError("conv1d: stride must be >= 1");
  if (padding == Padding::Same && ksize % 2 == 0) {
    throw InputError("conv1d: same padding needs an odd kernel, got " + std::to_string(ksize));
  }
  if (b.defined() && b.numel() != cout) throw DimensionError("conv1d: bias size mismatch");
  const std::ptrdiff_t pad = padding == Padding::Same ? std::ptrdiff_t(ksize / 2) : 0;
  const std::ptrdiff_t span = std::ptrdiff_t(len) + 2 * pad - std::ptrdiff_t(ksize);
  if (span < 0) throw DimensionError("conv1d: input shorter than kernel");
  const std::size_t tout = std::size_t(span) / stride + 1;
  const std::size_t rows = cin * ksize;

  // Output positions t in [lo, hi] read inside the input for tap k.
  auto tap_range = [=](std::size_t k) {
    const std::ptrdiff_t off = std::ptrdiff_t(k) - pad;
    const std::ptrdiff_t st = std::ptrdiff_t(stride);
    std::ptrdiff_t lo = off < 0 ? (-off + st - 1) / st : 0;
    std::ptrdiff_t hi = std::ptrdiff_t(len) - 1 - off;
    hi = hi < 0 ? -1 : std::min<std::ptrdiff_t>(hi / st, std::ptrdiff_t(tout) - 1);
    return std::tuple<std::ptrdiff_t, std::ptrdiff_t, std::ptrdiff_t>{off, lo, hi};
  };

  // col[(ci*K + k), t] = x[ci, t*stride + k - pad], zero outside the input.
  auto im2col = [=](const T* xb, T* col) {
    for (std::size_t k = 0; k < ksize; ++k) {
      auto [off, lo, hi] = tap_range(k);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xr = xb + ci * len;
        T* cr = col + (ci * ksize + k) * tout;
        std::fill(cr, cr + tout, T(0));
        if (stride == 1) {
          for (std::ptrdiff_t t = lo; t <= hi; ++t) cr[t] = xr[t + off];
        } else {
          for (std::ptrdiff_t t = lo; t <= hi; ++t) cr[t] = xr[t * std::ptrdiff_t(stride) + off];
        }
      }
    }
  };

  const T* xv = x.data().data();
  const T* wv = w.data().data();
  std::vector<T> y(batch * cout * tout, T(0));
  std::vector<T> col(rows * tout);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    T* yb = y.data() + bi * cout * tout;
    if (b.defined())
      for (std::size_t co = 0; co < cout; ++co)
        std::fill(yb + co * tout, yb + (co + 1) * tout, b.data()[co]);
    im2col(xv + bi * cin * len, col.data());
    gemm_acc(wv, col.data(), yb, cout, rows, tout);
  }

  std::vector<std::shared_ptr<Node<T>>> parents{x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  return Tensor<T>::make_result(
      {batch, cout, tout}, std::move(y), std::move(parents),
      [=](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        const T* g = self.grad.data();
        const T* xs_all = px->value.data();
        T* gx = px->requires_grad ? px->ensure_grad().data() : nullptr;
        T* gw = pw->requires_grad ? pw->ensure_grad().data() : nullptr;
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->ensure_grad();
          for (std::size_t bi = 0; bi < batch; ++bi)
            for (std::size_t co = 0; co < cout; ++co) {
              const T* gr = g + (bi * cout + co) * tout;
              T s = 0;
              for (std::size_t t = 0; t < tout; ++t) s += gr[t];
              gb[co] += s;
            }
        }
        const T* wv_ = pw->value.data();
        std::vector<T> colbuf(gw ? rows * tout : 0), gcol(gx ? rows * tout : 0);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const T* gb_ = g + bi * cout * tout;
          if (gw) {
            im2col(xs_all + bi * cin * len, colbuf.data());
            gemm_acc_bt(gb_, colbuf.data(), gw, cout, tout, rows);
          }
          if (gx) {
            std::fill(gcol.begin(), gcol.end(), T(0));
            gemm_acc_at(wv_, gb_, gcol.data(), rows, cout, tout);
            T* gxb = gx + bi * cin * len;
            for (std::size_t k = 0; k < ksize; ++k) {
              auto [off, lo, hi] = tap_range(k);
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* cr = gcol.data() + (ci * ksize + k) * tout;
                T* gr = gxb + ci * len;
                if (stride == 1) {
                  for (std::ptrdiff_t t = lo; t <= hi; ++t) gr[t + off] += cr[t];
                } else {
                  for (std::ptrdiff_t t = lo; t <= hi; ++t)
                    gr[t * std::ptrdiff_t(stride) + off] += cr[t];
                }
              }
            }
          }
        }
      });
}

std::size_t pooled_length(std::size_t length, std::size_t width, std::size_t stride,
                          bool ceil_mode) {
  if (width < 1 || stride < 1) throw InputError("maxpool1d: width and stride must be >= 1");
  if (length < 1) throw DimensionError("maxpool1d: empty input");
  if (length <= width) {
    if (length < width && !ceil_mode) {
      throw DimensionError("maxpool1d: input length " + std::to_string(length) +
                           " shorter than window " + std::to_string(width));
    }
    return 1;
  }
  const std::size_t span = length - width;
  std::size_t out = (ceil_mode ? (span + stride - 1) / stride : span / stride) + 1;
  // The last window has to start inside the input.
  if (ceil_mode && (out - 1) * stride >= length) --out;
  return out;
}

template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& x, std::size_t width, std::size_t stride, bool ceil_mode) {
  if (x.rank() < 1) throw DimensionError("maxpool1d: scalar input");
  const std::size_t len = x.shape().back();
  const std::size_t tout = pooled_length(len, width, stride, ceil_mode);
  const std::size_t outer = x.numel() / len;
  const auto xv = x.data();
  std::vector<T> y(outer * tout);
  std::vector<std::uint32_t> arg(outer * tout);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* xr = xv.data() + o * len;
    for (std::size_t t = 0; t < tout; ++t) {
      const std::size_t start = t * stride;
      const std::size_t end = std::min(start + width, len);
      std::size_t best = start;
      for (std::size_t i = start + 1; i < end; ++i)
        if (xr[i] > xr[best]) best = i;
      y[o * tout + t] = xr[best];
      arg[o * tout + t] = std::uint32_t(o * len + best);
    }
  }
  Shape out = x.shape();
  out.back() = tout;
  return Tensor<T>::make_result(std::move(out), std::move(y), {x.node()},
                                [arg = std::move(arg)](Node<T>& self) {
                                  auto& gx = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < arg.size(); ++i)
                                    gx[arg[i]] += self.grad[i];
                                });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, std::mt19937_64* rng) {
  if (rate < 0.0 || rate >= 1.0) throw InputError("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  if (rng == nullptr) throw StateError("dropout: training mode needs a generator");
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(*rng) ? keep_scale : T(0);
  std::vector<T> y(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return Tensor<T>::make_result(x.shape(), std::move(y), {x.node()},
                                [mask = std::move(mask)](Node<T>& self) {
                                  auto& gx = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < gx.size(); ++i)
                                    gx[i] += self.grad[i] * mask[i];
                                });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  for (int l : labels) {
    if (l < 0 || std::size_t(l) >= c) {
      throw InputError("cross_entropy: label " + std::to_string(l) + " outside [0," +
                       std::to_string(c) + ")");
    }
  }
  const auto xv = logits.data();
  std::vector<T> prob(n * c);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = xv.data() + i * c;
    T mx = xr[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      prob[i * c + j] = std::exp(xr[j] - mx);
      total += prob[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] /= total;
    loss += -(xr[labels[i]] - mx - std::log(total));
  }
  loss /= T(n);
  if (!std::isfinite(loss)) throw EvaluationError("cross_entropy: non-finite loss");
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor<T>::make_result({1}, {loss}, {logits.node()},
                                [n, c, prob = std::move(prob), lab = std::move(lab)](Node<T>& self) {
                                  auto& gx = self.parents[0]->ensure_grad();
                                  const T g = self.grad[0] / T(n);
                                  for (std::size_t i = 0; i < n; ++i) {
                                    for (std::size_t j = 0; j < c; ++j)
                                      gx[i * c + j] += g * prob[i * c + j];
                                    gx[i * c + std::size_t(lab[i])] -= g;
                                  }
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return Tensor<T>::make_result({1}, {s}, {x.node()}, [](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (auto& v : gx) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> masked_replace(const Tensor<T>& x, std::span<const std::uint8_t> mask,
                         const Tensor<T>& token) {
  const std::size_t d = x.shape().back();
  if (token.numel() != d) {
    throw DimensionError("masked_replace: token width " + std::to_string(token.numel()) +
                         " vs feature width " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  if (mask.size() != rows) {
    throw DimensionError("masked_replace: mask has " + std::to_string(mask.size()) +
                         " entries for " + std::to_string(rows) + " positions");
  }
  std::vector<T> y(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r)
    if (mask[r]) std::copy(token.data().begin(), token.data().end(), y.begin() + r * d);
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return Tensor<T>::make_result(x.shape(), std::move(y), {x.node(), token.node()},
                                [rows, d, m = std::move(m)](Node<T>& self) {
                                  auto& px = self.parents[0];
                                  auto& pt = self.parents[1];
                                  const auto& g = self.grad;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    if (m[r]) {
                                      if (!pt->requires_grad) continue;
                                      auto& gt = pt->ensure_grad();
                                      for (std::size_t j = 0; j < d; ++j) gt[j] += g[r * d + j];
                                    } else if (px->requires_grad) {
                                      auto& gx = px->ensure_grad();
                                      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[r * d + j];
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  std::vector<T> norms(rows);
  std::vector<T> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j] * xv[r * d + j];
    norms[r] = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = xv[r * d + j] / (norms[r] + eps);
  }
  return Tensor<T>::make_result(x.shape(), std::move(y), {x.node()},
                                [rows, d, eps, norms = std::move(norms)](Node<T>& self) {
                                  auto& px = self.parents[0];
                                  auto& gx = px->ensure_grad();
                                  const auto& xv = px->value;
                                  const auto& g = self.grad;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const T n = norms[r];
                                    const T ne = n + eps;
                                    T gdotx = 0;
                                    for (std::size_t j = 0; j < d; ++j)
                                      gdotx += g[r * d + j] * xv[r * d + j];
                                    const T coef = n > T(0) ? gdotx / (n * ne * ne) : T(0);
                                    for (std::size_t j = 0; j < d; ++j)
                                      gx[r * d + j] += g[r * d + j] / ne - xv[r * d + j] * coef;
                                  }
                                });
}

#define XMSLEEP_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> relu(const Tensor<T>&);                                                \
  template Tensor<T> tanh(const Tensor<T>&);                                                \
  template Tensor<T> affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                      \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);            \
  template Tensor<T> transpose_last(const Tensor<T>&);                                      \
  template Tensor<T> concat_last(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                            std::size_t, Padding);                                          \
  template Tensor<T> maxpool1d(const Tensor<T>&, std::size_t, std::size_t, bool);           \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, std::mt19937_64*);             \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                 \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                \
  template Tensor<T> masked_replace(const Tensor<T>&, std::span<const std::uint8_t>,        \
                                    const Tensor<T>&);                                      \
  template Tensor<T> l2_normalize(const Tensor<T>&, T);

XMSLEEP_INSTANTIATE_OPS(float)
XMSLEEP_INSTANTIATE_OPS(double)

}  // namespace xmsleep::diff
