#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
#include <immintrin.h>
#endif

#include "proptrain/rng.hpp"

namespace proptrain {

// ---------------------------------------------------------------------------
// dense row-major matrix
// ---------------------------------------------------------------------------

struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(std::size_t(r) * std::size_t(c), 0.0) {}

  double* row(int r) { return data.data() + std::size_t(r) * cols; }
  const double* row(int r) const { return data.data() + std::size_t(r) * cols; }
  double& at(int r, int c) { return data[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return data[std::size_t(r) * cols + c]; }

  std::span<double> row_span(int r) { return {row(r), std::size_t(cols)}; }
  std::span<const double> row_span(int r) const { return {row(r), std::size_t(cols)}; }

  // reshape without zeroing; contents are unspecified afterwards
  void ensure(int r, int c) {
    rows = r;
    cols = c;
    data.resize(std::size_t(r) * std::size_t(c));
  }
};

// dot product with split accumulators so -O3 can vectorise the reduction
inline double dot(const double* a, const double* b, int n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

namespace detail {

// B matrix repacked into column tiles of fixed width: tile t holds columns
// [t*8, t*8+8) as K consecutive rows of 8 (zero-padded past N).  The fixed
// tile stride keeps the microkernel's inner loops at compile-time shapes,
// which is what lets the compiler vectorise them.
struct PackedB {
  int K = 0, N = 0;
  std::vector<double> data;

  static constexpr int NR = 8;

  int tiles() const { return (N + NR - 1) / NR; }
  const double* tile(int t) const { return data.data() + std::size_t(t) * K * NR; }

  // bij(k, j) reads element (k, j) of the logical B matrix
  template <class Bij>
  void pack(int k_dim, int n_dim, Bij&& bij) {
    K = k_dim;
    N = n_dim;
    data.assign(std::size_t(tiles()) * K * NR, 0.0);
    for (int t = 0; t < tiles(); ++t) {
      double* dst = data.data() + std::size_t(t) * K * NR;
      const int jn = std::min(NR, N - t * NR);
      for (int k = 0; k < K; ++k)
        for (int c = 0; c < jn; ++c) dst[std::size_t(k) * NR + c] = bij(k, t * NR + c);
    }
  }
};

// 4-row x 8-column tile update.  The widest available FMA width is used
// explicitly: compilers reliably keep the accumulators in vector registers
// this way, which plain loops fail to guarantee.
#if defined(__AVX512F__)

inline void gemm_micro_4x8(const double* a0, const double* a1, const double* a2, const double* a3,
                           const double* Bt, int K, double* c0, double* c1, double* c2, double* c3,
                           int jn) {
  __m512d acc0 = _mm512_setzero_pd(), acc1 = _mm512_setzero_pd();
  __m512d acc2 = _mm512_setzero_pd(), acc3 = _mm512_setzero_pd();
  const double* bk = Bt;
  for (int k = 0; k < K; ++k, bk += PackedB::NR) {
    const __m512d b = _mm512_loadu_pd(bk);
    acc0 = _mm512_fmadd_pd(_mm512_set1_pd(a0[k]), b, acc0);
    acc1 = _mm512_fmadd_pd(_mm512_set1_pd(a1[k]), b, acc1);
    acc2 = _mm512_fmadd_pd(_mm512_set1_pd(a2[k]), b, acc2);
    acc3 = _mm512_fmadd_pd(_mm512_set1_pd(a3[k]), b, acc3);
  }
  const __mmask8 mask = static_cast<__mmask8>((1u << jn) - 1u);
  _mm512_mask_storeu_pd(c0, mask, _mm512_add_pd(_mm512_maskz_loadu_pd(mask, c0), acc0));
  _mm512_mask_storeu_pd(c1, mask, _mm512_add_pd(_mm512_maskz_loadu_pd(mask, c1), acc1));
  _mm512_mask_storeu_pd(c2, mask, _mm512_add_pd(_mm512_maskz_loadu_pd(mask, c2), acc2));
  _mm512_mask_storeu_pd(c3, mask, _mm512_add_pd(_mm512_maskz_loadu_pd(mask, c3), acc3));
}

inline void gemm_micro_1x8(const double* ar, const double* Bt, int K, double* cr, int jn) {
  __m512d acc = _mm512_setzero_pd();
  const double* bk = Bt;
  for (int k = 0; k < K; ++k, bk += PackedB::NR)
    acc = _mm512_fmadd_pd(_mm512_set1_pd(ar[k]), _mm512_loadu_pd(bk), acc);
  const __mmask8 mask = static_cast<__mmask8>((1u << jn) - 1u);
  _mm512_mask_storeu_pd(cr, mask, _mm512_add_pd(_mm512_maskz_loadu_pd(mask, cr), acc));
}

#elif defined(__AVX2__) && defined(__FMA__)

inline void gemm_micro_4x8(const double* a0, const double* a1, const double* a2, const double* a3,
                           const double* Bt, int K, double* c0, double* c1, double* c2, double* c3,
                           int jn) {
  __m256d accL[4] = {_mm256_setzero_pd(), _mm256_setzero_pd(), _mm256_setzero_pd(),
                     _mm256_setzero_pd()};
  __m256d accH[4] = {_mm256_setzero_pd(), _mm256_setzero_pd(), _mm256_setzero_pd(),
                     _mm256_setzero_pd()};
  const double* rows[4] = {a0, a1, a2, a3};
  const double* bk = Bt;
  for (int k = 0; k < K; ++k, bk += PackedB::NR) {
    const __m256d bL = _mm256_loadu_pd(bk);
    const __m256d bH = _mm256_loadu_pd(bk + 4);
    for (int r = 0; r < 4; ++r) {
      const __m256d x = _mm256_set1_pd(rows[r][k]);
      accL[r] = _mm256_fmadd_pd(x, bL, accL[r]);
      accH[r] = _mm256_fmadd_pd(x, bH, accH[r]);
    }
  }
  double* cs[4] = {c0, c1, c2, c3};
  for (int r = 0; r < 4; ++r) {
    alignas(32) double tmp[PackedB::NR];
    _mm256_store_pd(tmp, accL[r]);
    _mm256_store_pd(tmp + 4, accH[r]);
    for (int c = 0; c < jn; ++c) cs[r][c] += tmp[c];
  }
}

inline void gemm_micro_1x8(const double* ar, const double* Bt, int K, double* cr, int jn) {
  __m256d accL = _mm256_setzero_pd(), accH = _mm256_setzero_pd();
  const double* bk = Bt;
  for (int k = 0; k < K; ++k, bk += PackedB::NR) {
    const __m256d x = _mm256_set1_pd(ar[k]);
    accL = _mm256_fmadd_pd(x, _mm256_loadu_pd(bk), accL);
    accH = _mm256_fmadd_pd(x, _mm256_loadu_pd(bk + 4), accH);
  }
  alignas(32) double tmp[PackedB::NR];
  _mm256_store_pd(tmp, accL);
  _mm256_store_pd(tmp + 4, accH);
  for (int c = 0; c < jn; ++c) cr[c] += tmp[c];
}

#else

inline void gemm_micro_4x8(const double* a0, const double* a1, const double* a2, const double* a3,
                           const double* Bt, int K, double* c0, double* c1, double* c2, double* c3,
                           int jn) {
  constexpr int NR = PackedB::NR;
  double acc0[NR] = {}, acc1[NR] = {}, acc2[NR] = {}, acc3[NR] = {};
  const double* bk = Bt;
  for (int k = 0; k < K; ++k, bk += NR) {
    const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
    for (int c = 0; c < NR; ++c) acc0[c] += x0 * bk[c];
    for (int c = 0; c < NR; ++c) acc1[c] += x1 * bk[c];
    for (int c = 0; c < NR; ++c) acc2[c] += x2 * bk[c];
    for (int c = 0; c < NR; ++c) acc3[c] += x3 * bk[c];
  }
  for (int c = 0; c < jn; ++c) c0[c] += acc0[c];
  for (int c = 0; c < jn; ++c) c1[c] += acc1[c];
  for (int c = 0; c < jn; ++c) c2[c] += acc2[c];
  for (int c = 0; c < jn; ++c) c3[c] += acc3[c];
}

inline void gemm_micro_1x8(const double* ar, const double* Bt, int K, double* cr, int jn) {
  constexpr int NR = PackedB::NR;
  double acc[NR] = {};
  const double* bk = Bt;
  for (int k = 0; k < K; ++k, bk += NR) {
    const double x = ar[k];
    for (int c = 0; c < NR; ++c) acc[c] += x * bk[c];
  }
  for (int c = 0; c < jn; ++c) cr[c] += acc[c];
}

#endif

// C[M x N] += A[M x K] * B, A row-major with stride lda, B pre-packed.
// Register-blocked microkernel under a 64-row panel; accumulation order is
// fixed, so results are reproducible for any thread count.
inline void gemm_packed(const double* A, int lda, const PackedB& B, double* C, int ldc, int M) {
  constexpr int MR = 4, NR = PackedB::NR, MC = 64;
  const int K = B.K;
  for (int ic = 0; ic < M; ic += MC) {
    const int me = std::min(M, ic + MC);
    for (int t = 0; t < B.tiles(); ++t) {
      const double* Bt = B.tile(t);
      const int j0 = t * NR;
      const int jn = std::min(NR, B.N - j0);
      int i = ic;
      for (; i + MR <= me; i += MR) {
        const double* a0 = A + std::size_t(i) * lda;
        double* c0 = C + std::size_t(i) * ldc + j0;
        gemm_micro_4x8(a0, a0 + lda, a0 + 2 * lda, a0 + 3 * lda, Bt, K, c0, c0 + ldc, c0 + 2 * ldc,
                       c0 + 3 * ldc, jn);
      }
      for (; i < me; ++i)
        gemm_micro_1x8(A + std::size_t(i) * lda, Bt, K, C + std::size_t(i) * ldc + j0, jn);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// reverse-mode tape
// ---------------------------------------------------------------------------
//
// Wengert list with local partials fixed at record time.  Subgradient
// conventions: d/dx max(0,x) = 0 at x = 0, d/dx |x| = 0 at x = 0, and
// min/max propagate to the first argument attaining the extremum.

class Tape {
 public:
  int leaf(double v) { return push(v, -1, -1, 0.0, 0.0); }

  int unary(double v, int a, double da) { return push(v, a, -1, da, 0.0); }

  int binary(double v, int a, int b, double da, double db) { return push(v, a, b, da, db); }

  double value(int id) const { return vals_[std::size_t(id)]; }

  std::size_t size() const { return vals_.size(); }

  void clear() {
    nodes_.clear();
    vals_.clear();
  }

  // adjoints of every node w.r.t. the scalar at `root`
  void backward(int root) {
    adj_.assign(vals_.size(), 0.0);
    adj_[std::size_t(root)] = 1.0;
    for (int i = root; i >= 0; --i) {
      double a = adj_[std::size_t(i)];
      if (a == 0.0) continue;
      const Node& n = nodes_[std::size_t(i)];
      if (n.a >= 0) adj_[std::size_t(n.a)] += n.da * a;
      if (n.b >= 0) adj_[std::size_t(n.b)] += n.db * a;
    }
  }

  double adjoint(int id) const { return adj_[std::size_t(id)]; }

 private:
  struct Node {
    int a, b;
    double da, db;
  };

  int push(double v, int a, int b, double da, double db) {
    nodes_.push_back({a, b, da, db});
    vals_.push_back(v);
    return int(vals_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> adj_;
};

// Scalar bound to a tape.  A default-constructed or double-constructed Var is
// a constant: it has no node and folds into the partials of its consumers.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  double v = 0.0;

  Var() = default;
  Var(double c) : v(c) {}  // implicit: constants mix freely with tape values
  Var(Tape& t, double value) : tape(&t), id(t.leaf(value)), v(value) {}

  bool constant() const { return id < 0; }
};

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.v; }

namespace detail {
inline Var binary_node(const Var& a, const Var& b, double v, double da, double db) {
  Tape* t = a.tape ? a.tape : b.tape;
  if (!t) return Var(v);
  Var r;
  r.tape = t;
  r.v = v;
  r.id = t->binary(v, a.id, b.id, da, db);
  return r;
}
inline Var unary_node(const Var& a, double v, double da) {
  if (!a.tape) return Var(v);
  Var r;
  r.tape = a.tape;
  r.v = v;
  r.id = a.tape->unary(v, a.id, da);
  return r;
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary_node(a, b, a.v + b.v, 1.0, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary_node(a, b, a.v - b.v, 1.0, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return detail::binary_node(a, b, a.v * b.v, b.v, a.v); }
inline Var operator/(const Var& a, const Var& b) {
  return detail::binary_node(a, b, a.v / b.v, 1.0 / b.v, -a.v / (b.v * b.v));
}
inline Var operator-(const Var& a) { return detail::unary_node(a, -a.v, -1.0); }

inline Var max(const Var& a, const Var& b) {
  return a.v >= b.v ? detail::binary_node(a, b, a.v, 1.0, 0.0)
                    : detail::binary_node(a, b, b.v, 0.0, 1.0);
}
inline Var min(const Var& a, const Var& b) {
  return a.v <= b.v ? detail::binary_node(a, b, a.v, 1.0, 0.0)
                    : detail::binary_node(a, b, b.v, 0.0, 1.0);
}
inline Var abs(const Var& a) {
  double s = a.v > 0.0 ? 1.0 : (a.v < 0.0 ? -1.0 : 0.0);
  return detail::unary_node(a, std::fabs(a.v), s);
}
inline Var exp(const Var& a) {
  double e = std::exp(a.v);
  return detail::unary_node(a, e, e);
}
inline Var sqrt(const Var& a) {
  double s = std::sqrt(a.v);
  return detail::unary_node(a, s, s > 0.0 ? 0.5 / s : 0.0);
}
inline Var pow(const Var& a, double p) {
  if (p == 1.0) return a;
  if (p == 2.0) return a * a;
  if (p == 0.5) return sqrt(a);
  double v = std::pow(a.v, p);
  return detail::unary_node(a, v, p * std::pow(a.v, p - 1.0));
}

// exact real power with the fast paths used by gradients as well
inline double pow_real(double x, double p) {
  if (p == 1.0) return x;
  if (p == 2.0) return x * x;
  if (p == 0.5) return std::sqrt(x);
  return std::pow(x, p);
}
inline Var pow_real(const Var& x, double p) { return pow(x, p); }

// ---------------------------------------------------------------------------
// feedforward network
// ---------------------------------------------------------------------------

enum class Activation { Relu, Identity };

class Network {
 public:
  Network() = default;

  Network(std::vector<int> sizes, std::vector<Activation> acts)
      : sizes_(std::move(sizes)), acts_(std::move(acts)) {
    if (sizes_.size() < 2 || acts_.size() != sizes_.size() - 1)
      throw std::invalid_argument("Network: need L+1 sizes and L activations");
    for (int s : sizes_)
      if (s < 1) throw std::invalid_argument("Network: layer sizes must be >= 1");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      w_off_.push_back(total);
      total += std::size_t(sizes_[l + 1]) * std::size_t(sizes_[l]);
      b_off_.push_back(total);
      total += std::size_t(sizes_[l + 1]);
    }
    params_.assign(total, 0.0);
  }

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int layer_count() const { return int(acts_.size()); }
  int layer_rows(int l) const { return sizes_[std::size_t(l) + 1]; }
  int layer_cols(int l) const { return sizes_[std::size_t(l)]; }
  Activation activation(int l) const { return acts_[std::size_t(l)]; }
  std::span<const int> layer_sizes() const { return sizes_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  std::size_t weight_offset(int l) const { return w_off_[std::size_t(l)]; }
  std::size_t bias_offset(int l) const { return b_off_[std::size_t(l)]; }

  std::span<double> weights(int l) {
    return {params_.data() + w_off_[std::size_t(l)], std::size_t(layer_rows(l)) * layer_cols(l)};
  }
  std::span<const double> weights(int l) const {
    return {params_.data() + w_off_[std::size_t(l)], std::size_t(layer_rows(l)) * layer_cols(l)};
  }
  std::span<double> biases(int l) {
    return {params_.data() + b_off_[std::size_t(l)], std::size_t(layer_rows(l))};
  }
  std::span<const double> biases(int l) const {
    return {params_.data() + b_off_[std::size_t(l)], std::size_t(layer_rows(l))};
  }

  // per-layer inputs and pre-activations for the rows that were run
  struct Cache {
    std::vector<Matrix> input;  // input[l] = rows entering layer l
    Matrix out;                 // post-activation of the last layer
    std::vector<detail::PackedB> wt;  // W transposed (forward), packed
    std::vector<detail::PackedB> wb;  // W as-is (input backprop), packed
  };

  std::vector<double> forward(std::span<const double> x) const {
    if (int(x.size()) != input_dim()) throw std::invalid_argument("forward: input size mismatch");
    Matrix X(1, input_dim());
    for (int i = 0; i < input_dim(); ++i) X.at(0, i) = x[i];
    Matrix Y = forward(X);
    return {Y.row(0), Y.row(0) + output_dim()};
  }

  Matrix forward(const Matrix& X) const {
    Cache c;
    forward(X, c);
    return c.out;
  }

  void forward(const Matrix& X, Cache& cache) const {
    forward_rows(X, cache, 0, X.rows, /*prepare=*/true);
  }

  // Runs rows [r0, r1); with prepare=false the cache must already be shaped
  // for X (used by threaded callers that split rows across workers).
  void forward_rows(const Matrix& X, Cache& cache, int r0, int r1, bool prepare) const {
    if (X.cols != input_dim()) throw std::invalid_argument("forward: input size mismatch");
    if (prepare) {
      cache.input.resize(std::size_t(layer_count()));
      for (int l = 0; l < layer_count(); ++l) cache.input[std::size_t(l)].ensure(X.rows, layer_cols(l));
      cache.out.ensure(X.rows, output_dim());
      cache.wt.resize(std::size_t(layer_count()));
      cache.wb.resize(std::size_t(layer_count()));
      for (int l = 0; l < layer_count(); ++l) {
        const double* W = params_.data() + w_off_[std::size_t(l)];
        const int n_out = layer_rows(l), n_in = layer_cols(l);
        cache.wt[std::size_t(l)].pack(n_in, n_out,
                                      [&](int k, int j) { return W[std::size_t(j) * n_in + k]; });
        cache.wb[std::size_t(l)].pack(n_out, n_in,
                                      [&](int k, int j) { return W[std::size_t(k) * n_in + j]; });
      }
    }
    const int rows = r1 - r0;
    if (rows <= 0) return;
    for (int r = r0; r < r1; ++r) {
      const double* src = X.row(r);
      for (int i = 0; i < X.cols; ++i) cache.input[0].at(r, i) = src[i];
    }
    for (int l = 0; l < layer_count(); ++l) {
      const Matrix& in = cache.input[std::size_t(l)];
      Matrix& out = (l + 1 < layer_count()) ? cache.input[std::size_t(l) + 1] : cache.out;
      const double* b = params_.data() + b_off_[std::size_t(l)];
      const int n_out = layer_rows(l);
      const bool relu = acts_[std::size_t(l)] == Activation::Relu;
      for (int r = r0; r < r1; ++r) {
        double* yr = out.row(r);
        for (int o = 0; o < n_out; ++o) yr[o] = b[o];
      }
      detail::gemm_packed(in.row(r0), in.cols, cache.wt[std::size_t(l)], out.row(r0), out.cols, rows);
      if (relu)
        for (int r = r0; r < r1; ++r) {
          double* yr = out.row(r);
          for (int o = 0; o < n_out; ++o)
            if (yr[o] < 0.0) yr[o] = 0.0;
        }
    }
  }

  // dX[r] = dL/dX given dY[r] = dL/d out for rows [r0, r1).  `scratch` is
  // caller-owned and may be shared across calls of the same shape; distinct
  // row ranges never touch each other's rows.
  void backward_input_rows(const Cache& cache, const Matrix& dY, Matrix& dX, int r0, int r1,
                           Matrix& scratch) const {
    dX.ensure(dY.rows, input_dim());
    int widest = 0;
    for (int s : sizes_) widest = std::max(widest, s);
    // two ping-pong delta planes per row inside `scratch`
    scratch.ensure(dY.rows, 2 * widest);
    const int rows = r1 - r0;
    if (rows <= 0) return;
    for (int l = layer_count() - 1; l >= 0; --l) {
      const int n_out = layer_rows(l), n_in = layer_cols(l);
      const bool relu = acts_[std::size_t(l)] == Activation::Relu;
      const int cur = (layer_count() - 1 - l) % 2;
      for (int r = r0; r < r1; ++r) {
        const double* d_out = (l == layer_count() - 1) ? dY.row(r) : scratch.row(r) + cur * widest;
        const double* post =
            (l + 1 < layer_count()) ? cache.input[std::size_t(l) + 1].row(r) : cache.out.row(r);
        double* delta = scratch.row(r) + cur * widest;
        for (int o = 0; o < n_out; ++o) delta[o] = (relu && post[o] <= 0.0) ? 0.0 : d_out[o];
        double* dst = (l == 0) ? dX.row(r) : scratch.row(r) + (1 - cur) * widest;
        for (int i = 0; i < n_in; ++i) dst[i] = 0.0;
      }
      // dX_block = delta_block * W through the packed copy of W
      double* C = (l == 0) ? dX.row(r0) : scratch.row(r0) + (1 - cur) * widest;
      const int ldc = (l == 0) ? dX.cols : scratch.cols;
      detail::gemm_packed(scratch.row(r0) + cur * widest, scratch.cols, cache.wb[std::size_t(l)], C,
                          ldc, rows);
    }
  }

  void backward_input(const Cache& cache, const Matrix& dY, Matrix& dX) const {
    Matrix scratch;
    backward_input_rows(cache, dY, dX, 0, dY.rows, scratch);
  }

  // Accumulates dL/dparams into `grad` (same layout as parameters());
  // rows are reduced in index order so results are reproducible.
  void backward_params(const Cache& cache, const Matrix& dY, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("backward_params: grad size");
    int widest = 0;
    for (int s : sizes_) widest = std::max(widest, s);
    Matrix delta(dY.rows, widest), next(dY.rows, widest);
    for (int l = layer_count() - 1; l >= 0; --l) {
      const int n_out = layer_rows(l), n_in = layer_cols(l);
      const bool relu = acts_[std::size_t(l)] == Activation::Relu;
      for (int r = 0; r < dY.rows; ++r) {
        const double* d_out = (l == layer_count() - 1) ? dY.row(r) : delta.row(r);
        const double* post =
            (l + 1 < layer_count()) ? cache.input[std::size_t(l) + 1].row(r) : cache.out.row(r);
        double* dr = delta.row(r);
        for (int o = 0; o < n_out; ++o) dr[o] = (relu && post[o] <= 0.0) ? 0.0 : d_out[o];
      }
      double* gW = grad.data() + w_off_[std::size_t(l)];
      double* gb = grad.data() + b_off_[std::size_t(l)];
      const Matrix& in = cache.input[std::size_t(l)];
      for (int r = 0; r < dY.rows; ++r) {
        const double* dr = delta.row(r);
        const double* xr = in.row(r);
        for (int o = 0; o < n_out; ++o) {
          double d = dr[o];
          if (d == 0.0) continue;
          gb[o] += d;
          axpy(d, xr, gW + std::size_t(o) * n_in, n_in);
        }
      }
      if (l > 0) {
        const double* W = params_.data() + w_off_[std::size_t(l)];
        for (int r = 0; r < dY.rows; ++r) {
          double* nx = next.row(r);
          for (int i = 0; i < n_in; ++i) nx[i] = 0.0;
          const double* dr = delta.row(r);
          for (int o = 0; o < n_out; ++o)
            if (dr[o] != 0.0) axpy(dr[o], W + std::size_t(o) * n_in, nx, n_in);
        }
        std::swap(delta, next);
      }
    }
  }

  // versioned textual checkpoint, round-trippable
  void save(std::ostream& os) const {
    os << "proptrain-net 1\n";
    os << "sizes";
    for (int s : sizes_) os << ' ' << s;
    os << "\nacts";
    for (Activation a : acts_) os << ' ' << (a == Activation::Relu ? "relu" : "identity");
    os << "\nparams " << params_.size() << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < params_.size(); ++i)
      os << params_[i] << ((i + 1) % 8 == 0 ? '\n' : ' ');
    if (params_.size() % 8 != 0) os << '\n';
  }

  static Network load(std::istream& is) {
    std::string tag;
    int version = 0;
    is >> tag >> version;
    if (tag != "proptrain-net" || version != 1)
      throw std::runtime_error("Network::load: unsupported checkpoint header");
    std::string word;
    is >> word;  // "sizes"
    std::vector<int> sizes;
    while (is >> word && word != "acts") sizes.push_back(std::stoi(word));
    std::vector<Activation> acts;
    while (is >> word && word != "params")
      acts.push_back(word == "relu" ? Activation::Relu : Activation::Identity);
    std::size_t n = 0;
    is >> n;
    Network net(std::move(sizes), std::move(acts));
    if (n != net.parameter_count()) throw std::runtime_error("Network::load: parameter count mismatch");
    for (std::size_t i = 0; i < n; ++i)
      if (!(is >> net.params_[i])) throw std::runtime_error("Network::load: truncated parameters");
    return net;
  }

 private:
  std::vector<int> sizes_;
  std::vector<Activation> acts_;
  std::vector<double> params_;
  std::vector<std::size_t> w_off_, b_off_;
};

// Fan-in-scaled uniform init (weights ~ U(+-sqrt(3/fan_in)), zero biases);
// hidden layers ReLU, output identity.  Deterministic in `seed`.
inline Network init_network(std::span<const int> sizes, std::uint64_t seed) {
  std::vector<Activation> acts(sizes.size() - 1, Activation::Relu);
  acts.back() = Activation::Identity;
  Network net(std::vector<int>(sizes.begin(), sizes.end()), std::move(acts));
  for (int l = 0; l < net.layer_count(); ++l) {
    Rng rng = Rng::stream(seed, {0x11, std::uint64_t(l)});
    double bound = std::sqrt(3.0 / net.layer_cols(l));
    for (double& w : net.weights(l)) w = rng.uniform(-bound, bound);
  }
  return net;
}

// Same init but with the first layer rescaled per input dimension to the
// given bounds, as if inputs were standardised: keeps initial pre-activations
// at unit scale even when raw feature ranges differ by orders of magnitude.
inline Network init_network(std::span<const int> sizes, std::uint64_t seed,
                            std::span<const double> input_lo, std::span<const double> input_hi) {
  Network net = init_network(sizes, seed);
  if (int(input_lo.size()) != net.input_dim() || int(input_hi.size()) != net.input_dim())
    throw std::invalid_argument("init_network: input bound size mismatch");
  auto W = net.weights(0);
  auto b = net.biases(0);
  const int cols = net.layer_cols(0);
  for (int o = 0; o < net.layer_rows(0); ++o) {
    for (int j = 0; j < cols; ++j) {
      double mid = 0.5 * (input_lo[std::size_t(j)] + input_hi[std::size_t(j)]);
      double hw = 0.5 * (input_hi[std::size_t(j)] - input_lo[std::size_t(j)]);
      if (hw <= 0.0) hw = 1.0;
      double& w = W[std::size_t(o) * cols + std::size_t(j)];
      w /= hw;
      b[std::size_t(o)] -= w * mid;
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay)
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamW {
 public:
  AdamW() = default;
  AdamW(std::size_t n, AdamWConfig cfg = {}) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("AdamW::step: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i] * grads[i];
      double mhat = m_[i] / bc1;
      double vhat = v_[i] / bc2;
      params[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * params[i]);
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  long step_count() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace proptrain
