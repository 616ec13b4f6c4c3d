#include "ccmt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "ccmt/error.hpp"

namespace ccmt {

template <class T>
Var<T> Tape<T>::constant(TensorT value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::parameter(TensorT value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::record(TensorT value, std::span<const Var<T>> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw ContractError("op inputs recorded on a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
BasicTensor<T> Tape<T>::grad(Var<T> v) const {
  const auto& n = nodes_[v.id()];
  if (n.grad.empty()) return TensorT(n.value.shape());
  return n.grad;
}

template <class T>
BasicTensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad = TensorT(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> root) {
  if (&root.tape() != this) throw ContractError("backward root belongs to another tape");
  if (nodes_[root.id()].value.size() != 1) {
    throw ContractError("backward requires a scalar root, got shape " +
                        shape_string(nodes_[root.id()].value.shape()));
  }
  for (auto& n : nodes_) n.grad = TensorT{};
  grad_buffer(root.id())[0] = T{1};
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

template class Tape<float>;
template class Tape<double>;

namespace ops {
namespace {

struct Spatial {
  std::size_t batch, height, width, channels;
  bool batched;
};

template <class T>
Spatial spatial_dims(const BasicTensor<T>& t, const char* op) {
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  throw ShapeError(std::string(op) + ": expected [B,H,W,C] or [H,W,C], got " +
                   shape_string(t.shape()));
}

// Channel-planar, zero-padded copy of an NHWC batch: plane ci holds the
// batch as B consecutive (H+2)x(W+2) images. A 3x3 tap is then a constant
// offset in the flattened plane, so each (tap, ci, co) term is one long
// contiguous multiply-add. Pad positions of outputs are computed and dropped.
struct PaddedGeom {
  std::size_t batch, height, width, pitch, image, length;
  long lo, hi;  // flattened range whose 3x3 neighbourhood stays in bounds
  explicit PaddedGeom(const Spatial& s)
      : batch(s.batch), height(s.height), width(s.width), pitch(s.width + 2),
        image((s.height + 2) * (s.width + 2)), length(s.batch * image),
        lo(static_cast<long>(pitch) + 1), hi(static_cast<long>(length - pitch) - 1) {}
  long offset(int ky, int kx) const { return (ky - 1) * static_cast<long>(pitch) + (kx - 1); }
  std::size_t at(std::size_t b, std::size_t y, std::size_t x) const {
    return b * image + (y + 1) * pitch + x + 1;
  }
};

template <class T>
std::vector<T> to_padded(const T* in, const PaddedGeom& g, std::size_t c) {
  std::vector<T> out(c * g.length, T{0});
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t y = 0; y < g.height; ++y) {
      const T* row = in + (b * g.height + y) * g.width * c;
      const std::size_t base = g.at(b, y, 0);
      for (std::size_t x = 0; x < g.width; ++x) {
        for (std::size_t ci = 0; ci < c; ++ci) out[ci * g.length + base + x] = row[x * c + ci];
      }
    }
  }
  return out;
}

// dst (NHWC) = or += the valid positions of a padded planar buffer.
template <class T, bool Accumulate>
void from_padded(const T* planes, const PaddedGeom& g, std::size_t c, T* dst) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t y = 0; y < g.height; ++y) {
      T* row = dst + (b * g.height + y) * g.width * c;
      const std::size_t base = g.at(b, y, 0);
      for (std::size_t x = 0; x < g.width; ++x) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          const T v = planes[ci * g.length + base + x];
          if constexpr (Accumulate) {
            row[x * c + ci] += v;
          } else {
            row[x * c + ci] = v;
          }
        }
      }
    }
  }
}

// y[co] = bias[co] + sum_k w[k][co] * x[base[k] + q] over the flattened range
// [lo, hi), where k enumerates (ci, tap). Accumulators for COB output
// channels and one 64-byte vector of positions are kept in registers.
template <class T>
struct Simd {
  typedef T type __attribute__((vector_size(64)));
  static constexpr long lanes = 64 / sizeof(T);
};

template <class T, int COB>
void conv_planes_block(const T* x, std::size_t taps, const long* base, const T* w,
                       std::size_t cout, std::size_t co0, const T* bias, long lo, long hi,
                       std::size_t length, T* y) {
  using V = typename Simd<T>::type;
  constexpr long N = Simd<T>::lanes;
  long q = lo;
  for (; q + N <= hi; q += N) {
    V acc[COB];
    for (int c = 0; c < COB; ++c) acc[c] = V{} + (bias ? bias[co0 + c] : T{0});
    for (std::size_t k = 0; k < taps; ++k) {
      V v;
      std::memcpy(&v, x + base[k] + q, sizeof v);
      const T* wr = w + k * cout + co0;
      for (int c = 0; c < COB; ++c) acc[c] += wr[c] * v;
    }
    for (int c = 0; c < COB; ++c) std::memcpy(y + (co0 + c) * length + q, &acc[c], sizeof(V));
  }
  for (; q < hi; ++q) {
    for (int c = 0; c < COB; ++c) {
      T a = bias ? bias[co0 + c] : T{0};
      for (std::size_t k = 0; k < taps; ++k) a += w[k * cout + co0 + c] * x[base[k] + q];
      y[(co0 + c) * length + q] = a;
    }
  }
}

// `w` is [9][cin][cout] (tap-major); x and y are padded planar buffers.
template <class T>
void conv_planes(const T* x, const PaddedGeom& g, std::size_t cin, const T* w, std::size_t cout,
                 const T* bias, T* y) {
  std::vector<long> base(9 * cin);
  for (int tap = 0; tap < 9; ++tap) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      base[tap * cin + ci] = static_cast<long>(ci * g.length) + g.offset(tap / 3, tap % 3);
    }
  }
  const std::size_t taps = base.size();
  for (std::size_t co0 = 0; co0 < cout; co0 += 8) {
#define CCMT_CONV_CASE(n)                                                                     \
  case n:                                                                                     \
    conv_planes_block<T, n>(x, taps, base.data(), w, cout, co0, bias, g.lo, g.hi, g.length, y); \
    break;
    switch (std::min<std::size_t>(8, cout - co0)) {
      CCMT_CONV_CASE(1)
      CCMT_CONV_CASE(2)
      CCMT_CONV_CASE(3)
      CCMT_CONV_CASE(4)
      CCMT_CONV_CASE(5)
      CCMT_CONV_CASE(6)
      CCMT_CONV_CASE(7)
      default:
        conv_planes_block<T, 8>(x, taps, base.data(), w, cout, co0, bias, g.lo, g.hi, g.length, y);
    }
#undef CCMT_CONV_CASE
  }
}

// Batch rows and feature width of a rank-1 or rank-2 tensor.
template <class T>
std::pair<std::size_t, std::size_t> rows_cols(const BasicTensor<T>& t, const char* op) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw ShapeError(std::string(op) + ": expected [B,n] or [n], got " + shape_string(t.shape()));
}

}  // namespace

namespace {

// Validates conv operands; returns Cout.
template <class T>
std::size_t conv_out_channels(const BasicTensor<T>& w, const BasicTensor<T>& b,
                              const Spatial& s, const char* op) {
  if (w.rank() != 4 || w.dim(0) != 3 || w.dim(1) != 3) {
    throw ShapeError(std::string(op) + ": kernel must be [3,3,Cin,Cout], got " +
                     shape_string(w.shape()));
  }
  if (w.dim(2) != s.channels) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(s.channels) +
                     " channels but kernel expects " + std::to_string(w.dim(2)));
  }
  const std::size_t cout = w.dim(3);
  if (b.rank() != 1 || b.dim(0) != cout) {
    throw ShapeError(std::string(op) + ": bias must be [" + std::to_string(cout) + "], got " +
                     shape_string(b.shape()));
  }
  return cout;
}

// gw[tap][ci][co] += sum_q x[ci][q + off(tap)] * gy[co][q]. One kernel row
// (three taps) and up to four output channels are accumulated per pass.
template <class T, int COB>
void kernel_grad_block(const T* x, const T* gy, const PaddedGeom& g, std::size_t cin,
                       std::size_t cout, std::size_t co0, T* gw) {
  using V = typename Simd<T>::type;
  constexpr long N = Simd<T>::lanes;
  const long span = g.hi - g.lo, full = span - span % N;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      const T* src = x + ci * g.length + g.offset(ky, 0) + g.lo;
      V acc[3][COB] = {};
      for (long q = 0; q < full; q += N) {
        V gv[COB];
        for (int c = 0; c < COB; ++c) std::memcpy(&gv[c], gy + (co0 + c) * g.length + g.lo + q, sizeof(V));
        for (int kx = 0; kx < 3; ++kx) {
          V v;
          std::memcpy(&v, src + kx + q, sizeof v);
          for (int c = 0; c < COB; ++c) acc[kx][c] += v * gv[c];
        }
      }
      for (int kx = 0; kx < 3; ++kx) {
        for (int c = 0; c < COB; ++c) {
          T sum{0};
          for (long l = 0; l < N; ++l) sum += acc[kx][c][l];
          for (long q = full; q < span; ++q) sum += src[kx + q] * gy[(co0 + c) * g.length + g.lo + q];
          gw[((ky * 3 + kx) * cin + ci) * cout + co0 + c] += sum;
        }
      }
    }
  }
}

template <class T>
void kernel_grad(const T* x, const T* gy, const PaddedGeom& g, std::size_t cin, std::size_t cout,
                 T* gw) {
  for (std::size_t co0 = 0; co0 < cout; co0 += 4) {
    switch (std::min<std::size_t>(4, cout - co0)) {
      case 1: kernel_grad_block<T, 1>(x, gy, g, cin, cout, co0, gw); break;
      case 2: kernel_grad_block<T, 2>(x, gy, g, cin, cout, co0, gw); break;
      case 3: kernel_grad_block<T, 3>(x, gy, g, cin, cout, co0, gw); break;
      default: kernel_grad_block<T, 4>(x, gy, g, cin, cout, co0, gw); break;
    }
  }
}

// Accumulates kernel, bias and input gradients from a padded planar output
// gradient whose pad positions are zero.
template <class T>
void conv_backward(Tape<T>& t, const std::vector<T>& gy, const std::vector<T>& xin,
                   const Spatial& s, std::size_t cin, std::size_t cout, std::size_t xi,
                   std::size_t wi, std::size_t bi) {
  const PaddedGeom g(s);
  if (t.requires_grad(wi)) {
    kernel_grad(xin.data(), gy.data(), g, cin, cout, t.grad_buffer(wi).data());
  }
  if (t.requires_grad(bi)) {
    T* gb = t.grad_buffer(bi).data();
    for (std::size_t co = 0; co < cout; ++co) {
      const T* p = gy.data() + co * g.length;
      T acc{0};
      for (long i = g.lo; i < g.hi; ++i) acc += p[i];
      gb[co] += acc;
    }
  }
  if (t.requires_grad(xi)) {
    const T* w = t.value(wi).data();
    // Transposed convolution: flipped taps, weights indexed [tap][co][ci].
    std::vector<T> wt(9 * cin * cout);
    for (int tap = 0; tap < 9; ++tap) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t co = 0; co < cout; ++co) {
          wt[((8 - tap) * cout + co) * cin + ci] = w[(tap * cin + ci) * cout + co];
        }
      }
    }
    std::vector<T> gx(cin * g.length);
    conv_planes(gy.data(), g, cout, wt.data(), cin, static_cast<const T*>(nullptr), gx.data());
    from_padded<T, true>(gx.data(), g, cin, t.grad_buffer(xi).data());
  }
}

}  // namespace

template <class T>
Var<T> conv2d(Var<T> input, Var<T> kernel, Var<T> bias) {
  auto& tape = input.tape();
  const auto& x = input.value();
  const auto& w = kernel.value();
  const auto& b = bias.value();
  const Spatial s = spatial_dims(x, "conv2d");
  const std::size_t cout = conv_out_channels(w, b, s, "conv2d");
  const std::size_t cin = s.channels;
  const PaddedGeom g(s);
  std::vector<T> xin = to_padded(x.data(), g, cin);

  Shape out_shape = s.batched ? Shape{s.batch, s.height, s.width, cout}
                              : Shape{s.height, s.width, cout};
  BasicTensor<T> out(out_shape);
  {
    std::vector<T> yp(cout * g.length);
    conv_planes(xin.data(), g, cin, w.data(), cout, b.data(), yp.data());
    from_padded<T, false>(yp.data(), g, cout, out.data());
  }

  const std::size_t xi = input.id(), wi = kernel.id(), bi = bias.id();
  const Var<T> in[] = {input, kernel, bias};
  return tape.record(
      std::move(out), in,
      [xi, wi, bi, s, cin, cout, xin = std::move(xin)](Tape<T>& t, std::size_t self) {
        const std::vector<T> gy = to_padded(t.grad_buffer(self).data(), PaddedGeom(s), cout);
        conv_backward(t, gy, xin, s, cin, cout, xi, wi, bi);
      });
}

template <class T>
Var<T> conv_relu_pool(Var<T> input, Var<T> kernel, Var<T> bias) {
  auto& tape = input.tape();
  const auto& x = input.value();
  const auto& w = kernel.value();
  const auto& b = bias.value();
  const Spatial s = spatial_dims(x, "conv_relu_pool");
  const std::size_t cout = conv_out_channels(w, b, s, "conv_relu_pool");
  if (s.height < 2 || s.width < 2) {
    throw ShapeError("conv_relu_pool: spatial dims must be >= 2, got " + shape_string(x.shape()));
  }
  const std::size_t cin = s.channels, oh = s.height / 2, ow = s.width / 2;
  const PaddedGeom g(s);
  std::vector<T> xin = to_padded(x.data(), g, cin);
  std::vector<T> yp(cout * g.length);
  conv_planes(xin.data(), g, cin, w.data(), cout, b.data(), yp.data());

  Shape out_shape = s.batched ? Shape{s.batch, oh, ow, cout} : Shape{oh, ow, cout};
  BasicTensor<T> out(out_shape);
  // Winning planar index per output; kNoGrad where relu clipped the window.
  constexpr std::uint32_t kNoGrad = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> argmax(out.size(), kNoGrad);
  for (std::size_t bt = 0; bt < s.batch; ++bt) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t o = ((bt * oh + oy) * ow + ox) * cout;
        const std::size_t p0 = g.at(bt, 2 * oy, 2 * ox);
        const std::size_t cand[4] = {p0, p0 + 1, p0 + g.pitch, p0 + g.pitch + 1};
        for (std::size_t co = 0; co < cout; ++co) {
          const T* plane = yp.data() + co * g.length;
          std::size_t best = cand[0];
          for (int i = 1; i < 4; ++i) {
            if (plane[cand[i]] > plane[best]) best = cand[i];
          }
          if (plane[best] > T{0}) {
            out[o + co] = plane[best];
            argmax[o + co] = static_cast<std::uint32_t>(co * g.length + best);
          }
        }
      }
    }
  }

  const std::size_t xi = input.id(), wi = kernel.id(), bi = bias.id();
  const Var<T> in[] = {input, kernel, bias};
  return tape.record(std::move(out), in,
                     [xi, wi, bi, s, cin, cout, xin = std::move(xin),
                      argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
                       const PaddedGeom g(s);
                       const auto& go = t.grad_buffer(self);
                       std::vector<T> gy(cout * g.length, T{0});
                       for (std::size_t i = 0; i < argmax.size(); ++i) {
                         if (argmax[i] != kNoGrad) gy[argmax[i]] += go[i];
                       }
                       conv_backward(t, gy, xin, s, cin, cout, xi, wi, bi);
                     });
}

template <class T>
Var<T> maxpool2(Var<T> input) {
  auto& tape = input.tape();
  const auto& x = input.value();
  const Spatial s = spatial_dims(x, "maxpool2");
  if (s.height < 2 || s.width < 2) {
    throw ShapeError("maxpool2: spatial dims must be >= 2, got " + shape_string(x.shape()));
  }
  const std::size_t oh = s.height / 2, ow = s.width / 2, c = s.channels;
  Shape out_shape = s.batched ? Shape{s.batch, oh, ow, c} : Shape{oh, ow, c};
  BasicTensor<T> out(out_shape);
  std::vector<std::uint32_t> argmax(out.size());

  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const std::size_t o = ((b * oh + y) * ow + xo) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * s.height + 2 * y) * s.width + 2 * xo) * c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((b * s.height + 2 * y + dy) * s.width + 2 * xo + dx) * c + ch;
              if (x[idx] > x[best]) best = idx;
            }
          }
          out[o + ch] = x[best];
          argmax[o + ch] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }

  const std::size_t xi = input.id();
  const Var<T> in[] = {input};
  return tape.record(std::move(out), in,
                     [xi, argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
                       const auto& gy = t.grad_buffer(self);
                       auto& gx = t.grad_buffer(xi);
                       for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gy[i];
                     });
}

template <class T>
Var<T> dense(Var<T> input, Var<T> weights, Var<T> bias) {
  auto& tape = input.tape();
  const auto& x = input.value();
  const auto& w = weights.value();
  const auto& b = bias.value();
  const auto [rows, n] = rows_cols(x, "dense");
  if (w.rank() != 2 || w.dim(0) != n) {
    throw ShapeError("dense: input width " + std::to_string(n) + " vs weights " +
                     shape_string(w.shape()));
  }
  const std::size_t m = w.dim(1);
  if (b.rank() != 1 || b.dim(0) != m) {
    throw ShapeError("dense: bias must be [" + std::to_string(m) + "], got " +
                     shape_string(b.shape()));
  }
  BasicTensor<T> out(x.rank() == 1 ? Shape{m} : Shape{rows, m});
  // Plain loops in a fixed order: results must not depend on buffer alignment.
  {
    T* y = out.data();
    const T* xv = x.data();
    const T* wv = w.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T* yr = y + r * m;
      std::copy(b.data(), b.data() + m, yr);
      for (std::size_t k = 0; k < n; ++k) {
        const T a = xv[r * n + k];
        const T* wk = wv + k * m;
        for (std::size_t j = 0; j < m; ++j) yr[j] += a * wk[j];
      }
    }
  }

  const std::size_t xi = input.id(), wi = weights.id(), bi = bias.id();
  const Var<T> in[] = {input, weights, bias};
  return tape.record(std::move(out), in, [xi, wi, bi, rows, n, m](Tape<T>& t, std::size_t self) {
    const T* gy = t.grad_buffer(self).data();
    if (t.requires_grad(wi)) {
      T* gw = t.grad_buffer(wi).data();
      const T* xv = t.value(xi).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < n; ++k) {
          const T a = xv[r * n + k];
          T* gwk = gw + k * m;
          for (std::size_t j = 0; j < m; ++j) gwk[j] += a * gy[r * m + j];
        }
      }
    }
    if (t.requires_grad(bi)) {
      T* gb = t.grad_buffer(bi).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < m; ++j) gb[j] += gy[r * m + j];
      }
    }
    if (t.requires_grad(xi)) {
      T* gx = t.grad_buffer(xi).data();
      const T* wv = t.value(wi).data();
      std::vector<T> wt(m * n);
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t j = 0; j < m; ++j) wt[j * n + k] = wv[k * m + j];
      }
      for (std::size_t r = 0; r < rows; ++r) {
        T* gxr = gx + r * n;
        for (std::size_t j = 0; j < m; ++j) {
          const T a = gy[r * m + j];
          const T* wj = wt.data() + j * n;
          for (std::size_t k = 0; k < n; ++k) gxr[k] += a * wj[k];
        }
      }
    }
  });
}

template <class T>
Var<T> activation(Var<T> input, Activation kind) {
  auto& tape = input.tape();
  BasicTensor<T> out = input.value();
  const std::size_t xi = input.id();
  const Var<T> in[] = {input};
  switch (kind) {
    case Activation::relu: {
      for (auto& v : out.values()) v = v > T{0} ? v : T{0};
      return tape.record(std::move(out), in, [xi](Tape<T>& t, std::size_t self) {
        const auto& y = t.value(self);
        const auto& gy = t.grad_buffer(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] > T{0} ? gy[i] : T{0};
      });
    }
    case Activation::tanh: {
      for (auto& v : out.values()) v = std::tanh(v);
      return tape.record(std::move(out), in, [xi](Tape<T>& t, std::size_t self) {
        const auto& y = t.value(self);
        const auto& gy = t.grad_buffer(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * (T{1} - y[i] * y[i]);
      });
    }
    case Activation::sigmoid: {
      for (auto& v : out.values()) v = T{1} / (T{1} + std::exp(-v));
      return tape.record(std::move(out), in, [xi](Tape<T>& t, std::size_t self) {
        const auto& y = t.value(self);
        const auto& gy = t.grad_buffer(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * y[i] * (T{1} - y[i]);
      });
    }
    case Activation::softmax: {
      const std::size_t width = out.shape().back();
      const std::size_t rows = out.size() / width;
      for (std::size_t r = 0; r < rows; ++r) {
        T* row = out.data() + r * width;
        const T mx = *std::max_element(row, row + width);
        T total{0};
        for (std::size_t j = 0; j < width; ++j) total += row[j] = std::exp(row[j] - mx);
        for (std::size_t j = 0; j < width; ++j) row[j] /= total;
      }
      return tape.record(std::move(out), in, [xi, rows, width](Tape<T>& t, std::size_t self) {
        const auto& y = t.value(self);
        const auto& gy = t.grad_buffer(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t o = r * width;
          T dot{0};
          for (std::size_t j = 0; j < width; ++j) dot += gy[o + j] * y[o + j];
          for (std::size_t j = 0; j < width; ++j) gx[o + j] += y[o + j] * (gy[o + j] - dot);
        }
      });
    }
  }
  throw ContractError("unknown activation");
}

template <class T>
Var<T> reshape(Var<T> input, Shape shape) {
  BasicTensor<T> out = input.value().reshaped(std::move(shape));
  const std::size_t xi = input.id();
  const Var<T> in[] = {input};
  return input.tape().record(std::move(out), in, [xi](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad_buffer(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

template <class T>
Var<T> concat(std::span<const Var<T>> inputs) {
  if (inputs.empty()) throw ContractError("concat: no inputs");
  auto& tape = inputs.front().tape();
  const std::size_t rows = rows_cols(inputs.front().value(), "concat").first;
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const auto& v : inputs) {
    const auto [r, c] = rows_cols(v.value(), "concat");
    if (r != rows) throw ShapeError("concat: batch sizes differ");
    widths.push_back(c);
    ids.push_back(v.id());
    total += c;
  }
  BasicTensor<T> out(inputs.front().value().rank() == 1 ? Shape{total} : Shape{rows, total});
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const T* src = inputs[k].value().data() + r * widths[k];
      std::copy(src, src + widths[k], out.data() + r * total + off);
      off += widths[k];
    }
  }
  return tape.record(std::move(out), inputs,
                     [rows, total, widths = std::move(widths), ids = std::move(ids)](
                         Tape<T>& t, std::size_t self) {
                       const auto& gy = t.grad_buffer(self);
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (t.requires_grad(ids[k])) {
                           auto& gx = t.grad_buffer(ids[k]);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < widths[k]; ++j) {
                               gx[r * widths[k] + j] += gy[r * total + off + j];
                             }
                           }
                         }
                         off += widths[k];
                       }
                     });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  const Var<T> in[] = {a, b};
  return a.tape().record(std::move(out), in, [ai, bi](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad_buffer(self);
    for (auto id : {ai, bi}) {
      if (!t.requires_grad(id)) continue;
      auto& gx = t.grad_buffer(id);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
  });
}

template <class T>
Var<T> add_constant(Var<T> a, const BasicTensor<T>& c) {
  if (a.shape() != c.shape()) {
    throw ShapeError("add_constant: " + shape_string(a.shape()) + " vs " + shape_string(c.shape()));
  }
  BasicTensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  const std::size_t ai = a.id();
  const Var<T> in[] = {a};
  return a.tape().record(std::move(out), in, [ai](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad_buffer(self);
    auto& gx = t.grad_buffer(ai);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ai = a.id();
  const Var<T> in[] = {a};
  return a.tape().record(std::move(out), in, [ai, factor](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad_buffer(self);
    auto& gx = t.grad_buffer(ai);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += factor * gy[i];
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  T total{0};
  for (auto v : a.value().values()) total += v;
  const std::size_t ai = a.id();
  const Var<T> in[] = {a};
  return a.tape().record(BasicTensor<T>::scalar(total), in, [ai](Tape<T>& t, std::size_t self) {
    const T g = t.grad_buffer(self)[0];
    for (auto& v : t.grad_buffer(ai).values()) v += g;
  });
}

template <class T>
Var<T> nll_binary(Var<T> prob, std::span<const int> labels) {
  const auto& p = prob.value();
  if (p.size() != labels.size() || (p.rank() == 2 && p.dim(1) != 1) || p.rank() > 2) {
    throw ShapeError("nll_binary: probabilities " + shape_string(p.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  auto& tape = prob.tape();
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double total = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const double q = labels[j] ? double(p[j]) : 1.0 - double(p[j]);
    if (q < kLogClamp) ++tape.diagnostics().clamped_logs;
    total -= std::log(std::max(q, kLogClamp));
  }
  std::vector<int> z(labels.begin(), labels.end());
  const std::size_t pi = prob.id();
  const Var<T> in[] = {prob};
  return tape.record(BasicTensor<T>::scalar(static_cast<T>(total * inv_n)), in,
                     [pi, inv_n, z = std::move(z)](Tape<T>& t, std::size_t self) {
                       const double g = double(t.grad_buffer(self)[0]) * inv_n;
                       const auto& p = t.value(pi);
                       auto& gp = t.grad_buffer(pi);
                       for (std::size_t j = 0; j < z.size(); ++j) {
                         if (z[j]) {
                           gp[j] -= static_cast<T>(g / std::max(double(p[j]), kLogClamp));
                         } else {
                           gp[j] += static_cast<T>(g / std::max(1.0 - double(p[j]), kLogClamp));
                         }
                       }
                     });
}

template <class T>
Var<T> nll_categorical(Var<T> prob, std::span<const int> labels) {
  const auto& p = prob.value();
  if (p.rank() != 2 || p.dim(0) != labels.size()) {
    throw ShapeError("nll_categorical: probabilities " + shape_string(p.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t classes = p.dim(1);
  auto& tape = prob.tape();
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double total = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] < 0 || static_cast<std::size_t>(labels[j]) >= classes) {
      throw ValidationError("nll_categorical: label " + std::to_string(labels[j]) +
                            " outside [0," + std::to_string(classes) + ")");
    }
    const double q = p[j * classes + labels[j]];
    if (q < kLogClamp) ++tape.diagnostics().clamped_logs;
    total -= std::log(std::max(q, kLogClamp));
  }
  std::vector<int> z(labels.begin(), labels.end());
  const std::size_t pi = prob.id();
  const Var<T> in[] = {prob};
  return tape.record(BasicTensor<T>::scalar(static_cast<T>(total * inv_n)), in,
                     [pi, inv_n, classes, z = std::move(z)](Tape<T>& t, std::size_t self) {
                       const double g = double(t.grad_buffer(self)[0]) * inv_n;
                       const auto& p = t.value(pi);
                       auto& gp = t.grad_buffer(pi);
                       for (std::size_t j = 0; j < z.size(); ++j) {
                         const std::size_t idx = j * classes + z[j];
                         gp[idx] -= static_cast<T>(g / std::max(double(p[idx]), kLogClamp));
                       }
                     });
}

#define CCMT_INSTANTIATE_OPS(T)                                                 \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>);                            \
  template Var<T> conv_relu_pool<T>(Var<T>, Var<T>, Var<T>);                    \
  template Var<T> maxpool2<T>(Var<T>);                                          \
  template Var<T> dense<T>(Var<T>, Var<T>, Var<T>);                             \
  template Var<T> activation<T>(Var<T>, Activation);                            \
  template Var<T> reshape<T>(Var<T>, Shape);                                    \
  template Var<T> concat<T>(std::span<const Var<T>>);                           \
  template Var<T> add<T>(Var<T>, Var<T>);                                       \
  template Var<T> add_constant<T>(Var<T>, const BasicTensor<T>&);               \
  template Var<T> scale<T>(Var<T>, T);                                          \
  template Var<T> sum<T>(Var<T>);                                               \
  template Var<T> nll_binary<T>(Var<T>, std::span<const int>);                  \
  template Var<T> nll_categorical<T>(Var<T>, std::span<const int>);

CCMT_INSTANTIATE_OPS(float)
CCMT_INSTANTIATE_OPS(double)

#undef CCMT_INSTANTIATE_OPS

}  // namespace ops
}  // namespace ccmt
