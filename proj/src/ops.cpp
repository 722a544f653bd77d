#include "signformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace signformer {

namespace test_hooks {
std::string corrupt_backward_op;
bool watch_relu6_kinks = false;
float relu6_min_kink_distance = 0.0f;
}

namespace {

// Active tape with the ops' grad recipients registered.
template <typename... Ts>
Tape* record_tape(const Ts&... tensors) {
  Tape* t = Tape::active();
  (t->touch(tensors), ...);
  return t;
}

// Right-operand broadcast: map a flat index of `a` to the matching flat
// index of `b` after left-padding b's shape with 1s.
struct Broadcast {
  Shape a_shape;
  Shape b_shape_padded;
  std::vector<std::size_t> b_strides;
  bool identity = false;
  bool scalar = false;

  static Broadcast make(const Shape& a, const Shape& b) {
    Broadcast bc;
    bc.a_shape = a;
    if (a == b) {
      bc.identity = true;
      return bc;
    }
    if (shape_numel(b) == 1) {
      bc.scalar = true;
      return bc;
    }
    check(b.size() <= a.size(), "cannot broadcast ", shape_str(b), " against ",
          shape_str(a));
    Shape bp(a.size(), 1);
    std::copy(b.begin(), b.end(), bp.begin() + (a.size() - b.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
      check(bp[i] == 1 || bp[i] == a[i], "cannot broadcast ", shape_str(b),
            " against ", shape_str(a));
    bc.b_shape_padded = bp;
    bc.b_strides.resize(a.size());
    std::size_t stride = 1;
    for (int i = static_cast<int>(a.size()) - 1; i >= 0; --i) {
      bc.b_strides[i] = (bp[i] == 1) ? 0 : stride;
      stride *= static_cast<std::size_t>(bp[i]);
    }
    return bc;
  }

  std::size_t map(std::size_t a_flat) const {
    if (identity) return a_flat;
    if (scalar) return 0;
    std::size_t b_flat = 0;
    for (int i = static_cast<int>(a_shape.size()) - 1; i >= 0; --i) {
      std::size_t d = static_cast<std::size_t>(a_shape[i]);
      std::size_t coord = a_flat % d;
      a_flat /= d;
      b_flat += coord * b_strides[i];
    }
    return b_flat;
  }
};

template <typename Fwd, typename DfA, typename DfB>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, Fwd fwd, DfA dfa, DfB dfb) {
  Broadcast bc = Broadcast::make(a.shape(), b.shape());
  std::vector<float> out(a.size());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i], bd[bc.map(i)]);
  Tensor result = Tensor::from_data(a.shape(), std::move(out),
                                    a.requires_grad() || b.requires_grad());
  if (should_record(a, b)) {
    Tensor ac = a, bcopy = b, r = result;
    record_tape(a, b)->record([ac, bcopy, r, bc, dfa, dfb]() mutable {
      auto g = r.grad();
      auto ad2 = ac.data();
      auto bd2 = bcopy.data();
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * dfa(ad2[i], bd2[bc.map(i)]);
      }
      if (bcopy.requires_grad()) {
        auto gb = bcopy.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[bc.map(i)] += g[i] * dfb(ad2[i], bd2[bc.map(i)]);
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      a, b, [](float x, float y) { return x + y; },
      [](float, float) { return 1.0f; }, [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      a, b, [](float x, float y) { return x - y; },
      [](float, float) { return 1.0f; }, [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      a, b, [](float x, float y) { return x * y; },
      [](float, float y) { return y; }, [](float x, float) { return x; });
}

Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.size());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
  Tensor result = Tensor::from_data(a.shape(), std::move(out), a.requires_grad());
  if (should_record(a)) {
    Tensor ac = a, r = result;
    record_tape(a)->record([ac, r, s]() mutable {
      auto g = r.grad();
      auto ga = ac.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return result;
}

Tensor relu6(const Tensor& x) {
  std::vector<float> out(x.size());
  auto xd = x.data();
  if (test_hooks::watch_relu6_kinks)
    for (float v : xd)
      test_hooks::relu6_min_kink_distance = std::min(
          test_hooks::relu6_min_kink_distance,
          std::min(std::abs(v), std::abs(v - 6.0f)));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(std::max(xd[i], 0.0f), 6.0f);
  Tensor result = Tensor::from_data(x.shape(), std::move(out), x.requires_grad());
  if (should_record(x)) {
    Tensor xc = x, r = result;
    record_tape(x)->record([xc, r]() mutable {
      const float skew = test_hooks::corrupt_backward_op == "relu6" ? 1.01f : 1.0f;
      auto g = r.grad();
      auto gx = xc.grad();
      auto xd2 = xc.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xd2[i] > 0.0f && xd2[i] < 6.0f) gx[i] += g[i] * skew;
    });
  }
  return result;
}

Tensor sigmoid(const Tensor& x) {
  std::vector<float> out(x.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    float v = xd[i];
    if (v >= 0.0f) {
      out[i] = 1.0f / (1.0f + std::exp(-v));
    } else {
      float e = std::exp(v);
      out[i] = e / (1.0f + e);
    }
  }
  Tensor result = Tensor::from_data(x.shape(), std::move(out), x.requires_grad());
  if (should_record(x)) {
    Tensor xc = x, r = result;
    record_tape(x)->record([xc, r]() mutable {
      const float skew = test_hooks::corrupt_backward_op == "sigmoid" ? 1.02f : 1.0f;
      auto g = r.grad();
      auto gx = xc.grad();
      auto yd = r.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * yd[i] * (1.0f - yd[i]) * skew;
    });
  }
  return result;
}

Tensor dropout(const Tensor& x, float p, Rng& rng, bool enabled) {
  if (!enabled || p <= 0.0f) return x;
  check(p < 1.0f, "dropout rate must be < 1, got ", p);
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> mask(x.size());
  for (auto& m : mask) m = rng.next_double() >= p ? keep_scale : 0.0f;
  std::vector<float> out(x.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  Tensor result = Tensor::from_data(x.shape(), std::move(out), x.requires_grad());
  if (should_record(x)) {
    Tensor xc = x, r = result;
    record_tape(x)->record([xc, r, mask = std::move(mask)]() mutable {
      auto g = r.grad();
      auto gx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor result = Tensor::scalar(static_cast<float>(acc), x.requires_grad());
  if (should_record(x)) {
    Tensor xc = x, r = result;
    record_tape(x)->record([xc, r]() mutable {
      float g = r.grad()[0];
      auto gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return result;
}

namespace {

struct MatmulDims {
  std::size_t batch;
  int m, k, n;
  bool b_batched;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  check(a.rank() >= 2 && b.rank() >= 2, "matmul operands must have rank >= 2, got ",
        shape_str(a.shape()), " and ", shape_str(b.shape()));
  MatmulDims d;
  d.m = a.dim(-2);
  d.k = a.dim(-1);
  check(b.dim(-2) == d.k, "matmul inner dimensions disagree: ", shape_str(a.shape()),
        " x ", shape_str(b.shape()));
  d.n = b.dim(-1);
  std::size_t a_batch = a.size() / (static_cast<std::size_t>(d.m) * d.k);
  std::size_t b_batch = b.size() / (static_cast<std::size_t>(d.k) * d.n);
  d.b_batched = b.rank() > 2;
  if (d.b_batched)
    check(a_batch == b_batch, "matmul batch dimensions disagree: ",
          shape_str(a.shape()), " x ", shape_str(b.shape()));
  d.batch = a_batch;
  return d;
}

void matmul_kernel(const float* a, const float* b, float* out, int m, int k, int n,
                   std::vector<double>& acc) {
  acc.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int kk = 0; kk < k; ++kk) {
      const double aik = a[static_cast<std::size_t>(i) * k + kk];
      const float* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) acc[j] += aik * brow[j];
    }
    float* orow = out + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  MatmulDims d = matmul_dims(a, b);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(d.n);
  std::vector<float> out(d.batch * d.m * d.n, 0.0f);
  const float* ad = a.data().data();
  const float* bd = b.data().data();
  const std::size_t a_step = static_cast<std::size_t>(d.m) * d.k;
  const std::size_t b_step = d.b_batched ? static_cast<std::size_t>(d.k) * d.n : 0;
  const std::size_t o_step = static_cast<std::size_t>(d.m) * d.n;
  std::vector<double> acc;
  for (std::size_t s = 0; s < d.batch; ++s)
    matmul_kernel(ad + s * a_step, bd + s * b_step, out.data() + s * o_step, d.m,
                  d.k, d.n, acc);
  Tensor result = Tensor::from_data(std::move(out_shape), std::move(out),
                                    a.requires_grad() || b.requires_grad());
  if (should_record(a, b)) {
    Tensor ac = a, bc = b, r = result;
    record_tape(a, b)->record([ac, bc, r, d, a_step, b_step, o_step]() mutable {
      const float* g = r.grad().data();
      const float* ad2 = ac.data().data();
      const float* bd2 = bc.data().data();
      if (ac.requires_grad()) {
        float* ga = ac.grad().data();
        // dA = dOut * B^T
        for (std::size_t s = 0; s < d.batch; ++s) {
          const float* gs = g + s * o_step;
          const float* bs = bd2 + s * b_step;
          float* gas = ga + s * a_step;
          for (int i = 0; i < d.m; ++i)
            for (int j = 0; j < d.n; ++j) {
              const float gij = gs[static_cast<std::size_t>(i) * d.n + j];
              const float* brow = bs;
              for (int kk = 0; kk < d.k; ++kk)
                gas[static_cast<std::size_t>(i) * d.k + kk] +=
                    gij * brow[static_cast<std::size_t>(kk) * d.n + j];
            }
        }
      }
      if (bc.requires_grad()) {
        float* gb = bc.grad().data();
        // dB = A^T * dOut (summed over batch when B is shared)
        for (std::size_t s = 0; s < d.batch; ++s) {
          const float* gs = g + s * o_step;
          const float* as = ad2 + s * a_step;
          float* gbs = gb + s * b_step;
          for (int kk = 0; kk < d.k; ++kk)
            for (int i = 0; i < d.m; ++i) {
              const float aik = as[static_cast<std::size_t>(i) * d.k + kk];
              for (int j = 0; j < d.n; ++j)
                gbs[static_cast<std::size_t>(kk) * d.n + j] +=
                    aik * gs[static_cast<std::size_t>(i) * d.n + j];
            }
        }
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& x) {
  check(x.rank() == 2, "transpose expects rank 2, got ", shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  std::vector<float> out(x.size());
  auto xd = x.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(j) * r + i] = xd[static_cast<std::size_t>(i) * c + j];
  Tensor result = Tensor::from_data({c, r}, std::move(out), x.requires_grad());
  if (should_record(x)) {
    Tensor xc = x, rr = result;
    record_tape(x)->record([xc, rr, r, c]() mutable {
      auto g = rr.grad();
      auto gx = xc.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          gx[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
    });
  }
  return result;
}

namespace {

struct AxisSplit {
  std::size_t outer, axis, inner;
};

AxisSplit axis_split(const Shape& shape, int axis) {
  int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  check(axis >= 0 && axis < r, "axis out of range for ", shape_str(shape));
  AxisSplit s{1, static_cast<std::size_t>(shape[axis]), 1};
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[i]);
  for (int i = axis + 1; i < r; ++i) s.inner *= static_cast<std::size_t>(shape[i]);
  return s;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  AxisSplit s = axis_split(x.shape(), axis);
  std::vector<float> out(x.size());
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.axis * s.inner + in;
      float mx = xd[base];
      for (std::size_t a = 1; a < s.axis; ++a)
        mx = std::max(mx, xd[base + a * s.inner]);
      double denom = 0.0;
      std::vector<double> exps(s.axis);
      for (std::size_t a = 0; a < s.axis; ++a) {
        exps[a] = std::exp(static_cast<double>(xd[base + a * s.inner]) -
                           static_cast<double>(mx));
        denom += exps[a];
      }
      for (std::size_t a = 0; a < s.axis; ++a)
        out[base + a * s.inner] = static_cast<float>(exps[a] / denom);
    }
  Tensor result = Tensor::from_data(x.shape(), std::move(out), x.requires_grad());
  if (should_record(x)) {
    Tensor xc = x, r = result;
    record_tape(x)->record([xc, r, s]() mutable {
      auto g = r.grad();
      auto y = r.data();
      auto gx = xc.grad();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.axis * s.inner + in;
          double dot = 0.0;
          for (std::size_t a = 0; a < s.axis; ++a) {
            const std::size_t i = base + a * s.inner;
            dot += static_cast<double>(g[i]) * y[i];
          }
          for (std::size_t a = 0; a < s.axis; ++a) {
            const std::size_t i = base + a * s.inner;
            gx[i] += static_cast<float>(y[i] * (g[i] - dot));
          }
        }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const int d = x.dim(-1);
  check(gain.rank() == 1 && gain.dim(0) == d, "layer_norm gain shape ",
        shape_str(gain.shape()), " does not match feature dim ", d);
  check(bias.rank() == 1 && bias.dim(0) == d, "layer_norm bias shape ",
        shape_str(bias.shape()), " does not match feature dim ", d);
  const std::size_t rows = x.size() / static_cast<std::size_t>(d);
  std::vector<float> out(x.size());
  std::vector<float> xhat(x.size());
  std::vector<float> inv_sigma(rows);
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += xd[base + i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      double c = xd[base + i] - mean;
      var += c * c;
    }
    var /= d;  // biased
    double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = static_cast<float>(inv);
    for (int i = 0; i < d; ++i) {
      double h = (xd[base + i] - mean) * inv;
      xhat[base + i] = static_cast<float>(h);
      out[base + i] = static_cast<float>(gd[i] * h + bd[i]);
    }
  }
  Tensor result = Tensor::from_data(
      x.shape(), std::move(out),
      x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  if (Tape::active() &&
      (x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
    Tensor xc = x, gc = gain, bc = bias, r = result;
    record_tape(x, gain, bias)->record([xc, gc, bc, r, d, rows, xhat = std::move(xhat),
                            inv_sigma = std::move(inv_sigma)]() mutable {
      auto g = r.grad();
      auto gd2 = gc.data();
      for (std::size_t row = 0; row < rows; ++row) {
        const std::size_t base = row * d;
        if (gc.requires_grad()) {
          auto gg = gc.grad();
          for (int i = 0; i < d; ++i) gg[i] += g[base + i] * xhat[base + i];
        }
        if (bc.requires_grad()) {
          auto gb = bc.grad();
          for (int i = 0; i < d; ++i) gb[i] += g[base + i];
        }
        if (xc.requires_grad()) {
          auto gx = xc.grad();
          double mean_dh = 0.0, mean_dh_xhat = 0.0;
          for (int i = 0; i < d; ++i) {
            double dh = static_cast<double>(g[base + i]) * gd2[i];
            mean_dh += dh;
            mean_dh_xhat += dh * xhat[base + i];
          }
          mean_dh /= d;
          mean_dh_xhat /= d;
          for (int i = 0; i < d; ++i) {
            double dh = static_cast<double>(g[base + i]) * gd2[i];
            gx[base + i] += static_cast<float>(
                inv_sigma[row] * (dh - mean_dh - xhat[base + i] * mean_dh_xhat));
          }
        }
      }
    });
  }
  return result;
}

Tensor conv1d_pointwise(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(x.rank() == 2 && w.rank() == 2, "conv1d_pointwise expects [T,Cin] and [Cin,Cout]");
  const int t = x.dim(0), cin = x.dim(1), cout = w.dim(1);
  check(w.dim(0) == cin, "conv1d_pointwise channel mismatch: x ", shape_str(x.shape()),
        " vs w ", shape_str(w.shape()));
  check(b.rank() == 1 && b.dim(0) == cout, "conv1d_pointwise bias shape ",
        shape_str(b.shape()), " does not match Cout ", cout);
  std::vector<float> out(static_cast<std::size_t>(t) * cout);
  auto xd = x.data();
  auto wd = w.data();
  auto bd = b.data();
  std::vector<double> acc(static_cast<std::size_t>(cout));
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < cout; ++j) acc[j] = bd[j];
    for (int k = 0; k < cin; ++k) {
      const double xik = xd[static_cast<std::size_t>(i) * cin + k];
      const float* wrow = wd.data() + static_cast<std::size_t>(k) * cout;
      for (int j = 0; j < cout; ++j) acc[j] += xik * wrow[j];
    }
    float* orow = out.data() + static_cast<std::size_t>(i) * cout;
    for (int j = 0; j < cout; ++j) orow[j] = static_cast<float>(acc[j]);
  }
  Tensor result = Tensor::from_data(
      {t, cout}, std::move(out),
      x.requires_grad() || w.requires_grad() || b.requires_grad());
  if (Tape::active() && result.requires_grad()) {
    Tensor xc = x, wc = w, bc = b, r = result;
    record_tape(x, w, b)->record([xc, wc, bc, r, t, cin, cout]() mutable {
      auto g = r.grad();
      auto xd2 = xc.data();
      auto wd2 = wc.data();
      if (xc.requires_grad()) {
        auto gx = xc.grad();
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < cout; ++j) {
            const float gij = g[static_cast<std::size_t>(i) * cout + j];
            for (int k = 0; k < cin; ++k)
              gx[static_cast<std::size_t>(i) * cin + k] +=
                  gij * wd2[static_cast<std::size_t>(k) * cout + j];
          }
      }
      if (wc.requires_grad()) {
        auto gw = wc.grad();
        for (int i = 0; i < t; ++i)
          for (int k = 0; k < cin; ++k) {
            const float xik = xd2[static_cast<std::size_t>(i) * cin + k];
            for (int j = 0; j < cout; ++j)
              gw[static_cast<std::size_t>(k) * cout + j] +=
                  xik * g[static_cast<std::size_t>(i) * cout + j];
          }
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < cout; ++j) gb[j] += g[static_cast<std::size_t>(i) * cout + j];
      }
    });
  }
  return result;
}

Tensor conv1d_depthwise(const Tensor& x, const Tensor& w, const Tensor& b,
                        const Tensor& pad_mask) {
  check(x.rank() == 2 && w.rank() == 2, "conv1d_depthwise expects [T,C] and [C,K]");
  const int t = x.dim(0), c = x.dim(1), k = w.dim(1);
  check(w.dim(0) == c, "conv1d_depthwise channel mismatch: x ", shape_str(x.shape()),
        " vs w ", shape_str(w.shape()));
  check(k % 2 == 1, "conv1d_depthwise kernel width must be odd, got ", k);
  check(b.rank() == 1 && b.dim(0) == c, "conv1d_depthwise bias shape mismatch");
  std::vector<float> valid(t, 1.0f);
  if (pad_mask.defined()) {
    check(pad_mask.size() == static_cast<std::size_t>(t), "pad_mask length ",
          pad_mask.size(), " does not match T ", t);
    auto md = pad_mask.data();
    for (int i = 0; i < t; ++i) {
      check(md[i] == 0.0f || md[i] == 1.0f, "pad_mask entries must be 0 or 1");
      valid[i] = md[i];
    }
  }
  const int half = (k - 1) / 2;
  auto xd = x.data();
  auto wd = w.data();
  auto bd = b.data();
  // masked input copy so padded frames contribute exact zeros
  std::vector<float> xm(x.size());
  for (int i = 0; i < t; ++i)
    for (int ch = 0; ch < c; ++ch)
      xm[static_cast<std::size_t>(i) * c + ch] =
          valid[i] != 0.0f ? xd[static_cast<std::size_t>(i) * c + ch] : 0.0f;
  std::vector<float> out(x.size(), 0.0f);
  for (int i = 0; i < t; ++i) {
    if (valid[i] == 0.0f) continue;
    for (int ch = 0; ch < c; ++ch) {
      double acc = bd[ch];
      for (int kk = 0; kk < k; ++kk) {
        const int src = i + kk - half;
        if (src < 0 || src >= t) continue;
        acc += static_cast<double>(xm[static_cast<std::size_t>(src) * c + ch]) *
               wd[static_cast<std::size_t>(ch) * k + kk];
      }
      out[static_cast<std::size_t>(i) * c + ch] = static_cast<float>(acc);
    }
  }
  Tensor result = Tensor::from_data(
      {t, c}, std::move(out),
      x.requires_grad() || w.requires_grad() || b.requires_grad());
  if (Tape::active() && result.requires_grad()) {
    Tensor xc = x, wc = w, bc = b, r = result;
    record_tape(x, w, b)->record([xc, wc, bc, r, t, c, k, half, valid = std::move(valid),
                            xm = std::move(xm)]() mutable {
      auto g = r.grad();
      auto wd2 = wc.data();
      for (int i = 0; i < t; ++i) {
        if (valid[i] == 0.0f) continue;
        for (int ch = 0; ch < c; ++ch) {
          const float gi = g[static_cast<std::size_t>(i) * c + ch];
          if (gi == 0.0f) continue;
          if (bc.requires_grad()) bc.grad()[ch] += gi;
          for (int kk = 0; kk < k; ++kk) {
            const int src = i + kk - half;
            if (src < 0 || src >= t) continue;
            if (wc.requires_grad())
              wc.grad()[static_cast<std::size_t>(ch) * k + kk] +=
                  gi * xm[static_cast<std::size_t>(src) * c + ch];
            if (xc.requires_grad() && valid[src] != 0.0f)
              xc.grad()[static_cast<std::size_t>(src) * c + ch] +=
                  gi * wd2[static_cast<std::size_t>(ch) * k + kk];
          }
        }
      }
    });
  }
  return result;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  check(table.rank() == 2, "embedding table must be rank 2");
  const int v = table.dim(0), d = table.dim(1);
  check(!ids.empty(), "embedding_lookup requires at least one id");
  for (int id : ids)
    check(id >= 0 && id < v, "embedding id ", id, " out of range [0,", v, ")");
  std::vector<float> out(ids.size() * static_cast<std::size_t>(d));
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + i * d, td.data() + static_cast<std::size_t>(ids[i]) * d,
                sizeof(float) * d);
  Tensor result = Tensor::from_data({static_cast<int>(ids.size()), d}, std::move(out),
                                    table.requires_grad());
  if (should_record(table)) {
    Tensor tc = table, r = result;
    record_tape(table)->record([tc, r, ids, d]() mutable {
      auto g = r.grad();
      auto gt = tc.grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
          gt[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
    });
  }
  return result;
}

Tensor interp_gather(const Tensor& seq, const Tensor& pos) {
  check(seq.rank() == 2, "interp_gather seq must be rank 2");
  check(pos.rank() == 1, "interp_gather pos must be rank 1");
  const int t = seq.dim(0), d = seq.dim(1);
  const std::size_t q = pos.size();
  auto sd = seq.data();
  auto pd = pos.data();
  std::vector<int> lo(q), hi(q);
  std::vector<float> frac(q);
  std::vector<char> clamped(q);
  for (std::size_t i = 0; i < q; ++i) {
    float raw = pd[i];
    float p = std::min(std::max(raw, 0.0f), static_cast<float>(t - 1));
    clamped[i] = (raw < 0.0f || raw > static_cast<float>(t - 1)) ? 1 : 0;
    int l = static_cast<int>(std::floor(p));
    lo[i] = l;
    hi[i] = std::min(l + 1, t - 1);
    frac[i] = p - static_cast<float>(l);
  }
  std::vector<float> out(q * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < q; ++i) {
    const float z = frac[i];
    const float* rlo = sd.data() + static_cast<std::size_t>(lo[i]) * d;
    const float* rhi = sd.data() + static_cast<std::size_t>(hi[i]) * d;
    float* orow = out.data() + i * d;
    for (int j = 0; j < d; ++j) orow[j] = (1.0f - z) * rlo[j] + z * rhi[j];
  }
  Tensor result = Tensor::from_data({static_cast<int>(q), d}, std::move(out),
                                    seq.requires_grad() || pos.requires_grad());
  if (should_record(seq, pos)) {
    Tensor sc = seq, pc = pos, r = result;
    record_tape(seq, pos)->record([sc, pc, r, d, lo = std::move(lo), hi = std::move(hi),
                            frac = std::move(frac), clamped = std::move(clamped),
                            q]() mutable {
      auto g = r.grad();
      auto sd2 = sc.data();
      for (std::size_t i = 0; i < q; ++i) {
        const float z = frac[i];
        if (sc.requires_grad()) {
          auto gs = sc.grad();
          for (int j = 0; j < d; ++j) {
            const float gij = g[i * d + j];
            gs[static_cast<std::size_t>(lo[i]) * d + j] += (1.0f - z) * gij;
            gs[static_cast<std::size_t>(hi[i]) * d + j] += z * gij;
          }
        }
        if (pc.requires_grad() && !clamped[i]) {
          double acc = 0.0;
          for (int j = 0; j < d; ++j)
            acc += static_cast<double>(g[i * d + j]) *
                   (sd2[static_cast<std::size_t>(hi[i]) * d + j] -
                    sd2[static_cast<std::size_t>(lo[i]) * d + j]);
          pc.grad()[i] += static_cast<float>(acc);
        }
      }
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  check(x.rank() == 2, "slice_cols expects rank 2");
  const int r = x.dim(0), c = x.dim(1);
  check(start >= 0 && len >= 1 && start + len <= c, "slice_cols range [", start, ",",
        start + len, ") out of bounds for ", c, " columns");
  std::vector<float> out(static_cast<std::size_t>(r) * len);
  auto xd = x.data();
  for (int i = 0; i < r; ++i)
    std::memcpy(out.data() + static_cast<std::size_t>(i) * len,
                xd.data() + static_cast<std::size_t>(i) * c + start, sizeof(float) * len);
  Tensor result = Tensor::from_data({r, len}, std::move(out), x.requires_grad());
  if (should_record(x)) {
    Tensor xc = x, rr = result;
    record_tape(x)->record([xc, rr, r, c, start, len]() mutable {
      auto g = rr.grad();
      auto gx = xc.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j)
          gx[static_cast<std::size_t>(i) * c + start + j] +=
              g[static_cast<std::size_t>(i) * len + j];
    });
  }
  return result;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols requires at least one part");
  const int r = parts[0].dim(0);
  int total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check(p.rank() == 2 && p.dim(0) == r, "concat_cols parts must share row count");
    total += p.dim(1);
    rg = rg || p.requires_grad();
  }
  std::vector<float> out(static_cast<std::size_t>(r) * total);
  int col = 0;
  for (const auto& p : parts) {
    const int c = p.dim(1);
    auto pd = p.data();
    for (int i = 0; i < r; ++i)
      std::memcpy(out.data() + static_cast<std::size_t>(i) * total + col,
                  pd.data() + static_cast<std::size_t>(i) * c, sizeof(float) * c);
    col += c;
  }
  Tensor result = Tensor::from_data({r, total}, std::move(out), rg);
  if (Tape::active() && rg) {
    std::vector<Tensor> pc = parts;
    Tensor rr = result;
    Tape* tp = Tape::active();
    for (const auto& p : parts) tp->touch(p);
    tp->record([pc, rr, r, total]() mutable {
      auto g = rr.grad();
      int col = 0;
      for (auto& p : pc) {
        const int c = p.dim(1);
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              gp[static_cast<std::size_t>(i) * c + j] +=
                  g[static_cast<std::size_t>(i) * total + col + j];
        }
        col += c;
      }
    });
  }
  return result;
}

Tensor rowwise_block_dot(const Tensor& q, const Tensor& samples, int block) {
  check(q.rank() == 2 && samples.rank() == 2, "rowwise_block_dot expects rank-2 inputs");
  const int t = q.dim(0), d = q.dim(1);
  check(samples.dim(1) == d, "rowwise_block_dot feature dims disagree");
  check(samples.dim(0) == t * block, "rowwise_block_dot expects ", t * block,
        " sample rows, got ", samples.dim(0));
  auto qd = q.data();
  auto sd = samples.data();
  std::vector<float> out(static_cast<std::size_t>(t) * block);
  for (int i = 0; i < t; ++i)
    for (int k = 0; k < block; ++k) {
      const float* qrow = qd.data() + static_cast<std::size_t>(i) * d;
      const float* srow = sd.data() + (static_cast<std::size_t>(i) * block + k) * d;
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += static_cast<double>(qrow[j]) * srow[j];
      out[static_cast<std::size_t>(i) * block + k] = static_cast<float>(acc);
    }
  Tensor result = Tensor::from_data({t, block}, std::move(out),
                                    q.requires_grad() || samples.requires_grad());
  if (should_record(q, samples)) {
    Tensor qc = q, sc = samples, r = result;
    record_tape(q, samples)->record([qc, sc, r, t, d, block]() mutable {
      auto g = r.grad();
      auto qd2 = qc.data();
      auto sd2 = sc.data();
      for (int i = 0; i < t; ++i)
        for (int k = 0; k < block; ++k) {
          const float gik = g[static_cast<std::size_t>(i) * block + k];
          const std::size_t srow = (static_cast<std::size_t>(i) * block + k) * d;
          if (qc.requires_grad()) {
            auto gq = qc.grad();
            for (int j = 0; j < d; ++j)
              gq[static_cast<std::size_t>(i) * d + j] += gik * sd2[srow + j];
          }
          if (sc.requires_grad()) {
            auto gs = sc.grad();
            for (int j = 0; j < d; ++j)
              gs[srow + j] += gik * qd2[static_cast<std::size_t>(i) * d + j];
          }
        }
    });
  }
  return result;
}

Tensor rowwise_block_mix(const Tensor& w, const Tensor& samples, int block) {
  check(w.rank() == 2 && samples.rank() == 2, "rowwise_block_mix expects rank-2 inputs");
  const int t = w.dim(0), d = samples.dim(1);
  check(w.dim(1) == block, "rowwise_block_mix weight width must equal block");
  check(samples.dim(0) == t * block, "rowwise_block_mix expects ", t * block,
        " sample rows, got ", samples.dim(0));
  auto wd = w.data();
  auto sd = samples.data();
  std::vector<float> out(static_cast<std::size_t>(t) * d, 0.0f);
  std::vector<double> acc(static_cast<std::size_t>(d));
  for (int i = 0; i < t; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int k = 0; k < block; ++k) {
      const double wik = wd[static_cast<std::size_t>(i) * block + k];
      const float* srow = sd.data() + (static_cast<std::size_t>(i) * block + k) * d;
      for (int j = 0; j < d; ++j) acc[j] += wik * srow[j];
    }
    float* orow = out.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) orow[j] = static_cast<float>(acc[j]);
  }
  Tensor result = Tensor::from_data({t, d}, std::move(out),
                                    w.requires_grad() || samples.requires_grad());
  if (should_record(w, samples)) {
    Tensor wc = w, sc = samples, r = result;
    record_tape(w, samples)->record([wc, sc, r, t, d, block]() mutable {
      auto g = r.grad();
      auto wd2 = wc.data();
      auto sd2 = sc.data();
      for (int i = 0; i < t; ++i)
        for (int k = 0; k < block; ++k) {
          const std::size_t srow = (static_cast<std::size_t>(i) * block + k) * d;
          if (wc.requires_grad()) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j)
              acc += static_cast<double>(g[static_cast<std::size_t>(i) * d + j]) *
                     sd2[srow + j];
            wc.grad()[static_cast<std::size_t>(i) * block + k] += static_cast<float>(acc);
          }
          if (sc.requires_grad()) {
            auto gs = sc.grad();
            const float wik = wd2[static_cast<std::size_t>(i) * block + k];
            for (int j = 0; j < d; ++j)
              gs[srow + j] += wik * g[static_cast<std::size_t>(i) * d + j];
          }
        }
    });
  }
  return result;
}

Tensor sample_positions(const Tensor& offsets, int head, int t_len, float radius) {
  check(offsets.rank() == 2, "offsets must be [heads, K]");
  const int heads = offsets.dim(0), k = offsets.dim(1);
  check(head >= 0 && head < heads, "head index ", head, " out of range");
  check(t_len >= 1, "sequence length must be >= 1");
  auto od = offsets.data();
  std::vector<float> out(static_cast<std::size_t>(t_len) * k);
  std::vector<char> pass(out.size());
  const float tmax = static_cast<float>(t_len - 1);
  for (int i = 0; i < t_len; ++i)
    for (int kk = 0; kk < k; ++kk) {
      float off = od[static_cast<std::size_t>(head) * k + kk];
      const bool inner = off >= -radius && off <= radius;
      off = std::min(std::max(off, -radius), radius);
      float p = static_cast<float>(i) + off;
      const bool outer = p >= 0.0f && p <= tmax;
      p = std::min(std::max(p, 0.0f), tmax);
      const std::size_t idx = static_cast<std::size_t>(i) * k + kk;
      out[idx] = p;
      pass[idx] = (inner && outer) ? 1 : 0;
    }
  Tensor result =
      Tensor::from_data({t_len * k}, std::move(out), offsets.requires_grad());
  if (should_record(offsets)) {
    Tensor oc = offsets, r = result;
    record_tape(offsets)->record([oc, r, head, t_len, k, pass = std::move(pass)]() mutable {
      auto g = r.grad();
      auto go = oc.grad();
      for (int i = 0; i < t_len; ++i)
        for (int kk = 0; kk < k; ++kk) {
          const std::size_t idx = static_cast<std::size_t>(i) * k + kk;
          if (pass[idx])
            go[static_cast<std::size_t>(head) * k + kk] += g[idx];
        }
    });
  }
  return result;
}

Tensor gate_positions(const Tensor& gates, CopeMode mode, float p_max) {
  check(gates.rank() == 2, "gate_positions expects [Q,T]");
  const int q = gates.dim(0), t = gates.dim(1);
  if (mode == CopeMode::kCausal)
    check(q == t, "causal gate accumulation requires square gates, got ",
          shape_str(gates.shape()));
  auto gd = gates.data();
  std::vector<float> out(gates.size(), 0.0f);
  std::vector<char> active(gates.size(), 0);
  for (int i = 0; i < q; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * t;
    if (mode == CopeMode::kPrefix) {
      double acc = 0.0;
      for (int j = 0; j < t; ++j) {
        acc += gd[base + j];
        active[base + j] = acc < p_max ? 1 : 0;
        out[base + j] = static_cast<float>(std::min(acc, static_cast<double>(p_max)));
      }
    } else if (mode == CopeMode::kSuffix) {
      double acc = 0.0;
      for (int j = t - 1; j >= 0; --j) {
        acc += gd[base + j];
        active[base + j] = acc < p_max ? 1 : 0;
        out[base + j] = static_cast<float>(std::min(acc, static_cast<double>(p_max)));
      }
    } else {
      double acc = 0.0;
      for (int j = i; j >= 0; --j) {
        acc += gd[base + j];
        active[base + j] = acc < p_max ? 1 : 0;
        out[base + j] = static_cast<float>(std::min(acc, static_cast<double>(p_max)));
      }
    }
  }
  Tensor result = Tensor::from_data(gates.shape(), std::move(out), gates.requires_grad());
  if (should_record(gates)) {
    Tensor gc = gates, r = result;
    record_tape(gates)->record([gc, r, q, t, mode, active = std::move(active)]() mutable {
      auto g = r.grad();
      auto gg = gc.grad();
      for (int i = 0; i < q; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * t;
        if (mode == CopeMode::kPrefix) {
          // p[i,j] sums gates t<=j, so dg[i,t] collects dp from j>=t
          double acc = 0.0;
          for (int j = t - 1; j >= 0; --j) {
            if (active[base + j]) acc += g[base + j];
            gg[base + j] += static_cast<float>(acc);
          }
        } else if (mode == CopeMode::kSuffix) {
          double acc = 0.0;
          for (int j = 0; j < t; ++j) {
            if (active[base + j]) acc += g[base + j];
            gg[base + j] += static_cast<float>(acc);
          }
        } else {
          double acc = 0.0;
          for (int j = 0; j <= i; ++j) {
            if (active[base + j]) acc += g[base + j];
            gg[base + j] += static_cast<float>(acc);
          }
        }
      }
    });
  }
  return result;
}

Tensor ordered_gate_positions(const Tensor& gates, const std::vector<int>& order,
                              float p_max) {
  check(gates.rank() == 2, "ordered_gate_positions expects [T,K]");
  const int t = gates.dim(0), k = gates.dim(1);
  check(order.size() == gates.size(), "order table size mismatch");
  auto gd = gates.data();
  std::vector<float> out(gates.size(), 0.0f);
  std::vector<char> active(gates.size(), 0);
  for (int i = 0; i < t; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * k;
    double acc = 0.0;
    for (int r = 0; r < k; ++r) {
      const int col = order[base + r];
      acc += gd[base + col];
      active[base + col] = acc < p_max ? 1 : 0;
      out[base + col] = static_cast<float>(std::min(acc, static_cast<double>(p_max)));
    }
  }
  Tensor result = Tensor::from_data(gates.shape(), std::move(out), gates.requires_grad());
  if (should_record(gates)) {
    Tensor gc = gates, r = result;
    record_tape(gates)->record([gc, r, t, k, order, active = std::move(active)]() mutable {
      auto g = r.grad();
      auto gg = gc.grad();
      for (int i = 0; i < t; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * k;
        double acc = 0.0;
        for (int r = k - 1; r >= 0; --r) {
          const int col = order[base + r];
          if (active[base + col]) acc += g[base + col];
          gg[base + col] += static_cast<float>(acc);
        }
      }
    });
  }
  return result;
}

Tensor cope_logit_bias(const Tensor& q, const Tensor& positions, const Tensor& table) {
  check(q.rank() == 2 && positions.rank() == 2 && table.rank() == 2,
        "cope_logit_bias expects rank-2 inputs");
  const int rows = q.dim(0), d = q.dim(1), cols = positions.dim(1);
  const int p_rows = table.dim(0);
  check(positions.dim(0) == rows, "positions row count mismatch");
  check(table.dim(1) == d, "position table feature dim mismatch");
  auto qd = q.data();
  auto pd = positions.data();
  auto td = table.data();
  std::vector<float> out(positions.size());
  std::vector<int> lo(positions.size()), hi(positions.size());
  std::vector<float> frac(positions.size());
  std::vector<float> qe_lo(positions.size()), qe_hi(positions.size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
      const float p = pd[idx];
      check(p >= 0.0f && p <= static_cast<float>(p_rows - 1),
            "cope position ", p, " outside stored range [0,", p_rows - 1, "]");
      const int l = static_cast<int>(std::floor(p));
      lo[idx] = l;
      hi[idx] = std::min(l + 1, p_rows - 1);
      frac[idx] = p - static_cast<float>(l);
      double dlo = 0.0, dhi = 0.0;
      const float* qrow = qd.data() + static_cast<std::size_t>(i) * d;
      const float* tlo = td.data() + static_cast<std::size_t>(lo[idx]) * d;
      const float* thi = td.data() + static_cast<std::size_t>(hi[idx]) * d;
      for (int c = 0; c < d; ++c) {
        dlo += static_cast<double>(qrow[c]) * tlo[c];
        dhi += static_cast<double>(qrow[c]) * thi[c];
      }
      qe_lo[idx] = static_cast<float>(dlo);
      qe_hi[idx] = static_cast<float>(dhi);
      out[idx] = (1.0f - frac[idx]) * qe_lo[idx] + frac[idx] * qe_hi[idx];
    }
  const bool rg = q.requires_grad() || table.requires_grad() || positions.requires_grad();
  Tensor result = Tensor::from_data(positions.shape(), std::move(out), rg);
  if (Tape::active() && rg) {
    Tensor qc = q, pc = positions, tc = table, r = result;
    record_tape(q, positions, table)->record([qc, pc, tc, r, rows, cols, d, lo = std::move(lo),
                            hi = std::move(hi), frac = std::move(frac),
                            qe_lo = std::move(qe_lo), qe_hi = std::move(qe_hi)]() mutable {
      auto g = r.grad();
      auto qd2 = qc.data();
      auto td2 = tc.data();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
          const float gij = g[idx];
          if (gij == 0.0f) continue;
          const float z = frac[idx];
          const float* tlo = td2.data() + static_cast<std::size_t>(lo[idx]) * d;
          const float* thi = td2.data() + static_cast<std::size_t>(hi[idx]) * d;
          if (qc.requires_grad()) {
            auto gq = qc.grad();
            for (int c = 0; c < d; ++c)
              gq[static_cast<std::size_t>(i) * d + c] +=
                  gij * ((1.0f - z) * tlo[c] + z * thi[c]);
          }
          if (tc.requires_grad()) {
            auto gt = tc.grad();
            const float* qrow = qd2.data() + static_cast<std::size_t>(i) * d;
            for (int c = 0; c < d; ++c) {
              gt[static_cast<std::size_t>(lo[idx]) * d + c] += gij * (1.0f - z) * qrow[c];
              gt[static_cast<std::size_t>(hi[idx]) * d + c] += gij * z * qrow[c];
            }
          }
          if (pc.requires_grad()) pc.grad()[idx] += gij * (qe_hi[idx] - qe_lo[idx]);
        }
    });
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int pad_id,
                     float smoothing) {
  check(logits.rank() == 2, "cross_entropy expects [L,V] logits");
  const int l = logits.dim(0), v = logits.dim(1);
  check(static_cast<int>(targets.size()) == l, "cross_entropy target count ",
        targets.size(), " does not match ", l, " logit rows");
  check(smoothing >= 0.0f && smoothing < 1.0f, "smoothing must be in [0,1)");
  int live = 0;
  for (int id : targets) {
    if (id == pad_id) continue;
    check(id >= 0 && id < v, "target id ", id, " out of range [0,", v, ")");
    ++live;
  }
  check(live > 0, "cross_entropy target is entirely padding");
  auto ld = logits.data();
  std::vector<double> lse(l);
  double total = 0.0;
  for (int i = 0; i < l; ++i) {
    if (targets[i] == pad_id) continue;
    const float* row = ld.data() + static_cast<std::size_t>(i) * v;
    float mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    lse[i] = mx + std::log(denom);
    double row_sum = 0.0;
    if (smoothing > 0.0f)
      for (int j = 0; j < v; ++j) row_sum += row[j];
    total += lse[i] - (1.0 - smoothing) * row[targets[i]] -
             (static_cast<double>(smoothing) / v) * row_sum;
  }
  const double loss = total / live;
  Tensor result = Tensor::scalar(static_cast<float>(loss), logits.requires_grad());
  if (should_record(logits)) {
    Tensor lc = logits, r = result;
    record_tape(logits)->record([lc, r, targets, pad_id, smoothing, v, l, live,
                            lse = std::move(lse)]() mutable {
      const float gout = r.grad()[0];
      auto gl = lc.grad();
      auto ld2 = lc.data();
      const float inv = gout / static_cast<float>(live);
      for (int i = 0; i < l; ++i) {
        if (targets[i] == pad_id) continue;
        const float* row = ld2.data() + static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) {
          const double p = std::exp(static_cast<double>(row[j]) - lse[i]);
          double q = static_cast<double>(smoothing) / v;
          if (j == targets[i]) q += 1.0 - smoothing;
          gl[static_cast<std::size_t>(i) * v + j] += inv * static_cast<float>(p - q);
        }
      }
    });
  }
  return result;
}

Tensor batch_norm_time(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       Tensor& running_mean, Tensor& running_var, bool training,
                       float momentum, float eps) {
  check(x.rank() == 2, "batch_norm_time expects [T,C]");
  const int t = x.dim(0), c = x.dim(1);
  check(gain.dim(0) == c && bias.dim(0) == c, "batch_norm_time affine shape mismatch");
  check(running_mean.dim(0) == c && running_var.dim(0) == c,
        "batch_norm_time running stats shape mismatch");
  auto xd = x.data();
  std::vector<float> mean(c), inv_sigma(c);
  if (training) {
    auto rm = running_mean.data_mut();
    auto rv = running_var.data_mut();
    for (int ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (int i = 0; i < t; ++i) m += xd[static_cast<std::size_t>(i) * c + ch];
      m /= t;
      double var = 0.0;
      for (int i = 0; i < t; ++i) {
        double d = xd[static_cast<std::size_t>(i) * c + ch] - m;
        var += d * d;
      }
      var /= t;
      mean[ch] = static_cast<float>(m);
      inv_sigma[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
      rm[ch] = (1.0f - momentum) * rm[ch] + momentum * mean[ch];
      rv[ch] = (1.0f - momentum) * rv[ch] + momentum * static_cast<float>(var);
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_sigma[ch] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + eps));
    }
  }
  std::vector<float> out(x.size());
  std::vector<float> xhat(x.size());
  auto gd = gain.data();
  auto bd = bias.data();
  for (int i = 0; i < t; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t idx = static_cast<std::size_t>(i) * c + ch;
      xhat[idx] = (xd[idx] - mean[ch]) * inv_sigma[ch];
      out[idx] = gd[ch] * xhat[idx] + bd[ch];
    }
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor result = Tensor::from_data(x.shape(), std::move(out), rg);
  if (Tape::active() && rg) {
    Tensor xc = x, gc = gain, bc = bias, r = result;
    record_tape(x, gain, bias)->record([xc, gc, bc, r, t, c, training, xhat = std::move(xhat),
                            inv_sigma = std::move(inv_sigma)]() mutable {
      auto g = r.grad();
      auto gd2 = gc.data();
      for (int ch = 0; ch < c; ++ch) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int i = 0; i < t; ++i) {
          const std::size_t idx = static_cast<std::size_t>(i) * c + ch;
          sum_g += g[idx];
          sum_gx += static_cast<double>(g[idx]) * xhat[idx];
        }
        if (gc.requires_grad()) gc.grad()[ch] += static_cast<float>(sum_gx);
        if (bc.requires_grad()) bc.grad()[ch] += static_cast<float>(sum_g);
        if (xc.requires_grad()) {
          auto gx = xc.grad();
          for (int i = 0; i < t; ++i) {
            const std::size_t idx = static_cast<std::size_t>(i) * c + ch;
            double dh = static_cast<double>(g[idx]) * gd2[ch];
            if (training) {
              dh -= (sum_g * gd2[ch]) / t;
              dh -= xhat[idx] * (sum_gx * gd2[ch]) / t;
            }
            gx[idx] += static_cast<float>(dh * inv_sigma[ch]);
          }
        }
      }
    });
  }
  return result;
}

}  // namespace signformer
