#include "sobelkey/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace sobelkey {

namespace {

thread_local bool g_grad_enabled = true;

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw TensorError("tensor: all extents must be > 0");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace

struct TensorNode {
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward_fn;
};

namespace {

std::vector<float>& ensure_grad(TensorNode& n) {
  if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0f);
  return n.grad;
}

void check_finite(const char* op, const std::vector<float>& v) {
  for (float x : v) {
    if (!std::isfinite(x)) throw TensorError(std::string(op) + ": non-finite output");
  }
}

Tensor make_node(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  const std::size_t numel = shape_numel(n->shape);
  if (data.size() != numel) throw TensorError("tensor: data length does not match shape");
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

// Records the op on the tape when grad mode is on and any input needs it.
Tensor make_op(const char* op, std::vector<int> shape, std::vector<float> data,
               std::vector<Tensor> ins, std::function<void(TensorNode&)> bw) {
  bool req = false;
  if (g_grad_enabled) {
    for (const Tensor& t : ins) req = req || t.requires_grad();
  }
  Tensor out = make_node(std::move(shape), std::move(data), req);
  TensorNode& n = *out.node();
  n.op = op;
  n.leaf = false;
  if (req) {
    n.inputs.reserve(ins.size());
    for (Tensor& t : ins) n.inputs.push_back(t.node());
    n.backward_fn = std::move(bw);
  }
  return out;
}

}  // namespace

// --- Tensor handle -------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return make_node(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return make_node(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
  return make_node(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return make_node({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const {
  if (!node_) throw TensorError("tensor: undefined");
  return node_->shape;
}

int Tensor::dim(int i) const { return shape()[static_cast<std::size_t>(i)]; }

std::size_t Tensor::numel() const {
  if (!node_) throw TensorError("tensor: undefined");
  return node_->data.size();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<float>& Tensor::data() const {
  if (!node_) throw TensorError("tensor: undefined");
  return node_->data;
}

std::vector<float>& Tensor::mutable_data() {
  if (!node_) throw TensorError("tensor: undefined");
  if (!node_->leaf) throw TensorError("tensor: only leaf data may be mutated");
  return node_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw TensorError("tensor: item() requires a scalar");
  return node_->data[0];
}

const std::vector<float>& Tensor::grad() const {
  if (!node_) throw TensorError("tensor: undefined");
  ensure_grad(*node_);
  return node_->grad;
}

std::vector<float>& Tensor::mutable_grad() {
  if (!node_) throw TensorError("tensor: undefined");
  if (!node_->leaf) throw TensorError("tensor: only leaf grads may be mutated");
  ensure_grad(*node_);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->data.size(), 0.0f);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// --- conv2d ---------------------------------------------------------------

namespace {

struct ConvDims {
  int n, cin, h, w, cout, k, stride, pad, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (input.shape().size() != 4 || weight.shape().size() != 4) {
    throw TensorError("conv2d: input and weight must be 4-D, got " + shape_str(input.shape()) + " and " +
                      shape_str(weight.shape()));
  }
  ConvDims d{};
  d.n = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = weight.dim(0);
  d.k = weight.dim(2);
  d.stride = stride;
  d.pad = padding;
  if (weight.dim(1) != d.cin) {
    throw TensorError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
                      std::to_string(d.cin));
  }
  if (weight.dim(3) != d.k || d.k % 2 == 0) throw TensorError("conv2d: kernel must be square with odd size");
  if (stride < 1 || padding < 0) throw TensorError("conv2d: bad stride/padding");
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != d.cout)) {
    throw TensorError("conv2d: bias shape mismatch");
  }
  d.oh = (d.h + 2 * padding - d.k) / stride + 1;
  d.ow = (d.w + 2 * padding - d.k) / stride + 1;
  if (d.h + 2 * padding < d.k || d.w + 2 * padding < d.k) throw TensorError("conv2d: kernel larger than padded input");
  return d;
}

// col is [cin*k*k, oh*ow]
void im2col(const float* in, const ConvDims& d, float* col) {
  const int k2 = d.k * d.k;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        float* dst = col + (static_cast<std::size_t>(ci) * k2 + ky * d.k + kx) * (static_cast<std::size_t>(d.oh) * d.ow);
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.ow, 0.0f);
            dst += d.ow;
            continue;
          }
          const float* src = in + (static_cast<std::size_t>(ci) * d.h + iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride + kx - d.pad;
            *dst++ = (ix >= 0 && ix < d.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvDims& d, float* din) {
  const int k2 = d.k * d.k;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const float* src = col + (static_cast<std::size_t>(ci) * k2 + ky * d.k + kx) * (static_cast<std::size_t>(d.oh) * d.ow);
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) {
            src += d.ow;
            continue;
          }
          float* dst = din + (static_cast<std::size_t>(ci) * d.h + iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride + kx - d.pad;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
          src += d.ow;
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const ConvDims d = conv_dims(input, weight, bias, stride, padding);
  const std::size_t plane = static_cast<std::size_t>(d.oh) * d.ow;
  const int ck2 = d.cin * d.k * d.k;
  std::vector<float> out(static_cast<std::size_t>(d.n) * d.cout * plane);
  std::vector<float> col(static_cast<std::size_t>(ck2) * plane);

  Eigen::Map<const MatRM> wmat(weight.data().data(), d.cout, ck2);
  for (int n = 0; n < d.n; ++n) {
    im2col(input.data().data() + static_cast<std::size_t>(n) * d.cin * d.h * d.w, d, col.data());
    Eigen::Map<const MatRM> cmat(col.data(), ck2, static_cast<Eigen::Index>(plane));
    Eigen::Map<MatRM> omat(out.data() + static_cast<std::size_t>(n) * d.cout * plane, d.cout,
                           static_cast<Eigen::Index>(plane));
    omat.noalias() = wmat * cmat;
    if (bias.defined()) {
      for (int co = 0; co < d.cout; ++co) omat.row(co).array() += bias.data()[static_cast<std::size_t>(co)];
    }
  }
  check_finite("conv2d", out);

  std::vector<Tensor> ins{input, weight};
  if (bias.defined()) ins.push_back(bias);
  const bool has_bias = bias.defined();
  Tensor in_t = input, w_t = weight, b_t = bias;
  return make_op("conv2d", {d.n, d.cout, d.oh, d.ow}, std::move(out), std::move(ins),
                 [d, plane, ck2, in_t, w_t, b_t, has_bias](TensorNode& node) {
                   const bool need_din = in_t.requires_grad();
                   const bool need_dw = w_t.requires_grad();
                   const bool need_db = has_bias && b_t.requires_grad();
                   std::vector<float> col(static_cast<std::size_t>(ck2) * plane);
                   std::vector<float> dcol(need_din ? col.size() : 0);
                   Eigen::Map<const MatRM> wmat(w_t.data().data(), d.cout, ck2);
                   for (int n = 0; n < d.n; ++n) {
                     Eigen::Map<const MatRM> gmat(node.grad.data() + static_cast<std::size_t>(n) * d.cout * plane,
                                                  d.cout, static_cast<Eigen::Index>(plane));
                     if (need_dw || need_din) {
                       im2col(in_t.data().data() + static_cast<std::size_t>(n) * d.cin * d.h * d.w, d, col.data());
                     }
                     if (need_dw) {
                       Eigen::Map<const MatRM> cmat(col.data(), ck2, static_cast<Eigen::Index>(plane));
                       Eigen::Map<MatRM> dw(ensure_grad(*w_t.node()).data(), d.cout, ck2);
                       dw.noalias() += gmat * cmat.transpose();
                     }
                     if (need_din) {
                       Eigen::Map<MatRM> dc(dcol.data(), ck2, static_cast<Eigen::Index>(plane));
                       dc.noalias() = wmat.transpose() * gmat;
                       col2im_add(dcol.data(),
                                  d, ensure_grad(*in_t.node()).data() + static_cast<std::size_t>(n) * d.cin * d.h * d.w);
                     }
                     if (need_db) {
                       auto& db = ensure_grad(*b_t.node());
                       for (int co = 0; co < d.cout; ++co) {
                         double acc = 0.0;
                         const float* row = node.grad.data() + (static_cast<std::size_t>(n) * d.cout + co) * plane;
                         for (std::size_t i = 0; i < plane; ++i) acc += row[i];
                         db[static_cast<std::size_t>(co)] += static_cast<float>(acc);
                       }
                     }
                   }
                 });
}

// --- pointwise ops ---------------------------------------------------------

Tensor leaky_activation(const Tensor& x, float slope) {
  if (!(slope >= 0.0f && slope < 1.0f)) throw TensorError("leaky_activation: slope must be in [0,1)");
  std::vector<float> out(x.data());
  for (float& v : out) v = v > 0.0f ? v : slope * v;
  Tensor xin = x;
  return make_op("leaky_activation", x.shape(), std::move(out), {x}, [xin, slope](TensorNode& node) {
    auto& din = ensure_grad(*xin.node());
    const auto& xd = xin.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
      din[i] += node.grad[i] * (xd[i] > 0.0f ? 1.0f : slope);
    }
  });
}

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<float> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  Tensor at = a, bt = b;
  return make_op("add", a.shape(), std::move(out), {a, b}, [at, bt](TensorNode& node) {
    if (at.requires_grad()) {
      auto& g = ensure_grad(*at.node());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    }
    if (bt.requires_grad()) {
      auto& g = ensure_grad(*bt.node());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<float> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  Tensor at = a, bt = b;
  return make_op("sub", a.shape(), std::move(out), {a, b}, [at, bt](TensorNode& node) {
    if (at.requires_grad()) {
      auto& g = ensure_grad(*at.node());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    }
    if (bt.requires_grad()) {
      auto& g = ensure_grad(*bt.node());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= node.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<float> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  Tensor at = a, bt = b;
  return make_op("mul", a.shape(), std::move(out), {a, b}, [at, bt](TensorNode& node) {
    if (at.requires_grad()) {
      auto& g = ensure_grad(*at.node());
      const auto& bd = bt.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * bd[i];
    }
    if (bt.requires_grad()) {
      auto& g = ensure_grad(*bt.node());
      const auto& ad = at.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * ad[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  const bool scalar_b = b.numel() == 1;
  if (!scalar_b) check_same_shape("div", a, b);
  std::vector<float> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] / bd[scalar_b ? 0 : i];
  check_finite("div", out);
  Tensor at = a, bt = b;
  return make_op("div", a.shape(), std::move(out), {a, b}, [at, bt, scalar_b](TensorNode& node) {
    const auto& ad = at.data();
    const auto& bd = bt.data();
    if (at.requires_grad()) {
      auto& g = ensure_grad(*at.node());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] / bd[scalar_b ? 0 : i];
    }
    if (bt.requires_grad()) {
      auto& g = ensure_grad(*bt.node());
      if (scalar_b) {
        double acc = 0.0;
        const double bv = bd[0];
        for (std::size_t i = 0; i < ad.size(); ++i) {
          acc += static_cast<double>(node.grad[i]) * (-static_cast<double>(ad[i]) / (bv * bv));
        }
        g[0] += static_cast<float>(acc);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double bv = bd[i];
          g[i] += static_cast<float>(node.grad[i] * (-static_cast<double>(ad[i]) / (bv * bv)));
        }
      }
    }
  });
}

Tensor add_scalar(const Tensor& x, float c) {
  std::vector<float> out(x.data());
  for (float& v : out) v += c;
  Tensor xt = x;
  return make_op("add_scalar", x.shape(), std::move(out), {x}, [xt](TensorNode& node) {
    auto& g = ensure_grad(*xt.node());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
  });
}

Tensor mul_scalar(const Tensor& x, float c) {
  std::vector<float> out(x.data());
  for (float& v : out) v *= c;
  Tensor xt = x;
  return make_op("mul_scalar", x.shape(), std::move(out), {x}, [xt, c](TensorNode& node) {
    auto& g = ensure_grad(*xt.node());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * c;
  });
}

Tensor exp(const Tensor& x) {
  std::vector<float> out(x.data());
  for (float& v : out) v = std::exp(v);
  check_finite("exp", out);
  Tensor xt = x;
  return make_op("exp", x.shape(), std::move(out), {x}, [xt](TensorNode& node) {
    auto& g = ensure_grad(*xt.node());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * node.data[i];
  });
}

Tensor log(const Tensor& x) {
  std::vector<float> out(x.data());
  for (float& v : out) v = std::log(v);
  check_finite("log", out);
  Tensor xt = x;
  return make_op("log", x.shape(), std::move(out), {x}, [xt](TensorNode& node) {
    auto& g = ensure_grad(*xt.node());
    const auto& xd = xt.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] / xd[i];
  });
}

// --- resize / pad / window sums ---------------------------------------------

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.shape().size() != 4) throw TensorError("bilinear_resize: expects [N,C,H,W]");
  if (out_h < 1 || out_w < 1) throw TensorError("bilinear_resize: target extent must be >= 1");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == h && out_w == w) {
    Tensor xt = x;
    return make_op("bilinear_resize", x.shape(), std::vector<float>(x.data()), {x}, [xt](TensorNode& node) {
      auto& g = ensure_grad(*xt.node());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    });
  }
  struct Tap {
    int i0, i1;
    float t;
  };
  std::vector<Tap> xs(static_cast<std::size_t>(out_w)), ys(static_cast<std::size_t>(out_h));
  const double sx = static_cast<double>(w) / out_w, sy = static_cast<double>(h) / out_h;
  for (int i = 0; i < out_w; ++i) {
    double f = (i + 0.5) * sx - 0.5;
    f = f < 0 ? 0 : (f > w - 1 ? w - 1 : f);
    const int i0 = static_cast<int>(f);
    xs[static_cast<std::size_t>(i)] = {i0, i0 + 1 < w ? i0 + 1 : w - 1, static_cast<float>(f - i0)};
  }
  for (int i = 0; i < out_h; ++i) {
    double f = (i + 0.5) * sy - 0.5;
    f = f < 0 ? 0 : (f > h - 1 ? h - 1 : f);
    const int i0 = static_cast<int>(f);
    ys[static_cast<std::size_t>(i)] = {i0, i0 + 1 < h ? i0 + 1 : h - 1, static_cast<float>(f - i0)};
  }
  std::vector<float> out(static_cast<std::size_t>(n) * c * out_h * out_w);
  const auto& xd = x.data();
  for (int b = 0; b < n * c; ++b) {
    const float* src = xd.data() + static_cast<std::size_t>(b) * h * w;
    float* dst = out.data() + static_cast<std::size_t>(b) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& ty = ys[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& tx = xs[static_cast<std::size_t>(ox)];
        const float top = src[ty.i0 * w + tx.i0] * (1.0f - tx.t) + src[ty.i0 * w + tx.i1] * tx.t;
        const float bot = src[ty.i1 * w + tx.i0] * (1.0f - tx.t) + src[ty.i1 * w + tx.i1] * tx.t;
        dst[oy * out_w + ox] = top * (1.0f - ty.t) + bot * ty.t;
      }
    }
  }
  Tensor xt = x;
  return make_op("bilinear_resize", {n, c, out_h, out_w}, std::move(out), {x},
                 [xt, xs, ys, n, c, h, w, out_h, out_w](TensorNode& node) {
                   auto& g = ensure_grad(*xt.node());
                   for (int b = 0; b < n * c; ++b) {
                     float* dst = g.data() + static_cast<std::size_t>(b) * h * w;
                     const float* go = node.grad.data() + static_cast<std::size_t>(b) * out_h * out_w;
                     for (int oy = 0; oy < out_h; ++oy) {
                       const auto& ty = ys[static_cast<std::size_t>(oy)];
                       for (int ox = 0; ox < out_w; ++ox) {
                         const auto& tx = xs[static_cast<std::size_t>(ox)];
                         const float gv = go[oy * out_w + ox];
                         dst[ty.i0 * w + tx.i0] += gv * (1.0f - tx.t) * (1.0f - ty.t);
                         dst[ty.i0 * w + tx.i1] += gv * tx.t * (1.0f - ty.t);
                         dst[ty.i1 * w + tx.i0] += gv * (1.0f - tx.t) * ty.t;
                         dst[ty.i1 * w + tx.i1] += gv * tx.t * ty.t;
                       }
                     }
                   }
                 });
}

Tensor replicate_pad(const Tensor& x, int pad) {
  if (x.shape().size() != 4) throw TensorError("replicate_pad: expects [N,C,H,W]");
  if (pad < 0) throw TensorError("replicate_pad: pad must be >= 0");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h + 2 * pad, ow = w + 2 * pad;
  std::vector<float> out(static_cast<std::size_t>(n) * c * oh * ow);
  const auto& xd = x.data();
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int b = 0; b < n * c; ++b) {
    const float* src = xd.data() + static_cast<std::size_t>(b) * h * w;
    float* dst = out.data() + static_cast<std::size_t>(b) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const int iy = clampi(oy - pad, h - 1);
      for (int ox = 0; ox < ow; ++ox) {
        dst[oy * ow + ox] = src[iy * w + clampi(ox - pad, w - 1)];
      }
    }
  }
  Tensor xt = x;
  return make_op("replicate_pad", {n, c, oh, ow}, std::move(out), {x},
                 [xt, n, c, h, w, oh, ow, pad, clampi](TensorNode& node) {
                   auto& g = ensure_grad(*xt.node());
                   for (int b = 0; b < n * c; ++b) {
                     float* dst = g.data() + static_cast<std::size_t>(b) * h * w;
                     const float* go = node.grad.data() + static_cast<std::size_t>(b) * oh * ow;
                     for (int oy = 0; oy < oh; ++oy) {
                       const int iy = clampi(oy - pad, h - 1);
                       for (int ox = 0; ox < ow; ++ox) {
                         dst[iy * w + clampi(ox - pad, w - 1)] += go[oy * ow + ox];
                       }
                     }
                   }
                 });
}

Tensor kernel_window_sum(const Tensor& x, const std::vector<float>& kernel, int radius) {
  if (x.shape().size() != 4 || x.dim(0) != 1 || x.dim(1) != 1) {
    throw TensorError("kernel_window_sum: expects [1,1,H,W]");
  }
  const int side = 2 * radius + 1;
  if (static_cast<int>(kernel.size()) != side * side) throw TensorError("kernel_window_sum: kernel size mismatch");
  const int h = x.dim(2), w = x.dim(3);
  std::vector<float> out(x.numel());
  const auto& xd = x.data();
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      double acc = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int sy = clampi(y + dy, h - 1);
        const float* row = xd.data() + static_cast<std::size_t>(sy) * w;
        const float* krow = kernel.data() + static_cast<std::size_t>(dy + radius) * side;
        for (int dx = -radius; dx <= radius; ++dx) {
          acc += static_cast<double>(krow[dx + radius]) * row[clampi(xx + dx, w - 1)];
        }
      }
      out[static_cast<std::size_t>(y) * w + xx] = static_cast<float>(acc);
    }
  }
  Tensor xt = x;
  std::vector<float> kcopy = kernel;
  return make_op("kernel_window_sum", x.shape(), std::move(out), {x},
                 [xt, kcopy, radius, h, w, side, clampi](TensorNode& node) {
                   auto& g = ensure_grad(*xt.node());
                   std::vector<double> acc(g.size(), 0.0);
                   for (int y = 0; y < h; ++y) {
                     for (int xx = 0; xx < w; ++xx) {
                       const double gv = node.grad[static_cast<std::size_t>(y) * w + xx];
                       if (gv == 0.0) continue;
                       for (int dy = -radius; dy <= radius; ++dy) {
                         const int sy = clampi(y + dy, h - 1);
                         const float* krow = kcopy.data() + static_cast<std::size_t>(dy + radius) * side;
                         for (int dx = -radius; dx <= radius; ++dx) {
                           acc[static_cast<std::size_t>(sy) * w + clampi(xx + dx, w - 1)] +=
                               gv * krow[dx + radius];
                         }
                       }
                     }
                   }
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<float>(acc[i]);
                 });
}

// --- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor xt = x;
  return make_op("sum", {1}, {static_cast<float>(acc)}, {x}, [xt](TensorNode& node) {
    auto& g = ensure_grad(*xt.node());
    const float gv = node.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
  });
}

Tensor max_reduce(const Tensor& x) {
  const auto& xd = x.data();
  std::size_t arg = 0;
  float best = xd[0];
  for (std::size_t i = 1; i < xd.size(); ++i) {
    if (xd[i] > best) {
      best = xd[i];
      arg = i;
    }
  }
  Tensor xt = x;
  return make_op("max_reduce", {1}, {best}, {x}, [xt, arg](TensorNode& node) {
    auto& g = ensure_grad(*xt.node());
    g[arg] += node.grad[0];
  });
}

// --- gathers ----------------------------------------------------------------

Tensor gather_pixels(const Tensor& x, const std::vector<std::pair<int, int>>& xy) {
  if (x.shape().size() != 4 || x.dim(0) != 1 || x.dim(1) != 1) throw TensorError("gather_pixels: expects [1,1,H,W]");
  if (xy.empty()) throw TensorError("gather_pixels: empty position list");
  const int h = x.dim(2), w = x.dim(3);
  std::vector<float> out(xy.size());
  std::vector<std::size_t> idx(xy.size());
  for (std::size_t i = 0; i < xy.size(); ++i) {
    const auto [px, py] = xy[i];
    if (px < 0 || py < 0 || px >= w || py >= h) {
      throw TensorError("gather_pixels: point (" + std::to_string(px) + "," + std::to_string(py) + ") out of bounds");
    }
    idx[i] = static_cast<std::size_t>(py) * w + px;
    out[i] = x.data()[idx[i]];
  }
  Tensor xt = x;
  return make_op("gather_pixels", {static_cast<int>(xy.size())}, std::move(out), {x}, [xt, idx](TensorNode& node) {
    auto& g = ensure_grad(*xt.node());
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += node.grad[i];
  });
}

Tensor gather_flat(const Tensor& x, const std::vector<int>& idx) {
  if (idx.empty()) throw TensorError("gather_flat: empty index list");
  std::vector<float> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= x.numel()) throw TensorError("gather_flat: index out of range");
    out[i] = x.data()[static_cast<std::size_t>(idx[i])];
  }
  Tensor xt = x;
  std::vector<int> ic = idx;
  return make_op("gather_flat", {static_cast<int>(idx.size())}, std::move(out), {x}, [xt, ic](TensorNode& node) {
    auto& g = ensure_grad(*xt.node());
    for (std::size_t i = 0; i < ic.size(); ++i) g[static_cast<std::size_t>(ic[i])] += node.grad[i];
  });
}

Tensor gather_rows_bilinear(const Tensor& x, const std::vector<std::pair<float, float>>& xy) {
  if (x.shape().size() != 4 || x.dim(0) != 1) throw TensorError("gather_rows_bilinear: expects [1,C,H,W]");
  if (xy.empty()) throw TensorError("gather_rows_bilinear: empty point list");
  const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
  struct Tap {
    int x0, y0, x1, y1;
    float tx, ty;
  };
  std::vector<Tap> taps(xy.size());
  for (std::size_t i = 0; i < xy.size(); ++i) {
    const auto [px, py] = xy[i];
    if (!(px >= 0.0f && py >= 0.0f && px <= w - 1.0f && py <= h - 1.0f)) {
      throw TensorError("gather_rows_bilinear: point (" + std::to_string(px) + "," + std::to_string(py) +
                        ") out of bounds");
    }
    const int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
    taps[i] = {x0, y0, x0 + 1 < w ? x0 + 1 : w - 1, y0 + 1 < h ? y0 + 1 : h - 1, px - x0, py - y0};
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> out(xy.size() * static_cast<std::size_t>(c));
  const auto& xd = x.data();
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const Tap& t = taps[i];
    for (int ch = 0; ch < c; ++ch) {
      const float* p = xd.data() + static_cast<std::size_t>(ch) * plane;
      const float top = p[t.y0 * w + t.x0] * (1.0f - t.tx) + p[t.y0 * w + t.x1] * t.tx;
      const float bot = p[t.y1 * w + t.x0] * (1.0f - t.tx) + p[t.y1 * w + t.x1] * t.tx;
      out[i * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch)] = top * (1.0f - t.ty) + bot * t.ty;
    }
  }
  Tensor xt = x;
  return make_op("gather_rows_bilinear", {static_cast<int>(xy.size()), c}, std::move(out), {x},
                 [xt, taps, c, w, plane](TensorNode& node) {
                   auto& g = ensure_grad(*xt.node());
                   for (std::size_t i = 0; i < taps.size(); ++i) {
                     const Tap& t = taps[i];
                     for (int ch = 0; ch < c; ++ch) {
                       float* p = g.data() + static_cast<std::size_t>(ch) * plane;
                       const float gv = node.grad[i * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch)];
                       p[t.y0 * w + t.x0] += gv * (1.0f - t.tx) * (1.0f - t.ty);
                       p[t.y0 * w + t.x1] += gv * t.tx * (1.0f - t.ty);
                       p[t.y1 * w + t.x0] += gv * (1.0f - t.tx) * t.ty;
                       p[t.y1 * w + t.x1] += gv * t.tx * t.ty;
                     }
                   }
                 });
}

// --- normalization -----------------------------------------------------------

namespace {

// Shared by the row and channel variants: normalizes `count` vectors whose
// elements sit at `stride` apart starting from base offsets.
Tensor l2_normalize_strided(const char* opname, const Tensor& x, std::vector<std::size_t> bases, std::size_t stride,
                            int veclen) {
  constexpr double kZeroGuard = 1e-12;
  std::vector<float> out(x.data());
  std::vector<double> norms(bases.size());
  const auto& xd = x.data();
  for (std::size_t r = 0; r < bases.size(); ++r) {
    double acc = 0.0;
    for (int i = 0; i < veclen; ++i) {
      const double v = xd[bases[r] + static_cast<std::size_t>(i) * stride];
      acc += v * v;
    }
    const double n = std::sqrt(acc);
    norms[r] = n;
    if (n < kZeroGuard) {
      for (int i = 0; i < veclen; ++i) out[bases[r] + static_cast<std::size_t>(i) * stride] = i == 0 ? 1.0f : 0.0f;
    } else {
      for (int i = 0; i < veclen; ++i) {
        out[bases[r] + static_cast<std::size_t>(i) * stride] =
            static_cast<float>(xd[bases[r] + static_cast<std::size_t>(i) * stride] / n);
      }
    }
  }
  check_finite(opname, out);
  Tensor xt = x;
  return make_op(opname, x.shape(), std::move(out), {x},
                 [xt, bases, stride, veclen, norms](TensorNode& node) {
                   auto& g = ensure_grad(*xt.node());
                   for (std::size_t r = 0; r < bases.size(); ++r) {
                     const double n = norms[r];
                     if (n < kZeroGuard) continue;  // guard output is constant
                     double dot = 0.0;
                     for (int i = 0; i < veclen; ++i) {
                       const std::size_t k = bases[r] + static_cast<std::size_t>(i) * stride;
                       dot += static_cast<double>(node.grad[k]) * node.data[k];
                     }
                     for (int i = 0; i < veclen; ++i) {
                       const std::size_t k = bases[r] + static_cast<std::size_t>(i) * stride;
                       g[k] += static_cast<float>((node.grad[k] - node.data[k] * dot) / n);
                     }
                   }
                 });
}

}  // namespace

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.shape().size() != 2) throw TensorError("l2_normalize_rows: expects [N,C]");
  const int n = x.dim(0), c = x.dim(1);
  std::vector<std::size_t> bases(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) bases[static_cast<std::size_t>(r)] = static_cast<std::size_t>(r) * c;
  return l2_normalize_strided("l2_normalize_rows", x, std::move(bases), 1, c);
}

Tensor l2_normalize_channels(const Tensor& x) {
  if (x.shape().size() != 4) throw TensorError("l2_normalize_channels: expects [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<std::size_t> bases(static_cast<std::size_t>(n) * plane);
  std::size_t idx = 0;
  for (int b = 0; b < n; ++b) {
    const std::size_t batch_off = static_cast<std::size_t>(b) * c * plane;
    for (std::size_t p = 0; p < plane; ++p) bases[idx++] = batch_off + p;
  }
  return l2_normalize_strided("l2_normalize_channels", x, std::move(bases), plane, c);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1)) {
    throw TensorError("matmul_nt: expects [P,C] and [Q,C] with equal C");
  }
  const int p = a.dim(0), q = b.dim(0), c = a.dim(1);
  std::vector<float> out(static_cast<std::size_t>(p) * q);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < q; ++j) {
      double acc = 0.0;
      for (int k = 0; k < c; ++k) {
        acc += static_cast<double>(ad[static_cast<std::size_t>(i) * c + k]) * bd[static_cast<std::size_t>(j) * c + k];
      }
      out[static_cast<std::size_t>(i) * q + j] = static_cast<float>(acc);
    }
  }
  Tensor at = a, bt = b;
  return make_op("matmul_nt", {p, q}, std::move(out), {a, b}, [at, bt, p, q, c](TensorNode& node) {
    const auto& ad = at.data();
    const auto& bd = bt.data();
    if (at.requires_grad()) {
      auto& g = ensure_grad(*at.node());
      for (int i = 0; i < p; ++i) {
        for (int k = 0; k < c; ++k) {
          double acc = 0.0;
          for (int j = 0; j < q; ++j) {
            acc += static_cast<double>(node.grad[static_cast<std::size_t>(i) * q + j]) *
                   bd[static_cast<std::size_t>(j) * c + k];
          }
          g[static_cast<std::size_t>(i) * c + k] += static_cast<float>(acc);
        }
      }
    }
    if (bt.requires_grad()) {
      auto& g = ensure_grad(*bt.node());
      for (int j = 0; j < q; ++j) {
        for (int k = 0; k < c; ++k) {
          double acc = 0.0;
          for (int i = 0; i < p; ++i) {
            acc += static_cast<double>(node.grad[static_cast<std::size_t>(i) * q + j]) *
                   ad[static_cast<std::size_t>(i) * c + k];
          }
          g[static_cast<std::size_t>(j) * c + k] += static_cast<float>(acc);
        }
      }
    }
  });
}

// --- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw TensorError("backward: undefined loss");
  if (loss.numel() != 1) throw TensorError("backward: loss must be a scalar");
  TensorNode* root = loss.node().get();

  // iterative reverse topological order
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode* child = node->inputs[next].get();
      ++next;
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  ensure_grad(*root)[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && n->requires_grad) {
      ensure_grad(*n);
      n->backward_fn(*n);
    }
  }
}

// --- optimizer -----------------------------------------------------------------

void Optimizer::step(std::vector<Tensor>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
  }
  if (m_.size() != params.size()) throw TensorError("optimizer: parameter count changed between steps");
  ++t_;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    auto& data = p.mutable_data();
    const auto& g = p.grad();
    if (g.size() != data.size()) throw TensorError("optimizer: gradient/parameter shape mismatch");
    if (cfg_.type == OptimizerConfig::kSgd) {
      for (std::size_t i = 0; i < data.size(); ++i) data[i] -= cfg_.lr * g[i];
      continue;
    }
    auto& m = m_[pi];
    auto& v = v_[pi];
    if (m.size() != data.size()) m.assign(data.size(), 0.0f);
    if (v.size() != data.size()) v.assign(data.size(), 0.0f);
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      data[i] -= static_cast<float>(cfg_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps));
    }
  }
}

void Optimizer::restore(std::uint64_t t, std::vector<std::vector<float>> m, std::vector<std::vector<float>> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace sobelkey
