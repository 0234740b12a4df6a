#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sobelkey {

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorNode;

// Value-semantic handle onto a tape node. Data is 32-bit float, row-major,
// images in N,C,H,W order. Nodes are immutable once produced by an op;
// building an op whose inputs require grad records the backward closure.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const;
  std::size_t numel() const;
  bool requires_grad() const;

  const std::vector<float>& data() const;
  std::vector<float>& mutable_data();  // leaves only (in-place init / optimizer)
  float item() const;                  // scalar tensors

  const std::vector<float>& grad() const;
  std::vector<float>& mutable_grad();  // leaves only (external accumulation)
  void zero_grad();

  std::shared_ptr<TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

// Disables tape recording for the current thread while alive.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// --- ops ---------------------------------------------------------------

// Cross-correlation (deep-learning convention), zero padding. weight is
// [Cout,Cin,k,k] with k odd; bias may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

// max(x, slope*x), slope in [0,1). Subgradient at 0 takes the slope branch.
Tensor leaky_activation(const Tensor& x, float slope);

// align_corners=false bilinear resampling of [N,C,H,W]; same-size is identity.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

// Replicate-pad the two spatial dims of [N,C,H,W] by pad on each side.
Tensor replicate_pad(const Tensor& x, int pad);

// Correlation of [1,1,H,W] with a fixed (2r+1)^2 kernel, replicate borders,
// 64-bit accumulation. The window-sum primitive behind the Gaussian score.
Tensor kernel_window_sum(const Tensor& x, const std::vector<float>& kernel, int radius);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// elementwise a/b; b may be a scalar tensor (broadcast)
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, float c);
Tensor mul_scalar(const Tensor& x, float c);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// full reductions to a scalar tensor, 64-bit accumulation
Tensor sum(const Tensor& x);
// max over all elements; gradient routes to the first (lowest index) argmax
Tensor max_reduce(const Tensor& x);

// out[i] = x at pixel (x_i, y_i) of a [1,1,H,W] tensor
Tensor gather_pixels(const Tensor& x, const std::vector<std::pair<int, int>>& xy);
// out[i,c] = bilinear sample of channel c of [1,C,H,W] at float (x_i, y_i)
Tensor gather_rows_bilinear(const Tensor& x, const std::vector<std::pair<float, float>>& xy);
// pick arbitrary flat elements: out[i] = x.data[idx[i]]
Tensor gather_flat(const Tensor& x, const std::vector<int>& idx);

// row-wise L2 normalization of [N,C]; rows with norm < 1e-12 become e1
Tensor l2_normalize_rows(const Tensor& x);
// per-pixel L2 normalization over channels of [N,C,H,W]; zero pixels become e1
Tensor l2_normalize_channels(const Tensor& x);

// a[P,C] * b[Q,C]^T -> [P,Q]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Accumulates dloss/dleaf into every requires_grad leaf reachable from loss.
// Repeated calls without zero_grad() accumulate.
void backward(const Tensor& loss);

// --- optimizer ----------------------------------------------------------

struct OptimizerConfig {
  enum Type { kSgd, kAdam };
  Type type = kAdam;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// SGD: p -= lr*g.
// Adam: m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2;
//       p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(std::vector<Tensor>& params);
  const OptimizerConfig& config() const { return cfg_; }

  // state round-trip for checkpoint resume
  std::uint64_t step_count() const { return t_; }
  const std::vector<std::vector<float>>& state_m() const { return m_; }
  const std::vector<std::vector<float>>& state_v() const { return v_; }
  void restore(std::uint64_t t, std::vector<std::vector<float>> m, std::vector<std::vector<float>> v);

 private:
  OptimizerConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace sobelkey
