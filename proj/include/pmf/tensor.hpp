#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "pmf/common.hpp"

namespace pmf {

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;

  size_t numel() const { return data.size(); }
  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

// Dense row-major 64-bit tensor. Copies are shallow handles onto the same
// storage; ops never mutate existing storage, only optimizers do (between
// tape lifetimes).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  size_t numel() const { return impl_->data.size(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return impl_->has_grad(); }
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  // Scalar (numel == 1) convenience accessor.
  double value() const;

  // Row-major index helpers.
  size_t index(std::initializer_list<int> idx) const;
  double at(std::initializer_list<int> idx) const { return impl_->data[index(idx)]; }
  double& at(std::initializer_list<int> idx) { return impl_->data[index(idx)]; }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_tensor(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad);
};

// Wengert list of recorded operations. One tape per thread; ops append in
// execution order, backward replays in reverse exactly once.
class Tape {
 public:
  struct Node {
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };

  static Tape& current();

  void record(std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn);
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  bool recording() const { return enabled_; }
  void set_recording(bool v) { enabled_ = v; }

  // Seeds d(loss)/d(loss) = 1 and replays every node in reverse order,
  // accumulating into .grad of requires_grad tensors. Consumes the tape
  // unless retain is set (a second replay needs grads re-zeroed first).
  void backward_from(const Tensor& loss, bool retain = false);

  // Drops the grad buffers of every recorded output. Leaf tensors (network
  // parameters) are zeroed by their owners.
  void zero_recorded_grads();

 private:
  std::vector<Node> nodes_;
  bool enabled_ = true;
};

// Suspends tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

enum class PoolMode { kMaxPool2, kUpsampleNearest2 };

// --- Operation set -------------------------------------------------------
// Everything the network and loss stack needs, nothing more. All ops are
// pure: inputs are read-only, outputs are fresh tensors.

// Cross-correlation (no kernel flip). input [B,Cin,H,W], weight
// [Cout,Cin,kH,kW], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0, int dilation = 1);

// Per-pixel softmax over the channel axis of [B,S,H,W], stabilized by
// max-subtraction. Throws on non-finite logits.
Tensor softmax_channel(const Tensor& logits);

Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope = 0.1);

// Concatenates along the channel axis; a's channels precede b's.
Tensor concat_channel(const Tensor& a, const Tensor& b);
// Channels [begin, begin+count) of a [B,C,H,W] tensor.
Tensor slice_channel(const Tensor& x, int begin, int count);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift);

Tensor pool_resize(const Tensor& x, PoolMode mode);
Tensor maxpool2(const Tensor& x);
Tensor upsample_nearest2(const Tensor& x);

// Values clamped into [lo, hi]; gradient passes through inside the interval.
Tensor clamp(const Tensor& x, double lo, double hi);
// Natural log; inputs must be strictly positive (clamp first).
Tensor log(const Tensor& x);
// x^p for x >= 0 with constant exponent.
Tensor pow_const(const Tensor& x, double exponent);

// Sum of all elements, as a scalar tensor of shape {1}.
Tensor sum(const Tensor& x);
// Sum over the channel axis of [B,C,H,W] -> [B,1,H,W].
Tensor sum_channel(const Tensor& x);

Tensor reshape(const Tensor& x, std::vector<int> shape);

// Same values (bit-for-bit), excluded from gradient propagation.
Tensor detach(const Tensor& x);

// Reverse pass from a scalar loss recorded on the current thread's tape.
void backward(const Tensor& loss, bool retain_tape = false);

namespace testhook {
// Deliberately corrupts the sigmoid backward rule so gradient-check
// failure paths can be exercised end to end.
void set_corrupt_sigmoid_backward(bool enabled);
bool corrupt_sigmoid_backward();
}  // namespace testhook

}  // namespace pmf
