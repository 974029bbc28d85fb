#include "pmf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace pmf {

int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  int n = std::min(hw, 4);
  if (const char* env = std::getenv("PMF_NUM_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = static_cast<int>(std::min<long>(v, hw));
  }
  return n;
}

namespace {

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor extent must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 tensor, got " +
                     shape_str(x.shape()));
  }
}

std::atomic<bool> g_corrupt_sigmoid{false};

}  // namespace

namespace testhook {
void set_corrupt_sigmoid_backward(bool enabled) { g_corrupt_sigmoid = enabled; }
bool corrupt_sigmoid_backward() { return g_corrupt_sigmoid; }
}  // namespace testhook

Tensor make_tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  size_t n = shape_numel(shape);
  if (n != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), 0.0);
  return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), value);
  return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make_tensor({1}, {value}, requires_grad);
}

double Tensor::value() const {
  if (numel() != 1) {
    throw ShapeError("value() requires a scalar tensor, got " + shape_str(shape()));
  }
  return impl_->data[0];
}

size_t Tensor::index(std::initializer_list<int> idx) const {
  const auto& s = impl_->shape;
  if (idx.size() != s.size()) throw ShapeError("index rank mismatch");
  size_t flat = 0;
  size_t i = 0;
  for (int v : idx) {
    if (v < 0 || v >= s[i]) throw ShapeError("index out of range");
    flat = flat * static_cast<size_t>(s[i]) + static_cast<size_t>(v);
    ++i;
  }
  return flat;
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn) {
  if (enabled_) nodes_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::backward_from(const Tensor& loss, bool retain) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a defined scalar tensor");
  }
  if (!loss.requires_grad()) {
    throw Error("backward: loss is detached from the recorded graph");
  }
  auto impl = loss.impl();
  impl->ensure_grad();
  impl->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  if (!retain) clear();
}

void Tape::zero_recorded_grads() {
  for (Node& node : nodes_) node.output->grad.clear();
}

void backward(const Tensor& loss, bool retain_tape) {
  Tape::current().backward_from(loss, retain_tape);
}

NoGradGuard::NoGradGuard() : previous_(Tape::current().recording()) {
  Tape::current().set_recording(false);
}

NoGradGuard::~NoGradGuard() { Tape::current().set_recording(previous_); }

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current().recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Pointwise unary op helper: y = f(x), dx += df(x, y, dy).
template <typename Fwd, typename Bwd>
Tensor unary_pointwise(const Tensor& x, Fwd fwd, Bwd bwd) {
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  bool rec = should_record({&x});
  Tensor y = make_tensor(x.shape(), std::move(out), rec);
  if (rec) {
    auto xi = x.impl();
    auto yi = y.impl();
    Tape::current().record(yi, [xi, yi, bwd]() {
      if (!yi->has_grad()) return;
      xi->ensure_grad();
      for (size_t i = 0; i < xi->data.size(); ++i) {
        xi->grad[i] += bwd(xi->data[i], yi->data[i], yi->grad[i]);
      }
    });
  }
  return y;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int dilation) {
  require_rank4(input, "conv2d input");
  require_rank4(weight, "conv2d weight");
  if (bias.rank() != 1) throw ShapeError("conv2d: bias must be rank 1");
  if (stride < 1 || padding < 0 || dilation < 1) {
    throw ShapeError("conv2d: invalid stride/padding/dilation");
  }
  const int b = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(cin));
  }
  if (bias.dim(0) != cout) throw ShapeError("conv2d: bias length != output channels");
  const int ho = (h + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
  const int wo = (w + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: non-positive output extent");

  std::vector<double> out(static_cast<size_t>(b) * cout * ho * wo);
  const auto& in = input.data();
  const auto& wt = weight.data();
  const auto& bs = bias.data();
  auto in_at = [&](int bb, int c, int y, int x) {
    return in[((static_cast<size_t>(bb) * cin + c) * h + y) * w + x];
  };
  auto wt_at = [&](int co, int ci, int ky, int kx) {
    return wt[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx];
  };
  for (int bb = 0; bb < b; ++bb) {
    for (int co = 0; co < cout; ++co) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bs[co];
          for (int ci = 0; ci < cin; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride - padding + ky * dilation;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride - padding + kx * dilation;
                if (ix < 0 || ix >= w) continue;
                acc += in_at(bb, ci, iy, ix) * wt_at(co, ci, ky, kx);
              }
            }
          }
          out[((static_cast<size_t>(bb) * cout + co) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
  bool rec = should_record({&input, &weight, &bias});
  Tensor y = make_tensor({b, cout, ho, wo}, std::move(out), rec);
  if (rec) {
    auto ii = input.impl(), wi = weight.impl(), bi = bias.impl(), yi = y.impl();
    Tape::current().record(yi, [=]() {
      if (!yi->has_grad()) return;
      const auto& go = yi->grad;
      auto go_at = [&](int bb, int co, int oy, int ox) {
        return go[((static_cast<size_t>(bb) * cout + co) * ho + oy) * wo + ox];
      };
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int bb = 0; bb < b; ++bb)
          for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < ho; ++oy)
              for (int ox = 0; ox < wo; ++ox) bi->grad[co] += go_at(bb, co, oy, ox);
      }
      if (wi->requires_grad) {
        wi->ensure_grad();
        for (int bb = 0; bb < b; ++bb)
          for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < ho; ++oy)
              for (int ox = 0; ox < wo; ++ox) {
                const double g = go_at(bb, co, oy, ox);
                if (g == 0.0) continue;
                for (int ci = 0; ci < cin; ++ci)
                  for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride - padding + ky * dilation;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                      const int ix = ox * stride - padding + kx * dilation;
                      if (ix < 0 || ix >= w) continue;
                      wi->grad[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx] +=
                          g * ii->data[((static_cast<size_t>(bb) * cin + ci) * h + iy) * w + ix];
                    }
                  }
              }
      }
      if (ii->requires_grad) {
        ii->ensure_grad();
        for (int bb = 0; bb < b; ++bb)
          for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < ho; ++oy)
              for (int ox = 0; ox < wo; ++ox) {
                const double g = go_at(bb, co, oy, ox);
                if (g == 0.0) continue;
                for (int ci = 0; ci < cin; ++ci)
                  for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride - padding + ky * dilation;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                      const int ix = ox * stride - padding + kx * dilation;
                      if (ix < 0 || ix >= w) continue;
                      ii->grad[((static_cast<size_t>(bb) * cin + ci) * h + iy) * w + ix] +=
                          g * wi->data[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx];
                    }
                  }
              }
      }
    });
  }
  return y;
}

Tensor softmax_channel(const Tensor& logits) {
  require_rank4(logits, "softmax_channel");
  const int b = logits.dim(0), s = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (s < 2) throw ShapeError("softmax_channel: need at least 2 channels");
  const auto& in = logits.data();
  for (double v : in) {
    if (!std::isfinite(v)) throw Error("softmax_channel: non-finite logits");
  }
  std::vector<double> out(in.size());
  const size_t plane = static_cast<size_t>(h) * w;
  for (int bb = 0; bb < b; ++bb) {
    const size_t base = static_cast<size_t>(bb) * s * plane;
    for (size_t p = 0; p < plane; ++p) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < s; ++c) mx = std::max(mx, in[base + c * plane + p]);
      double denom = 0.0;
      for (int c = 0; c < s; ++c) {
        const double e = std::exp(in[base + c * plane + p] - mx);
        out[base + c * plane + p] = e;
        denom += e;
      }
      for (int c = 0; c < s; ++c) out[base + c * plane + p] /= denom;
    }
  }
  bool rec = should_record({&logits});
  Tensor y = make_tensor(logits.shape(), std::move(out), rec);
  if (rec) {
    auto xi = logits.impl(), yi = y.impl();
    Tape::current().record(yi, [xi, yi, b, s, plane]() {
      if (!yi->has_grad()) return;
      xi->ensure_grad();
      for (int bb = 0; bb < b; ++bb) {
        const size_t base = static_cast<size_t>(bb) * s * plane;
        for (size_t p = 0; p < plane; ++p) {
          double dot = 0.0;
          for (int c = 0; c < s; ++c) {
            const size_t i = base + c * plane + p;
            dot += yi->grad[i] * yi->data[i];
          }
          for (int c = 0; c < s; ++c) {
            const size_t i = base + c * plane + p;
            xi->grad[i] += yi->data[i] * (yi->grad[i] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor sigmoid(const Tensor& x) {
  return unary_pointwise(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y, double gy) {
        double g = y * (1.0 - y) * gy;
        if (testhook::corrupt_sigmoid_backward()) g *= 1.5;
        return g;
      });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  return unary_pointwise(
      x, [negative_slope](double v) { return v > 0.0 ? v : negative_slope * v; },
      [negative_slope](double v, double, double gy) {
        return (v > 0.0 ? 1.0 : negative_slope) * gy;
      });
}

Tensor concat_channel(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channel");
  require_rank4(b, "concat_channel");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channel: batch/spatial mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const int bb = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<double> out(static_cast<size_t>(bb) * (ca + cb) * plane);
  for (int n = 0; n < bb; ++n) {
    const size_t dst = static_cast<size_t>(n) * (ca + cb) * plane;
    std::copy_n(a.data().begin() + static_cast<size_t>(n) * ca * plane, ca * plane,
                out.begin() + dst);
    std::copy_n(b.data().begin() + static_cast<size_t>(n) * cb * plane, cb * plane,
                out.begin() + dst + ca * plane);
  }
  bool rec = should_record({&a, &b});
  Tensor y = make_tensor({bb, ca + cb, h, w}, std::move(out), rec);
  if (rec) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::current().record(yi, [ai, bi, yi, bb, ca, cb, plane]() {
      if (!yi->has_grad()) return;
      for (int n = 0; n < bb; ++n) {
        const size_t src = static_cast<size_t>(n) * (ca + cb) * plane;
        if (ai->requires_grad) {
          ai->ensure_grad();
          for (size_t i = 0; i < static_cast<size_t>(ca) * plane; ++i) {
            ai->grad[static_cast<size_t>(n) * ca * plane + i] += yi->grad[src + i];
          }
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          for (size_t i = 0; i < static_cast<size_t>(cb) * plane; ++i) {
            bi->grad[static_cast<size_t>(n) * cb * plane + i] +=
                yi->grad[src + ca * plane + i];
          }
        }
      }
    });
  }
  return y;
}

Tensor slice_channel(const Tensor& x, int begin, int count) {
  require_rank4(x, "slice_channel");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (begin < 0 || count < 1 || begin + count > c) {
    throw ShapeError("slice_channel: invalid channel range");
  }
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<double> out(static_cast<size_t>(b) * count * plane);
  for (int n = 0; n < b; ++n) {
    std::copy_n(x.data().begin() + (static_cast<size_t>(n) * c + begin) * plane,
                static_cast<size_t>(count) * plane,
                out.begin() + static_cast<size_t>(n) * count * plane);
  }
  bool rec = should_record({&x});
  Tensor y = make_tensor({b, count, h, w}, std::move(out), rec);
  if (rec) {
    auto xi = x.impl(), yi = y.impl();
    Tape::current().record(yi, [xi, yi, b, c, begin, count, plane]() {
      if (!yi->has_grad()) return;
      xi->ensure_grad();
      for (int n = 0; n < b; ++n) {
        for (size_t i = 0; i < static_cast<size_t>(count) * plane; ++i) {
          xi->grad[(static_cast<size_t>(n) * c + begin) * plane + i] +=
              yi->grad[static_cast<size_t>(n) * count * plane + i];
        }
      }
    });
  }
  return y;
}

namespace {

template <typename Fwd>
Tensor binary_pointwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                        double (*da)(double, double, double),
                        double (*db)(double, double, double)) {
  require_same_shape(a, b, name);
  std::vector<double> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i], bd[i]);
  bool rec = should_record({&a, &b});
  Tensor y = make_tensor(a.shape(), std::move(out), rec);
  if (rec) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::current().record(yi, [ai, bi, yi, da, db]() {
      if (!yi->has_grad()) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < ai->data.size(); ++i) {
          ai->grad[i] += da(ai->data[i], bi->data[i], yi->grad[i]);
        }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < bi->data.size(); ++i) {
          bi->grad[i] += db(ai->data[i], bi->data[i], yi->grad[i]);
        }
      }
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_pointwise(
      a, b, "add", [](double x, double y) { return x + y; },
      +[](double, double, double g) { return g; },
      +[](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_pointwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      +[](double, double, double g) { return g; },
      +[](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_pointwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      +[](double, double y, double g) { return y * g; },
      +[](double x, double, double g) { return x * g; });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  return unary_pointwise(
      x, [scale, shift](double v) { return scale * v + shift; },
      [scale](double, double, double gy) { return scale * gy; });
}

Tensor maxpool2(const Tensor& x) {
  require_rank4(x, "maxpool2");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const int ho = h / 2, wo = w / 2;
  std::vector<double> out(static_cast<size_t>(b) * c * ho * wo);
  std::vector<uint32_t> argmax(out.size());
  const auto& in = x.data();
  for (int n = 0; n < b; ++n)
    for (int cc = 0; cc < c; ++cc) {
      const size_t in_base = (static_cast<size_t>(n) * c + cc) * h * w;
      const size_t out_base = (static_cast<size_t>(n) * c + cc) * ho * wo;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          // Ties go to the first maximal element in row-major order.
          size_t best = in_base + (2 * oy) * w + 2 * ox;
          double bv = in[best];
          const size_t cands[3] = {best + 1, best + w, best + w + 1};
          for (size_t cand : cands) {
            if (in[cand] > bv) {
              bv = in[cand];
              best = cand;
            }
          }
          out[out_base + static_cast<size_t>(oy) * wo + ox] = bv;
          argmax[out_base + static_cast<size_t>(oy) * wo + ox] = static_cast<uint32_t>(best);
        }
    }
  bool rec = should_record({&x});
  Tensor y = make_tensor({b, c, ho, wo}, std::move(out), rec);
  if (rec) {
    auto xi = x.impl(), yi = y.impl();
    Tape::current().record(yi, [xi, yi, argmax = std::move(argmax)]() {
      if (!yi->has_grad()) return;
      xi->ensure_grad();
      for (size_t i = 0; i < yi->grad.size(); ++i) xi->grad[argmax[i]] += yi->grad[i];
    });
  }
  return y;
}

Tensor upsample_nearest2(const Tensor& x) {
  require_rank4(x, "upsample_nearest2");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h * 2, wo = w * 2;
  std::vector<double> out(static_cast<size_t>(b) * c * ho * wo);
  const auto& in = x.data();
  for (int n = 0; n < b; ++n)
    for (int cc = 0; cc < c; ++cc) {
      const size_t in_base = (static_cast<size_t>(n) * c + cc) * h * w;
      const size_t out_base = (static_cast<size_t>(n) * c + cc) * ho * wo;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          out[out_base + static_cast<size_t>(oy) * wo + ox] =
              in[in_base + static_cast<size_t>(oy / 2) * w + ox / 2];
        }
    }
  bool rec = should_record({&x});
  Tensor y = make_tensor({b, c, ho, wo}, std::move(out), rec);
  if (rec) {
    auto xi = x.impl(), yi = y.impl();
    Tape::current().record(yi, [xi, yi, b, c, h, w, ho, wo]() {
      if (!yi->has_grad()) return;
      xi->ensure_grad();
      for (int n = 0; n < b; ++n)
        for (int cc = 0; cc < c; ++cc) {
          const size_t in_base = (static_cast<size_t>(n) * c + cc) * h * w;
          const size_t out_base = (static_cast<size_t>(n) * c + cc) * ho * wo;
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              xi->grad[in_base + static_cast<size_t>(oy / 2) * w + ox / 2] +=
                  yi->grad[out_base + static_cast<size_t>(oy) * wo + ox];
            }
        }
    });
  }
  return y;
}

Tensor pool_resize(const Tensor& x, PoolMode mode) {
  return mode == PoolMode::kMaxPool2 ? maxpool2(x) : upsample_nearest2(x);
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ShapeError("clamp: lo must not exceed hi");
  return unary_pointwise(
      x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double, double gy) { return (v >= lo && v <= hi) ? gy : 0.0; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw Error("log: input must be strictly positive");
  }
  return unary_pointwise(x, [](double v) { return std::log(v); },
                         [](double v, double, double gy) { return gy / v; });
}

Tensor pow_const(const Tensor& x, double exponent) {
  for (double v : x.data()) {
    if (v < 0.0) throw Error("pow_const: input must be non-negative");
  }
  return unary_pointwise(
      x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double, double gy) {
        if (exponent == 0.0) return 0.0;
        if (v == 0.0) return 0.0;  // subgradient choice at the boundary
        return exponent * std::pow(v, exponent - 1.0) * gy;
      });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  bool rec = should_record({&x});
  Tensor y = make_tensor({1}, {acc}, rec);
  if (rec) {
    auto xi = x.impl(), yi = y.impl();
    Tape::current().record(yi, [xi, yi]() {
      if (!yi->has_grad()) return;
      xi->ensure_grad();
      const double g = yi->grad[0];
      for (double& v : xi->grad) v += g;
    });
  }
  return y;
}

Tensor sum_channel(const Tensor& x) {
  require_rank4(x, "sum_channel");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<double> out(static_cast<size_t>(b) * plane, 0.0);
  const auto& in = x.data();
  for (int n = 0; n < b; ++n)
    for (int cc = 0; cc < c; ++cc)
      for (size_t p = 0; p < plane; ++p) {
        out[static_cast<size_t>(n) * plane + p] +=
            in[(static_cast<size_t>(n) * c + cc) * plane + p];
      }
  bool rec = should_record({&x});
  Tensor y = make_tensor({b, 1, h, w}, std::move(out), rec);
  if (rec) {
    auto xi = x.impl(), yi = y.impl();
    Tape::current().record(yi, [xi, yi, b, c, plane]() {
      if (!yi->has_grad()) return;
      xi->ensure_grad();
      for (int n = 0; n < b; ++n)
        for (int cc = 0; cc < c; ++cc)
          for (size_t p = 0; p < plane; ++p) {
            xi->grad[(static_cast<size_t>(n) * c + cc) * plane + p] +=
                yi->grad[static_cast<size_t>(n) * plane + p];
          }
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: element count mismatch for " + shape_str(shape));
  }
  bool rec = should_record({&x});
  Tensor y = make_tensor(std::move(shape), x.data(), rec);
  if (rec) {
    auto xi = x.impl(), yi = y.impl();
    Tape::current().record(yi, [xi, yi]() {
      if (!yi->has_grad()) return;
      xi->ensure_grad();
      for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
    });
  }
  return y;
}

Tensor detach(const Tensor& x) {
  return make_tensor(x.shape(), x.data(), false);
}

}  // namespace pmf
