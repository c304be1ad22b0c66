#include "coforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "coforge/errors.hpp"
#include "gemm.hpp"

namespace coforge {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const { return impl_->shape; }

int64_t Tensor::size() const { return impl_ ? static_cast<int64_t>(impl_->data.size()) : 0; }

std::span<float> Tensor::data() { return impl_->data; }
std::span<const float> Tensor::data() const { return impl_->data; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<float> Tensor::grad() {
  if (!has_grad()) throw NumericsError("grad(): no gradient populated; run backward first");
  return impl_->grad;
}

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw NumericsError("grad(): no gradient populated; run backward first");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) { impl_->requires_grad = v; }

float Tensor::item() const {
  if (!impl_ || impl_->data.size() != 1) {
    throw ShapeError("item(): tensor is not scalar, shape " +
                     (impl_ ? shape_str(impl_->shape) : std::string("(undefined)")));
  }
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

// ---- Tape ----

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape::Scope::Scope(Tape& t) : prev_(g_current_tape) { g_current_tape = &t; }
Tape::Scope::~Scope() { g_current_tape = prev_; }

Tape* Tape::current() noexcept { return g_current_tape; }

void Tape::record(std::function<void()> vjp) { nodes_.push_back(std::move(vjp)); }

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw NumericsError("backward: tape already consumed; reset() before reuse");
  }
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("(undefined)")));
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  consumed_ = true;
}

void Tape::reset() noexcept {
  nodes_.clear();
  consumed_ = false;
}

// ---- op helpers ----

namespace {

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->impl()->needs_grad()) return true;
  }
  return false;
}

// Marks out as interior and records the vjp.
void record_node(const Tensor& out, std::function<void()> vjp) {
  out.impl()->grad_path = true;
  Tape::current()->record(std::move(vjp));
}

void check_4d(const Tensor& t, const char* op, const char* name) {
  if (!t.defined() || t.shape().size() != 4) {
    throw ShapeError(std::string(op) + ": " + name + " must be 4-d [N,C,H,W], got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("(undefined)")));
  }
}

}  // namespace

// ---- conv2d ----

namespace {

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, pad;
  int ho, wo;
  size_t col_rows() const { return static_cast<size_t>(cin) * kh * kw; }
  size_t out_hw() const { return static_cast<size_t>(ho) * wo; }
};

// col[(ci*kh+ki)*kw+kj][oh*wo+ow] = x[ci][oh*s-p+ki][ow*s-p+kj] (0 outside).
void im2col(const ConvDims& d, const float* x, float* col) {
  for (int ci = 0; ci < d.cin; ++ci) {
    const float* plane = x + static_cast<size_t>(ci) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        float* row = col + (static_cast<size_t>(ci) * d.kh * d.kw +
                            static_cast<size_t>(ki) * d.kw + kj) *
                               d.out_hw();
        for (int oh = 0; oh < d.ho; ++oh) {
          const int ih = oh * d.stride - d.pad + ki;
          float* dst = row + static_cast<size_t>(oh) * d.wo;
          if (ih < 0 || ih >= d.h) {
            std::fill(dst, dst + d.wo, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<size_t>(ih) * d.w;
          for (int ow = 0; ow < d.wo; ++ow) {
            const int iw = ow * d.stride - d.pad + kj;
            dst[ow] = (iw >= 0 && iw < d.w) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col, same index order.
void col2im_add(const ConvDims& d, const float* col, float* x) {
  for (int ci = 0; ci < d.cin; ++ci) {
    float* plane = x + static_cast<size_t>(ci) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const float* row = col + (static_cast<size_t>(ci) * d.kh * d.kw +
                                  static_cast<size_t>(ki) * d.kw + kj) *
                                     d.out_hw();
        for (int oh = 0; oh < d.ho; ++oh) {
          const int ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.h) continue;
          float* dst = plane + static_cast<size_t>(ih) * d.w;
          const float* src = row + static_cast<size_t>(oh) * d.wo;
          for (int ow = 0; ow < d.wo; ++ow) {
            const int iw = ow * d.stride - d.pad + kj;
            if (iw >= 0 && iw < d.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  check_4d(input, "conv2d", "input");
  check_4d(weight, "conv2d", "weight");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(padding));

  ConvDims d;
  d.n = input.shape()[0];
  d.cin = input.shape()[1];
  d.h = input.shape()[2];
  d.w = input.shape()[3];
  d.cout = weight.shape()[0];
  d.kh = weight.shape()[2];
  d.kw = weight.shape()[3];
  d.stride = stride;
  d.pad = padding;

  if (weight.shape()[1] != d.cin) {
    throw ShapeError("conv2d: weight axis 1 (in-channels " + std::to_string(weight.shape()[1]) +
                     ") does not match input axis 1 (channels " + std::to_string(d.cin) + ")");
  }
  if (d.kh > d.h + 2 * padding) {
    throw ShapeError("conv2d: kernel height " + std::to_string(d.kh) +
                     " exceeds padded input height " + std::to_string(d.h + 2 * padding) +
                     " on axis 2");
  }
  if (d.kw > d.w + 2 * padding) {
    throw ShapeError("conv2d: kernel width " + std::to_string(d.kw) +
                     " exceeds padded input width " + std::to_string(d.w + 2 * padding) +
                     " on axis 3");
  }
  if (bias.defined() &&
      (bias.shape().size() != 1 || bias.shape()[0] != d.cout)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(d.cout) + "], got " +
                     shape_str(bias.shape()));
  }

  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;

  Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo});

  const size_t col_rows = d.col_rows();
  const size_t out_hw = d.out_hw();
  const size_t in_chw = static_cast<size_t>(d.cin) * d.h * d.w;
  const size_t out_chw = static_cast<size_t>(d.cout) * out_hw;

  {
    std::vector<float> col(col_rows * out_hw);
    const float* x = input.data().data();
    const float* wp = weight.data().data();
    float* y = out.data().data();
    for (int n = 0; n < d.n; ++n) {
      im2col(d, x + n * in_chw, col.data());
      float* yn = y + n * out_chw;
      if (bias.defined()) {
        const float* bp = bias.data().data();
        for (int co = 0; co < d.cout; ++co)
          std::fill(yn + co * out_hw, yn + (co + 1) * out_hw, bp[co]);
      }
      detail::gemm_nn(d.cout, out_hw, col_rows, wp, col.data(), yn);
    }
  }

  if (want_grad({&input, &weight, &bias})) {
    ImplPtr in_i = input.impl(), w_i = weight.impl(), out_i = out.impl();
    ImplPtr b_i = bias.defined() ? bias.impl() : nullptr;
    record_node(out, [d, in_i, w_i, b_i, out_i, col_rows, out_hw, in_chw, out_chw]() {
      if (out_i->grad.empty()) return;
      const float* g = out_i->grad.data();
      const bool need_in = in_i->needs_grad();
      const bool need_w = w_i->needs_grad();
      const bool need_b = b_i && b_i->needs_grad();

      std::vector<float> col;
      if (need_w) {
        w_i->ensure_grad();
        col.resize(col_rows * out_hw);
      }
      std::vector<float> wt, colg;
      if (need_in) {
        in_i->ensure_grad();
        // W^T once, reused for every sample.
        wt.resize(col_rows * d.cout);
        const float* wp = w_i->data.data();
        for (int co = 0; co < d.cout; ++co)
          for (size_t r = 0; r < col_rows; ++r)
            wt[r * d.cout + co] = wp[co * col_rows + r];
        colg.resize(col_rows * out_hw);
      }
      if (need_b) b_i->ensure_grad();

      for (int n = 0; n < d.n; ++n) {
        const float* gn = g + n * out_chw;
        if (need_w) {
          im2col(d, in_i->data.data() + n * in_chw, col.data());
          detail::gemm_nt(d.cout, col_rows, out_hw, gn, col.data(), w_i->grad.data());
        }
        if (need_in) {
          std::fill(colg.begin(), colg.end(), 0.0f);
          detail::gemm_nn(col_rows, out_hw, d.cout, wt.data(), gn, colg.data());
          col2im_add(d, colg.data(), in_i->grad.data() + n * in_chw);
        }
        if (need_b) {
          float* gb = b_i->grad.data();
          for (int co = 0; co < d.cout; ++co) {
            float acc = 0.0f;
            const float* row = gn + co * out_hw;
            for (size_t i = 0; i < out_hw; ++i) acc += row[i];
            gb[co] += acc;
          }
        }
      }
    });
  }
  return out;
}

// ---- batchnorm2d ----

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BnStats& stats, BnMode mode, float momentum, float eps) {
  check_4d(input, "batchnorm2d", "input");
  const int n = input.shape()[0], c = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  auto check_vec = [&](const Tensor& t, const char* name) {
    if (!t.defined() || t.shape().size() != 1 || t.shape()[0] != c) {
      throw ShapeError("batchnorm2d: " + std::string(name) + " must be [" + std::to_string(c) +
                       "] to match input channel axis 1, got " +
                       (t.defined() ? shape_str(t.shape()) : std::string("(undefined)")));
    }
  };
  check_vec(gamma, "gamma");
  check_vec(beta, "beta");
  if (stats.channels() != c) {
    throw ShapeError("batchnorm2d: running stats have " + std::to_string(stats.channels()) +
                     " channels, input axis 1 has " + std::to_string(c));
  }

  const size_t hw = static_cast<size_t>(h) * w;
  const size_t chw = static_cast<size_t>(c) * hw;
  const size_t count = static_cast<size_t>(n) * hw;
  const bool use_batch = (mode != BnMode::kEval);
  if (use_batch && count < 2) {
    throw NumericsError("batchnorm2d: train mode needs >= 2 values per channel over (N,H,W), got " +
                        std::to_string(count));
  }

  Tensor out = Tensor::zeros(input.shape());
  std::vector<float> xhat(input.impl()->data.size());
  std::vector<float> invstd(static_cast<size_t>(c));

  const float* x = input.data().data();
  const float* gm = gamma.data().data();
  const float* bt = beta.data().data();
  float* y = out.data().data();

  for (int ci = 0; ci < c; ++ci) {
    float mean, var;
    if (use_batch) {
      float s = 0.0f;
      for (int ni = 0; ni < n; ++ni) {
        const float* p = x + ni * chw + ci * hw;
        for (size_t i = 0; i < hw; ++i) s += p[i];
      }
      mean = s / static_cast<float>(count);
      float s2 = 0.0f;
      for (int ni = 0; ni < n; ++ni) {
        const float* p = x + ni * chw + ci * hw;
        for (size_t i = 0; i < hw; ++i) {
          const float dv = p[i] - mean;
          s2 += dv * dv;
        }
      }
      var = s2 / static_cast<float>(count);
      if (mode == BnMode::kTrain) {
        stats.mean[ci] = (1.0f - momentum) * stats.mean[ci] + momentum * mean;
        stats.var[ci] = (1.0f - momentum) * stats.var[ci] + momentum * var;
      }
    } else {
      mean = stats.mean[ci];
      var = stats.var[ci];
    }
    const float is = 1.0f / std::sqrt(var + eps);
    invstd[ci] = is;
    for (int ni = 0; ni < n; ++ni) {
      const float* p = x + ni * chw + ci * hw;
      float* xh = xhat.data() + ni * chw + ci * hw;
      float* yo = y + ni * chw + ci * hw;
      const float g = gm[ci], b = bt[ci];
      for (size_t i = 0; i < hw; ++i) {
        const float v = (p[i] - mean) * is;
        xh[i] = v;
        yo[i] = g * v + b;
      }
    }
  }

  if (want_grad({&input, &gamma, &beta})) {
    ImplPtr in_i = input.impl(), g_i = gamma.impl(), b_i = beta.impl(), out_i = out.impl();
    record_node(out, [n, c, hw, chw, count, use_batch, in_i, g_i, b_i, out_i,
                      xh = std::move(xhat), is = std::move(invstd)]() {
      if (out_i->grad.empty()) return;
      const float* g = out_i->grad.data();
      const bool need_in = in_i->needs_grad();
      const bool need_gm = g_i->needs_grad();
      const bool need_bt = b_i->needs_grad();
      if (need_in) in_i->ensure_grad();
      if (need_gm) g_i->ensure_grad();
      if (need_bt) b_i->ensure_grad();

      for (int ci = 0; ci < c; ++ci) {
        float sg = 0.0f, sgx = 0.0f;
        for (int ni = 0; ni < n; ++ni) {
          const float* gp = g + ni * chw + ci * hw;
          const float* xp = xh.data() + ni * chw + ci * hw;
          for (size_t i = 0; i < hw; ++i) {
            sg += gp[i];
            sgx += gp[i] * xp[i];
          }
        }
        if (need_gm) g_i->grad[ci] += sgx;
        if (need_bt) b_i->grad[ci] += sg;
        if (!need_in) continue;
        const float gamma_is = g_i->data[ci] * is[ci];
        if (use_batch) {
          const float inv_count = 1.0f / static_cast<float>(count);
          const float mg = sg * inv_count, mgx = sgx * inv_count;
          for (int ni = 0; ni < n; ++ni) {
            const float* gp = g + ni * chw + ci * hw;
            const float* xp = xh.data() + ni * chw + ci * hw;
            float* dp = in_i->grad.data() + ni * chw + ci * hw;
            for (size_t i = 0; i < hw; ++i) dp[i] += gamma_is * (gp[i] - mg - xp[i] * mgx);
          }
        } else {
          for (int ni = 0; ni < n; ++ni) {
            const float* gp = g + ni * chw + ci * hw;
            float* dp = in_i->grad.data() + ni * chw + ci * hw;
            for (size_t i = 0; i < hw; ++i) dp[i] += gamma_is * gp[i];
          }
        }
      }
    });
  }
  return out;
}

// ---- elementwise / shuffle ops ----

Tensor relu(const Tensor& input) {
  if (!input.defined()) throw ShapeError("relu: undefined input");
  Tensor out = Tensor::zeros(input.shape());
  const float* x = input.data().data();
  float* y = out.data().data();
  const size_t sz = input.impl()->data.size();
  for (size_t i = 0; i < sz; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;

  if (want_grad({&input})) {
    ImplPtr in_i = input.impl(), out_i = out.impl();
    record_node(out, [in_i, out_i, sz]() {
      if (out_i->grad.empty() || !in_i->needs_grad()) return;
      in_i->ensure_grad();
      const float* g = out_i->grad.data();
      const float* x = in_i->data.data();
      float* d = in_i->grad.data();
      // subgradient 0 at exactly 0
      for (size_t i = 0; i < sz; ++i) d[i] += x[i] > 0.0f ? g[i] : 0.0f;
    });
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (!input.defined() || input.shape().size() != 2) {
    throw ShapeError("linear: input must be [N,D], got " +
                     (input.defined() ? shape_str(input.shape()) : std::string("(undefined)")));
  }
  if (!weight.defined() || weight.shape().size() != 2) {
    throw ShapeError("linear: weight must be [K,D], got " +
                     (weight.defined() ? shape_str(weight.shape()) : std::string("(undefined)")));
  }
  const int n = input.shape()[0], dsz = input.shape()[1];
  const int k = weight.shape()[0];
  if (weight.shape()[1] != dsz) {
    throw ShapeError("linear: weight axis 1 (" + std::to_string(weight.shape()[1]) +
                     ") does not match input axis 1 (" + std::to_string(dsz) + ")");
  }
  if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != k)) {
    throw ShapeError("linear: bias must be [" + std::to_string(k) + "], got " +
                     shape_str(bias.shape()));
  }

  Tensor out = Tensor::zeros({n, k});
  float* y = out.data().data();
  if (bias.defined()) {
    const float* bp = bias.data().data();
    for (int ni = 0; ni < n; ++ni)
      for (int ki = 0; ki < k; ++ki) y[ni * k + ki] = bp[ki];
  }
  detail::gemm_nt(n, k, dsz, input.data().data(), weight.data().data(), y);

  if (want_grad({&input, &weight, &bias})) {
    ImplPtr in_i = input.impl(), w_i = weight.impl(), out_i = out.impl();
    ImplPtr b_i = bias.defined() ? bias.impl() : nullptr;
    record_node(out, [n, dsz, k, in_i, w_i, b_i, out_i]() {
      if (out_i->grad.empty()) return;
      const float* g = out_i->grad.data();
      if (in_i->needs_grad()) {
        in_i->ensure_grad();
        detail::gemm_nn(n, dsz, k, g, w_i->data.data(), in_i->grad.data());
      }
      if (w_i->needs_grad()) {
        w_i->ensure_grad();
        detail::gemm_tn(k, dsz, n, g, in_i->data.data(), w_i->grad.data());
      }
      if (b_i && b_i->needs_grad()) {
        b_i->ensure_grad();
        float* gb = b_i->grad.data();
        for (int ni = 0; ni < n; ++ni)
          for (int ki = 0; ki < k; ++ki) gb[ki] += g[ni * k + ki];
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  check_4d(input, "global_avg_pool", "input");
  const int n = input.shape()[0], c = input.shape()[1];
  const size_t hw = static_cast<size_t>(input.shape()[2]) * input.shape()[3];
  Tensor out = Tensor::zeros({n, c});
  const float* x = input.data().data();
  float* y = out.data().data();
  const float inv = 1.0f / static_cast<float>(hw);
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float* p = x + (static_cast<size_t>(ni) * c + ci) * hw;
      float s = 0.0f;
      for (size_t i = 0; i < hw; ++i) s += p[i];
      y[ni * c + ci] = s * inv;
    }
  }
  if (want_grad({&input})) {
    ImplPtr in_i = input.impl(), out_i = out.impl();
    record_node(out, [n, c, hw, inv, in_i, out_i]() {
      if (out_i->grad.empty() || !in_i->needs_grad()) return;
      in_i->ensure_grad();
      const float* g = out_i->grad.data();
      float* d = in_i->grad.data();
      for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
          const float gv = g[ni * c + ci] * inv;
          float* p = d + (static_cast<size_t>(ni) * c + ci) * hw;
          for (size_t i = 0; i < hw; ++i) p[i] += gv;
        }
      }
    });
  }
  return out;
}

Tensor flatten(const Tensor& input) {
  if (!input.defined() || input.shape().empty()) {
    throw ShapeError("flatten: input must have at least one axis");
  }
  const int n = input.shape()[0];
  const int rest = static_cast<int>(shape_numel(input.shape()) / (n == 0 ? 1 : n));
  Tensor out = Tensor::from_data({n, rest}, std::vector<float>(input.data().begin(), input.data().end()));
  if (want_grad({&input})) {
    ImplPtr in_i = input.impl(), out_i = out.impl();
    record_node(out, [in_i, out_i]() {
      if (out_i->grad.empty() || !in_i->needs_grad()) return;
      in_i->ensure_grad();
      const size_t sz = in_i->grad.size();
      for (size_t i = 0; i < sz; ++i) in_i->grad[i] += out_i->grad[i];
    });
  }
  return out;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes differ, " +
                     (a.defined() ? shape_str(a.shape()) : std::string("(undefined)")) + " vs " +
                     (b.defined() ? shape_str(b.shape()) : std::string("(undefined)")));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* y = out.data().data();
  const size_t sz = out.impl()->data.size();
  for (size_t i = 0; i < sz; ++i) y[i] = pa[i] + pb[i];
  if (want_grad({&a, &b})) {
    ImplPtr a_i = a.impl(), b_i = b.impl(), out_i = out.impl();
    record_node(out, [a_i, b_i, out_i, sz]() {
      if (out_i->grad.empty()) return;
      const float* g = out_i->grad.data();
      if (a_i->needs_grad()) {
        a_i->ensure_grad();
        for (size_t i = 0; i < sz; ++i) a_i->grad[i] += g[i];
      }
      if (b_i->needs_grad()) {
        b_i->ensure_grad();
        for (size_t i = 0; i < sz; ++i) b_i->grad[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* y = out.data().data();
  const size_t sz = out.impl()->data.size();
  for (size_t i = 0; i < sz; ++i) y[i] = pa[i] - pb[i];
  if (want_grad({&a, &b})) {
    ImplPtr a_i = a.impl(), b_i = b.impl(), out_i = out.impl();
    record_node(out, [a_i, b_i, out_i, sz]() {
      if (out_i->grad.empty()) return;
      const float* g = out_i->grad.data();
      if (a_i->needs_grad()) {
        a_i->ensure_grad();
        for (size_t i = 0; i < sz; ++i) a_i->grad[i] += g[i];
      }
      if (b_i->needs_grad()) {
        b_i->ensure_grad();
        for (size_t i = 0; i < sz; ++i) b_i->grad[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float k) {
  if (!x.defined()) throw ShapeError("scale: undefined input");
  Tensor out = Tensor::zeros(x.shape());
  const float* p = x.data().data();
  float* y = out.data().data();
  const size_t sz = out.impl()->data.size();
  for (size_t i = 0; i < sz; ++i) y[i] = p[i] * k;
  if (want_grad({&x})) {
    ImplPtr x_i = x.impl(), out_i = out.impl();
    record_node(out, [x_i, out_i, k, sz]() {
      if (out_i->grad.empty() || !x_i->needs_grad()) return;
      x_i->ensure_grad();
      const float* g = out_i->grad.data();
      for (size_t i = 0; i < sz; ++i) x_i->grad[i] += k * g[i];
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& x, float k) {
  if (!x.defined()) throw ShapeError("add_scalar: undefined input");
  Tensor out = Tensor::zeros(x.shape());
  const float* p = x.data().data();
  float* y = out.data().data();
  const size_t sz = out.impl()->data.size();
  for (size_t i = 0; i < sz; ++i) y[i] = p[i] + k;
  if (want_grad({&x})) {
    ImplPtr x_i = x.impl(), out_i = out.impl();
    record_node(out, [x_i, out_i, sz]() {
      if (out_i->grad.empty() || !x_i->needs_grad()) return;
      x_i->ensure_grad();
      const float* g = out_i->grad.data();
      for (size_t i = 0; i < sz; ++i) x_i->grad[i] += g[i];
    });
  }
  return out;
}

Tensor normalize_channels(const Tensor& x, std::span<const float> mean,
                          std::span<const float> stddev) {
  check_4d(x, "normalize_channels", "input");
  const int n = x.shape()[0], c = x.shape()[1];
  const size_t hw = static_cast<size_t>(x.shape()[2]) * x.shape()[3];
  if (static_cast<int>(mean.size()) != c || static_cast<int>(stddev.size()) != c) {
    throw ShapeError("normalize_channels: mean/std size must match channel axis 1 (" +
                     std::to_string(c) + "), got " + std::to_string(mean.size()) + "/" +
                     std::to_string(stddev.size()));
  }
  for (int ci = 0; ci < c; ++ci) {
    if (stddev[ci] == 0.0f) {
      throw NumericsError("normalize_channels: zero stddev for channel " + std::to_string(ci));
    }
  }
  Tensor out = Tensor::zeros(x.shape());
  const float* p = x.data().data();
  float* y = out.data().data();
  std::vector<float> inv(static_cast<size_t>(c));
  for (int ci = 0; ci < c; ++ci) inv[ci] = 1.0f / stddev[ci];
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float m = mean[ci], iv = inv[ci];
      const float* src = p + (static_cast<size_t>(ni) * c + ci) * hw;
      float* dst = y + (static_cast<size_t>(ni) * c + ci) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] = (src[i] - m) * iv;
    }
  }
  if (want_grad({&x})) {
    ImplPtr x_i = x.impl(), out_i = out.impl();
    record_node(out, [n, c, hw, x_i, out_i, iv = std::move(inv)]() {
      if (out_i->grad.empty() || !x_i->needs_grad()) return;
      x_i->ensure_grad();
      const float* g = out_i->grad.data();
      float* d = x_i->grad.data();
      for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
          const float k = iv[ci];
          const float* gp = g + (static_cast<size_t>(ni) * c + ci) * hw;
          float* dp = d + (static_cast<size_t>(ni) * c + ci) * hw;
          for (size_t i = 0; i < hw; ++i) dp[i] += gp[i] * k;
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const Labels& labels) {
  if (!logits.defined() || logits.shape().size() != 2) {
    throw ShapeError("cross_entropy: logits must be [N,K], got " +
                     (logits.defined() ? shape_str(logits.shape()) : std::string("(undefined)")));
  }
  const int n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("cross_entropy: labels size " + std::to_string(labels.size()) +
                     " does not match logit rows " + std::to_string(n));
  }
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) +
                      " out of range [0," + std::to_string(k) + ") at row " + std::to_string(i));
    }
  }

  std::vector<float> probs(static_cast<size_t>(n) * k);
  const float* z = logits.data().data();
  float loss_acc = 0.0f;
  for (int i = 0; i < n; ++i) {
    const float* row = z + static_cast<size_t>(i) * k;
    float mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    float se = 0.0f;
    for (int j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    const float lse = mx + std::log(se);
    for (int j = 0; j < k; ++j) probs[static_cast<size_t>(i) * k + j] = std::exp(row[j] - lse);
    loss_acc += lse - row[labels[i]];
  }
  Tensor out = Tensor::from_data({}, {loss_acc / static_cast<float>(n)});

  if (want_grad({&logits})) {
    ImplPtr z_i = logits.impl(), out_i = out.impl();
    record_node(out, [n, k, z_i, out_i, p = std::move(probs), y = labels]() {
      if (out_i->grad.empty() || !z_i->needs_grad()) return;
      z_i->ensure_grad();
      const float g = out_i->grad[0] / static_cast<float>(n);
      float* d = z_i->grad.data();
      for (int i = 0; i < n; ++i) {
        const float* pr = p.data() + static_cast<size_t>(i) * k;
        float* dr = d + static_cast<size_t>(i) * k;
        for (int j = 0; j < k; ++j) dr[j] += g * (pr[j] - (j == y[i] ? 1.0f : 0.0f));
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  if (!x.defined()) throw ShapeError("sum: undefined input");
  const float* p = x.data().data();
  float acc = 0.0f;
  const size_t sz = x.impl()->data.size();
  for (size_t i = 0; i < sz; ++i) acc += p[i];
  Tensor out = Tensor::from_data({}, {acc});
  if (want_grad({&x})) {
    ImplPtr x_i = x.impl(), out_i = out.impl();
    record_node(out, [x_i, out_i, sz]() {
      if (out_i->grad.empty() || !x_i->needs_grad()) return;
      x_i->ensure_grad();
      const float g = out_i->grad[0];
      for (size_t i = 0; i < sz; ++i) x_i->grad[i] += g;
    });
  }
  return out;
}

std::vector<float> softmax_rows(const Tensor& logits) {
  if (!logits.defined() || logits.shape().size() != 2) {
    throw ShapeError("softmax_rows: logits must be [N,K]");
  }
  const int n = logits.shape()[0], k = logits.shape()[1];
  std::vector<float> out(static_cast<size_t>(n) * k);
  const float* z = logits.data().data();
  for (int i = 0; i < n; ++i) {
    const float* row = z + static_cast<size_t>(i) * k;
    float* o = out.data() + static_cast<size_t>(i) * k;
    float mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    float se = 0.0f;
    for (int j = 0; j < k; ++j) {
      o[j] = std::exp(row[j] - mx);
      se += o[j];
    }
    const float inv = 1.0f / se;
    for (int j = 0; j < k; ++j) o[j] *= inv;
  }
  return out;
}

}  // namespace coforge
