#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace coforge {

using Shape = std::vector<int>;
using Labels = std::vector<int32_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;       // empty until backward touches it
  bool requires_grad = false;    // leaf flag set by the user
  bool grad_path = false;        // interior node of a recorded graph

  bool needs_grad() const { return requires_grad || grad_path; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

}  // namespace detail

// Value-semantic handle to an n-d f32 array. Copies share storage; clone()
// deep-copies. All graph state lives on the active Tape, not in the tensor.
class Tensor {
 public:
  Tensor() = default;  // undefined tensor; also used for "no bias"

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value);
  static Tensor from_data(Shape shape, std::vector<float> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t size() const;

  std::span<float> data();
  std::span<const float> data() const;

  bool has_grad() const;
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();  // drops the grad buffer

  bool requires_grad() const;
  void set_requires_grad(bool v);

  float item() const;  // scalar tensors only

  Tensor clone() const;  // deep copy of data; fresh leaf, no grad

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Creation order is the topological order; backward visits
// nodes in strict reverse creation order exactly once. Ops record onto the
// tape installed by Tape::Scope on the current thread; with no active tape
// they run forward-only.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& t);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current() noexcept;

  // Seeds d(loss)/d(loss)=1 and runs all recorded vjps in reverse order.
  // Throws ShapeError for non-scalar loss and NumericsError on reuse without
  // reset().
  void backward(const Tensor& loss);

  void reset() noexcept;
  size_t num_nodes() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void record(std::function<void()> vjp);

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

enum class BnMode {
  kTrain,        // batch statistics; updates running stats
  kTrainFrozen,  // batch statistics; running stats untouched (attack passes)
  kEval,         // running statistics
};

struct BnStats {
  std::vector<float> mean;
  std::vector<float> var;

  BnStats() = default;
  explicit BnStats(int channels)
      : mean(static_cast<size_t>(channels), 0.0f),
        var(static_cast<size_t>(channels), 1.0f) {}
  int channels() const { return static_cast<int>(mean.size()); }
};

// ---- differentiable ops ----

// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], optional bias [Cout].
// Zero padding; H' = floor((H+2p-kh)/stride)+1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

// Per-channel normalization over (N,H,W). Population (biased) variance.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BnStats& stats, BnMode mode, float momentum = 0.1f,
                   float eps = 1e-5f);

Tensor relu(const Tensor& input);

// input [N,D], weight [K,D], bias [K] -> [N,K]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// [N,C,H,W] -> [N,C], mean over the spatial extent.
Tensor global_avg_pool(const Tensor& input);

// [N,...] -> [N,prod(rest)]
Tensor flatten(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float k);
Tensor add_scalar(const Tensor& x, float k);

// Fixed per-channel affine (x - mean) / stddev on [N,C,H,W].
Tensor normalize_channels(const Tensor& x, std::span<const float> mean,
                          std::span<const float> stddev);

// Mean over the batch of -log softmax(logits)[label]; max-subtraction
// stabilized. logits [N,K], labels in [0,K).
Tensor cross_entropy(const Tensor& logits, const Labels& labels);

// Scalar sum of all elements.
Tensor sum(const Tensor& x);

// Forward-only row softmax of [N,K] logits.
std::vector<float> softmax_rows(const Tensor& logits);

}  // namespace coforge
