#pragma once

// Dense float64 arrays and a reverse-mode tape covering the layer types the
// classifiers need: dense, 2-D convolution, ReLU, channel concat, dropout,
// temperature softmax, cross-entropy and KL divergence.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace amc {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, double fill = 0.0);
  NdArray(Shape shape, std::vector<double> data);
  /// 1-D array.
  static NdArray vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Same data, new shape with equal element count.
  NdArray reshaped(Shape shape) const;
  bool all_finite() const;
  void fill(double v);

  friend bool operator==(const NdArray&, const NdArray&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Asymmetric zero padding for the two spatial axes (rows, time).
struct Padding {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  /// "same" padding for a kernel: output spatial size equals input size.
  static Padding same(std::size_t kernel_h, std::size_t kernel_w);
  /// "same" on time only; rows are left unpadded.
  static Padding same_time(std::size_t kernel_w);
  friend bool operator==(const Padding&, const Padding&) = default;
};

enum class Reduction { kMean, kSum };

/// Lower bound applied to probabilities before any logarithm.
inline constexpr double kProbFloor = 1e-12;

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Records primitive ops in execution order. Values are computed eagerly;
/// backward() walks the record in reverse and accumulates gradients for
/// every node created with requires_grad.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(NdArray value);
  Var variable(NdArray value);

  /// x: [N, in], w: [in, out], b: [out] -> [N, out]; y = x w + b.
  Var dense(Var x, Var w, Var b);
  /// Cross-correlation. x: [N, C, H, W], w: [F, C, kh, kw], b: [F].
  Var conv2d(Var x, Var w, Var b, const Padding& pad);
  Var relu(Var x);
  /// Concatenate [N, Ci, H, W] inputs along the channel axis.
  Var concat_channels(std::span<const Var> parts);
  Var reshape(Var x, Shape shape);
  /// Inverted dropout; identity when rate == 0.
  Var dropout(Var x, double rate, std::mt19937_64& rng);
  /// Row-wise softmax(logits / temperature) over [N, K].
  Var softmax(Var logits, double temperature);
  /// -log(max(p[label], floor)) per row, reduced over rows.
  Var cross_entropy(Var probs, std::span<const int> labels, Reduction reduction = Reduction::kMean);
  /// Row-wise KL(p_ref || q), reduced over rows.
  Var kl_divergence(Var p_ref, Var q, Reduction reduction = Reduction::kMean);

  Var add(Var a, Var b);
  Var scale(Var a, double factor);
  Var mul(Var a, Var b);
  Var square(Var a);
  Var sum(Var a);

  const NdArray& value(Var v) const;
  /// Gradient from the last backward(); zero-filled if never reached.
  const NdArray& grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse pass from a scalar output (seed 1).
  void backward(Var output);
  /// Reverse pass seeded with an arbitrary cotangent of the output's shape.
  void backward(Var output, const NdArray& seed);

 private:
  struct Node {
    NdArray value;
    NdArray grad;
    bool requires_grad = false;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(NdArray value, bool requires_grad, std::function<void(Tape&, std::size_t)> backward,
           const char* op);
  Node& node(Var v);
  const Node& node(Var v) const;
  /// Gradient buffer for accumulation, allocated on first touch.
  NdArray& grad_buffer(std::size_t id);

  std::vector<Node> nodes_;
};

enum class OptimizerMethod { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::kSgd;
  double learning_rate = 0.01;
  double momentum = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Round updated values to float32 so checkpoints are lossless.
  bool f32_storage = false;
};

/// One optimizable array. Frozen entries are never written.
struct ParamSlot {
  NdArray* value = nullptr;
  const NdArray* grad = nullptr;
  bool frozen = false;
  /// Entries where mask == 0 stay pinned at zero (pruned weights).
  const std::vector<std::uint8_t>* mask = nullptr;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}
  /// Slots must be passed in the same order on every call.
  void step(std::span<const ParamSlot> slots);
  const OptimizerConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  OptimizerConfig config_;
  std::vector<NdArray> first_;
  std::vector<NdArray> second_;
  std::int64_t steps_ = 0;
};

}  // namespace amc
