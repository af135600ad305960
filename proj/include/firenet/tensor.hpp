#pragma once

// Dense 5-axis real tensor (batch, channel, depth, height, width) with a
// dynamic reverse-mode gradient graph.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "firenet/real.hpp"

namespace firenet::inline FIRENET_ABI {

using Extent3 = std::array<int64_t, 3>;

std::string to_string(const Extent3& e);

struct Shape {
  std::array<int64_t, 5> dims{1, 1, 1, 1, 1};

  Shape() = default;
  Shape(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) : dims{n, c, d, h, w} {}

  int64_t batch() const { return dims[0]; }
  int64_t channels() const { return dims[1]; }
  int64_t depth() const { return dims[2]; }
  int64_t height() const { return dims[3]; }
  int64_t width() const { return dims[4]; }
  Extent3 spatial() const { return {dims[2], dims[3], dims[4]}; }
  int64_t voxels() const { return dims[2] * dims[3] * dims[4]; }
  int64_t numel() const { return dims[0] * dims[1] * voxels(); }

  static Shape scalar() { return {}; }
  static Shape from(int64_t n, int64_t c, const Extent3& s) { return {n, c, s[0], s[1], s[2]}; }

  bool operator==(const Shape&) const = default;
  std::string str() const;
};

struct TensorImpl;

/// One recorded operation. `backward` reads the output gradient from `out.grad`
/// and accumulates into the gradients of `inputs`.
struct GradNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<GradNode> grad_fn;

  // Allocates a zeroed gradient buffer on first use.
  std::vector<real>& grad_buffer();
};

class Tensor5 {
 public:
  Tensor5() = default;
  explicit Tensor5(const Shape& shape, real fill = 0.0f, bool requires_grad = false);
  Tensor5(const Shape& shape, std::vector<real> values, bool requires_grad = false);

  static Tensor5 zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor5(shape, 0.0f, requires_grad);
  }
  static Tensor5 full(const Shape& shape, real v) { return Tensor5(shape, v); }
  static Tensor5 scalar(real v, bool requires_grad = false) {
    return Tensor5(Shape::scalar(), v, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const { return shape().numel(); }

  std::span<const real> data() const;
  // Writable view for constructing leaves and for optimiser updates. Never call
  // on tensors that are inputs of a live graph.
  std::span<real> mutable_data();

  real item() const;
  real at(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const;
  real& at(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w);

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const real> grad() const;
  void zero_grad();

  // Same values, cut from the graph.
  Tensor5 detach() const;
  // Deep copy of the values (no graph, no gradient).
  Tensor5 clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor5(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Branch decisions of piecewise ops (relu masks, pool argmaxes) in call order.
struct BranchRecord {
  std::vector<std::vector<uint8_t>> masks;
  std::vector<std::vector<int64_t>> choices;
};

/// While in scope on this thread, piecewise ops record their decisions or, in
/// replay mode, reuse recorded ones. Replay turns f into the smooth function
/// that agrees with f on the piece containing the recorded input.
class BranchTrace {
 public:
  BranchTrace();
  /// Replays `recorded`, which must outlive this scope.
  explicit BranchTrace(const BranchRecord& recorded);
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  /// relu: the mask (x > 0) for `x`, recorded or replayed.
  std::vector<uint8_t> relu_mask(std::span<const real> x);
  /// pool: replaces `choice` with the replayed indices, or records it.
  void pool_choice(std::vector<int64_t>& choice);

  BranchRecord take() { return std::move(own_); }
  /// Replayed decisions that differ from the live ones. Zero means the
  /// evaluation stayed on the recorded piece.
  int64_t divergences() const { return divergences_; }

 private:
  BranchTrace* previous_;
  const BranchRecord* replay_ = nullptr;
  BranchRecord own_;
  std::size_t next_mask_ = 0, next_choice_ = 0;
  int64_t divergences_ = 0;
};

BranchTrace* active_branch_trace();

/// Builds an op result. If grad mode is on and any input requires a gradient,
/// the result is attached to a new GradNode with the given backward function.
Tensor5 make_result(const Shape& shape, std::vector<real> values, const char* op,
                    std::initializer_list<const Tensor5*> inputs,
                    std::function<void(const TensorImpl& out)> backward);
Tensor5 make_result(const Shape& shape, std::vector<real> values, const char* op,
                    const std::vector<const Tensor5*>& inputs,
                    std::function<void(const TensorImpl& out)> backward);

/// Topologically ordered record of the operations reachable from a root.
class GradTape {
 public:
  static GradTape record(const Tensor5& root);

  // Executes the recorded nodes in reverse order. Intermediate gradients are
  // released once propagated; leaf gradients are kept.
  void run() const;

  std::size_t size() const { return order_.size(); }
  const std::vector<std::shared_ptr<TensorImpl>>& order() const { return order_; }

 private:
  std::vector<std::shared_ptr<TensorImpl>> order_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
/// Throws ShapeError when `loss` is not a single value.
void backward(const Tensor5& loss);

/// FNV-1a over the raw real bytes.
uint64_t hash_values(std::span<const real> values);

}  // namespace firenet
