#include "firenet/tensor.hpp"

#include <cstring>
#include <sstream>
#include <unordered_set>

#include "firenet/error.hpp"

namespace firenet::inline FIRENET_ABI {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string to_string(const Extent3& e) {
  std::ostringstream os;
  os << e[0] << "x" << e[1] << "x" << e[2];
  return os.str();
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << dims[0] << "," << dims[1] << "," << dims[2] << "," << dims[3] << "," << dims[4]
     << ")";
  return os.str();
}

std::vector<real>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad;
}

Tensor5::Tensor5(const Shape& shape, real fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape.dims) {
    if (d < 1) throw ShapeError("tensor extents must be positive, got " + shape.str());
  }
  impl_->shape = shape;
  impl_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
  impl_->requires_grad = requires_grad;
}

Tensor5::Tensor5(const Shape& shape, std::vector<real> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape.dims) {
    if (d < 1) throw ShapeError("tensor extents must be positive, got " + shape.str());
  }
  if (static_cast<int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape.str());
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

const Shape& Tensor5::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

std::span<const real> Tensor5::data() const { return impl_->data; }
std::span<real> Tensor5::mutable_data() { return impl_->data; }

real Tensor5::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
  return impl_->data[0];
}

namespace {
std::size_t flat_index(const Shape& s, int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) {
  return static_cast<std::size_t>((((n * s.dims[1] + c) * s.dims[2] + d) * s.dims[3] + h) *
                                      s.dims[4] +
                                  w);
}
}  // namespace

real Tensor5::at(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
  return impl_->data[flat_index(impl_->shape, n, c, d, h, w)];
}

real& Tensor5::at(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) {
  return impl_->data[flat_index(impl_->shape, n, c, d, h, w)];
}

bool Tensor5::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor5::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor5::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const real> Tensor5::grad() const { return impl_->grad; }
void Tensor5::zero_grad() { impl_->grad.clear(); }

Tensor5 Tensor5::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor5(std::move(impl));
}

Tensor5 Tensor5::clone() const { return detach(); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace {
thread_local BranchTrace* g_trace = nullptr;
}  // namespace

BranchTrace::BranchTrace() : previous_(g_trace) { g_trace = this; }

BranchTrace::BranchTrace(const BranchRecord& recorded) : previous_(g_trace), replay_(&recorded) {
  g_trace = this;
}

BranchTrace::~BranchTrace() { g_trace = previous_; }

BranchTrace* active_branch_trace() { return g_trace; }

std::vector<uint8_t> BranchTrace::relu_mask(std::span<const real> x) {
  std::vector<uint8_t> live(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) live[i] = x[i] > 0.0f ? 1 : 0;
  if (!replay_) {
    own_.masks.push_back(live);
    return live;
  }
  if (next_mask_ >= replay_->masks.size() || replay_->masks[next_mask_].size() != x.size()) {
    throw Error("BranchTrace: replayed graph differs from the recorded one");
  }
  const auto& m = replay_->masks[next_mask_++];
  for (std::size_t i = 0; i < m.size(); ++i) divergences_ += m[i] != live[i];
  return m;
}

void BranchTrace::pool_choice(std::vector<int64_t>& choice) {
  if (!replay_) {
    own_.choices.push_back(choice);
    return;
  }
  if (next_choice_ >= replay_->choices.size() ||
      replay_->choices[next_choice_].size() != choice.size()) {
    throw Error("BranchTrace: replayed graph differs from the recorded one");
  }
  const auto& c = replay_->choices[next_choice_++];
  for (std::size_t i = 0; i < c.size(); ++i) divergences_ += c[i] != choice[i];
  choice = c;
}

Tensor5 make_result(const Shape& shape, std::vector<real> values, const char* op,
                    const std::vector<const Tensor5*>& inputs,
                    std::function<void(const TensorImpl& out)> backward_fn) {
  Tensor5 out(shape, std::move(values));
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto* in : inputs) needs = needs || (in && in->requires_grad());
  if (!needs) return out;
  auto node = std::make_shared<GradNode>();
  node->op = op;
  for (const auto* in : inputs) {
    if (in) node->inputs.push_back(in->impl());
  }
  node->backward = std::move(backward_fn);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
  return out;
}

Tensor5 make_result(const Shape& shape, std::vector<real> values, const char* op,
                    std::initializer_list<const Tensor5*> inputs,
                    std::function<void(const TensorImpl& out)> backward_fn) {
  return make_result(shape, std::move(values), op, std::vector<const Tensor5*>(inputs),
                     std::move(backward_fn));
}

GradTape GradTape::record(const Tensor5& root) {
  GradTape tape;
  std::unordered_set<const TensorImpl*> seen;
  // Iterative post-order DFS so deep graphs cannot overflow the stack.
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->grad_fn.get();
    if (node && next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    tape.order_.push_back(impl);
    stack.pop_back();
  }
  return tape;
}

void GradTape::run() const {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto& impl = *it;
    if (!impl->grad_fn) continue;
    if (!impl->grad.empty()) impl->grad_fn->backward(*impl);
    // Interior nodes never expose their gradient to callers.
    std::vector<real>().swap(impl->grad);
  }
}

void backward(const Tensor5& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a single-value loss, got " +
                     (loss.defined() ? loss.shape().str() : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;
  auto tape = GradTape::record(loss);
  loss.impl()->grad_buffer()[0] += 1.0f;
  tape.run();
}

uint64_t hash_values(std::span<const real> values) {
  uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace firenet
