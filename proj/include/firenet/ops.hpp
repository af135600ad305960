#pragma once

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "firenet/tensor.hpp"

namespace firenet::inline FIRENET_ABI {

enum class ElementwiseOp { Add, Sub, Mul, Scale, Sigmoid, Relu, Exp, Log };

/// Generic entry point. Binary ops take a same-shape tensor; Scale takes a
/// scalar (or a single-value tensor). No other broadcasting is performed.
Tensor5 elementwise(ElementwiseOp op, const Tensor5& a,
                    std::optional<std::variant<Tensor5, real>> b = std::nullopt);

Tensor5 add(const Tensor5& a, const Tensor5& b);
Tensor5 sub(const Tensor5& a, const Tensor5& b);
Tensor5 mul(const Tensor5& a, const Tensor5& b);
Tensor5 scale(const Tensor5& a, real s);
Tensor5 sigmoid(const Tensor5& a);
Tensor5 relu(const Tensor5& a);
Tensor5 exp(const Tensor5& a);
Tensor5 log(const Tensor5& a);

// Sum of all inputs; shapes must match.
Tensor5 add_n(std::span<const Tensor5> xs);

Tensor5 sum(const Tensor5& a);
Tensor5 mean(const Tensor5& a);

/// Softmax over the channel axis, per voxel.
Tensor5 softmax_channels(const Tensor5& logits);

/// Mean over voxels of -sum_c target * log(prob + eps). `target` must be one-hot
/// over channels.
Tensor5 cross_entropy(const Tensor5& prob, const Tensor5& target, real eps = 1e-7f);

/// One-hot encoding of an integer label volume (values in [0, classes)).
Tensor5 one_hot(std::span<const int> labels, const Extent3& extent, int classes);

Tensor5 concat_channels(std::span<const Tensor5> xs);

/// Zero-pads or crops at the high edge of each spatial axis to reach `target`.
/// No limit on the amount; callers enforce their own bounds.
Tensor5 pad_crop_high(const Tensor5& x, const Extent3& target);

/// Per-voxel argmax over channels (ties to the lowest channel).
std::vector<int> argmax_channels(const Tensor5& x, int64_t batch = 0);

}  // namespace firenet
