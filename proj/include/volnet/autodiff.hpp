#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "volnet/ops.hpp"

namespace volnet {

/// Direct evaluation context: values are volumes, nothing is recorded.
/// Shares its interface with Tape so graph code is written once.
template <typename Scalar>
struct Eval {
  using Value = Volume<Scalar>;

  Value conv3d_full(const Value& x, const Kernel4<Scalar>& k) { return volnet::conv3d_full(x, k); }
  Value conv_axis(const Value& x, const AxisKernel<Scalar>& k) { return volnet::conv_axis(x, k); }
  Value pointwise(const Value& x, const PointwiseKernel<Scalar>& k) { return volnet::pointwise(x, k); }
  Value relu(const Value& x) { return volnet::relu(x); }
  Value add(const Value& a, const Value& b) { return volnet::add(a, b); }
  Value concat(const std::vector<const Value*>& parts) {
    return concat_channels<Scalar>(std::span<const Value* const>(parts));
  }
  Value voxel_shuffle(const Value& x, int r) { return volnet::voxel_shuffle(x, r); }
};

/// Reverse-mode recorder over the tensor primitives.
///
/// Every op appends a node holding its output and a closure that pushes the
/// node's gradient to its parents. Weight gradients are routed to buffers
/// registered with `bind_gradient`, keyed by the address of the weight vector;
/// unbound weights are treated as constants.
template <typename Scalar>
class Tape {
 public:
  using Value = int;
  using Vol = Volume<Scalar>;

  Value input(Vol v) { return push(std::move(v), nullptr); }

  void bind_gradient(const VectorX<Scalar>& weights, VectorX<Scalar>& grad) {
    sinks_[weights.data()] = &grad;
  }

  Value conv3d_full(Value x, const Kernel4<Scalar>& k) {
    VectorX<Scalar>* sink = sink_for(k.weights);
    return push(volnet::conv3d_full(value(x), k), [this, x, &k, sink](const Vol& g) {
      accumulate(x, conv3d_full_vjp(value(x), k, g, sink));
    });
  }

  Value conv_axis(Value x, const AxisKernel<Scalar>& k) {
    VectorX<Scalar>* sink = sink_for(k.weights);
    return push(volnet::conv_axis(value(x), k), [this, x, &k, sink](const Vol& g) {
      accumulate(x, conv_axis_vjp(value(x), k, g, sink));
    });
  }

  Value pointwise(Value x, const PointwiseKernel<Scalar>& k) {
    VectorX<Scalar>* sink = sink_for(k.weights);
    return push(volnet::pointwise(value(x), k), [this, x, &k, sink](const Vol& g) {
      accumulate(x, pointwise_vjp(value(x), k, g, sink));
    });
  }

  Value relu(Value x) {
    return push(volnet::relu(value(x)),
                [this, x](const Vol& g) { accumulate(x, relu_vjp(value(x), g)); });
  }

  Value add(Value a, Value b) {
    return push(volnet::add(value(a), value(b)), [this, a, b](const Vol& g) {
      accumulate(a, g);
      accumulate(b, g);
    });
  }

  Value concat(const std::vector<const Value*>& parts) {
    std::vector<Value> ids;
    std::vector<const Vol*> vols;
    for (const Value* p : parts) {
      ids.push_back(*p);
      vols.push_back(&value(*p));
    }
    return push(concat_channels<Scalar>(std::span<const Vol* const>(vols)), [this, ids](const Vol& g) {
      int first = 0;
      for (Value id : ids) {
        const int c = value(id).channels();
        accumulate(id, slice_channels(g, first, c));
        first += c;
      }
    });
  }

  Value voxel_shuffle(Value x, int r) {
    return push(volnet::voxel_shuffle(value(x), r),
                [this, x, r](const Vol& g) { accumulate(x, voxel_shuffle_vjp(g, r)); });
  }

  const Vol& value(Value v) const { return nodes_[static_cast<std::size_t>(v)].value; }

  /// Gradient of the seeded output w.r.t. `v`; empty when `v` was not reached.
  const Vol& grad(Value v) const { return nodes_[static_cast<std::size_t>(v)].grad; }

  /// Back-propagates `seed` (d loss / d output) through every recorded node.
  void backward(Value out, const Vol& seed) {
    if (!seed.same_shape(value(out))) throw ShapeError("Tape::backward: seed shape mismatch");
    accumulate(out, seed);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Vol value;
    Vol grad;
    std::function<void(const Vol&)> backward;
  };

  Value push(Vol v, std::function<void(const Vol&)> bw) {
    nodes_.push_back(Node{std::move(v), Vol{}, std::move(bw)});
    return static_cast<Value>(nodes_.size() - 1);
  }

  void accumulate(Value v, const Vol& g) {
    Vol& dst = nodes_[static_cast<std::size_t>(v)].grad;
    if (dst.empty()) {
      dst = g;
    } else {
      dst.matrix() += g.matrix();
    }
  }

  VectorX<Scalar>* sink_for(const VectorX<Scalar>& w) {
    auto it = sinks_.find(w.data());
    return it == sinks_.end() ? nullptr : it->second;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Scalar*, VectorX<Scalar>*> sinks_;
};

}  // namespace volnet
