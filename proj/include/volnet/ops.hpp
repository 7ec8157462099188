#pragma once

#include <span>
#include <vector>

#include "volnet/volume.hpp"

namespace volnet {

// Forward primitives. All convolutions use zero "same" padding and the
// convolution (not correlation) orientation:
//   out(t, p) = sum_{s, d} in(s, p - (d - K/2)) * w(t, s, d)
// and carry no bias.

template <typename Scalar>
Volume<Scalar> conv3d_full(const Volume<Scalar>& input, const Kernel4<Scalar>& kernel);

template <typename Scalar>
Volume<Scalar> conv_axis(const Volume<Scalar>& input, const AxisKernel<Scalar>& kernel);

template <typename Scalar>
Volume<Scalar> pointwise(const Volume<Scalar>& input, const PointwiseKernel<Scalar>& kernel);

template <typename Scalar>
Volume<Scalar> pointwise(const Volume<Scalar>& input, const MatrixRM<Scalar>& weights);

template <typename Scalar>
Volume<Scalar> relu(const Volume<Scalar>& input);

template <typename Scalar>
Volume<Scalar> concat_channels(std::span<const Volume<Scalar>* const> parts);

template <typename Scalar>
Volume<Scalar> concat_channels(const std::vector<Volume<Scalar>>& parts);

template <typename Scalar>
Volume<Scalar> slice_channels(const Volume<Scalar>& input, int first, int count);

template <typename Scalar>
Volume<Scalar> add(const Volume<Scalar>& a, const Volume<Scalar>& b);

/// out[c, r*x+dx, r*y+dy, r*z+dz] = in[c*r^3 + dx*r^2 + dy*r + dz, x, y, z]
template <typename Scalar>
Volume<Scalar> voxel_shuffle(const Volume<Scalar>& input, int r);

/// Copies the box [origin, origin + extent) of every channel.
template <typename Scalar>
Volume<Scalar> crop(const Volume<Scalar>& input, const Dims& origin, const Dims& extent);

/// Writes `patch` into `target` at `origin` (channel counts must match).
template <typename Scalar>
void paste(Volume<Scalar>& target, const Volume<Scalar>& patch, const Dims& origin);

/// Inverse permutation of voxel_shuffle.
template <typename Scalar>
Volume<Scalar> voxel_unshuffle(const Volume<Scalar>& input, int r);

// Vector-Jacobian products. Each returns the gradient w.r.t. the input
// volume; weight gradients are accumulated (+=) into `weight_grad` when it is
// non-null, which must then have the kernel's weight count.

template <typename Scalar>
Volume<Scalar> conv3d_full_vjp(const Volume<Scalar>& input, const Kernel4<Scalar>& kernel,
                               const Volume<Scalar>& upstream, VectorX<Scalar>* weight_grad);

template <typename Scalar>
Volume<Scalar> conv_axis_vjp(const Volume<Scalar>& input, const AxisKernel<Scalar>& kernel,
                             const Volume<Scalar>& upstream, VectorX<Scalar>* weight_grad);

template <typename Scalar>
Volume<Scalar> pointwise_vjp(const Volume<Scalar>& input, const PointwiseKernel<Scalar>& kernel,
                             const Volume<Scalar>& upstream, VectorX<Scalar>* weight_grad);

/// Gates `upstream` by the sign of the forward input (gradient 0 at input <= 0).
template <typename Scalar>
Volume<Scalar> relu_vjp(const Volume<Scalar>& input, const Volume<Scalar>& upstream);

template <typename Scalar>
Volume<Scalar> voxel_shuffle_vjp(const Volume<Scalar>& upstream, int r);

}  // namespace volnet
