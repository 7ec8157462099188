#include "volnet/ops.hpp"

#include <algorithm>
#include <cstring>

namespace volnet {

std::string to_string(const Dims& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

namespace {

// Upper bound on im2col buffer elements per chunk.
constexpr Eigen::Index kColBudget = Eigen::Index{1} << 22;

struct Slab {
  int x0;
  int x1;
};

int slab_depth(const Dims& dims, Eigen::Index rows) {
  const Eigen::Index plane = static_cast<Eigen::Index>(dims[1]) * dims[2];
  const Eigen::Index want = std::clamp<Eigen::Index>(kColBudget / std::max<Eigen::Index>(rows, 1),
                                                     plane, Eigen::Index{8192});
  return static_cast<int>(std::max<Eigen::Index>(1, want / plane));
}

// Fills col(row, voxel) = in(s, p - (d - half)) for rows ordered (s, dx, dy, dz).
template <typename Scalar>
void im2col(const Volume<Scalar>& in, const Dims& k, Slab slab, MatrixRM<Scalar>& col) {
  const Dims& n = in.dims();
  const int hx = k[0] / 2, hy = k[1] / 2, hz = k[2] / 2;
  const Eigen::Index ncols = static_cast<Eigen::Index>(slab.x1 - slab.x0) * n[1] * n[2];
  const Eigen::Index nrows = static_cast<Eigen::Index>(in.channels()) * k[0] * k[1] * k[2];
  col.resize(nrows, ncols);
  Eigen::Index row = 0;
  for (int s = 0; s < in.channels(); ++s) {
    const Scalar* src = in.channel_data(s);
    for (int a = 0; a < k[0]; ++a) {
      const int dx = hx - a;
      for (int b = 0; b < k[1]; ++b) {
        const int dy = hy - b;
        for (int c = 0; c < k[2]; ++c, ++row) {
          const int dz = hz - c;
          Scalar* dst = col.row(row).data();
          const int z0 = std::max(0, -dz);
          const int z1 = std::min(n[2], n[2] - dz);
          for (int x = slab.x0; x < slab.x1; ++x) {
            const int xi = x + dx;
            for (int y = 0; y < n[1]; ++y, dst += n[2]) {
              const int yi = y + dy;
              if (xi < 0 || xi >= n[0] || yi < 0 || yi >= n[1] || z0 >= z1) {
                std::fill(dst, dst + n[2], Scalar(0));
                continue;
              }
              const Scalar* line = src + (static_cast<std::size_t>(xi) * n[1] + yi) * n[2];
              std::fill(dst, dst + z0, Scalar(0));
              for (int z = z0; z < z1; ++z) dst[z] = line[z + dz];
              std::fill(dst + z1, dst + n[2], Scalar(0));
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds col back into `grad`.
template <typename Scalar>
void col2im_add(const MatrixRM<Scalar>& col, const Dims& k, Slab slab, Volume<Scalar>& grad) {
  const Dims& n = grad.dims();
  const int hx = k[0] / 2, hy = k[1] / 2, hz = k[2] / 2;
  Eigen::Index row = 0;
  for (int s = 0; s < grad.channels(); ++s) {
    Scalar* dst_base = grad.channel_data(s);
    for (int a = 0; a < k[0]; ++a) {
      const int dx = hx - a;
      for (int b = 0; b < k[1]; ++b) {
        const int dy = hy - b;
        for (int c = 0; c < k[2]; ++c, ++row) {
          const int dz = hz - c;
          const Scalar* src = col.row(row).data();
          const int z0 = std::max(0, -dz);
          const int z1 = std::min(n[2], n[2] - dz);
          for (int x = slab.x0; x < slab.x1; ++x) {
            const int xi = x + dx;
            for (int y = 0; y < n[1]; ++y, src += n[2]) {
              const int yi = y + dy;
              if (xi < 0 || xi >= n[0] || yi < 0 || yi >= n[1]) continue;
              Scalar* line = dst_base + (static_cast<std::size_t>(xi) * n[1] + yi) * n[2];
              for (int z = z0; z < z1; ++z) line[z + dz] += src[z];
            }
          }
        }
      }
    }
  }
}

// Cross-channel convolution with weights [t][s][kx][ky][kz].
template <typename Scalar>
Volume<Scalar> conv_dense(const Volume<Scalar>& in, const Scalar* w, int out_channels, const Dims& k) {
  const Eigen::Index rows = static_cast<Eigen::Index>(in.channels()) * k[0] * k[1] * k[2];
  Eigen::Map<const MatrixRM<Scalar>> weights(w, out_channels, rows);
  Volume<Scalar> out(out_channels, in.dims());
  if (k == Dims{1, 1, 1}) {
    out.matrix().noalias() = weights * in.matrix();
    return out;
  }
  const Dims& n = in.dims();
  const Eigen::Index plane = static_cast<Eigen::Index>(n[1]) * n[2];
  const int depth = slab_depth(n, rows);
  MatrixRM<Scalar> col;
  for (int x0 = 0; x0 < n[0]; x0 += depth) {
    const Slab slab{x0, std::min(n[0], x0 + depth)};
    im2col(in, k, slab, col);
    out.matrix().middleCols(x0 * plane, col.cols()).noalias() = weights * col;
  }
  return out;
}

template <typename Scalar>
Volume<Scalar> conv_dense_vjp(const Volume<Scalar>& in, const Scalar* w, int out_channels,
                              const Dims& k, const Volume<Scalar>& up, Scalar* wgrad) {
  const Eigen::Index rows = static_cast<Eigen::Index>(in.channels()) * k[0] * k[1] * k[2];
  Eigen::Map<const MatrixRM<Scalar>> weights(w, out_channels, rows);
  Volume<Scalar> grad(in.channels(), in.dims());
  if (k == Dims{1, 1, 1}) {
    grad.matrix().noalias() = weights.transpose() * up.matrix();
    if (wgrad != nullptr) {
      Eigen::Map<MatrixRM<Scalar>> g(wgrad, out_channels, rows);
      g.noalias() += up.matrix() * in.matrix().transpose();
    }
    return grad;
  }
  const Dims& n = in.dims();
  const Eigen::Index plane = static_cast<Eigen::Index>(n[1]) * n[2];
  const int depth = slab_depth(n, rows);
  MatrixRM<Scalar> col;
  MatrixRM<Scalar> dcol;
  for (int x0 = 0; x0 < n[0]; x0 += depth) {
    const Slab slab{x0, std::min(n[0], x0 + depth)};
    const Eigen::Index ncols = static_cast<Eigen::Index>(slab.x1 - slab.x0) * plane;
    const auto up_block = up.matrix().middleCols(x0 * plane, ncols);
    if (wgrad != nullptr) {
      im2col(in, k, slab, col);
      Eigen::Map<MatrixRM<Scalar>> g(wgrad, out_channels, rows);
      g.noalias() += up_block * col.transpose();
    }
    dcol.noalias() = weights.transpose() * up_block;
    col2im_add(dcol, k, slab, grad);
  }
  return grad;
}

// Per-channel convolution with weights [c][kx][ky][kz].
template <typename Scalar>
Volume<Scalar> conv_depthwise(const Volume<Scalar>& in, const Scalar* w, const Dims& k) {
  const Dims& n = in.dims();
  const int hx = k[0] / 2, hy = k[1] / 2, hz = k[2] / 2;
  const int taps = k[0] * k[1] * k[2];
  Volume<Scalar> out(in.channels(), n);
  for (int ch = 0; ch < in.channels(); ++ch) {
    const Scalar* src = in.channel_data(ch);
    Scalar* dst = out.channel_data(ch);
    const Scalar* wc = w + static_cast<std::size_t>(ch) * taps;
    for (int a = 0; a < k[0]; ++a) {
      const int dx = hx - a;
      for (int b = 0; b < k[1]; ++b) {
        const int dy = hy - b;
        for (int c = 0; c < k[2]; ++c) {
          const int dz = hz - c;
          const Scalar wv = wc[(a * k[1] + b) * k[2] + c];
          const int z0 = std::max(0, -dz), z1 = std::min(n[2], n[2] - dz);
          for (int x = std::max(0, -dx); x < std::min(n[0], n[0] - dx); ++x) {
            for (int y = std::max(0, -dy); y < std::min(n[1], n[1] - dy); ++y) {
              Scalar* o = dst + (static_cast<std::size_t>(x) * n[1] + y) * n[2];
              const Scalar* i = src + (static_cast<std::size_t>(x + dx) * n[1] + (y + dy)) * n[2] + dz;
              for (int z = z0; z < z1; ++z) o[z] += wv * i[z];
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Volume<Scalar> conv_depthwise_vjp(const Volume<Scalar>& in, const Scalar* w, const Dims& k,
                                  const Volume<Scalar>& up, Scalar* wgrad) {
  const Dims& n = in.dims();
  const int hx = k[0] / 2, hy = k[1] / 2, hz = k[2] / 2;
  const int taps = k[0] * k[1] * k[2];
  Volume<Scalar> grad(in.channels(), n);
  for (int ch = 0; ch < in.channels(); ++ch) {
    const Scalar* src = in.channel_data(ch);
    const Scalar* g_up = up.channel_data(ch);
    Scalar* g_in = grad.channel_data(ch);
    const Scalar* wc = w + static_cast<std::size_t>(ch) * taps;
    for (int a = 0; a < k[0]; ++a) {
      const int dx = hx - a;
      for (int b = 0; b < k[1]; ++b) {
        const int dy = hy - b;
        for (int c = 0; c < k[2]; ++c) {
          const int dz = hz - c;
          const int tap = (a * k[1] + b) * k[2] + c;
          const Scalar wv = wc[tap];
          Scalar acc = 0;
          const int z0 = std::max(0, -dz), z1 = std::min(n[2], n[2] - dz);
          for (int x = std::max(0, -dx); x < std::min(n[0], n[0] - dx); ++x) {
            for (int y = std::max(0, -dy); y < std::min(n[1], n[1] - dy); ++y) {
              const std::size_t o = (static_cast<std::size_t>(x) * n[1] + y) * n[2];
              const std::size_t i = (static_cast<std::size_t>(x + dx) * n[1] + (y + dy)) * n[2] + dz;
              for (int z = z0; z < z1; ++z) {
                g_in[i + z] += wv * g_up[o + z];
                acc += g_up[o + z] * src[i + z];
              }
            }
          }
          if (wgrad != nullptr) wgrad[static_cast<std::size_t>(ch) * taps + tap] += acc;
        }
      }
    }
  }
  return grad;
}

Dims axis_taps(Axis axis, int taps) {
  Dims k{1, 1, 1};
  k[static_cast<std::size_t>(axis)] = taps;
  return k;
}

template <typename Scalar>
void check_channels(const Volume<Scalar>& input, int expected, const char* op) {
  if (input.channels() != expected) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(input.channels()) +
                     " channels, kernel expects " + std::to_string(expected));
  }
}

template <typename Scalar>
void check_grad(const Volume<Scalar>& up, int channels, const Dims& dims, const char* op) {
  if (up.channels() != channels || up.dims() != dims) {
    throw ShapeError(std::string(op) + ": upstream gradient shape mismatch");
  }
}

template <typename Scalar>
void check_weight_grad(const VectorX<Scalar>* g, Eigen::Index n, const char* op) {
  if (g != nullptr && g->size() != n) {
    throw ShapeError(std::string(op) + ": weight gradient buffer has wrong size");
  }
}

}  // namespace

template <typename Scalar>
Volume<Scalar> conv3d_full(const Volume<Scalar>& input, const Kernel4<Scalar>& kernel) {
  check_channels(input, kernel.input_channels(), "conv3d_full");
  if (kernel.depthwise) return conv_depthwise(input, kernel.weights.data(), kernel.taps);
  return conv_dense(input, kernel.weights.data(), kernel.out_channels, kernel.taps);
}

template <typename Scalar>
Volume<Scalar> conv_axis(const Volume<Scalar>& input, const AxisKernel<Scalar>& kernel) {
  check_channels(input, kernel.input_channels(), "conv_axis");
  const Dims k = axis_taps(kernel.axis, kernel.taps);
  if (kernel.depthwise) return conv_depthwise(input, kernel.weights.data(), k);
  return conv_dense(input, kernel.weights.data(), kernel.out_channels, k);
}

template <typename Scalar>
Volume<Scalar> pointwise(const Volume<Scalar>& input, const PointwiseKernel<Scalar>& kernel) {
  check_channels(input, kernel.in_channels, "pointwise");
  Volume<Scalar> out(kernel.out_channels, input.dims());
  out.matrix().noalias() = kernel.matrix() * input.matrix();
  return out;
}

template <typename Scalar>
Volume<Scalar> pointwise(const Volume<Scalar>& input, const MatrixRM<Scalar>& weights) {
  check_channels(input, static_cast<int>(weights.cols()), "pointwise");
  Volume<Scalar> out(static_cast<int>(weights.rows()), input.dims());
  out.matrix().noalias() = weights * input.matrix();
  return out;
}

template <typename Scalar>
Volume<Scalar> relu(const Volume<Scalar>& input) {
  Volume<Scalar> out = input;
  out.matrix() = input.matrix().cwiseMax(Scalar(0));
  return out;
}

template <typename Scalar>
Volume<Scalar> concat_channels(std::span<const Volume<Scalar>* const> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  int channels = 0;
  for (const auto* p : parts) {
    if (p->dims() != parts.front()->dims()) {
      throw ShapeError("concat_channels: spatial mismatch " + to_string(p->dims()) + " vs " +
                       to_string(parts.front()->dims()));
    }
    channels += p->channels();
  }
  Volume<Scalar> out(channels, parts.front()->dims());
  Eigen::Index row = 0;
  for (const auto* p : parts) {
    out.matrix().middleRows(row, p->channels()) = p->matrix();
    row += p->channels();
  }
  return out;
}

template <typename Scalar>
Volume<Scalar> concat_channels(const std::vector<Volume<Scalar>>& parts) {
  std::vector<const Volume<Scalar>*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_channels<Scalar>(std::span<const Volume<Scalar>* const>(ptrs));
}

template <typename Scalar>
Volume<Scalar> slice_channels(const Volume<Scalar>& input, int first, int count) {
  if (first < 0 || count <= 0 || first + count > input.channels()) {
    throw ShapeError("slice_channels: range out of bounds");
  }
  Volume<Scalar> out(count, input.dims());
  out.matrix() = input.matrix().middleRows(first, count);
  return out;
}

template <typename Scalar>
Volume<Scalar> add(const Volume<Scalar>& a, const Volume<Scalar>& b) {
  if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
  Volume<Scalar> out = a;
  out.matrix() += b.matrix();
  return out;
}

template <typename Scalar>
Volume<Scalar> crop(const Volume<Scalar>& input, const Dims& origin, const Dims& extent) {
  const Dims& n = input.dims();
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || extent[a] <= 0 || origin[a] + extent[a] > n[a]) {
      throw ShapeError("crop: box outside volume " + to_string(n));
    }
  }
  Volume<Scalar> out(input.channels(), extent);
  for (int c = 0; c < input.channels(); ++c) {
    for (int x = 0; x < extent[0]; ++x) {
      for (int y = 0; y < extent[1]; ++y) {
        const Scalar* src = input.data() + input.index(c, origin[0] + x, origin[1] + y, origin[2]);
        std::copy(src, src + extent[2], &out(c, x, y, 0));
      }
    }
  }
  return out;
}

template <typename Scalar>
void paste(Volume<Scalar>& target, const Volume<Scalar>& patch, const Dims& origin) {
  const Dims& n = target.dims();
  const Dims& e = patch.dims();
  if (patch.channels() != target.channels()) throw ShapeError("paste: channel mismatch");
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || origin[a] + e[a] > n[a]) throw ShapeError("paste: box outside volume");
  }
  for (int c = 0; c < patch.channels(); ++c) {
    for (int x = 0; x < e[0]; ++x) {
      for (int y = 0; y < e[1]; ++y) {
        const Scalar* src = patch.data() + patch.index(c, x, y, 0);
        std::copy(src, src + e[2], &target(c, origin[0] + x, origin[1] + y, origin[2]));
      }
    }
  }
}

template <typename Scalar>
Volume<Scalar> voxel_shuffle(const Volume<Scalar>& input, int r) {
  const int r3 = r * r * r;
  if (r <= 0 || input.channels() % r3 != 0) {
    throw ShapeError("voxel_shuffle: channels " + std::to_string(input.channels()) +
                     " not divisible by r^3 = " + std::to_string(r3));
  }
  const Dims& n = input.dims();
  Volume<Scalar> out(input.channels() / r3, Dims{n[0] * r, n[1] * r, n[2] * r});
  for (int c = 0; c < out.channels(); ++c) {
    for (int dx = 0; dx < r; ++dx) {
      for (int dy = 0; dy < r; ++dy) {
        for (int dz = 0; dz < r; ++dz) {
          const int ci = c * r3 + (dx * r + dy) * r + dz;
          for (int x = 0; x < n[0]; ++x) {
            for (int y = 0; y < n[1]; ++y) {
              for (int z = 0; z < n[2]; ++z) {
                out(c, r * x + dx, r * y + dy, r * z + dz) = input(ci, x, y, z);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Volume<Scalar> voxel_unshuffle(const Volume<Scalar>& input, int r) {
  const Dims& n = input.dims();
  if (r <= 0 || n[0] % r != 0 || n[1] % r != 0 || n[2] % r != 0) {
    throw ShapeError("voxel_unshuffle: dims " + to_string(n) + " not divisible by r");
  }
  const int r3 = r * r * r;
  Volume<Scalar> out(input.channels() * r3, Dims{n[0] / r, n[1] / r, n[2] / r});
  const Dims& m = out.dims();
  for (int c = 0; c < input.channels(); ++c) {
    for (int dx = 0; dx < r; ++dx) {
      for (int dy = 0; dy < r; ++dy) {
        for (int dz = 0; dz < r; ++dz) {
          const int co = c * r3 + (dx * r + dy) * r + dz;
          for (int x = 0; x < m[0]; ++x) {
            for (int y = 0; y < m[1]; ++y) {
              for (int z = 0; z < m[2]; ++z) {
                out(co, x, y, z) = input(c, r * x + dx, r * y + dy, r * z + dz);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Volume<Scalar> conv3d_full_vjp(const Volume<Scalar>& input, const Kernel4<Scalar>& kernel,
                               const Volume<Scalar>& upstream, VectorX<Scalar>* weight_grad) {
  check_channels(input, kernel.input_channels(), "conv3d_full_vjp");
  check_grad(upstream, kernel.out_channels, input.dims(), "conv3d_full_vjp");
  check_weight_grad(weight_grad, kernel.weights.size(), "conv3d_full_vjp");
  Scalar* g = weight_grad ? weight_grad->data() : nullptr;
  if (kernel.depthwise) return conv_depthwise_vjp(input, kernel.weights.data(), kernel.taps, upstream, g);
  return conv_dense_vjp(input, kernel.weights.data(), kernel.out_channels, kernel.taps, upstream, g);
}

template <typename Scalar>
Volume<Scalar> conv_axis_vjp(const Volume<Scalar>& input, const AxisKernel<Scalar>& kernel,
                             const Volume<Scalar>& upstream, VectorX<Scalar>* weight_grad) {
  check_channels(input, kernel.input_channels(), "conv_axis_vjp");
  check_grad(upstream, kernel.out_channels, input.dims(), "conv_axis_vjp");
  check_weight_grad(weight_grad, kernel.weights.size(), "conv_axis_vjp");
  Scalar* g = weight_grad ? weight_grad->data() : nullptr;
  const Dims k = axis_taps(kernel.axis, kernel.taps);
  if (kernel.depthwise) return conv_depthwise_vjp(input, kernel.weights.data(), k, upstream, g);
  return conv_dense_vjp(input, kernel.weights.data(), kernel.out_channels, k, upstream, g);
}

template <typename Scalar>
Volume<Scalar> pointwise_vjp(const Volume<Scalar>& input, const PointwiseKernel<Scalar>& kernel,
                             const Volume<Scalar>& upstream, VectorX<Scalar>* weight_grad) {
  check_channels(input, kernel.in_channels, "pointwise_vjp");
  check_grad(upstream, kernel.out_channels, input.dims(), "pointwise_vjp");
  check_weight_grad(weight_grad, kernel.weights.size(), "pointwise_vjp");
  Volume<Scalar> grad(input.channels(), input.dims());
  grad.matrix().noalias() = kernel.matrix().transpose() * upstream.matrix();
  if (weight_grad != nullptr) {
    Eigen::Map<MatrixRM<Scalar>> g(weight_grad->data(), kernel.out_channels, kernel.in_channels);
    g.noalias() += upstream.matrix() * input.matrix().transpose();
  }
  return grad;
}

template <typename Scalar>
Volume<Scalar> relu_vjp(const Volume<Scalar>& input, const Volume<Scalar>& upstream) {
  if (!input.same_shape(upstream)) throw ShapeError("relu_vjp: shape mismatch");
  Volume<Scalar> grad = upstream;
  grad.matrix() = (input.matrix().array() > Scalar(0)).select(upstream.matrix(), Scalar(0));
  return grad;
}

template <typename Scalar>
Volume<Scalar> voxel_shuffle_vjp(const Volume<Scalar>& upstream, int r) {
  return voxel_unshuffle(upstream, r);
}

#define VOLNET_INSTANTIATE_OPS(S)                                                              \
  template Volume<S> conv3d_full(const Volume<S>&, const Kernel4<S>&);                        \
  template Volume<S> conv_axis(const Volume<S>&, const AxisKernel<S>&);                       \
  template Volume<S> pointwise(const Volume<S>&, const PointwiseKernel<S>&);                  \
  template Volume<S> pointwise(const Volume<S>&, const MatrixRM<S>&);                         \
  template Volume<S> relu(const Volume<S>&);                                                  \
  template Volume<S> concat_channels(std::span<const Volume<S>* const>);                      \
  template Volume<S> concat_channels(const std::vector<Volume<S>>&);                          \
  template Volume<S> slice_channels(const Volume<S>&, int, int);                              \
  template Volume<S> add(const Volume<S>&, const Volume<S>&);                                 \
  template Volume<S> voxel_shuffle(const Volume<S>&, int);                                    \
  template Volume<S> crop(const Volume<S>&, const Dims&, const Dims&);                        \
  template void paste(Volume<S>&, const Volume<S>&, const Dims&);                             \
  template Volume<S> voxel_unshuffle(const Volume<S>&, int);                                  \
  template Volume<S> conv3d_full_vjp(const Volume<S>&, const Kernel4<S>&, const Volume<S>&,   \
                                     VectorX<S>*);                                            \
  template Volume<S> conv_axis_vjp(const Volume<S>&, const AxisKernel<S>&, const Volume<S>&,  \
                                   VectorX<S>*);                                              \
  template Volume<S> pointwise_vjp(const Volume<S>&, const PointwiseKernel<S>&,               \
                                   const Volume<S>&, VectorX<S>*);                            \
  template Volume<S> relu_vjp(const Volume<S>&, const Volume<S>&);                            \
  template Volume<S> voxel_shuffle_vjp(const Volume<S>&, int);

VOLNET_INSTANTIATE_OPS(float)
VOLNET_INSTANTIATE_OPS(double)

}  // namespace volnet
