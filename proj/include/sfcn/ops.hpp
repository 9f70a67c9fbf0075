#pragma once

#include <Eigen/Core>

#include <cmath>
#include <utility>
#include <vector>

#include "sfcn/tape.hpp"
#include "sfcn/tensor.hpp"

// Differentiable operations over TensorT. Each op computes its output
// eagerly and records one backward step on the tape. Cross-correlation
// semantics throughout; conv2d_transpose is the exact adjoint of the
// matching strided convolution.

namespace sfcn {
namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// col is (Ci*k*k) x (Ho*Wo), column-major; column = output pixel.
template <typename S>
void im2col(const S* in, int ci_n, int h, int w, int k, int stride, int pad, int ho_n, int wo_n,
            S* col) {
    const int ckk = ci_n * k * k;
    for (int ho = 0; ho < ho_n; ++ho) {
        for (int wo = 0; wo < wo_n; ++wo) {
            S* colp = col + static_cast<std::ptrdiff_t>(ho * wo_n + wo) * ckk;
            const int hi0 = ho * stride - pad;
            const int wi0 = wo * stride - pad;
            for (int ci = 0; ci < ci_n; ++ci) {
                for (int kh = 0; kh < k; ++kh) {
                    const int hi = hi0 + kh;
                    const S* in_row = in + (static_cast<std::ptrdiff_t>(ci) * h + hi) * w;
                    S* colq = colp + (ci * k + kh) * k;
                    if (hi < 0 || hi >= h) {
                        for (int kw = 0; kw < k; ++kw) colq[kw] = S(0);
                        continue;
                    }
                    for (int kw = 0; kw < k; ++kw) {
                        const int wi = wi0 + kw;
                        colq[kw] = (wi >= 0 && wi < w) ? in_row[wi] : S(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds columns back into the image buffer.
template <typename S>
void col2im_add(const S* col, int ci_n, int h, int w, int k, int stride, int pad, int ho_n,
                int wo_n, S* img) {
    const int ckk = ci_n * k * k;
    for (int ho = 0; ho < ho_n; ++ho) {
        for (int wo = 0; wo < wo_n; ++wo) {
            const S* colp = col + static_cast<std::ptrdiff_t>(ho * wo_n + wo) * ckk;
            const int hi0 = ho * stride - pad;
            const int wi0 = wo * stride - pad;
            for (int ci = 0; ci < ci_n; ++ci) {
                for (int kh = 0; kh < k; ++kh) {
                    const int hi = hi0 + kh;
                    if (hi < 0 || hi >= h) continue;
                    S* img_row = img + (static_cast<std::ptrdiff_t>(ci) * h + hi) * w;
                    const S* colq = colp + (ci * k + kh) * k;
                    for (int kw = 0; kw < k; ++kw) {
                        const int wi = wi0 + kw;
                        if (wi >= 0 && wi < w) img_row[wi] += colq[kw];
                    }
                }
            }
        }
    }
}

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename S>
using RowMatMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstRowMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// y (Co x npix, row-major over the output tensor) = kernel * col [+ bias].
template <typename S>
void conv_apply_kernel(const S* kernel, int co_n, int ckk, const S* col, int npix, S* out,
                       const S* bias, bool accumulate) {
    ConstRowMatMap<S> k_map(kernel, co_n, ckk);
    ConstMatMap<S> col_map(col, ckk, npix);
    RowMatMap<S> out_map(out, co_n, npix);
    if (accumulate)
        out_map.noalias() += k_map * col_map;
    else
        out_map.noalias() = k_map * col_map;
    if (bias) {
        for (int co = 0; co < co_n; ++co) out_map.row(co).array() += bias[co];
    }
}

// gcol (ckk x npix) = kernel^T * gout.
template <typename S>
void conv_backward_to_col(const S* kernel, int co_n, int ckk, const S* gout, int npix, S* gcol) {
    ConstRowMatMap<S> k_map(kernel, co_n, ckk);
    ConstRowMatMap<S> gout_map(gout, co_n, npix);
    MatMap<S> gcol_map(gcol, ckk, npix);
    gcol_map.noalias() = k_map.transpose() * gout_map;
}

// gkernel (Co x ckk) += gout * col^T.
template <typename S>
void conv_kernel_grad(const S* gout, int co_n, const S* col, int ckk, int npix, S* gkernel) {
    ConstRowMatMap<S> gout_map(gout, co_n, npix);
    ConstMatMap<S> col_map(col, ckk, npix);
    RowMatMap<S> gk_map(gkernel, co_n, ckk);
    gk_map.noalias() += gout_map * col_map.transpose();
}

}  // namespace detail

namespace ops {

constexpr double kLogClamp = 1e-12;

template <typename S>
TensorT<S> conv2d(TapeT<S>& tape, const TensorT<S>& input, const TensorT<S>& kernel,
                  const TensorT<S>& bias, int stride, int padding) {
    if (input.rank() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
    if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3))
        throw std::invalid_argument("conv2d: kernel must be [Co,Ci,k,k]");
    const int ci_n = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co_n = kernel.dim(0), k = kernel.dim(2);
    if (kernel.dim(1) != ci_n)
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                    " input channels, got " + std::to_string(ci_n));
    if (k != 1 && k != 3) throw std::invalid_argument("conv2d: kernel size must be 1 or 3");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
    if (bias.rank() != 1 || bias.dim(0) != co_n)
        throw std::invalid_argument("conv2d: bias must be [Co]");
    const int ho_n = detail::conv_out_dim(h, k, stride, padding);
    const int wo_n = detail::conv_out_dim(w, k, stride, padding);
    if (ho_n != (h + stride - 1) / stride || wo_n != (w + stride - 1) / stride)
        throw std::invalid_argument("conv2d: padding does not give same-geometry output");

    const int ckk = ci_n * k * k;
    const int npix = ho_n * wo_n;
    bool needs_grad = input.requires_grad() || kernel.requires_grad() || bias.requires_grad();
    TensorT<S> out({co_n, ho_n, wo_n}, needs_grad);

    std::vector<S> col(static_cast<std::size_t>(ckk) * npix);
    detail::im2col(input.data(), ci_n, h, w, k, stride, padding, ho_n, wo_n, col.data());
    detail::conv_apply_kernel(kernel.data(), co_n, ckk, col.data(), npix, out.data(), bias.data(),
                              false);

    if (needs_grad) {
        TensorT<S> in_h = input, k_h = kernel, b_h = bias, out_h = out;
        tape.record([in_h, k_h, b_h, out_h, stride, padding, ci_n, h, w, co_n, k, ho_n, wo_n,
                     ckk, npix]() mutable {
            const S* gout = out_h.grad().data();
            if (in_h.requires_grad()) {
                std::vector<S> gcol(static_cast<std::size_t>(ckk) * npix);
                detail::conv_backward_to_col(k_h.data(), co_n, ckk, gout, npix, gcol.data());
                detail::col2im_add(gcol.data(), ci_n, h, w, k, stride, padding, ho_n, wo_n,
                                   in_h.grad().data());
            }
            if (k_h.requires_grad()) {
                std::vector<S> col(static_cast<std::size_t>(ckk) * npix);
                detail::im2col(in_h.data(), ci_n, h, w, k, stride, padding, ho_n, wo_n,
                               col.data());
                detail::conv_kernel_grad(gout, co_n, col.data(), ckk, npix, k_h.grad().data());
            }
            if (b_h.requires_grad()) {
                for (int co = 0; co < co_n; ++co)
                    b_h.grad()[co] += out_h.grad().segment(static_cast<Eigen::Index>(co) * npix,
                                                           npix).sum();
            }
        });
    }
    return out;
}

// Transposed convolution: the adjoint of a stride-s convolution with a
// (2s x 2s) kernel and same-geometry padding s/2. Kernel layout [Ci,Co,k,k].
// Output is exactly [Co, s*H, s*W].
template <typename S>
TensorT<S> conv2d_transpose(TapeT<S>& tape, const TensorT<S>& input, const TensorT<S>& kernel,
                            int stride) {
    if (stride != 2 && stride != 4)
        throw std::invalid_argument("conv2d_transpose: stride must be 2 or 4");
    if (input.rank() != 3) throw std::invalid_argument("conv2d_transpose: input must be [C,H,W]");
    const int k = 2 * stride;
    if (kernel.rank() != 4 || kernel.dim(2) != k || kernel.dim(3) != k)
        throw std::invalid_argument("conv2d_transpose: kernel must be [Ci,Co," +
                                    std::to_string(k) + "," + std::to_string(k) + "]");
    const int ci_n = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (kernel.dim(0) != ci_n)
        throw std::invalid_argument("conv2d_transpose: kernel expects " +
                                    std::to_string(kernel.dim(0)) + " input channels, got " +
                                    std::to_string(ci_n));
    const int co_n = kernel.dim(1);
    const int pad = stride / 2;
    const int oh = stride * h, ow = stride * w;
    const int ckk = co_n * k * k;
    const int npix = h * w;

    bool needs_grad = input.requires_grad() || kernel.requires_grad();
    TensorT<S> out({co_n, oh, ow}, needs_grad);

    std::vector<S> gcol(static_cast<std::size_t>(ckk) * npix);
    detail::conv_backward_to_col(kernel.data(), ci_n, ckk, input.data(), npix, gcol.data());
    detail::col2im_add(gcol.data(), co_n, oh, ow, k, stride, pad, h, w, out.data());

    if (needs_grad) {
        TensorT<S> in_h = input, k_h = kernel, out_h = out;
        tape.record([in_h, k_h, out_h, stride, pad, ci_n, co_n, h, w, oh, ow, k, ckk,
                     npix]() mutable {
            std::vector<S> col(static_cast<std::size_t>(ckk) * npix);
            detail::im2col(out_h.grad().data(), co_n, oh, ow, k, stride, pad, h, w, col.data());
            if (in_h.requires_grad()) {
                detail::conv_apply_kernel(k_h.data(), ci_n, ckk, col.data(), npix,
                                          in_h.grad().data(), static_cast<const S*>(nullptr),
                                          true);
            }
            if (k_h.requires_grad()) {
                detail::conv_kernel_grad(in_h.data(), ci_n, col.data(), ckk, npix,
                                         k_h.grad().data());
            }
        });
    }
    return out;
}

// Spatial batch normalization over each channel's H*W elements. Train mode
// uses batch statistics (biased variance) and updates the running buffers
// in place with the given momentum; eval mode normalizes with the running
// statistics and leaves them untouched.
template <typename S>
TensorT<S> batch_norm(TapeT<S>& tape, const TensorT<S>& input, const TensorT<S>& scale,
                      const TensorT<S>& shift, TensorT<S>& running_mean, TensorT<S>& running_var,
                      bool train, S eps = S(1e-5), S momentum = S(0.9)) {
    if (input.rank() != 3) throw std::invalid_argument("batch_norm: input must be [C,H,W]");
    const int c_n = input.dim(0);
    const Eigen::Index m = static_cast<Eigen::Index>(input.dim(1)) * input.dim(2);
    if (scale.size() != c_n || shift.size() != c_n || running_mean.size() != c_n ||
        running_var.size() != c_n)
        throw std::invalid_argument("batch_norm: per-channel parameter size mismatch");
    if (train && m < 2)
        throw std::invalid_argument("batch_norm: train mode needs >= 2 elements per channel");

    bool needs_grad = input.requires_grad() || scale.requires_grad() || shift.requires_grad();
    TensorT<S> out(input.shape(), needs_grad);

    using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;
    Vec mean(c_n), inv_std(c_n);
    for (int c = 0; c < c_n; ++c) {
        auto x = input.value().segment(static_cast<Eigen::Index>(c) * m, m);
        S mu, var;
        if (train) {
            mu = x.mean();
            var = (x - mu).square().mean();
            running_mean.value()[c] = momentum * running_mean.value()[c] + (S(1) - momentum) * mu;
            running_var.value()[c] = momentum * running_var.value()[c] + (S(1) - momentum) * var;
        } else {
            mu = running_mean.value()[c];
            var = running_var.value()[c];
        }
        mean[c] = mu;
        inv_std[c] = S(1) / std::sqrt(var + eps);
        out.value().segment(static_cast<Eigen::Index>(c) * m, m) =
            (x - mu) * inv_std[c] * scale.value()[c] + shift.value()[c];
    }

    if (needs_grad) {
        TensorT<S> in_h = input, sc_h = scale, sh_h = shift, out_h = out;
        tape.record([in_h, sc_h, sh_h, out_h, mean, inv_std, c_n, m, train]() mutable {
            for (int c = 0; c < c_n; ++c) {
                const Eigen::Index o = static_cast<Eigen::Index>(c) * m;
                auto g = out_h.grad().segment(o, m);
                auto x = in_h.value().segment(o, m);
                Eigen::Array<S, Eigen::Dynamic, 1> xhat = (x - mean[c]) * inv_std[c];
                if (sh_h.requires_grad()) sh_h.grad()[c] += g.sum();
                if (sc_h.requires_grad()) sc_h.grad()[c] += (g * xhat).sum();
                if (in_h.requires_grad()) {
                    const S a = sc_h.value()[c] * inv_std[c];
                    if (train) {
                        const S g_mean = g.mean();
                        const S gx_mean = (g * xhat).mean();
                        in_h.grad().segment(o, m) += a * (g - g_mean - xhat * gx_mean);
                    } else {
                        in_h.grad().segment(o, m) += a * g;
                    }
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> relu(TapeT<S>& tape, const TensorT<S>& input) {
    TensorT<S> out(input.shape(), input.requires_grad());
    out.value() = input.value().max(S(0));
    if (input.requires_grad()) {
        TensorT<S> in_h = input, out_h = out;
        tape.record([in_h, out_h]() mutable {
            // subgradient 0 at the kink
            in_h.grad() += (in_h.value() > S(0)).template cast<S>() * out_h.grad();
        });
    }
    return out;
}

// Per-pixel softmax across channels, max-subtracted for stability.
template <typename S>
TensorT<S> softmax_channels(TapeT<S>& tape, const TensorT<S>& input) {
    if (input.rank() != 3) throw std::invalid_argument("softmax_channels: input must be [C,H,W]");
    const int c_n = input.dim(0);
    if (c_n < 2) throw std::invalid_argument("softmax_channels: needs at least 2 channels");
    const Eigen::Index m = static_cast<Eigen::Index>(input.dim(1)) * input.dim(2);

    TensorT<S> out(input.shape(), input.requires_grad());
    using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;
    Vec mx = input.value().segment(0, m);
    for (int c = 1; c < c_n; ++c) mx = mx.max(input.value().segment(c * m, m));
    Vec denom = Vec::Zero(m);
    for (int c = 0; c < c_n; ++c) {
        auto y = out.value().segment(c * m, m);
        y = (input.value().segment(c * m, m) - mx).exp();
        denom += y;
    }
    for (int c = 0; c < c_n; ++c) out.value().segment(c * m, m) /= denom;

    if (input.requires_grad()) {
        TensorT<S> in_h = input, out_h = out;
        tape.record([in_h, out_h, c_n, m]() mutable {
            Vec dot = Vec::Zero(m);
            for (int c = 0; c < c_n; ++c)
                dot += out_h.value().segment(c * m, m) * out_h.grad().segment(c * m, m);
            for (int c = 0; c < c_n; ++c)
                in_h.grad().segment(c * m, m) +=
                    out_h.value().segment(c * m, m) * (out_h.grad().segment(c * m, m) - dot);
        });
    }
    return out;
}

template <typename S>
TensorT<S> add(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                    shape_to_string(b.shape()));
    bool needs_grad = a.requires_grad() || b.requires_grad();
    TensorT<S> out(a.shape(), needs_grad);
    out.value() = a.value() + b.value();
    if (needs_grad) {
        TensorT<S> a_h = a, b_h = b, out_h = out;
        tape.record([a_h, b_h, out_h]() mutable {
            if (a_h.requires_grad()) a_h.grad() += out_h.grad();
            if (b_h.requires_grad()) b_h.grad() += out_h.grad();
        });
    }
    return out;
}

template <typename S>
TensorT<S> mul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
    bool needs_grad = a.requires_grad() || b.requires_grad();
    TensorT<S> out(a.shape(), needs_grad);
    out.value() = a.value() * b.value();
    if (needs_grad) {
        TensorT<S> a_h = a, b_h = b, out_h = out;
        tape.record([a_h, b_h, out_h]() mutable {
            if (a_h.requires_grad()) a_h.grad() += b_h.value() * out_h.grad();
            if (b_h.requires_grad()) b_h.grad() += a_h.value() * out_h.grad();
        });
    }
    return out;
}

template <typename S>
TensorT<S> sum_all(TapeT<S>& tape, const TensorT<S>& input) {
    TensorT<S> out({1}, input.requires_grad());
    out.value()[0] = input.value().sum();
    if (input.requires_grad()) {
        TensorT<S> in_h = input, out_h = out;
        tape.record([in_h, out_h]() mutable { in_h.grad() += out_h.grad()[0]; });
    }
    return out;
}

// Extracts channel c of a [C,H,W] tensor as an [H,W] view-copy.
template <typename S>
TensorT<S> slice_channel(TapeT<S>& tape, const TensorT<S>& input, int channel) {
    if (input.rank() != 3) throw std::invalid_argument("slice_channel: input must be [C,H,W]");
    if (channel < 0 || channel >= input.dim(0))
        throw std::invalid_argument("slice_channel: channel out of range");
    const Eigen::Index m = static_cast<Eigen::Index>(input.dim(1)) * input.dim(2);
    TensorT<S> out({input.dim(1), input.dim(2)}, input.requires_grad());
    out.value() = input.value().segment(channel * m, m);
    if (input.requires_grad()) {
        TensorT<S> in_h = input, out_h = out;
        tape.record([in_h, out_h, channel, m]() mutable {
            in_h.grad().segment(channel * m, m) += out_h.grad();
        });
    }
    return out;
}

// Eq.-style objectness interaction: out_k = p_obj * p_cond_k for every
// channel k, differentiable in both factors.
template <typename S>
TensorT<S> combine_opi(TapeT<S>& tape, const TensorT<S>& p_obj, const TensorT<S>& p_cond) {
    if (p_obj.rank() != 2 || p_cond.rank() != 3)
        throw std::invalid_argument("combine_opi: expects p_obj [H,W] and p_cond [K+1,H,W]");
    const Eigen::Index m = p_obj.size();
    if (static_cast<Eigen::Index>(p_cond.dim(1)) * p_cond.dim(2) != m)
        throw std::invalid_argument("combine_opi: spatial shape mismatch");
    const int k_n = p_cond.dim(0);
    bool needs_grad = p_obj.requires_grad() || p_cond.requires_grad();
    TensorT<S> out(p_cond.shape(), needs_grad);
    for (int k = 0; k < k_n; ++k)
        out.value().segment(k * m, m) = p_obj.value() * p_cond.value().segment(k * m, m);
    if (needs_grad) {
        TensorT<S> obj_h = p_obj, cond_h = p_cond, out_h = out;
        tape.record([obj_h, cond_h, out_h, k_n, m]() mutable {
            for (int k = 0; k < k_n; ++k) {
                auto g = out_h.grad().segment(k * m, m);
                if (obj_h.requires_grad())
                    obj_h.grad() += g * cond_h.value().segment(k * m, m);
                if (cond_h.requires_grad())
                    cond_h.grad().segment(k * m, m) += g * obj_h.value();
            }
        });
    }
    return out;
}

// Class-weighted negative log-likelihood of the detection head:
//   -(1/N) * sum_i [ 1(y_i=0) log p_bkg_i + alpha 1(y_i=1) log p_obj_i ]
// with N the pixel count and probabilities clamped at 1e-12 before log.
template <typename S>
TensorT<S> detection_loss(TapeT<S>& tape, const TensorT<S>& det_probs, const TensorT<S>& det_mask,
                          S alpha) {
    if (det_probs.rank() != 3 || det_probs.dim(0) != 2)
        throw std::invalid_argument("detection_loss: det_probs must be [2,H,W]");
    const Eigen::Index m = static_cast<Eigen::Index>(det_probs.dim(1)) * det_probs.dim(2);
    if (det_mask.size() != m) throw std::invalid_argument("detection_loss: mask size mismatch");
    if (!(alpha > S(0))) throw std::invalid_argument("detection_loss: alpha must be positive");

    const S eps = static_cast<S>(kLogClamp);
    S acc = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const bool pos = det_mask.value()[i] != S(0);
        const S p = det_probs.value()[pos ? m + i : i];
        acc += (pos ? alpha : S(1)) * std::log(std::max(p, eps));
    }
    TensorT<S> out({1}, det_probs.requires_grad());
    out.value()[0] = -acc / static_cast<S>(m);

    if (det_probs.requires_grad()) {
        TensorT<S> probs_h = det_probs, mask_h = det_mask, out_h = out;
        tape.record([probs_h, mask_h, out_h, alpha, m, eps]() mutable {
            const S g = out_h.grad()[0];
            for (Eigen::Index i = 0; i < m; ++i) {
                const bool pos = mask_h.value()[i] != S(0);
                const Eigen::Index idx = pos ? m + i : i;
                const S p = probs_h.value()[idx];
                if (p >= eps)
                    probs_h.grad()[idx] -= g * (pos ? alpha : S(1)) / (p * static_cast<S>(m));
            }
        });
    }
    return out;
}

template <typename S>
struct ClassLossTerms {
    TensorT<S> sum;  // scalar: sum over gate-passing pixels of -gamma_c * log p_cls[c]
    long count = 0;  // number of gate-passing pixels
};

// Gated classification negative log-likelihood. The gate is a 0/1 map the
// caller has already computed (from objectness values or from a ground-truth
// mask); it is a constant in backward. Returns the unnormalized sum so that
// callers can normalize over a whole batch.
template <typename S>
ClassLossTerms<S> classification_loss_terms(TapeT<S>& tape, const TensorT<S>& p_cls,
                                            const TensorT<S>& gate, const TensorT<S>& cls_mask,
                                            const Eigen::Array<S, Eigen::Dynamic, 1>& gamma) {
    if (p_cls.rank() != 3) throw std::invalid_argument("classification_loss: p_cls must be [K+1,H,W]");
    const int k_n = p_cls.dim(0);
    const Eigen::Index m = static_cast<Eigen::Index>(p_cls.dim(1)) * p_cls.dim(2);
    if (gate.size() != m || cls_mask.size() != m)
        throw std::invalid_argument("classification_loss: mask size mismatch");
    if (gamma.size() != k_n) throw std::invalid_argument("classification_loss: gamma size mismatch");
    if ((gamma <= S(0)).any()) throw std::invalid_argument("classification_loss: gamma must be positive");

    const S eps = static_cast<S>(kLogClamp);
    S acc = 0;
    long count = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (gate.value()[i] == S(0)) continue;
        ++count;
        const int c = static_cast<int>(cls_mask.value()[i]);
        const S p = p_cls.value()[static_cast<Eigen::Index>(c) * m + i];
        acc -= gamma[c] * std::log(std::max(p, eps));
    }
    ClassLossTerms<S> terms;
    terms.count = count;
    terms.sum = TensorT<S>({1}, p_cls.requires_grad());
    terms.sum.value()[0] = acc;

    if (p_cls.requires_grad() && count > 0) {
        TensorT<S> cls_h = p_cls, gate_h = gate, mask_h = cls_mask, sum_h = terms.sum;
        tape.record([cls_h, gate_h, mask_h, sum_h, gamma, m, eps]() mutable {
            const S g = sum_h.grad()[0];
            for (Eigen::Index i = 0; i < m; ++i) {
                if (gate_h.value()[i] == S(0)) continue;
                const int c = static_cast<int>(mask_h.value()[i]);
                const Eigen::Index idx = static_cast<Eigen::Index>(c) * m + i;
                const S p = cls_h.value()[idx];
                if (p >= eps) cls_h.grad()[idx] -= g * gamma[c] / p;
            }
        });
    }
    return terms;
}

// beta * sum over tensors of the squared L2 norm.
template <typename S>
TensorT<S> weight_decay(TapeT<S>& tape, const std::vector<TensorT<S>>& weights, S beta) {
    S acc = 0;
    bool needs_grad = false;
    for (const auto& w : weights) {
        acc += w.value().square().sum();
        needs_grad = needs_grad || w.requires_grad();
    }
    TensorT<S> out({1}, needs_grad && beta != S(0));
    out.value()[0] = beta * acc;
    if (out.requires_grad()) {
        std::vector<TensorT<S>> w_h = weights;
        TensorT<S> out_h = out;
        tape.record([w_h, out_h, beta]() mutable {
            const S g = out_h.grad()[0];
            for (auto& w : w_h)
                if (w.requires_grad()) w.grad() += S(2) * beta * g * w.value();
        });
    }
    return out;
}

// sum_i coeff_i * term_i over scalar tensors.
template <typename S>
TensorT<S> linear_combination(TapeT<S>& tape,
                              const std::vector<std::pair<S, TensorT<S>>>& terms) {
    S acc = 0;
    bool needs_grad = false;
    for (const auto& [c, t] : terms) {
        if (t.size() != 1) throw std::invalid_argument("linear_combination: terms must be scalars");
        acc += c * t.value()[0];
        needs_grad = needs_grad || t.requires_grad();
    }
    TensorT<S> out({1}, needs_grad);
    out.value()[0] = acc;
    if (needs_grad) {
        std::vector<std::pair<S, TensorT<S>>> terms_h = terms;
        TensorT<S> out_h = out;
        tape.record([terms_h, out_h]() mutable {
            const S g = out_h.grad()[0];
            for (auto& [c, t] : terms_h)
                if (t.requires_grad()) t.grad()[0] += c * g;
        });
    }
    return out;
}

// 0/1 gate map from objectness values; used as a constant in backward.
template <typename S>
TensorT<S> objectness_gate(const TensorT<S>& p_obj, S t_p) {
    TensorT<S> gate(p_obj.shape());
    gate.value() = (p_obj.value() > t_p).template cast<S>();
    return gate;
}

}  // namespace ops
}  // namespace sfcn
