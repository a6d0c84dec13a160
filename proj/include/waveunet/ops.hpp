#pragma once

// The differentiable operations the separation network is assembled from.
// Convolution uses the cross-correlation orientation (no kernel flip) so that
// serialized filter banks are unambiguous. All gradients accumulate in the
// deterministic order the loops below fix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_set>

#include "waveunet/tensor.hpp"

namespace waveunet {

enum class Padding { valid, same };
enum class Activation { leaky_relu, tanh, sigmoid };

/// Filter bank of one convolution layer. `filters` is (filter_size, in_channels,
/// out_channels) mapped onto the rank-3 container; `bias` is (1, 1, out_channels).
template <typename T>
struct ConvParams {
    TensorPtr<T> filters;
    TensorPtr<T> bias;

    std::int64_t filter_size() const { return filters->shape.batch; }
    std::int64_t in_channels() const { return filters->shape.frames; }
    std::int64_t out_channels() const { return filters->shape.channels; }
};

/// Pre-sigmoid per-channel interpolation weights of the learned upsampler.
template <typename T>
struct UpsampleWeights {
    TensorPtr<T> w; // (1, 1, channels)

    std::int64_t channels() const { return w->shape.channels; }
};

namespace detail {

template <typename T, typename... Parents>
void record(const TensorPtr<T>& out, std::function<void(Tensor<T>&)> fn, const Parents&... parents) {
    bool any_tracked = (parents->tracked() || ...);
    if (!any_tracked) return;
    out->parents = {parents...};
    out->backward_fn = std::move(fn);
}

} // namespace detail

template <typename T>
TensorPtr<T> conv1d(const TensorPtr<T>& input, const ConvParams<T>& params, Padding padding,
                    const std::string& layer = "conv1d") {
    const std::int64_t f = params.filter_size();
    const std::int64_t in_ch = params.in_channels();
    const std::int64_t out_ch = params.out_channels();
    const std::int64_t n = input->shape.frames;
    const std::int64_t batch = input->shape.batch;

    if (input->shape.channels != in_ch)
        throw ShapeError(layer + ": input has " + std::to_string(input->shape.channels) +
                         " channels, filters expect " + std::to_string(in_ch));
    if (params.bias->shape.channels != out_ch || params.bias->shape.frames != 1 ||
        params.bias->shape.batch != 1)
        throw ShapeError(layer + ": bias shape " + params.bias->shape.str() +
                         " does not match " + std::to_string(out_ch) + " output channels");
    if (padding == Padding::valid && n < f)
        throw SizeError(layer + ": valid convolution needs at least " + std::to_string(f) +
                        " frames, got " + std::to_string(n));

    // Symmetric zero padding in same mode, extra sample on the right for even f-1.
    const std::int64_t pad_left = padding == Padding::same ? (f - 1) / 2 : 0;
    const std::int64_t out_n = padding == Padding::same ? n : n - f + 1;

    auto out = Tensor<T>::zeros(Shape{batch, out_n, out_ch});
    const T* in = input->data.data();
    const T* filt = params.filters->data.data();
    const T* bias = params.bias->data.data();
    T* dst = out->data.data();

    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t t = 0; t < out_n; ++t) {
            T* row = dst + (b * out_n + t) * out_ch;
            for (std::int64_t oc = 0; oc < out_ch; ++oc) row[oc] = bias[oc];
            for (std::int64_t k = 0; k < f; ++k) {
                const std::int64_t tin = t + k - pad_left;
                if (tin < 0 || tin >= n) continue;
                const T* in_row = in + (b * n + tin) * in_ch;
                const T* filt_row = filt + k * in_ch * out_ch;
                for (std::int64_t ic = 0; ic < in_ch; ++ic) {
                    const T a = in_row[ic];
                    const T* fr = filt_row + ic * out_ch;
                    for (std::int64_t oc = 0; oc < out_ch; ++oc) row[oc] += a * fr[oc];
                }
            }
        }
    }

    auto filters = params.filters;
    auto bias_t = params.bias;
    detail::record<T>(
        out,
        [batch, n, out_n, f, in_ch, out_ch, pad_left](Tensor<T>& node) {
            auto& x = *node.parents[0];
            auto& w = *node.parents[1];
            auto& bb = *node.parents[2];
            x.ensure_grad();
            w.ensure_grad();
            bb.ensure_grad();
            const T* g = node.grad.data();
            const T* in = x.data.data();
            const T* filt = w.data.data();
            for (std::int64_t b = 0; b < batch; ++b) {
                for (std::int64_t t = 0; t < out_n; ++t) {
                    const T* g_row = g + (b * out_n + t) * out_ch;
                    for (std::int64_t oc = 0; oc < out_ch; ++oc) bb.grad[oc] += g_row[oc];
                    for (std::int64_t k = 0; k < f; ++k) {
                        const std::int64_t tin = t + k - pad_left;
                        if (tin < 0 || tin >= n) continue;
                        const T* in_row = in + (b * n + tin) * in_ch;
                        T* gin_row = x.grad.data() + (b * n + tin) * in_ch;
                        const T* filt_row = filt + k * in_ch * out_ch;
                        T* gfilt_row = w.grad.data() + k * in_ch * out_ch;
                        for (std::int64_t ic = 0; ic < in_ch; ++ic) {
                            const T a = in_row[ic];
                            const T* fr = filt_row + ic * out_ch;
                            T* gfr = gfilt_row + ic * out_ch;
                            T acc = T(0);
                            for (std::int64_t oc = 0; oc < out_ch; ++oc) {
                                acc += g_row[oc] * fr[oc];
                                gfr[oc] += a * g_row[oc];
                            }
                            gin_row[ic] += acc;
                        }
                    }
                }
            }
        },
        input, filters, bias_t);
    return out;
}

/// Elementwise nonlinearity. leaky_relu's derivative at exactly 0 is taken as 1
/// (the positive branch) so runs are reproducible at the tie.
template <typename T>
TensorPtr<T> activation(const TensorPtr<T>& x, Activation kind, T leaky_slope = T(0.2)) {
    auto out = Tensor<T>::zeros(x->shape);
    const std::int64_t count = x->shape.elements();
    switch (kind) {
        case Activation::leaky_relu:
            for (std::int64_t i = 0; i < count; ++i) {
                const T v = x->data[i];
                out->data[i] = v < T(0) ? leaky_slope * v : v;
            }
            break;
        case Activation::tanh:
            for (std::int64_t i = 0; i < count; ++i) out->data[i] = std::tanh(x->data[i]);
            break;
        case Activation::sigmoid:
            for (std::int64_t i = 0; i < count; ++i)
                out->data[i] = T(1) / (T(1) + std::exp(-x->data[i]));
            break;
    }
    detail::record<T>(
        out,
        [kind, leaky_slope, count](Tensor<T>& node) {
            auto& x = *node.parents[0];
            x.ensure_grad();
            switch (kind) {
                case Activation::leaky_relu:
                    for (std::int64_t i = 0; i < count; ++i)
                        x.grad[i] += node.grad[i] * (x.data[i] < T(0) ? leaky_slope : T(1));
                    break;
                case Activation::tanh:
                    for (std::int64_t i = 0; i < count; ++i) {
                        const T y = node.data[i];
                        x.grad[i] += node.grad[i] * (T(1) - y * y);
                    }
                    break;
                case Activation::sigmoid:
                    for (std::int64_t i = 0; i < count; ++i) {
                        const T y = node.data[i];
                        x.grad[i] += node.grad[i] * y * (T(1) - y);
                    }
                    break;
            }
        },
        x);
    return out;
}

/// Keeps frames 0, 2, 4, ...; n frames become (n+1)/2. With require_odd set
/// (context mode) even or too-short inputs are rejected so border frames are
/// always preserved through the decimate/upsample round trip.
template <typename T>
TensorPtr<T> decimate(const TensorPtr<T>& x, bool require_odd = false) {
    const std::int64_t n = x->shape.frames;
    if (require_odd && (n < 3 || n % 2 == 0))
        throw SizeError("decimate: context mode needs an odd frame count >= 3, got " +
                        std::to_string(n));
    const std::int64_t out_n = (n + 1) / 2;
    const std::int64_t batch = x->shape.batch;
    const std::int64_t ch = x->shape.channels;

    auto out = Tensor<T>::zeros(Shape{batch, out_n, ch});
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t t = 0; t < out_n; ++t)
            std::copy_n(&x->at(b, 2 * t, 0), ch, &out->at(b, t, 0));

    detail::record<T>(
        out,
        [batch, out_n, ch](Tensor<T>& node) {
            auto& x = *node.parents[0];
            x.ensure_grad();
            for (std::int64_t b = 0; b < batch; ++b)
                for (std::int64_t t = 0; t < out_n; ++t) {
                    const T* g = &node.grad[node.index(b, t, 0)];
                    T* gx = &x.grad[x.index(b, 2 * t, 0)];
                    for (std::int64_t c = 0; c < ch; ++c) gx[c] += g[c];
                }
        },
        x);
    return out;
}

namespace detail {

// Shared layout of all interpolating upsamplers: even output frames copy the
// inputs, odd frames hold the interpolated values, and `duplicate_tail` appends
// one extra copy of the last frame (2n outputs instead of 2n-1) for the
// zero-padded base architecture whose maps must exactly double.
template <typename T, typename Mix, typename MixGrad>
TensorPtr<T> upsample_common(const TensorPtr<T>& x, bool duplicate_tail, Mix mix,
                             MixGrad mix_grad, const TensorPtr<T>& weights) {
    const std::int64_t n = x->shape.frames;
    if (n < 2) throw SizeError("upsample: need at least 2 frames, got " + std::to_string(n));
    const std::int64_t batch = x->shape.batch;
    const std::int64_t ch = x->shape.channels;
    const std::int64_t out_n = duplicate_tail ? 2 * n : 2 * n - 1;

    auto out = Tensor<T>::zeros(Shape{batch, out_n, ch});
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t t = 0; t < n; ++t)
            std::copy_n(&x->at(b, t, 0), ch, &out->at(b, 2 * t, 0));
        for (std::int64_t t = 0; t + 1 < n; ++t) {
            const T* a = &x->at(b, t, 0);
            const T* c = &x->at(b, t + 1, 0);
            T* o = &out->at(b, 2 * t + 1, 0);
            for (std::int64_t j = 0; j < ch; ++j) o[j] = mix(a[j], c[j], j);
        }
        if (duplicate_tail) std::copy_n(&x->at(b, n - 1, 0), ch, &out->at(b, 2 * n - 1, 0));
    }

    auto fn = [batch, n, ch, duplicate_tail, mix_grad](Tensor<T>& node) {
        auto& x = *node.parents[0];
        x.ensure_grad();
        Tensor<T>* w = node.parents.size() > 1 ? node.parents[1].get() : nullptr;
        if (w) w->ensure_grad();
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t t = 0; t < n; ++t) {
                const T* g = &node.grad[node.index(b, 2 * t, 0)];
                T* gx = &x.grad[x.index(b, t, 0)];
                for (std::int64_t j = 0; j < ch; ++j) gx[j] += g[j];
            }
            for (std::int64_t t = 0; t + 1 < n; ++t) {
                const T* g = &node.grad[node.index(b, 2 * t + 1, 0)];
                T* ga = &x.grad[x.index(b, t, 0)];
                T* gc = &x.grad[x.index(b, t + 1, 0)];
                const T* a = &x.data[x.index(b, t, 0)];
                const T* c = &x.data[x.index(b, t + 1, 0)];
                for (std::int64_t j = 0; j < ch; ++j)
                    mix_grad(g[j], a[j], c[j], j, ga[j], gc[j], w);
            }
            if (duplicate_tail) {
                const T* g = &node.grad[node.index(b, 2 * n - 1, 0)];
                T* gx = &x.grad[x.index(b, n - 1, 0)];
                for (std::int64_t j = 0; j < ch; ++j) gx[j] += g[j];
            }
        }
    };
    if (weights)
        detail::record<T>(out, std::move(fn), x, weights);
    else
        detail::record<T>(out, std::move(fn), x);
    return out;
}

} // namespace detail

/// Linear interpolation producing 2n-1 frames from n: originals at even output
/// positions, midpoints at odd ones, borders preserved without extrapolation.
template <typename T>
TensorPtr<T> upsample_linear(const TensorPtr<T>& x) {
    return detail::upsample_common<T>(
        x, false, [](T a, T c, std::int64_t) { return (a + c) / T(2); },
        [](T g, T, T, std::int64_t, T& ga, T& gc, Tensor<T>*) {
            ga += g / T(2);
            gc += g / T(2);
        },
        nullptr);
}

/// Exact doubling for the zero-padded base architecture: midpoint interpolation
/// plus one duplicated tail frame (the border extrapolation the context variant
/// is designed to avoid).
template <typename T>
TensorPtr<T> upsample_double(const TensorPtr<T>& x) {
    return detail::upsample_common<T>(
        x, true, [](T a, T c, std::int64_t) { return (a + c) / T(2); },
        [](T g, T, T, std::int64_t, T& ga, T& gc, Tensor<T>*) {
            ga += g / T(2);
            gc += g / T(2);
        },
        nullptr);
}

namespace detail {

template <typename T>
TensorPtr<T> upsample_learned_impl(const TensorPtr<T>& x, const UpsampleWeights<T>& weights,
                                   bool duplicate_tail) {
    if (weights.channels() != x->shape.channels)
        throw ShapeError("upsample_learned: " + std::to_string(weights.channels()) +
                         " weights for " + std::to_string(x->shape.channels) + " channels");
    // Per-channel convex combination sigma(w)*f_t + (1-sigma(w))*f_{t+1}.
    std::vector<T> s(weights.channels());
    for (std::size_t j = 0; j < s.size(); ++j)
        s[j] = T(1) / (T(1) + std::exp(-weights.w->data[j]));
    auto sg = std::make_shared<std::vector<T>>(std::move(s));
    return upsample_common<T>(
        x, duplicate_tail,
        [sg](T a, T c, std::int64_t j) { return (*sg)[j] * a + (T(1) - (*sg)[j]) * c; },
        [sg](T g, T a, T c, std::int64_t j, T& ga, T& gc, Tensor<T>* w) {
            const T sj = (*sg)[j];
            ga += g * sj;
            gc += g * (T(1) - sj);
            if (w) w->grad[j] += g * (a - c) * sj * (T(1) - sj);
        },
        weights.w);
}

} // namespace detail

template <typename T>
TensorPtr<T> upsample_learned(const TensorPtr<T>& x, const UpsampleWeights<T>& weights) {
    return detail::upsample_learned_impl(x, weights, false);
}

template <typename T>
TensorPtr<T> upsample_learned_double(const TensorPtr<T>& x, const UpsampleWeights<T>& weights) {
    return detail::upsample_learned_impl(x, weights, true);
}

/// Centre-crops `x` in the frame dimension to `frames`. The total crop must be
/// even; an odd difference means the size calculus was violated upstream.
template <typename T>
TensorPtr<T> crop_center(const TensorPtr<T>& x, std::int64_t frames) {
    const std::int64_t n = x->shape.frames;
    if (frames > n)
        throw SizeError("crop_center: cannot crop " + std::to_string(n) + " frames to " +
                        std::to_string(frames));
    if ((n - frames) % 2 != 0)
        throw SizeError("crop_center: odd crop of " + std::to_string(n - frames) +
                        " frames; the size calculus must keep crop differences even");
    const std::int64_t off = (n - frames) / 2;
    const std::int64_t batch = x->shape.batch;
    const std::int64_t ch = x->shape.channels;

    auto out = Tensor<T>::zeros(Shape{batch, frames, ch});
    for (std::int64_t b = 0; b < batch; ++b)
        std::copy_n(&x->at(b, off, 0), frames * ch, &out->at(b, 0, 0));

    detail::record<T>(
        out,
        [batch, frames, ch, off](Tensor<T>& node) {
            auto& x = *node.parents[0];
            x.ensure_grad();
            for (std::int64_t b = 0; b < batch; ++b) {
                const T* g = &node.grad[node.index(b, 0, 0)];
                T* gx = &x.grad[x.index(b, off, 0)];
                for (std::int64_t i = 0; i < frames * ch; ++i) gx[i] += g[i];
            }
        },
        x);
    return out;
}

/// Centre-crops `local` to the frame count of `high_level` and concatenates the
/// two along the channel axis (high-level channels first).
template <typename T>
TensorPtr<T> concat_crop(const TensorPtr<T>& high_level, const TensorPtr<T>& local) {
    if (high_level->shape.batch != local->shape.batch)
        throw ShapeError("concat_crop: batch mismatch " + high_level->shape.str() + " vs " +
                         local->shape.str());
    if (local->shape.frames < high_level->shape.frames)
        throw SizeError("concat_crop: local map has fewer frames (" +
                        std::to_string(local->shape.frames) + ") than the high-level map (" +
                        std::to_string(high_level->shape.frames) + ")");
    auto cropped = crop_center(local, high_level->shape.frames);

    const std::int64_t batch = high_level->shape.batch;
    const std::int64_t frames = high_level->shape.frames;
    const std::int64_t ch_hi = high_level->shape.channels;
    const std::int64_t ch_lo = cropped->shape.channels;

    auto out = Tensor<T>::zeros(Shape{batch, frames, ch_hi + ch_lo});
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t t = 0; t < frames; ++t) {
            T* o = &out->at(b, t, 0);
            std::copy_n(&high_level->at(b, t, 0), ch_hi, o);
            std::copy_n(&cropped->at(b, t, 0), ch_lo, o + ch_hi);
        }

    detail::record<T>(
        out,
        [batch, frames, ch_hi, ch_lo](Tensor<T>& node) {
            auto& hi = *node.parents[0];
            auto& lo = *node.parents[1];
            hi.ensure_grad();
            lo.ensure_grad();
            for (std::int64_t b = 0; b < batch; ++b)
                for (std::int64_t t = 0; t < frames; ++t) {
                    const T* g = &node.grad[node.index(b, t, 0)];
                    T* gh = &hi.grad[hi.index(b, t, 0)];
                    T* gl = &lo.grad[lo.index(b, t, 0)];
                    for (std::int64_t c = 0; c < ch_hi; ++c) gh[c] += g[c];
                    for (std::int64_t c = 0; c < ch_lo; ++c) gl[c] += g[ch_hi + c];
                }
        },
        high_level, cropped);
    return out;
}

namespace detail {

template <typename T>
void check_same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b, const char* op) {
    if (a->shape != b->shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + a->shape.str() + " vs " +
                         b->shape.str());
}

} // namespace detail

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = Tensor<T>::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    detail::record<T>(
        out,
        [](Tensor<T>& node) {
            for (int p = 0; p < 2; ++p) {
                auto& x = *node.parents[p];
                x.ensure_grad();
                for (std::size_t i = 0; i < node.grad.size(); ++i) x.grad[i] += node.grad[i];
            }
        },
        a, b);
    return out;
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = Tensor<T>::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
    detail::record<T>(
        out,
        [](Tensor<T>& node) {
            auto& x = *node.parents[0];
            auto& y = *node.parents[1];
            x.ensure_grad();
            y.ensure_grad();
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
                x.grad[i] += node.grad[i];
                y.grad[i] -= node.grad[i];
            }
        },
        a, b);
    return out;
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& x, T factor) {
    auto out = Tensor<T>::zeros(x->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] * factor;
    detail::record<T>(
        out,
        [factor](Tensor<T>& node) {
            auto& x = *node.parents[0];
            x.ensure_grad();
            for (std::size_t i = 0; i < node.grad.size(); ++i) x.grad[i] += node.grad[i] * factor;
        },
        x);
    return out;
}

/// Mean of squared elementwise differences over every element, as a (1,1,1) node.
template <typename T>
TensorPtr<T> mse_loss(const TensorPtr<T>& pred, const TensorPtr<T>& target) {
    detail::check_same_shape(pred, target, "mse_loss");
    const std::int64_t count = pred->shape.elements();
    double acc = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        const double d = static_cast<double>(pred->data[i]) - static_cast<double>(target->data[i]);
        acc += d * d;
    }
    auto out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(count)));
    detail::record<T>(
        out,
        [count](Tensor<T>& node) {
            auto& p = *node.parents[0];
            auto& q = *node.parents[1];
            p.ensure_grad();
            q.ensure_grad();
            const T g = node.grad[0] * T(2) / static_cast<T>(count);
            for (std::int64_t i = 0; i < count; ++i) {
                const T d = p.data[i] - q.data[i];
                p.grad[i] += g * d;
                q.grad[i] -= g * d;
            }
        },
        pred, target);
    return out;
}

/// Reverse-mode sweep from a recorded scalar. Fills `grad` on every node of the
/// graph, including the requires_grad leaves. A second call on the same root
/// throws: the recorded graph is single-use.
template <typename T>
void backward(const TensorPtr<T>& loss) {
    if (loss->shape.elements() != 1)
        throw UsageError("backward: loss must be a scalar, got shape " + loss->shape.str());
    if (loss->parents.empty())
        throw UsageError("backward: tensor was not produced by a recorded computation");
    if (loss->backward_done)
        throw UsageError("backward: already called on this recorded graph");
    loss->backward_done = true;

    // Iterative post-order DFS; parents are visited in recorded order so
    // gradient accumulation is deterministic.
    std::vector<Tensor<T>*> order;
    std::unordered_set<Tensor<T>*> seen;
    std::vector<std::pair<Tensor<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor<T>* parent = node->parents[next++].get();
            if (seen.insert(parent).second) {
                if (parent->parents.empty())
                    order.push_back(parent);
                else
                    stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Fresh gradients every sweep; parameter leaves are reused across steps.
    for (Tensor<T>* node : order) node->grad.assign(node->data.size(), T(0));
    loss->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

} // namespace waveunet
