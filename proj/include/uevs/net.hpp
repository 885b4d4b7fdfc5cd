#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uevs/error.hpp"
#include "uevs/parallel.hpp"
#include "uevs/random.hpp"
#include "uevs/tensor.hpp"

namespace uevs {

/// Plain CNN layout: `conv_channels.size()` blocks of
/// conv(k x k, stride 1, same padding) -> ReLU -> maxpool 2x2, then global
/// average pooling and a linear layer to `num_classes` logits. Inputs are
/// shifted by `input_offset` first, so "no event" cells enter as zero.
struct Architecture {
    int in_channels = 16;
    int height = 32;
    int width = 32;
    std::vector<int> conv_channels{16, 32};
    int kernel = 3;
    bool pool = true;
    int num_classes = 4;
    double input_offset = 0.5;

    /// Conv block whose pre-activation output feeds the similarity loss.
    int feature_tap() const { return static_cast<int>(conv_channels.size()) - 1; }

    void validate() const {
        if (in_channels <= 0 || height <= 0 || width <= 0) throw ShapeError("input shape must be positive");
        if (conv_channels.empty()) throw ShapeError("architecture needs at least one conv block");
        for (int c : conv_channels)
            if (c <= 0) throw ShapeError("conv widths must be positive");
        if (kernel <= 0 || kernel % 2 == 0) throw ShapeError("conv kernel must be odd and positive");
        if (num_classes <= 0) throw ShapeError("class count must be positive");
        int h = height, w = width;
        if (!std::isfinite(input_offset)) throw Error("input offset must be finite");
        for (std::size_t i = 0; pool && i < conv_channels.size(); ++i) {
            h /= 2;
            w /= 2;
            if (h <= 0 || w <= 0) throw ShapeError("input too small for the pooling stages");
        }
    }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Protector-side model used to craft noise.
inline Architecture surrogate_architecture(int channels, int height, int width, int classes) {
    return Architecture{channels, height, width, {16, 32}, 3, true, classes};
}

/// Wider model used to play the unauthorized trainer.
inline Architecture victim_architecture(int channels, int height, int width, int classes) {
    return Architecture{channels, height, width, {24, 48}, 3, true, classes};
}

template <typename T>
using Gradients = std::vector<Tensor<T>>;

/// Network with hand-written reverse mode. Parameters are laid out per conv
/// block as weight [out, in, k, k] then bias [out], followed by the linear
/// weight [classes, last_width] and bias [classes].
template <typename T>
class Network {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapMat = Eigen::Map<Mat>;
    using ConstMapMat = Eigen::Map<const Mat>;
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    struct BlockCache {
        Mat cols;             // (in * k * k) x (h * w)
        AlignedVector<T> pre;  // out x h x w, before ReLU
        std::vector<int> arg; // pooled cell -> flat index into pre
        int h = 0, w = 0, ph = 0, pw = 0;
    };

    struct SampleCache {
        std::vector<BlockCache> blocks;
        std::vector<T> gap;
    };

    struct Forward {
        Tensor<T> logits;    // [B, classes]
        Tensor<T> features;  // [B, out, h, w] of the tapped conv layer
        std::vector<SampleCache> caches;
    };

    Network() = default;

    explicit Network(Architecture arch, std::uint64_t seed = 0) : arch_(std::move(arch)) {
        arch_.validate();
        const int k = arch_.kernel;
        int in = arch_.in_channels;
        for (int out : arch_.conv_channels) {
            params_.emplace_back(std::vector<int>{out, in, k, k});
            params_.emplace_back(std::vector<int>{out});
            in = out;
        }
        params_.emplace_back(std::vector<int>{arch_.num_classes, in});
        params_.emplace_back(std::vector<int>{arch_.num_classes});
        initialize(seed);
    }

    /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    void initialize(std::uint64_t seed) {
        Rng rng(mix_seed(seed, 0x6e6574ULL));
        for (std::size_t i = 0; i < params_.size(); i += 2) {
            Tensor<T>& w = params_[i];
            double fan_in, fan_out;
            if (w.shape.size() == 4) {
                const double rf = double(w.shape[2]) * w.shape[3];
                fan_in = w.shape[1] * rf;
                fan_out = w.shape[0] * rf;
            } else {
                fan_in = w.shape[1];
                fan_out = w.shape[0];
            }
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            for (T& v : w.data) v = static_cast<T>(uniform(rng, -bound, bound));
            std::fill(params_[i + 1].data.begin(), params_[i + 1].data.end(), T(0));
        }
    }

    const Architecture& arch() const { return arch_; }
    std::vector<Tensor<T>>& params() { return params_; }
    const std::vector<Tensor<T>>& params() const { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.numel();
        return n;
    }

    Gradients<T> zero_gradients() const {
        Gradients<T> g;
        for (const auto& p : params_) g.emplace_back(p.shape);
        return g;
    }

    std::vector<int> input_shape(int batch) const {
        return {batch, arch_.in_channels, arch_.height, arch_.width};
    }

    /// Evaluates logits and tapped conv features for a [B, C, H, W] batch.
    /// With `keep_cache` the activations needed by `backward` are retained.
    Forward forward(const Tensor<T>& batch, bool keep_cache = false) const {
        check_input(batch);
        const int b = batch.shape[0];
        Forward f;
        f.logits = Tensor<T>({b, arch_.num_classes});
        const auto fs = feature_shape();
        f.features = Tensor<T>({b, fs[0], fs[1], fs[2]});
        f.caches.resize(static_cast<std::size_t>(b));
        parallel_for(static_cast<std::size_t>(b), [&](std::size_t i) {
            forward_sample(batch.slice(i), f.caches[i], f.logits.slice(i), f.features.slice(i));
            if (!keep_cache) f.caches[i] = SampleCache{};
        });
        if (!keep_cache) f.caches.clear();
        if (!f.logits.all_finite()) throw NumericError("non-finite logits in forward pass");
        return f;
    }

    /// Reverse pass. `dlogits` is dLoss/dlogits; `dfeatures`, when non-null,
    /// is an extra gradient arriving at the tapped features. Per-sample
    /// parameter gradients are summed in sample order.
    void backward(const Forward& f, const Tensor<T>& dlogits, const Tensor<T>* dfeatures, Gradients<T>* param_grads,
                  Tensor<T>* input_grad) const {
        const std::size_t b = f.caches.size();
        if (b == 0 || f.logits.shape[0] != static_cast<int>(b))
            throw Error("backward requires a forward pass with keep_cache = true");
        if (dlogits.shape != f.logits.shape) throw ShapeError("dlogits shape mismatch");
        if (dfeatures && dfeatures->shape != f.features.shape) throw ShapeError("dfeatures shape mismatch");
        if (input_grad) *input_grad = Tensor<T>(input_shape(static_cast<int>(b)));

        std::vector<Gradients<T>> per_sample(param_grads ? b : 0);
        parallel_for(b, [&](std::size_t i) {
            Gradients<T>* g = nullptr;
            if (param_grads) {
                per_sample[i] = zero_gradients();
                g = &per_sample[i];
            }
            backward_sample(f.caches[i], dlogits.slice(i), dfeatures ? dfeatures->slice(i) : nullptr, g,
                            input_grad ? input_grad->slice(i) : nullptr);
        });
        if (param_grads) {
            *param_grads = zero_gradients();
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t p = 0; p < params_.size(); ++p) {
                    auto& dst = (*param_grads)[p].data;
                    const auto& src = per_sample[i][p].data;
                    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                }
            for (const auto& g : *param_grads)
                if (!g.all_finite()) throw NumericError("non-finite parameter gradient");
        }
        if (input_grad && !input_grad->all_finite()) throw NumericError("non-finite input gradient");
    }

    std::vector<int> feature_shape() const {
        int h = arch_.height, w = arch_.width;
        const int last = arch_.feature_tap();
        for (int i = 0; i < last; ++i)
            if (arch_.pool) {
                h /= 2;
                w /= 2;
            }
        return {arch_.conv_channels[static_cast<std::size_t>(last)], h, w};
    }

    template <typename U>
    Network<U> cast() const {
        Network<U> out(arch_, 0);
        for (std::size_t p = 0; p < params_.size(); ++p)
            for (std::size_t j = 0; j < params_[p].numel(); ++j)
                out.params()[p].data[j] = static_cast<U>(params_[p].data[j]);
        return out;
    }

private:
    void check_input(const Tensor<T>& batch) const {
        if (batch.shape.size() != 4 || batch.shape[1] != arch_.in_channels || batch.shape[2] != arch_.height ||
            batch.shape[3] != arch_.width || batch.shape[0] <= 0)
            throw ShapeError("batch shape " + shape_string(batch.shape) + " does not match architecture " +
                             shape_string(input_shape(-1)));
        if (!batch.all_finite()) throw NumericError("non-finite input batch");
    }

    static void im2col(const T* in, int channels, int h, int w, int k, Mat& cols) {
        const int pad = k / 2;
        cols.resize(static_cast<Eigen::Index>(channels) * k * k, static_cast<Eigen::Index>(h) * w);
        for (int c = 0; c < channels; ++c)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    T* row = cols.data() + (static_cast<std::size_t>((c * k + ky) * k + kx)) * h * w;
                    const T* plane = in + static_cast<std::size_t>(c) * h * w;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - pad;
                        T* dst = row + static_cast<std::size_t>(y) * w;
                        if (sy < 0 || sy >= h) {
                            std::fill(dst, dst + w, T(0));
                            continue;
                        }
                        const T* src = plane + static_cast<std::size_t>(sy) * w;
                        for (int x = 0; x < w; ++x) {
                            const int sx = x + kx - pad;
                            dst[x] = (sx >= 0 && sx < w) ? src[sx] : T(0);
                        }
                    }
                }
    }

    static void col2im(const Mat& cols, int channels, int h, int w, int k, T* out) {
        const int pad = k / 2;
        std::fill(out, out + static_cast<std::size_t>(channels) * h * w, T(0));
        for (int c = 0; c < channels; ++c)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const T* row = cols.data() + (static_cast<std::size_t>((c * k + ky) * k + kx)) * h * w;
                    T* plane = out + static_cast<std::size_t>(c) * h * w;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= h) continue;
                        const T* src = row + static_cast<std::size_t>(y) * w;
                        T* dst = plane + static_cast<std::size_t>(sy) * w;
                        for (int x = 0; x < w; ++x) {
                            const int sx = x + kx - pad;
                            if (sx >= 0 && sx < w) dst[sx] += src[x];
                        }
                    }
                }
    }

    void forward_sample(const T* input, SampleCache& cache, T* logits, T* features) const {
        const int nblocks = static_cast<int>(arch_.conv_channels.size());
        const int k = arch_.kernel;
        cache.blocks.resize(static_cast<std::size_t>(nblocks));
        std::vector<T> current(input, input + Tensor<T>::count(input_shape(1)));
        if (arch_.input_offset != 0)
            for (T& v : current) v -= static_cast<T>(arch_.input_offset);
        int in = arch_.in_channels, h = arch_.height, w = arch_.width;
        for (int bi = 0; bi < nblocks; ++bi) {
            BlockCache& bc = cache.blocks[static_cast<std::size_t>(bi)];
            const int out = arch_.conv_channels[static_cast<std::size_t>(bi)];
            bc.h = h;
            bc.w = w;
            im2col(current.data(), in, h, w, k, bc.cols);
            const Tensor<T>& wt = params_[2 * bi];
            const Tensor<T>& bias = params_[2 * bi + 1];
            ConstMapMat wmat(wt.data.data(), out, static_cast<Eigen::Index>(in) * k * k);
            bc.pre.assign(static_cast<std::size_t>(out) * h * w, T(0));
            MapMat pre(bc.pre.data(), out, static_cast<Eigen::Index>(h) * w);
            pre.noalias() = wmat * bc.cols;
            for (int o = 0; o < out; ++o) pre.row(o).array() += bias.data[static_cast<std::size_t>(o)];
            if (bi == arch_.feature_tap()) std::copy(bc.pre.begin(), bc.pre.end(), features);

            // ReLU + 2x2 max pool (argmax over post-activation values)
            const int ph = arch_.pool ? h / 2 : h;
            const int pw = arch_.pool ? w / 2 : w;
            bc.ph = ph;
            bc.pw = pw;
            bc.arg.assign(static_cast<std::size_t>(out) * ph * pw, 0);
            current.assign(static_cast<std::size_t>(out) * ph * pw, T(0));
            for (int o = 0; o < out; ++o) {
                const std::size_t base = static_cast<std::size_t>(o) * h * w;
                for (int py = 0; py < ph; ++py)
                    for (int px = 0; px < pw; ++px) {
                        const std::size_t dst = (static_cast<std::size_t>(o) * ph + py) * pw + px;
                        if (!arch_.pool) {
                            const std::size_t src = base + static_cast<std::size_t>(py) * w + px;
                            current[dst] = std::max(bc.pre[src], T(0));
                            bc.arg[dst] = static_cast<int>(src);
                            continue;
                        }
                        std::size_t best = base + static_cast<std::size_t>(2 * py) * w + 2 * px;
                        T best_v = std::max(bc.pre[best], T(0));
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t src = base + static_cast<std::size_t>(2 * py + dy) * w + 2 * px + dx;
                                const T v = std::max(bc.pre[src], T(0));
                                if (v > best_v) {
                                    best_v = v;
                                    best = src;
                                }
                            }
                        current[dst] = best_v;
                        bc.arg[dst] = static_cast<int>(best);
                    }
            }
            in = out;
            h = ph;
            w = pw;
        }
        // global average pool
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        cache.gap.assign(static_cast<std::size_t>(in), T(0));
        for (int c = 0; c < in; ++c) {
            T s = 0;
            for (std::size_t j = 0; j < plane; ++j) s += current[static_cast<std::size_t>(c) * plane + j];
            cache.gap[static_cast<std::size_t>(c)] = s / static_cast<T>(plane);
        }
        const Tensor<T>& lw = params_[params_.size() - 2];
        const Tensor<T>& lb = params_[params_.size() - 1];
        for (int j = 0; j < arch_.num_classes; ++j) {
            T s = lb.data[static_cast<std::size_t>(j)];
            for (int c = 0; c < in; ++c)
                s += lw.data[static_cast<std::size_t>(j) * in + c] * cache.gap[static_cast<std::size_t>(c)];
            logits[j] = s;
        }
    }

    void backward_sample(const SampleCache& cache, const T* dlogits, const T* dfeatures, Gradients<T>* grads,
                         T* dinput) const {
        const int nblocks = static_cast<int>(arch_.conv_channels.size());
        const int k = arch_.kernel;
        const int classes = arch_.num_classes;
        const int last = arch_.conv_channels.back();
        const std::size_t np = params_.size();

        // linear layer
        const Tensor<T>& lw = params_[np - 2];
        if (grads) {
            for (int j = 0; j < classes; ++j) {
                (*grads)[np - 1].data[static_cast<std::size_t>(j)] += dlogits[j];
                for (int c = 0; c < last; ++c)
                    (*grads)[np - 2].data[static_cast<std::size_t>(j) * last + c] +=
                        dlogits[j] * cache.gap[static_cast<std::size_t>(c)];
            }
        }
        std::vector<T> dgap(static_cast<std::size_t>(last), T(0));
        for (int j = 0; j < classes; ++j)
            for (int c = 0; c < last; ++c)
                dgap[static_cast<std::size_t>(c)] += lw.data[static_cast<std::size_t>(j) * last + c] * dlogits[j];

        // gradient w.r.t. the output of the last block (pooled map)
        const BlockCache& lastc = cache.blocks.back();
        const std::size_t lplane = static_cast<std::size_t>(lastc.ph) * lastc.pw;
        std::vector<T> dout(static_cast<std::size_t>(last) * lplane);
        for (int c = 0; c < last; ++c)
            std::fill_n(dout.begin() + static_cast<std::ptrdiff_t>(c * lplane), lplane,
                        dgap[static_cast<std::size_t>(c)] / static_cast<T>(lplane));

        for (int bi = nblocks - 1; bi >= 0; --bi) {
            const BlockCache& bc = cache.blocks[static_cast<std::size_t>(bi)];
            const int out = arch_.conv_channels[static_cast<std::size_t>(bi)];
            const int in = bi == 0 ? arch_.in_channels : arch_.conv_channels[static_cast<std::size_t>(bi - 1)];
            const std::size_t hw = static_cast<std::size_t>(bc.h) * bc.w;

            // unpool + ReLU mask
            AlignedVector<T> dpre(static_cast<std::size_t>(out) * hw, T(0));
            for (std::size_t j = 0; j < dout.size(); ++j) {
                const int src = bc.arg[j];
                if (bc.pre[static_cast<std::size_t>(src)] > T(0)) dpre[static_cast<std::size_t>(src)] += dout[j];
            }
            if (dfeatures && bi == arch_.feature_tap())
                for (std::size_t j = 0; j < dpre.size(); ++j) dpre[j] += dfeatures[j];

            ConstMapMat dpre_m(dpre.data(), out, static_cast<Eigen::Index>(hw));
            if (grads) {
                MapMat dw((*grads)[2 * bi].data.data(), out, static_cast<Eigen::Index>(in) * k * k);
                dw.noalias() = dpre_m * bc.cols.transpose();
                auto& db = (*grads)[2 * bi + 1].data;
                // plain loop: Eigen's vectorized sum depends on pointer alignment
                for (int o = 0; o < out; ++o) {
                    T acc = 0;
                    const T* row = dpre.data() + static_cast<std::size_t>(o) * hw;
                    for (std::size_t j = 0; j < hw; ++j) acc += row[j];
                    db[static_cast<std::size_t>(o)] = acc;
                }
            }
            if (bi == 0 && !dinput) break;
            const Tensor<T>& wt = params_[2 * bi];
            ConstMapMat wmat(wt.data.data(), out, static_cast<Eigen::Index>(in) * k * k);
            Mat dcols = wmat.transpose() * dpre_m;
            if (bi == 0) {
                col2im(dcols, in, bc.h, bc.w, k, dinput);
            } else {
                dout.assign(static_cast<std::size_t>(in) * hw, T(0));
                col2im(dcols, in, bc.h, bc.w, k, dout.data());
            }
        }
    }

    Architecture arch_;
    std::vector<Tensor<T>> params_;
};

// ---------------------------------------------------------------------------
// Losses

template <typename T>
struct LossGrad {
    double value = 0.0;
    Tensor<T> grad;  // gradient of `value` w.r.t. the loss input
};

/// Mean softmax cross-entropy, computed with log-sum-exp.
template <typename T>
LossGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.shape.size() != 2) throw ShapeError("logits must be [B, classes]");
    const int b = logits.shape[0], classes = logits.shape[1];
    if (static_cast<int>(labels.size()) != b) throw ShapeError("label count does not match batch");
    LossGrad<T> out;
    out.grad = Tensor<T>(logits.shape);
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= classes) throw Error("label " + std::to_string(label) + " out of range");
        const T* z = logits.slice(static_cast<std::size_t>(i));
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < classes; ++j) m = std::max(m, double(z[j]));
        double s = 0.0;
        for (int j = 0; j < classes; ++j) s += std::exp(double(z[j]) - m);
        const double lse = m + std::log(s);
        total += lse - double(z[label]);
        T* g = out.grad.slice(static_cast<std::size_t>(i));
        for (int j = 0; j < classes; ++j) {
            const double pj = std::exp(double(z[j]) - lse);
            g[j] = static_cast<T>((pj - (j == label ? 1.0 : 0.0)) / b);
        }
    }
    out.value = total / b;
    return out;
}

/// Mean over samples of (1 + cos(clean_i, noisy_i)) / 2. The clean features
/// are treated as constants; the gradient is w.r.t. the noisy features.
/// A zero-norm vector gives cosine 0 and no gradient.
template <typename T>
LossGrad<T> similarity_loss(const Tensor<T>& clean, const Tensor<T>& noisy) {
    if (clean.shape != noisy.shape || clean.shape.empty()) throw ShapeError("feature shapes differ");
    const std::size_t b = static_cast<std::size_t>(clean.shape[0]);
    const std::size_t n = clean.stride0();
    LossGrad<T> out;
    out.grad = Tensor<T>(noisy.shape);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const T* a = clean.slice(i);
        const T* v = noisy.slice(i);
        double dot = 0, na = 0, nv = 0;
        for (std::size_t j = 0; j < n; ++j) {
            dot += double(a[j]) * v[j];
            na += double(a[j]) * a[j];
            nv += double(v[j]) * v[j];
        }
        if (na == 0.0 || nv == 0.0) {
            total += 0.5;
            continue;
        }
        const double norm_a = std::sqrt(na), norm_v = std::sqrt(nv);
        const double cos = dot / (norm_a * norm_v);
        total += (1.0 + cos) / 2.0;
        T* g = out.grad.slice(i);
        const double scale = 1.0 / (2.0 * double(b));
        for (std::size_t j = 0; j < n; ++j)
            g[j] = static_cast<T>(scale * (a[j] / (norm_a * norm_v) - cos * v[j] / nv));
    }
    out.value = total / double(b);
    return out;
}

struct LossConfig {
    double ce_weight = 1.0;
    double sim_weight = 1.0;

    void validate() const {
        if (ce_weight < 0 || sim_weight < 0) throw Error("loss weights must be non-negative");
        if (ce_weight == 0 && sim_weight == 0) throw Error("loss weights must not both be zero");
    }
};

struct GradRequest {
    bool params = false;
    bool input = false;
};

template <typename T>
struct LossResult {
    double value = 0.0;
    double ce = 0.0;
    double sim = 0.0;
    Tensor<T> logits;
    Gradients<T> param_grads;  // filled when requested
    Tensor<T> input_grad;      // dLoss / d(noisy batch) when requested
};

/// Tapped conv features of a batch, for use as the detached clean branch.
template <typename T>
Tensor<T> conv_features(const Network<T>& net, const Tensor<T>& batch) {
    return net.forward(batch, false).features;
}

/// ce_weight * CE(f(noisy), labels) + sim_weight * similarity(clean_features, conv(noisy)).
/// No loss term is placed on the clean logits.
template <typename T>
LossResult<T> combined_loss_with_features(const Network<T>& net, const Tensor<T>* clean_features,
                                          const Tensor<T>& noisy, std::span<const int> labels, const LossConfig& cfg,
                                          GradRequest request = {}) {
    cfg.validate();
    const bool need_cache = request.params || request.input;
    auto f = net.forward(noisy, need_cache);
    LossResult<T> r;
    auto ce = cross_entropy(f.logits, labels);
    r.ce = ce.value;
    for (T& g : ce.grad.data) g *= static_cast<T>(cfg.ce_weight);
    Tensor<T> dfeat;
    bool use_sim = cfg.sim_weight > 0;
    if (use_sim) {
        if (!clean_features) throw Error("similarity term requires clean features");
        auto sim = similarity_loss(*clean_features, f.features);
        r.sim = sim.value;
        dfeat = std::move(sim.grad);
        for (T& g : dfeat.data) g *= static_cast<T>(cfg.sim_weight);
    }
    r.value = cfg.ce_weight * r.ce + cfg.sim_weight * r.sim;
    if (need_cache)
        net.backward(f, ce.grad, use_sim ? &dfeat : nullptr, request.params ? &r.param_grads : nullptr,
                     request.input ? &r.input_grad : nullptr);
    r.logits = std::move(f.logits);
    return r;
}

template <typename T>
LossResult<T> combined_loss(const Network<T>& net, const Tensor<T>& clean, const Tensor<T>& noisy,
                            std::span<const int> labels, const LossConfig& cfg, GradRequest request = {}) {
    if (clean.shape != noisy.shape) throw ShapeError("clean and noisy batches are not aligned");
    if (cfg.sim_weight > 0) {
        const Tensor<T> feats = conv_features(net, clean);
        return combined_loss_with_features(net, &feats, noisy, labels, cfg, request);
    }
    return combined_loss_with_features<T>(net, nullptr, noisy, labels, cfg, request);
}

// ---------------------------------------------------------------------------
// Optimization

struct TrainConfig {
    double learning_rate = 1e-4;
    double momentum = 0.9;
    double lr_gamma = 0.9;
    int batch_size = 16;
    int epochs = 30;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0)) throw Error("learning rate must be positive");
        if (momentum < 0 || momentum >= 1) throw Error("momentum must lie in [0, 1)");
        if (!(lr_gamma > 0) || lr_gamma > 1) throw Error("lr_gamma must lie in (0, 1]");
        if (batch_size < 1) throw Error("batch size must be at least 1");
        if (epochs < 0) throw Error("epochs must be non-negative");
    }
};

template <typename T>
struct SgdState {
    Gradients<T> velocity;
};

/// v <- momentum * v + g;  theta <- theta - lr * v
template <typename T>
void sgd_step(std::vector<Tensor<T>>& params, const Gradients<T>& grads, double lr, double momentum,
              SgdState<T>& state) {
    if (grads.size() != params.size()) throw ShapeError("gradient list does not match parameters");
    if (state.velocity.empty())
        for (const auto& p : params) state.velocity.emplace_back(p.shape);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape != params[i].shape || state.velocity[i].shape != params[i].shape)
            throw ShapeError("gradient shape mismatch at parameter " + std::to_string(i));
        auto& v = state.velocity[i].data;
        auto& p = params[i].data;
        const auto& g = grads[i].data;
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = static_cast<T>(momentum) * v[j] + g[j];
            p[j] -= static_cast<T>(lr) * v[j];
        }
    }
}

/// Exponential schedule: base_lr * gamma^epoch.
inline double exp_lr(int epoch, double base_lr, double gamma) {
    if (epoch < 0) throw Error("epoch must be non-negative");
    return base_lr * std::pow(gamma, epoch);
}

// ---------------------------------------------------------------------------
// Checkpoints: "UEVSNET1", architecture descriptor (int32 LE: in_channels,
// height, width, kernel, pool, num_classes, block count, widths...), the
// input offset as float32, then
// every parameter tensor as little-endian float32 in layer order.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw Error("truncated binary file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline float get_f32(std::string_view in, std::size_t& pos) { return std::bit_cast<float>(get_u32(in, pos)); }

} // namespace detail

template <typename T>
std::string serialize_network(const Network<T>& net) {
    std::string out = "UEVSNET1";
    const Architecture& a = net.arch();
    for (int v : {a.in_channels, a.height, a.width, a.kernel, int(a.pool), a.num_classes,
                  int(a.conv_channels.size())})
        detail::put_u32(out, std::uint32_t(v));
    for (int c : a.conv_channels) detail::put_u32(out, std::uint32_t(c));
    detail::put_f32(out, static_cast<float>(a.input_offset));
    for (const auto& p : net.params())
        for (T v : p.data) detail::put_f32(out, static_cast<float>(v));
    return out;
}

template <typename T>
Network<T> parse_network(std::string_view bytes) {
    if (bytes.substr(0, 8) != "UEVSNET1") throw Error("not a UEVSNET1 checkpoint");
    std::size_t pos = 8;
    Architecture a;
    a.in_channels = int(detail::get_u32(bytes, pos));
    a.height = int(detail::get_u32(bytes, pos));
    a.width = int(detail::get_u32(bytes, pos));
    a.kernel = int(detail::get_u32(bytes, pos));
    a.pool = detail::get_u32(bytes, pos) != 0;
    a.num_classes = int(detail::get_u32(bytes, pos));
    const std::uint32_t blocks = detail::get_u32(bytes, pos);
    if (blocks > 64) throw Error("implausible block count in checkpoint");
    a.conv_channels.resize(blocks);
    for (auto& c : a.conv_channels) c = int(detail::get_u32(bytes, pos));
    a.input_offset = detail::get_f32(bytes, pos);
    Network<T> net(a, 0);
    for (auto& p : net.params())
        for (T& v : p.data) v = static_cast<T>(detail::get_f32(bytes, pos));
    if (pos != bytes.size()) throw Error("trailing bytes in checkpoint");
    return net;
}

} // namespace uevs
