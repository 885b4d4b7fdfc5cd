#pragma once

// Distortion metrics between event stacks. Cell values live in [0, 1], so the
// dynamic range is fixed at 1.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "uevs/error.hpp"
#include "uevs/events.hpp"
#include "uevs/parallel.hpp"
#include "uevs/stack.hpp"

namespace uevs {

inline constexpr double kPsnrCap = 99.0;

namespace detail {

inline void check_same_shape(const EventStack& a, const EventStack& b) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw ShapeError("stacks differ in shape");
}

} // namespace detail

inline double mse(const EventStack& a, const EventStack& b) {
    detail::check_same_shape(a, b);
    if (a.cells.empty()) return 0.0;
    double sum = 0;
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        const double d = double(a.cells[i]) - double(b.cells[i]);
        sum += d * d;
    }
    return sum / double(a.cells.size());
}

inline double psnr_from_mse(double m) {
    if (m < 0) throw Error("mse must be non-negative");
    if (m == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

inline double psnr(const EventStack& a, const EventStack& b) { return psnr_from_mse(mse(a, b)); }

struct SsimConfig {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

namespace detail {

inline std::vector<double> gaussian_taps(int n, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(n));
    const double c = (n - 1) / 2.0;
    double sum = 0;
    for (int i = 0; i < n; ++i) sum += g[std::size_t(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    for (double& v : g) v /= sum;
    return g;
}

/// Valid-mode separable Gaussian filter of one h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
    const int n = int(g.size());
    const int oh = h - n + 1, ow = w - n + 1;
    std::vector<double> rows(std::size_t(h) * ow), out(std::size_t(oh) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += g[std::size_t(k)] * img[std::size_t(y) * w + x + k];
            rows[std::size_t(y) * ow + x] = s;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += g[std::size_t(k)] * rows[std::size_t(y + k) * ow + x];
            out[std::size_t(y) * ow + x] = s;
        }
    return out;
}

} // namespace detail

/// SSIM of each channel over all valid window positions, averaged over channels.
inline double ssim(const EventStack& a, const EventStack& b, const SsimConfig& cfg = {}) {
    detail::check_same_shape(a, b);
    const int h = a.height, w = a.width, n = cfg.window;
    if (h < n || w < n) throw ShapeError("stack smaller than the SSIM window");
    if (a.channels == 0) throw ShapeError("stack has no channels");
    const auto g = detail::gaussian_taps(n, cfg.sigma);
    const double c1 = cfg.k1 * cfg.k1, c2 = cfg.k2 * cfg.k2;
    const std::size_t plane = a.plane();

    double total = 0;
    for (int c = 0; c < a.channels; ++c) {
        std::vector<double> pa(plane), pb(plane), aa(plane), bb(plane), ab(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            pa[i] = a.cells[c * plane + i];
            pb[i] = b.cells[c * plane + i];
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = detail::filter_valid(pa, h, w, g), mu_b = detail::filter_valid(pb, h, w, g);
        const auto e_aa = detail::filter_valid(aa, h, w, g), e_bb = detail::filter_valid(bb, h, w, g);
        const auto e_ab = detail::filter_valid(ab, h, w, g);
        double sum = 0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = e_aa[i] - mu_a[i] * mu_a[i];
            const double vb = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            sum += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        }
        total += sum / double(mu_a.size());
    }
    return total / a.channels;
}

struct ImperceptibilityReport {
    double psnr_db = 0;
    double ssim = 0;
    double mse = 0;
    std::size_t pairs = 0;
    int channels = 0;
};

inline nlohmann::json to_json(const ImperceptibilityReport& r) {
    return {{"psnr_db", r.psnr_db}, {"ssim", r.ssim}, {"mse", r.mse}, {"pairs", r.pairs}, {"channels", r.channels}};
}

/// Mean PSNR, SSIM and MSE between the stacks of paired samples.
inline ImperceptibilityReport imperceptibility(const Dataset& clean, const Dataset& other,
                                               int channels = kDefaultChannels) {
    if (clean.size() != other.size())
        throw Error("datasets differ in length (" + std::to_string(clean.size()) + " vs " +
                    std::to_string(other.size()) + ")");
    std::vector<std::array<double, 3>> per(clean.size());
    parallel_for(clean.size(), [&](std::size_t i) {
        try {
            const auto a = build_stack(clean.samples[i].stream, channels);
            const auto b = build_stack(other.samples[i].stream, channels);
            const double m = mse(a, b);
            per[i] = {psnr_from_mse(m), ssim(a, b), m};
        } catch (const std::exception& e) {
            throw SampleError(i, e.what());
        }
    });
    ImperceptibilityReport r;
    r.pairs = clean.size();
    r.channels = channels;
    for (const auto& v : per) {
        r.psnr_db += v[0];
        r.ssim += v[1];
        r.mse += v[2];
    }
    if (r.pairs) {
        r.psnr_db /= double(r.pairs);
        r.ssim /= double(r.pairs);
        r.mse /= double(r.pairs);
    }
    return r;
}

} // namespace uevs
