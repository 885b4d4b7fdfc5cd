#pragma once

// Error-minimizing noise for event stacks: signed-gradient inner optimizers,
// the alternating surrogate/noise crafting loop, ternary projection,
// embedding into stacks, bank mixing, and dataset poisoning.

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uevs/error.hpp"
#include "uevs/events.hpp"
#include "uevs/net.hpp"
#include "uevs/parallel.hpp"
#include "uevs/random.hpp"
#include "uevs/stack.hpp"
#include "uevs/train.hpp"

namespace uevs {

struct PGDConfig {
    int steps = 10;
    double epsilon = 0.5;
    double alpha = 0.8 / 255.0;
    bool full_loss = true;  // false: cross-entropy only for the inner gradient

    void validate() const {
        if (steps < 0) throw Error("PGD step count must be non-negative");
        if (!(epsilon > 0)) throw Error("epsilon must be positive");
        if (!(alpha > 0)) throw Error("PGD step size must be positive");
    }
};

inline constexpr double kFgsmAlpha = 8.0 / 255.0;

enum class NoiseMode : std::uint8_t { ClassWise = 0, SampleWise = 1 };

inline std::string to_string(NoiseMode m) { return m == NoiseMode::ClassWise ? "class" : "sample"; }

inline NoiseMode parse_noise_mode(const std::string& s) {
    if (s == "class" || s == "class-wise") return NoiseMode::ClassWise;
    if (s == "sample" || s == "sample-wise") return NoiseMode::SampleWise;
    throw Error("unknown noise mode '" + s + "' (expected class or sample)");
}

struct ProjectionConfig {
    double tau = 0.75;

    void validate() const {
        if (!(tau >= 0 && tau <= 1)) throw Error("tau must lie in [0, 1]");
    }
};

struct CraftConfig {
    int iterations = 10;  // surrogate SGD steps per round (M)
    double gamma = 0.99;  // stop once training accuracy under the noise reaches this
    int max_rounds = 100;
    NoiseMode mode = NoiseMode::SampleWise;
    int channels = kDefaultChannels;
    PGDConfig pgd;
    LossConfig loss;
    TrainConfig train;

    void validate() const {
        if (iterations < 1) throw Error("surrogate iterations per round must be at least 1");
        if (!(gamma > 0 && gamma <= 1)) throw Error("gamma must lie in (0, 1]");
        if (max_rounds < 1) throw Error("max_rounds must be at least 1");
        if (channels < 1) throw Error("channel count must be positive");
        pgd.validate();
        loss.validate();
        train.validate();
    }
};

/// Raw noise grids of shape [C, H, W]. Class-wise banks are keyed by label,
/// sample-wise banks by sample index.
struct NoiseBank {
    NoiseMode mode = NoiseMode::SampleWise;
    double epsilon = 0.5;
    std::vector<std::uint32_t> keys;
    std::vector<Tensor<float>> noises;

    std::size_t size() const { return noises.size(); }

    double max_abs() const {
        double m = 0;
        for (const auto& n : noises)
            for (float v : n.data) m = std::max(m, double(std::abs(v)));
        return m;
    }

    bool within_epsilon() const { return max_abs() <= epsilon; }

    /// Noise applied to sample i carrying `label`.
    const Tensor<float>& noise_for(std::size_t i, int label) const {
        const std::uint32_t key = mode == NoiseMode::ClassWise ? std::uint32_t(label) : std::uint32_t(i);
        if (key < keys.size() && keys[key] == key) return noises[key];
        for (std::size_t j = 0; j < keys.size(); ++j)
            if (keys[j] == key) return noises[j];
        throw SampleError(i, "noise bank has no entry for key " + std::to_string(key));
    }

    friend bool operator==(const NoiseBank&, const NoiseBank&) = default;
};

inline NoiseBank zero_bank(NoiseMode mode, std::size_t count, int channels, int height, int width,
                           double epsilon = 0.5) {
    NoiseBank b;
    b.mode = mode;
    b.epsilon = epsilon;
    for (std::size_t i = 0; i < count; ++i) {
        b.keys.push_back(std::uint32_t(i));
        b.noises.emplace_back(std::vector<int>{channels, height, width});
    }
    return b;
}

namespace detail {

template <typename T>
T sign(T v) {
    return T((v > 0) - (v < 0));
}

inline Tensor<float> stack_tensor(const EventStack& s) {
    Tensor<float> t({s.channels, s.height, s.width});
    std::copy(s.cells.begin(), s.cells.end(), t.data.begin());
    return t;
}

inline LossConfig inner_loss(const PGDConfig& pgd, const LossConfig& cfg) {
    return pgd.full_loss ? cfg : LossConfig{cfg.ce_weight > 0 ? cfg.ce_weight : 1.0, 0.0};
}

/// Signed-gradient descent on the noise of a batch. `delta` is [B, C, H, W]
/// and is updated in place. Returns the loss seen at the last gradient
/// evaluation.
inline double pgd_batch(const Network<float>& net, const Tensor<float>& clean, std::span<const int> labels,
                        Tensor<float>& delta, const PGDConfig& pgd, const LossConfig& loss) {
    if (delta.shape != clean.shape) throw ShapeError("noise and batch shapes differ");
    const LossConfig cfg = inner_loss(pgd, loss);
    Tensor<float> feats;
    if (cfg.sim_weight > 0) feats = conv_features(net, clean);
    const float eps = float(pgd.epsilon), alpha = float(pgd.alpha);
    double last = 0;
    Tensor<float> noisy(clean.shape);
    for (int step = 0; step < pgd.steps; ++step) {
        for (std::size_t j = 0; j < noisy.numel(); ++j) noisy.data[j] = clean.data[j] + delta.data[j];
        auto r = combined_loss_with_features<float>(net, cfg.sim_weight > 0 ? &feats : nullptr, noisy, labels, cfg,
                                                    {false, true});
        last = r.value;
        const auto& g = r.input_grad.data;
        for (std::size_t j = 0; j < delta.numel(); ++j)
            delta.data[j] = std::clamp(delta.data[j] - alpha * sign(g[j]), -eps, eps);
    }
    return last;
}

/// Signed-gradient descent on one noise grid shared by `members`. Each step
/// sums the loss gradient over all members (in batches of `batch_size`), so a
/// class grid takes S steps per sweep whatever the class size. Returns the
/// mean loss at the last step.
inline double pgd_shared(const Network<float>& net, const std::vector<EventStack>& stacks,
                         std::span<const int> all_labels, std::span<const std::size_t> members, Tensor<float>& delta,
                         const PGDConfig& pgd, const LossConfig& loss, std::size_t batch_size) {
    const LossConfig cfg = inner_loss(pgd, loss);
    const float eps = float(pgd.epsilon), alpha = float(pgd.alpha);
    const std::size_t n = delta.numel();
    struct Part {
        Tensor<float> clean, feats;
        std::vector<int> labels;
    };
    std::vector<Part> parts;
    for (std::size_t b = 0; b < members.size(); b += batch_size) {
        Part p;
        const auto idx = members.subspan(b, std::min(batch_size, members.size() - b));
        p.clean = gather_batch(stacks, idx);
        for (std::size_t i : idx) p.labels.push_back(all_labels[i]);
        if (cfg.sim_weight > 0) p.feats = conv_features(net, p.clean);
        parts.push_back(std::move(p));
    }
    double last = 0;
    std::vector<double> grad(n);
    for (int step = 0; step < pgd.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss_sum = 0;
        for (const Part& p : parts) {
            Tensor<float> noisy = p.clean;
            const std::size_t rows = std::size_t(p.clean.shape[0]);
            for (std::size_t i = 0; i < rows; ++i) {
                float* dst = noisy.slice(i);
                for (std::size_t j = 0; j < n; ++j) dst[j] += delta.data[j];
            }
            auto r = combined_loss_with_features<float>(net, cfg.sim_weight > 0 ? &p.feats : nullptr, noisy,
                                                        p.labels, cfg, {false, true});
            loss_sum += r.value * double(rows);
            for (std::size_t i = 0; i < rows; ++i) {
                const float* g = r.input_grad.slice(i);
                for (std::size_t j = 0; j < n; ++j) grad[j] += g[j];
            }
        }
        last = loss_sum / double(members.size());
        for (std::size_t j = 0; j < n; ++j)
            delta.data[j] = std::clamp(delta.data[j] - alpha * float(sign(grad[j])), -eps, eps);
    }
    return last;
}

} // namespace detail

/// S steps of delta <- clip_eps(delta - alpha * sign(grad L)) for one stack.
inline Tensor<float> pgd_perturb(const Network<float>& net, const EventStack& stack, int label,
                                 const Tensor<float>& delta_init, const PGDConfig& pgd, const LossConfig& loss) {
    pgd.validate();
    const std::vector<int> shape{stack.channels, stack.height, stack.width};
    if (delta_init.shape != shape) throw ShapeError("initial noise does not match the stack");
    for (float v : delta_init.data)
        if (!(std::abs(v) <= pgd.epsilon)) throw Error("initial noise lies outside the epsilon ball");
    Tensor<float> clean({1, stack.channels, stack.height, stack.width});
    std::copy(stack.cells.begin(), stack.cells.end(), clean.data.begin());
    Tensor<float> delta({1, stack.channels, stack.height, stack.width});
    delta.data = delta_init.data;
    const int labels[1] = {label};
    detail::pgd_batch(net, clean, labels, delta, pgd, loss);
    Tensor<float> out(shape);
    out.data = std::move(delta.data);
    return out;
}

/// One signed-gradient descent step from the clean stack: delta = -alpha * sign(grad L).
inline Tensor<float> fgsm_perturb(const Network<float>& net, const EventStack& stack, int label, double alpha,
                                  const LossConfig& loss) {
    PGDConfig pgd;
    pgd.steps = 1;
    pgd.alpha = alpha;
    pgd.epsilon = alpha;
    return pgd_perturb(net, stack, label, Tensor<float>({stack.channels, stack.height, stack.width}), pgd, loss);
}

// ---------------------------------------------------------------------------
// Crafting loop

struct CraftRound {
    int round = 0;
    double accuracy = 0;    // training accuracy of the surrogate under the current noise
    double train_loss = 0;  // mean surrogate loss over the round's SGD steps
    double noise_loss = 0;  // mean loss at the last PGD step of the sweep
    double max_abs_noise = 0;
};

struct CraftResult {
    NoiseBank bank;
    Network<float> surrogate;
    std::vector<CraftRound> history;
    bool converged = false;
    int best_round = 0;
    double wall_time_s = 0;
};

inline nlohmann::json to_json(const CraftResult& r, const CraftConfig& cfg, bool include_wall_time = true) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : r.history)
        history.push_back({{"round", h.round},
                           {"accuracy", h.accuracy},
                           {"train_loss", h.train_loss},
                           {"noise_loss", h.noise_loss},
                           {"max_abs_noise", h.max_abs_noise}});
    nlohmann::json doc = {{"mode", to_string(cfg.mode)},
                          {"converged", r.converged},
                          {"warning", r.converged ? "" : "accuracy did not reach gamma within max_rounds"},
                          {"best_round", r.best_round},
                          {"history", history},
                          {"config",
                           {{"iterations", cfg.iterations},
                            {"gamma", cfg.gamma},
                            {"max_rounds", cfg.max_rounds},
                            {"channels", cfg.channels},
                            {"steps", cfg.pgd.steps},
                            {"epsilon", cfg.pgd.epsilon},
                            {"alpha", cfg.pgd.alpha},
                            {"full_loss", cfg.pgd.full_loss},
                            {"ce_weight", cfg.loss.ce_weight},
                            {"sim_weight", cfg.loss.sim_weight},
                            {"learning_rate", cfg.train.learning_rate},
                            {"momentum", cfg.train.momentum},
                            {"batch_size", cfg.train.batch_size}}}};
    if (include_wall_time) doc["wall_time_s"] = r.wall_time_s;
    return doc;
}

/// Called after every round with the round record and the current bank.
using CraftObserver = std::function<void(const CraftRound&, const NoiseBank&)>;

/// Alternates M surrogate SGD steps on noise-injected batches with a PGD
/// sweep over the whole dataset, until the surrogate's training accuracy
/// under the noise reaches gamma or max_rounds is hit. Class grids are swept
/// in label order, each step using the gradient of the whole class. Returns
/// the bank of the most accurate round.
inline CraftResult craft(const Dataset& data, const CraftConfig& cfg, std::uint64_t seed,
                         const CraftObserver& observer = {}) {
    cfg.validate();
    if (data.size() == 0) throw Error("cannot craft noise for an empty dataset");
    if (data.num_classes() < 1) throw Error("dataset declares no classes");
    const auto start = std::chrono::steady_clock::now();
    const auto stacks = build_stacks(data, cfg.channels);
    const auto labels = labels_of(data);
    const int C = cfg.channels, H = stacks[0].height, W = stacks[0].width;
    const std::size_t n = data.size(), cells = stacks[0].cells.size();
    const int classes = data.num_classes();
    const bool class_wise = cfg.mode == NoiseMode::ClassWise;

    NoiseBank bank = zero_bank(cfg.mode, class_wise ? std::size_t(classes) : n, C, H, W, cfg.pgd.epsilon);
    {
        Rng rng(mix_seed(seed, 0x64656c74));
        const double r = cfg.pgd.epsilon / 10;
        for (auto& t : bank.noises)
            for (float& v : t.data) v = float(uniform(rng, -r, r));
    }
    auto entry = [&](std::size_t i) -> Tensor<float>& {
        return bank.noises[class_wise ? std::size_t(labels[i]) : i];
    };
    auto noisy_batch = [&](std::span<const std::size_t> idx, Tensor<float>& clean) {
        clean = gather_batch(stacks, idx);
        Tensor<float> noisy = clean;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const auto& d = entry(idx[j]).data;
            float* dst = noisy.slice(j);
            for (std::size_t k = 0; k < cells; ++k) dst[k] += d[k];
        }
        return noisy;
    };

    CraftResult out{bank, Network<float>(surrogate_architecture(C, H, W, classes), mix_seed(seed, 0x73757272)), {},
                    false, 0, 0};
    Network<float>& net = out.surrogate;
    SgdState<float> sgd;
    std::vector<std::size_t> order(n);
    std::size_t cursor = n;
    std::uint64_t pass = 0;
    double best_acc = -1;
    const std::size_t bs = std::size_t(cfg.train.batch_size);

    std::vector<std::vector<std::size_t>> by_class{std::size_t(classes)};
    for (std::size_t i = 0; i < n; ++i) by_class[std::size_t(labels[i])].push_back(i);

    for (int round = 1; round <= cfg.max_rounds; ++round) {
        CraftRound rec;
        rec.round = round;

        // surrogate updates on noisy data
        std::vector<std::size_t> idx;
        std::vector<int> batch_labels;
        for (int it = 0; it < cfg.iterations; ++it) {
            idx.clear();
            while (idx.size() < std::min(bs, n)) {
                if (cursor == n) {
                    std::iota(order.begin(), order.end(), 0);
                    Rng rng(mix_seed(seed, 0x6f726472, pass++));
                    shuffle(order, rng);
                    cursor = 0;
                }
                idx.push_back(order[cursor++]);
            }
            batch_labels.clear();
            for (std::size_t i : idx) batch_labels.push_back(labels[i]);
            Tensor<float> clean;
            const Tensor<float> noisy = noisy_batch(idx, clean);
            auto r = combined_loss(net, clean, noisy, batch_labels, cfg.loss, {true, false});
            sgd_step(net.params(), r.param_grads, cfg.train.learning_rate, cfg.train.momentum, sgd);
            rec.train_loss += r.value / cfg.iterations;
        }

        // noise sweep
        double loss_sum = 0;
        std::size_t loss_count = 0;
        if (class_wise) {
            for (std::size_t c = 0; c < by_class.size(); ++c) {
                if (by_class[c].empty()) continue;
                loss_sum += detail::pgd_shared(net, stacks, labels, by_class[c], bank.noises[c], cfg.pgd, cfg.loss,
                                               bs) *
                            double(by_class[c].size());
                loss_count += by_class[c].size();
            }
        } else {
            for (std::size_t b = 0; b < n; b += bs) {
                std::vector<std::size_t> part(std::min(bs, n - b));
                std::iota(part.begin(), part.end(), b);
                batch_labels.clear();
                for (std::size_t i : part) batch_labels.push_back(labels[i]);
                const Tensor<float> clean = gather_batch(stacks, part);
                Tensor<float> delta(clean.shape);
                for (std::size_t j = 0; j < part.size(); ++j)
                    std::copy(bank.noises[part[j]].data.begin(), bank.noises[part[j]].data.end(), delta.slice(j));
                loss_sum += detail::pgd_batch(net, clean, batch_labels, delta, cfg.pgd, cfg.loss) * double(part.size());
                loss_count += part.size();
                for (std::size_t j = 0; j < part.size(); ++j)
                    std::copy(delta.slice(j), delta.slice(j) + cells, bank.noises[part[j]].data.begin());
            }
        }
        rec.noise_loss = loss_count ? loss_sum / double(loss_count) : 0.0;
        rec.max_abs_noise = bank.max_abs();

        // training accuracy under the current noise
        std::size_t correct = 0;
        for (std::size_t b = 0; b < n; b += 64) {
            std::vector<std::size_t> part(std::min<std::size_t>(64, n - b));
            std::iota(part.begin(), part.end(), b);
            Tensor<float> clean;
            const auto f = net.forward(noisy_batch(part, clean));
            for (std::size_t j = 0; j < part.size(); ++j) correct += argmax_row(f.logits, j) == labels[part[j]];
        }
        rec.accuracy = double(correct) / double(n);
        out.history.push_back(rec);
        if (observer) observer(rec, bank);
        if (rec.accuracy >= best_acc) {
            best_acc = rec.accuracy;
            out.bank = bank;
            out.best_round = round;
        }
        if (rec.accuracy >= cfg.gamma) {
            out.converged = true;
            break;
        }
    }
    out.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

// ---------------------------------------------------------------------------
// Projection and embedding

/// Ternary projection: cells below mu - tau * pi become -0.5, cells above
/// mu + tau * pi become +0.5, the rest 0, with mu the mean of the grid and pi
/// half its value range.
inline Tensor<float> project(const Tensor<float>& delta, const ProjectionConfig& proj = {}) {
    proj.validate();
    if (!delta.all_finite()) throw NumericError("noise contains non-finite values");
    Tensor<float> out(delta.shape);
    if (delta.data.empty()) return out;
    double sum = 0, lo = delta.data[0], hi = delta.data[0];
    for (float v : delta.data) {
        sum += v;
        lo = std::min(lo, double(v));
        hi = std::max(hi, double(v));
    }
    const double mu = sum / double(delta.numel());
    const double pi = (hi - lo) / 2;
    if (pi == 0) return out;
    const double lower = mu - proj.tau * pi, upper = mu + proj.tau * pi;
    for (std::size_t i = 0; i < delta.numel(); ++i) {
        const double v = delta.data[i];
        out.data[i] = v < lower ? -0.5f : v > upper ? 0.5f : 0.0f;
    }
    return out;
}

/// clip(stack + projected noise, 0, 1); stays inside {0, 0.5, 1}.
inline EventStack embed(const EventStack& stack, const Tensor<float>& projected) {
    if (projected.shape != std::vector<int>{stack.channels, stack.height, stack.width})
        throw ShapeError("projected noise " + shape_string(projected.shape) + " does not match the stack");
    EventStack out = stack;
    for (std::size_t i = 0; i < out.cells.size(); ++i) {
        const float d = projected.data[i];
        if (!is_stack_value(stack.cells[i])) throw Error("stack cell outside {0, 0.5, 1}");
        if (d != -0.5f && d != 0.0f && d != 0.5f) throw Error("projected noise outside {-0.5, 0, 0.5}");
        out.cells[i] = std::clamp(stack.cells[i] + d, 0.0f, 1.0f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mixing of class-wise and sample-wise banks (on raw noise)

namespace detail {

inline void check_mixable(const NoiseBank& bank_c, const NoiseBank& bank_s, std::span<const int> labels) {
    if (bank_c.mode != NoiseMode::ClassWise || bank_s.mode != NoiseMode::SampleWise)
        throw Error("mixing needs a class-wise and a sample-wise bank");
    if (bank_s.size() != labels.size())
        throw Error("sample-wise bank covers " + std::to_string(bank_s.size()) + " samples, dataset has " +
                    std::to_string(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (bank_c.noise_for(i, labels[i]).shape != bank_s.noise_for(i, labels[i]).shape)
            throw SampleError(i, "class-wise and sample-wise noise shapes differ");
}

} // namespace detail

/// Per sample a fair seeded coin picks the class-wise or the sample-wise grid.
inline NoiseBank mix_union(const NoiseBank& bank_c, const NoiseBank& bank_s, std::span<const int> labels,
                           std::uint64_t seed, std::vector<bool>* picked_class = nullptr) {
    detail::check_mixable(bank_c, bank_s, labels);
    NoiseBank out;
    out.mode = NoiseMode::SampleWise;
    out.epsilon = std::max(bank_c.epsilon, bank_s.epsilon);
    Rng rng(mix_seed(seed, 0x756e696f));
    if (picked_class) picked_class->clear();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool use_class = uniform01(rng) < 0.5;
        if (picked_class) picked_class->push_back(use_class);
        out.keys.push_back(std::uint32_t(i));
        out.noises.push_back(use_class ? bank_c.noise_for(i, labels[i]) : bank_s.noise_for(i, labels[i]));
    }
    return out;
}

/// Per sample clip(delta_c + delta_s, -eps, eps) with eps the class-wise bank's bound.
inline NoiseBank mix_add(const NoiseBank& bank_c, const NoiseBank& bank_s, std::span<const int> labels) {
    detail::check_mixable(bank_c, bank_s, labels);
    NoiseBank out;
    out.mode = NoiseMode::SampleWise;
    out.epsilon = bank_c.epsilon;
    const float eps = float(bank_c.epsilon);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Tensor<float> sum = bank_c.noise_for(i, labels[i]);
        const auto& s = bank_s.noise_for(i, labels[i]).data;
        for (std::size_t j = 0; j < sum.numel(); ++j) sum.data[j] = std::clamp(sum.data[j] + s[j], -eps, eps);
        out.keys.push_back(std::uint32_t(i));
        out.noises.push_back(std::move(sum));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Poisoning

/// build_stack -> project -> embed -> reconstruct for one stream.
inline EventStream poison_stream(const EventStream& s, const Tensor<float>& delta, const ProjectionConfig& proj,
                                 int channels) {
    const EventStack stack = build_stack(s, channels);
    return reconstruct_stream(embed(stack, project(delta, proj)), s);
}

inline Dataset poison_dataset(const Dataset& d, const NoiseBank& bank, const ProjectionConfig& proj = {},
                              int channels = kDefaultChannels) {
    proj.validate();
    if (bank.mode == NoiseMode::SampleWise && bank.size() != d.size())
        throw Error("sample-wise bank covers " + std::to_string(bank.size()) + " samples, dataset has " +
                    std::to_string(d.size()));
    Dataset out;
    out.class_names = d.class_names;
    out.samples.resize(d.size());
    parallel_for(d.size(), [&](std::size_t i) {
        try {
            const auto& s = d.samples[i];
            out.samples[i] = {poison_stream(s.stream, bank.noise_for(i, s.label), proj, channels), s.label};
        } catch (const SampleError&) {
            throw;
        } catch (const std::exception& e) {
            throw SampleError(i, e.what());
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Bank files: "UEVSBANK1", mode byte, epsilon (float64 LE), entry count
// (uint32 LE), then per entry key, C, H, W (uint32 LE) and C*H*W float32 LE.

inline std::string serialize_bank(const NoiseBank& bank) {
    std::string out = "UEVSBANK1";
    out.push_back(static_cast<char>(bank.mode));
    const auto eps = std::bit_cast<std::uint64_t>(bank.epsilon);
    detail::put_u32(out, std::uint32_t(eps & 0xffffffffu));
    detail::put_u32(out, std::uint32_t(eps >> 32));
    detail::put_u32(out, std::uint32_t(bank.size()));
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto& t = bank.noises[i];
        if (t.shape.size() != 3) throw ShapeError("bank entries must be [C, H, W]");
        detail::put_u32(out, bank.keys[i]);
        for (int d : t.shape) detail::put_u32(out, std::uint32_t(d));
        for (float v : t.data) detail::put_f32(out, v);
    }
    return out;
}

inline NoiseBank parse_bank(std::string_view bytes) {
    if (bytes.substr(0, 9) != "UEVSBANK1") throw Error("not a UEVSBANK1 noise bank");
    if (bytes.size() < 10) throw Error("truncated binary file");
    std::size_t pos = 9;
    NoiseBank bank;
    const auto mode = static_cast<std::uint8_t>(bytes[pos++]);
    if (mode > 1) throw Error("unknown noise mode byte " + std::to_string(mode));
    bank.mode = NoiseMode(mode);
    const std::uint64_t lo = detail::get_u32(bytes, pos), hi = detail::get_u32(bytes, pos);
    bank.epsilon = std::bit_cast<double>(lo | (hi << 32));
    const std::uint32_t count = detail::get_u32(bytes, pos);
    for (std::uint32_t i = 0; i < count; ++i) {
        bank.keys.push_back(detail::get_u32(bytes, pos));
        std::vector<int> shape(3);
        for (int& d : shape) d = int(detail::get_u32(bytes, pos));
        const std::size_t numel = Tensor<float>::count(shape);
        if (numel > (bytes.size() - pos) / 4) throw Error("truncated binary file");
        Tensor<float> t(shape);
        for (float& v : t.data) v = detail::get_f32(bytes, pos);
        bank.noises.push_back(std::move(t));
    }
    if (pos != bytes.size()) throw Error("trailing bytes in noise bank");
    return bank;
}

inline void save_bank(const std::filesystem::path& path, const NoiseBank& bank) {
    write_file(path, serialize_bank(bank));
}

inline NoiseBank load_bank(const std::filesystem::path& path) { return parse_bank(read_file(path)); }

} // namespace uevs
