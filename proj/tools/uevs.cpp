// Command-line front end: synthesize data, craft noise, poison, pollute,
// train/evaluate victims, measure distortion, and check codec round trips.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "uevs/uevs.hpp"

namespace fs = std::filesystem;
using namespace uevs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void write_json(const fs::path& path, const nlohmann::json& doc) {
    if (path.empty()) return;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file(path, doc.dump(2) + "\n");
}

struct SynthArgs {
    GenConfig gen;
    std::string out;
};

struct CraftArgs {
    CraftConfig cfg;
    std::string data, out, history, surrogate, mode = "sample";
    bool plain_loss = false;
    std::uint64_t seed = 0;
};

struct PoisonArgs {
    std::string data, bank, out, mix_bank, mix = "none";
    ProjectionConfig proj;
    int channels = kDefaultChannels;
    std::uint64_t seed = 0;
};

struct PolluteArgs {
    std::string data, out, kind;
    PollutionSpec spec;
};

struct EvalArgs {
    std::string train, test, report, model, arch = "victim";
    TrainConfig train_cfg;
    int channels = kDefaultChannels;
    bool augment = false;
};

struct MetricsArgs {
    std::string clean, other, report;
    int channels = kDefaultChannels;
    std::uint64_t seed = 0;
};

struct RoundtripArgs {
    std::string data;
    int channels = kDefaultChannels;
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    const auto splits = gen_dataset(a.gen, a.out);
    std::cout << "synth: " << splits.train.size() << " train + " << splits.test.size() << " test streams -> " << a.out
              << "\n";
    return kExitOk;
}

int run_craft(CraftArgs a) {
    a.cfg.mode = parse_noise_mode(a.mode);
    a.cfg.pgd.full_loss = !a.plain_loss;
    const Dataset d = load_dataset(a.data);
    auto r = craft(d, a.cfg, a.seed, [](const CraftRound& rec, const NoiseBank&) {
        std::cout << "round " << rec.round << "  accuracy " << rec.accuracy << "  train_loss " << rec.train_loss
                  << "  noise_loss " << rec.noise_loss << "\n";
    });
    save_bank(a.out, r.bank);
    write_json(a.history, to_json(r, a.cfg));
    if (!a.surrogate.empty()) write_file(a.surrogate, serialize_network(r.surrogate));
    std::cout << "craft: " << r.bank.size() << " " << to_string(r.bank.mode) << "-wise grids, best round "
              << r.best_round << ", max |delta| " << r.bank.max_abs() << " -> " << a.out << "\n";
    if (!r.converged)
        std::cerr << "warning: training accuracy stayed below gamma after " << a.cfg.max_rounds
                  << " rounds; the most accurate round was kept\n";
    return kExitOk;
}

int run_poison(const PoisonArgs& a) {
    const Dataset d = load_dataset(a.data);
    NoiseBank bank = load_bank(a.bank);
    if (a.mix != "none") {
        if (a.mix_bank.empty()) throw Error("--mix needs --mix-bank");
        const NoiseBank other = load_bank(a.mix_bank);
        const NoiseBank& bc = bank.mode == NoiseMode::ClassWise ? bank : other;
        const NoiseBank& bs = bank.mode == NoiseMode::ClassWise ? other : bank;
        const auto labels = labels_of(d);
        if (a.mix == "union")
            bank = mix_union(bc, bs, labels, a.seed);
        else if (a.mix == "add")
            bank = mix_add(bc, bs, labels);
        else
            throw Error("unknown mix mode '" + a.mix + "'");
    }
    const Dataset out = poison_dataset(d, bank, a.proj, a.channels);
    save_dataset(a.out, out);
    std::cout << "poison: " << out.size() << " streams -> " << a.out << "\n";
    return kExitOk;
}

int run_pollute(PolluteArgs a) {
    a.spec.kind = parse_pollution_kind(a.kind);
    const Dataset d = load_dataset(a.data);
    const Dataset out = pollute_dataset(d, a.spec);
    save_dataset(a.out, out);
    std::cout << "pollute (" << a.kind << "): " << out.size() << " streams -> " << a.out << "\n";
    return kExitOk;
}

int run_eval(const EvalArgs& a) {
    const Dataset train = load_dataset(a.train), test = load_dataset(a.test);
    if (train.size() == 0) throw Error("training split is empty");
    const int h = train.samples[0].stream.height, w = train.samples[0].stream.width;
    Architecture arch;
    if (a.arch == "victim")
        arch = victim_architecture(a.channels, h, w, train.num_classes());
    else if (a.arch == "surrogate")
        arch = surrogate_architecture(a.channels, h, w, train.num_classes());
    else
        throw Error("unknown architecture '" + a.arch + "'");
    const AugmentSpec aug = robustness_suite(h, w);
    auto r = train_classifier(train, test, arch, a.train_cfg, a.channels, a.augment ? &aug : nullptr);
    write_json(a.report, to_json(r.report));
    if (!a.model.empty()) write_file(a.model, serialize_network(r.model));
    std::cout << "epoch  lr         loss      train_acc\n";
    for (const auto& e : r.report.history)
        std::printf("%5d  %.3e  %.6f  %.4f\n", e.epoch, e.learning_rate, e.train_loss, e.train_accuracy);
    std::printf("test_accuracy %.4f\n", r.report.test_accuracy);
    return kExitOk;
}

int run_metrics(const MetricsArgs& a) {
    const Dataset clean = load_dataset(a.clean), other = load_dataset(a.other);
    const auto r = imperceptibility(clean, other, a.channels);
    write_json(a.report, to_json(r));
    std::printf("pairs %zu  psnr_db %.4f  ssim %.6f  mse %.6f\n", r.pairs, r.psnr_db, r.ssim, r.mse);
    return kExitOk;
}

int run_roundtrip(const RoundtripArgs& a) {
    const Dataset d = load_dataset(a.data, ParseOptions{true});
    std::size_t failures = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& s = d.samples[i].stream;
        if (parse_stream(serialize_stream(s)) != s) {
            std::cerr << "sample " << i << ": codec round trip differs\n";
            ++failures;
            continue;
        }
        if (reconstruct_stream(build_stack(s, a.channels), s) != s) {
            std::cerr << "sample " << i << ": zero-noise reconstruction differs\n";
            ++failures;
        }
    }
    std::cout << "roundtrip: " << d.size() - failures << "/" << d.size() << " samples identical\n";
    return failures ? kExitFailure : kExitOk;
}

void add_seed(CLI::App* cmd, std::uint64_t& seed) { cmd->add_option("--seed", seed, "random seed"); }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unlearnable event streams: craft, apply and evaluate error-minimizing noise"};
    app.require_subcommand(1);
    std::optional<int> threads;
    app.add_option("--threads", threads, "worker threads (default: UEVS_THREADS or all cores)")
        ->check(CLI::PositiveNumber);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "generate a synthetic labeled dataset (train/ and test/)");
    c_synth->add_option("--out", synth.out, "output directory")->required();
    c_synth->add_option("--classes", synth.gen.classes, "class count");
    c_synth->add_option("--per-class", synth.gen.per_class, "training streams per class");
    c_synth->add_option("--width", synth.gen.width, "sensor width");
    c_synth->add_option("--height", synth.gen.height, "sensor height");
    c_synth->add_option("--duration", synth.gen.duration, "stream duration in microseconds");
    c_synth->add_option("--sigma", synth.gen.sigma, "log-brightness threshold");
    c_synth->add_option("--test-fraction", synth.gen.test_fraction, "test streams per class relative to training");
    add_seed(c_synth, synth.gen.seed);

    CraftArgs cr;
    auto* c_craft = app.add_subcommand("craft", "craft sample-wise or class-wise noise");
    c_craft->add_option("--data", cr.data, "training dataset (directory or manifest)")
        ->required()
        ->check(CLI::ExistingPath);
    c_craft->add_option("--out", cr.out, "noise bank file")->required();
    c_craft->add_option("--history", cr.history, "crafting history JSON");
    c_craft->add_option("--surrogate", cr.surrogate, "write the surrogate checkpoint here");
    c_craft->add_option("--mode", cr.mode, "sample or class")->check(CLI::IsMember({"sample", "class"}));
    c_craft->add_option("--channels", cr.cfg.channels, "time bins C");
    c_craft->add_option("--iterations", cr.cfg.iterations, "surrogate steps per round (M)");
    c_craft->add_option("--steps", cr.cfg.pgd.steps, "PGD steps (S)");
    c_craft->add_option("--epsilon", cr.cfg.pgd.epsilon, "noise bound");
    c_craft->add_option("--alpha", cr.cfg.pgd.alpha, "PGD step size");
    c_craft->add_option("--gamma", cr.cfg.gamma, "stop accuracy");
    c_craft->add_option("--max-rounds", cr.cfg.max_rounds, "round cap");
    c_craft->add_option("--lr", cr.cfg.train.learning_rate, "surrogate learning rate");
    c_craft->add_option("--momentum", cr.cfg.train.momentum, "surrogate momentum");
    c_craft->add_option("--batch", cr.cfg.train.batch_size, "batch size");
    c_craft->add_option("--ce-weight", cr.cfg.loss.ce_weight, "cross-entropy weight");
    c_craft->add_option("--sim-weight", cr.cfg.loss.sim_weight, "feature similarity weight");
    c_craft->add_flag("--plain-loss", cr.plain_loss, "use cross-entropy only for the noise gradient");
    add_seed(c_craft, cr.seed);

    PoisonArgs po;
    auto* c_poison = app.add_subcommand("poison", "apply a noise bank and write unlearnable streams");
    c_poison->add_option("--data", po.data, "dataset to protect")->required()->check(CLI::ExistingPath);
    c_poison->add_option("--bank", po.bank, "noise bank file")->required()->check(CLI::ExistingFile);
    c_poison->add_option("--out", po.out, "output directory")->required();
    c_poison->add_option("--tau", po.proj.tau, "projection band ratio");
    c_poison->add_option("--channels", po.channels, "time bins C");
    c_poison->add_option("--mix", po.mix, "none, union or add")->check(CLI::IsMember({"none", "union", "add"}));
    c_poison->add_option("--mix-bank", po.mix_bank, "second bank for mixing")->check(CLI::ExistingFile);
    add_seed(c_poison, po.seed);

    PolluteArgs pl;
    auto* c_pollute = app.add_subcommand("pollute", "apply a baseline distortion");
    c_pollute->add_option("--data", pl.data, "input dataset")->required()->check(CLI::ExistingPath);
    c_pollute->add_option("--out", pl.out, "output directory")->required();
    c_pollute->add_option("--kind", pl.kind, "cs, ts, pi, mp or as")
        ->required()
        ->check(CLI::IsMember({"cs", "ts", "pi", "mp", "as"}));
    c_pollute->add_option("--dx", pl.spec.dx, "coordinate shift in x");
    c_pollute->add_option("--dy", pl.spec.dy, "coordinate shift in y");
    c_pollute->add_option("--shift", pl.spec.time_shift, "timestamp shift in microseconds");
    c_pollute->add_option("--block", pl.spec.block, "area shuffle tile size");
    c_pollute->add_option("--pattern-size", pl.spec.pattern_size, "manual pattern block size");
    c_pollute->add_option("--channels", pl.spec.channels, "time bins of the manual pattern");
    add_seed(c_pollute, pl.spec.seed);

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "train a victim classifier and report test accuracy");
    c_eval->add_option("--train", ev.train, "training dataset")->required()->check(CLI::ExistingPath);
    c_eval->add_option("--test", ev.test, "clean test dataset")->required()->check(CLI::ExistingPath);
    c_eval->add_option("--report", ev.report, "report JSON");
    c_eval->add_option("--model", ev.model, "write the trained checkpoint here");
    c_eval->add_option("--arch", ev.arch, "victim or surrogate")->check(CLI::IsMember({"victim", "surrogate"}));
    c_eval->add_option("--channels", ev.channels, "time bins C");
    c_eval->add_option("--lr", ev.train_cfg.learning_rate, "learning rate");
    c_eval->add_option("--momentum", ev.train_cfg.momentum, "momentum");
    c_eval->add_option("--lr-gamma", ev.train_cfg.lr_gamma, "per-epoch learning-rate decay");
    c_eval->add_option("--batch", ev.train_cfg.batch_size, "batch size");
    c_eval->add_option("--epochs", ev.train_cfg.epochs, "epochs");
    c_eval->add_flag("--augment", ev.augment, "train with random shift, crop, flip and event drop");
    add_seed(c_eval, ev.train_cfg.seed);

    MetricsArgs me;
    auto* c_metrics = app.add_subcommand("metrics", "PSNR, SSIM and MSE between paired datasets");
    c_metrics->add_option("--clean", me.clean, "reference dataset")->required()->check(CLI::ExistingPath);
    c_metrics->add_option("--other", me.other, "modified dataset")->required()->check(CLI::ExistingPath);
    c_metrics->add_option("--report", me.report, "report JSON");
    c_metrics->add_option("--channels", me.channels, "time bins C");
    add_seed(c_metrics, me.seed);

    RoundtripArgs rt;
    auto* c_round = app.add_subcommand("roundtrip", "check codec and zero-noise reconstruction identity");
    c_round->add_option("--data", rt.data, "dataset")->required()->check(CLI::ExistingPath);
    c_round->add_option("--channels", rt.channels, "time bins C");
    add_seed(c_round, rt.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (threads) set_thread_count(*threads);

    try {
        if (c_synth->parsed()) return run_synth(synth);
        if (c_craft->parsed()) return run_craft(cr);
        if (c_poison->parsed()) return run_poison(po);
        if (c_pollute->parsed()) return run_pollute(pl);
        if (c_eval->parsed()) return run_eval(ev);
        if (c_metrics->parsed()) return run_metrics(me);
        if (c_round->parsed()) return run_roundtrip(rt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
