// Acceptance suite: one PASS/FAIL line per criterion.
//
//   projnet_acceptance                 run every criterion
//   projnet_acceptance --criterion 6   run one (repeatable)
//   --results FILE                     also append the lines to FILE

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gradcheck.hpp"
#include "projnet/optim.hpp"
#include "projnet/train.hpp"
#include "wilcoxon_cases.hpp"

#ifndef PROJNET_CLI
#error "PROJNET_CLI must point at the projnet executable"
#endif

using namespace projnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ------------------------------------------------------------------ 1
Outcome gradients() {
    const auto t0 = Clock::now();
    double op_worst = 0;
    std::string op_name;
    {
        ScopedDType f64(DType::f64);
        for (const auto& c : testing::op_cases()) {
            const auto r = testing::check_op(c);
            if (r.max_rel_error > op_worst) {
                op_worst = r.max_rel_error;
                op_name = r.name;
            }
        }
    }
    NetworkSpec spec;
    spec.levels = 2;
    spec.input_depth = 8;
    const auto net = testing::check_network(spec, {1, 1, 8, 8, 8}, 17);
    const double secs = seconds_since(t0);
    return {op_worst < 1e-5 && net.max_rel_error < 1e-3 && secs < 120,
            fmt::format("ops max rel err {:.2e} ({}), network {:.2e} ({}, {} components), {:.1f}s", op_worst, op_name,
                        net.max_rel_error, net.worst, net.checked, secs)};
}

// ------------------------------------------------------------------ 2
Outcome kernel_oracles() {
    ScopedDType f64(DType::f64);
    std::mt19937_64 rng(2024);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    double worst = 0;
    std::size_t shapes = 0;
    std::uint64_t seed = 1;
    auto record = [&](const Tensor& a, const Tensor& b) {
        worst = std::max(worst, a.shape() == b.shape() ? testing::max_abs_diff(a, b) : INFINITY);
        ++shapes;
    };
    for (int i = 0; i < 20; ++i) {
        const kernels::Triple k{pick(1, 3), pick(1, 3), pick(1, 4)}, s{pick(1, 2), pick(1, 2), pick(1, 2)};
        const kernels::Triple p{pick(0, k[0] / 2), pick(0, k[1] / 2), pick(0, k[2] / 2)};
        const Shape xs{pick(1, 2), pick(1, 3), pick(k[0], 7), pick(k[1], 7), pick(k[2], 9)};
        const Tensor x = testing::random_tensor(xs, seed++), w = testing::random_tensor({pick(1, 4), xs[1], k[0], k[1], k[2]}, seed++);
        const Tensor b = testing::random_tensor({w.shape()[0]}, seed++);
        record(kernels::conv3d(x, w, b, {s, p}), testing::naive_conv3d(x, w, b, s, p));
    }
    for (int i = 0; i < 15; ++i) {
        const kernels::Pair k{pick(1, 5), pick(1, 5)}, s{pick(1, 3), pick(1, 3)}, p{pick(0, k[0] / 2), pick(0, k[1] / 2)};
        const Shape xs{pick(1, 3), pick(1, 4), pick(k[0], 11), pick(k[1], 11)};
        const Tensor x = testing::random_tensor(xs, seed++), w = testing::random_tensor({pick(1, 5), xs[1], k[0], k[1]}, seed++);
        const Tensor b = testing::random_tensor({w.shape()[0]}, seed++);
        record(kernels::conv2d(x, w, b, {s, p}), testing::naive_conv2d(x, w, b, s, p));
    }
    for (int i = 0; i < 10; ++i) {
        const kernels::Triple k{pick(1, 3), pick(1, 3), pick(1, 3)}, s{pick(1, 3), pick(1, 3), pick(1, 3)};
        const Tensor x = testing::random_tensor({pick(1, 2), pick(1, 3), pick(k[0], 8), pick(k[1], 8), pick(k[2], 8)}, seed++);
        record(kernels::maxpool3d(x, k, s).output, testing::naive_maxpool3d(x, k, s));
    }
    for (int i = 0; i < 10; ++i) {
        const std::size_t f = pick(1, 4);
        const Tensor x = testing::random_tensor({pick(1, 3), pick(1, 4), pick(1, 9), pick(1, 9)}, seed++);
        record(kernels::upsample2d_nearest(x, f), testing::naive_upsample2d(x, f));
    }
    for (int i = 0; i < 10; ++i) {
        const Tensor x = testing::random_tensor({pick(1, 3), pick(1, 4), pick(1, 6), pick(1, 6), pick(1, 16)}, seed++);
        record(kernels::avgpool_depth(x), testing::naive_avgpool_depth(x));
    }
    return {shapes >= 50 && worst < 1e-6, fmt::format("{} random shapes, max |diff| {:.2e}", shapes, worst)};
}

// ------------------------------------------------------------------ 3
Outcome shape_contract() {
    std::size_t checked = 0, rejected = 0;
    std::vector<std::string> failures;
    for (std::size_t levels : {2, 3, 4}) {
        for (std::size_t H : {16, 32, 64})
            for (std::size_t W : {16, 32, 64})
                for (std::size_t D : {16, 32}) {
                    NetworkSpec spec;
                    spec.levels = levels;
                    spec.base_channels = levels == 4 ? 8 : 2;
                    spec.input_depth = D;
                    bool admissible = true;
                    try {
                        spec.validate();
                    } catch (const ConfigError&) {
                        admissible = false;
                    }
                    if (!admissible) {
                        // an inadmissible spec must also refuse to build
                        try {
                            build(spec, 1);
                            failures.push_back(fmt::format("L{} D{} built despite invalid spec", levels, D));
                        } catch (const ConfigError&) {
                            ++rejected;
                        }
                        continue;
                    }
                    const ParamStore p = build(spec, levels);
                    for (std::size_t B : {1, 2}) {
                        if (levels == 4 && B == 2 && H * W > 1024) continue;  // keep the desk net sweep short
                        const Tensor x = testing::random_tensor({B, 1, H, W, D}, H + W + D, DType::f32);
                        const Tensor y = predict(spec, p, x);
                        bool ok = y.shape() == Shape{B, 1, H, W};
                        for (std::size_t i = 0; ok && i < y.numel(); ++i) ok = y.at(i) >= 0 && y.at(i) <= 1;
                        if (!ok) failures.push_back(fmt::format("L{} B{} {}x{}x{}", levels, B, H, W, D));
                        ++checked;
                    }
                }
    }
    return {failures.empty() && checked > 0,
            fmt::format("{} forward shapes ok, {} inadmissible specs rejected{}", checked, rejected,
                        failures.empty() ? "" : ", failed: " + failures.front())};
}

// ------------------------------------------------------------------ 4
Outcome depth_traces() {
    auto formula = [](std::size_t d, std::size_t target) {
        std::vector<std::size_t> t{d};
        while (d > target) {  // halving with k=3, s=2, p=1 is ceil(d / 2)
            d = (d + 1) / 2;
            t.push_back(d);
        }
        t.push_back(d - 3);
        t.push_back(1);
        return t;
    };
    std::string shown;
    bool ok = fpb_depth_trace(32, 8) == std::vector<std::size_t>{32, 16, 8, 5, 1};
    for (std::size_t d : {4, 8, 16, 32, 64, 128}) {
        const auto got = fpb_depth_trace(d, 8);
        ok = ok && got == formula(d, 8);
        if (d == 128) shown = fmt::format("{}", fmt::join(got, "->"));
    }
    return {ok, "6 depths match, e.g. " + shown};
}

// ------------------------------------------------------------------ 5
Outcome loss_identities() {
    ScopedDType f64(DType::f64);
    Tape tape;
    const Tensor x = testing::random_tensor({2, 1, 16, 16}, 5, DType::f64, 0, 1);
    const double ssim_self = nmssim_loss(tape.constant(x), tape.constant(x)).value().item();
    Tensor t = testing::random_tensor({2, 1, 8, 8}, 6, DType::f64, 0, 1);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, t.at(i) > 0.5 ? 1.0 : 0.0);
    const double dice_self = dice_loss(tape.constant(t), tape.constant(t)).value().item();
    const Tensor half = Tensor::full({1, 1, 4, 4}, 0.5);
    const double bce_half = bce_loss(tape.constant(half), tape.constant(half)).value().item();
    const bool ok = std::abs(ssim_self + 1) <= 1e-6 && std::abs(dice_self) <= 1e-12 &&
                    std::abs(bce_half - std::log(2.0)) <= 1e-6;
    return {ok, fmt::format("nmssim(x,x) {:.9f}, dice(t,t) {:.2e}, bce(0.5,0.5) - ln2 {:.2e}", ssim_self, dice_self,
                            bce_half - std::log(2.0))};
}

// ------------------------------------------------------------------ 6
Outcome overfit() {
    const auto t0 = Clock::now();
    testing::TempDir dir("overfit");
    GeneratorConfig g;
    g.seed = 6;
    g.patients = 4;
    const DatasetManifest m = generate_dataset(g, dir.path());
    RunConfig cfg;
    cfg.task = Task::segment;
    cfg.batch_size = 4;
    cfg.seed = 6;
    std::vector<PreparedSample> samples;
    for (Split s : {Split::train, Split::val, Split::test})
        for (auto& p : prepare_samples(dir.path(), m, s, cfg)) samples.push_back(std::move(p));
    std::vector<const Tensor*> xs, ts;
    for (const auto& s : samples) xs.push_back(&s.input), ts.push_back(&s.target);
    const Tensor x = stack_batch(xs), target = stack_batch(ts);

    ParamStore params = initial_params(cfg);
    SgdState sgd(cfg.lr, cfg.momentum);
    double last_loss = 0;
    for (int step = 0; step < 200; ++step) {
        Tape tape;
        const ParamBinding binding(tape, params, true);
        const Var loss = task_loss(cfg, tape, binding, x, target);
        last_loss = loss.value().item();
        tape.backward(loss);
        for (const auto& [name, grad] : binding.grads()) sgd.step(name, params.at(name), grad);
    }
    const Checkpoint ck{cfg.network_spec(), params, 0, 0};
    const EvalReport r = evaluate({ck}, samples);
    const double secs = seconds_since(t0);
    return {samples.size() == 4 && r.dice_mean >= 0.95 && secs < 600,
            fmt::format("{} samples, 200 steps, final loss {:.4f}, training Dice {:.4f}, {:.0f}s", samples.size(),
                        last_loss, r.dice_mean, secs)};
}

// ------------------------------------------------------------------ 7
Outcome ssl_direction() {
    const auto t0 = Clock::now();
    testing::TempDir dir("ssl");
    GeneratorConfig g;
    g.seed = 11;
    g.patients = 40;
    const fs::path data = dir / "data";
    generate_dataset(g, data);
    const DatasetManifest manifest = load_manifest(data);
    std::vector<double> ssl, fresh;
    for (std::uint64_t seed : {1, 2, 3}) {
        RunConfig pre;
        pre.task = Task::reconstruct;
        pre.target_modality = Modality::slo;
        pre.epochs = 30;
        pre.seed = seed;
        const fs::path pre_dir = dir / fmt::format("pre{}", seed);
        train_from_dataset(pre, data, pre_dir);

        RunConfig ft;
        ft.task = Task::segment;
        ft.label_fraction = 0.05;
        ft.epochs = 60;
        ft.seed = seed;
        const auto test = prepare_samples(data, manifest, Split::test, ft);
        for (bool init : {true, false}) {
            RunConfig c = ft;
            if (init) c.init_checkpoint = pre_dir.string();
            const fs::path run = dir / fmt::format("{}{}", init ? "ssl" : "fresh", seed);
            train_from_dataset(c, data, run);
            const double dice = evaluate(load_top_checkpoints(run, c.top_k), test).dice_mean;
            (init ? ssl : fresh).push_back(dice);
            std::cout << fmt::format("  seed {} {:<5} test Dice {:.4f} ({:.0f}s elapsed)\n", seed, init ? "ssl" : "fresh",
                                     dice, seconds_since(t0))
                      << std::flush;
        }
    }
    const double ms = (ssl[0] + ssl[1] + ssl[2]) / 3, mf = (fresh[0] + fresh[1] + fresh[2]) / 3;
    const double secs = seconds_since(t0);
    return {ms >= mf && secs < 3600,
            fmt::format("mean test Dice ssl {:.4f} vs fresh {:.4f} over 3 seeds, {:.0f}s", ms, mf, secs)};
}

// ------------------------------------------------------------------ 8
Outcome averaging() {
    double worst = 0;
    for (DType dt : {DType::f32, DType::f64}) {
        ScopedDType scoped(dt);
        NetworkSpec spec;
        spec.levels = 3;
        spec.base_channels = 4;
        spec.input_depth = 16;
        std::vector<Checkpoint> cks;
        for (std::uint64_t s = 0; s < 5; ++s) {
            ParamStore p = build(spec, 100 + s);
            // non-trivial running statistics keep the outputs away from saturation
            for (const auto& name : p.names())
                if (name.ends_with("running_var")) p.at(name) = Tensor::full(p.at(name).shape(), 25.0);
            cks.push_back({spec, p, s, 0});
        }
        for (std::uint64_t i = 0; i < 3; ++i) {
            const Tensor x = testing::random_tensor({2, 1, 8, 8, 16}, 300 + i, dt);
            const Tensor avg = predict_averaged(cks, x);
            std::vector<double> mean(avg.numel(), 0.0);
            for (const auto& c : cks) {
                const Tensor p = predict(spec, c.params, x);
                for (std::size_t j = 0; j < p.numel(); ++j) mean[j] += p.at(j) / static_cast<double>(cks.size());
            }
            for (std::size_t j = 0; j < mean.size(); ++j) worst = std::max(worst, std::abs(avg.at(j) - mean[j]));
        }
    }
    return {worst < 1e-7, fmt::format("5 checkpoints, 32- and 64-bit, max |diff| {:.2e}", worst)};
}

// ------------------------------------------------------------------ 9
Outcome transfer_equivalence() {
    NetworkSpec spec;
    spec.levels = 3;
    spec.base_channels = 4;
    spec.input_depth = 16;
    const ParamStore src = build(spec, 1), dst = build(spec, 2);
    const ParamStore moved = transfer_weights(src, dst, true);
    std::size_t same = 0;
    for (std::uint64_t i = 0; i < 10; ++i) {
        const Tensor x = testing::random_tensor({1, 1, 16, 16, 16}, 40 + i, DType::f32);
        same += predict(spec, src, x).identical(predict(spec, moved, x)) ? 1 : 0;
    }
    return {same == 10, fmt::format("{}/10 outputs bit-identical", same)};
}

// ----------------------------------------------------------------- 10
std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

/// Relative path -> content hash of every file under `root`.
std::map<std::string, std::size_t> tree_hashes(const fs::path& root) {
    std::map<std::string, std::size_t> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = std::hash<std::string>{}(slurp(e.path()));
    return out;
}

Outcome determinism() {
    testing::TempDir dir("determinism");
    const std::string net = "--levels 2 --base-channels 4 --target-depth 16 --epochs 3";
    std::vector<std::map<std::string, std::size_t>> ckpts;
    std::vector<std::string> reports;
    for (int rep = 0; rep < 2; ++rep) {
        const fs::path root = dir / fmt::format("rep{}", rep);
        fs::create_directories(root);
        const std::string script = fmt::format(
            "cd '{0}' && (export PROJNET_THREADS=1 && P='{1}' && "
            "$P gen-data --out d --patients 10 --shape 8x16x24 --seed 5 && "
            "$P pretrain --data d --out pre {2} --seed 5 && "
            "$P finetune --data d --init pre --out ft {2} --seed 5 && "
            "$P evaluate --data d --run ft)",
            root.string(), PROJNET_CLI, net);
        const int status = std::system((script + " > log.txt 2>&1").c_str());
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
            return {false, fmt::format("pipeline {} failed, see {}", rep, (root / "log.txt").string())};
        }
        auto hashes = tree_hashes(root / "pre/checkpoints");
        for (const auto& [k, v] : tree_hashes(root / "ft/checkpoints")) hashes["ft/" + k] = v;
        ckpts.push_back(hashes);
        reports.push_back(slurp(root / "ft/report.json"));
    }
    const bool ok = !ckpts[0].empty() && ckpts[0] == ckpts[1] && !reports[0].empty() && reports[0] == reports[1];
    return {ok, fmt::format("{} checkpoint files hashed, report.json {}", ckpts[0].size(),
                            reports[0] == reports[1] ? "identical" : "differs")};
}

// ----------------------------------------------------------------- 11
Outcome wilcoxon() {
    double worst = 0;
    std::size_t n = 0;
    for (const auto& c : testing::wilcoxon_cases()) {
        const auto r = wilcoxon_signed_rank(c.a, c.b);
        const auto o = testing::wilcoxon_oracle(c.a, c.b);
        worst = std::max({worst, std::abs(r.statistic - o.statistic), std::abs(r.p_value - o.p),
                          std::abs(r.statistic - c.scipy_statistic), std::abs(r.p_value - c.scipy_p)});
        ++n;
    }
    return {n == 5 && worst < 1e-6, fmt::format("{} paired lists, max |diff| vs oracles {:.2e}", n, worst)};
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
};

const std::vector<Criterion> kCriteria = {
    {1, "gradient suite", gradients},
    {2, "kernel oracles", kernel_oracles},
    {3, "shape contract", shape_contract},
    {4, "FPB depth traces", depth_traces},
    {5, "loss identities", loss_identities},
    {6, "overfit", overfit},
    {7, "SSL direction", ssl_direction},
    {8, "checkpoint averaging", averaging},
    {9, "weight transfer", transfer_equivalence},
    {10, "determinism", determinism},
    {11, "wilcoxon", wilcoxon},
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"projnet acceptance criteria"};
    std::vector<int> only;
    app.add_option("--criterion,-c", only, "Criterion number (1-11); repeatable");
    std::string results;
    app.add_option("--results", results, "Append the PASS/FAIL lines to this file");
    CLI11_PARSE(app, argc, argv);

    bool all_pass = true;
    for (const auto& c : kCriteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, fmt::format("exception: {}", e.what())};
        }
        all_pass = all_pass && o.pass;
        const std::string line =
            fmt::format("criterion {:>2} {:<22} {}  {}\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail);
        std::cout << line << std::flush;
        if (!results.empty()) std::ofstream(results, std::ios::app) << line;
    }
    return all_pass ? 0 : 1;
}
