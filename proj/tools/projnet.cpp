// projnet: synthetic data generation, pretraining, fine-tuning, evaluation,
// run comparison and prediction from the command line.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "projnet/nten.hpp"
#include "projnet/train.hpp"

namespace fs = std::filesystem;
using namespace projnet;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kUsage = 2, kIo = 3 };

// Flags that mirror RunConfig fields. Only flags given on the command line
// override the config file.
struct RunFlags {
    CLI::Option* config = nullptr;
    std::string config_path;
    std::size_t epochs = 60;
    double lr = 0.1;
    double momentum = 0.9;
    std::size_t batch_size = 0;
    std::uint64_t seed = 0;
    std::size_t top_k = 5;
    std::size_t levels = 4;
    std::size_t base_channels = 8;
    std::size_t target_depth = 32;
    std::string zscore = "bscan";
    std::vector<CLI::Option*> options;
    std::vector<std::function<void(RunConfig&)>> apply;

    template <class T>
    void add(CLI::App* app, const std::string& name, T& value, const std::string& help,
             std::function<void(RunConfig&, const T&)> set) {
        auto* opt = app->add_option(name, value, help)->capture_default_str();
        options.push_back(opt);
        apply.push_back([opt, &value, set](RunConfig& c) {
            if (opt->count() > 0) set(c, value);
        });
    }

    void attach(CLI::App* app) {
        config = app->add_option("--config", config_path, "JSON run config (fields as in config.json)");
        add<std::size_t>(app, "--epochs", epochs, "Training epochs", [](RunConfig& c, const std::size_t& v) { c.epochs = v; });
        add<double>(app, "--lr", lr, "SGD learning rate", [](RunConfig& c, const double& v) { c.lr = v; });
        add<double>(app, "--momentum", momentum, "SGD momentum", [](RunConfig& c, const double& v) { c.momentum = v; });
        add<std::size_t>(app, "--batch-size", batch_size, "Batch size (0: 4 for pretrain, 8 for finetune)",
                         [](RunConfig& c, const std::size_t& v) { c.batch_size = v; });
        add<std::uint64_t>(app, "--seed", seed, "Seed for init, shuffling and label subsetting",
                           [](RunConfig& c, const std::uint64_t& v) { c.seed = v; });
        add<std::size_t>(app, "--top-k", top_k, "Checkpoints kept, ranked by validation metric",
                         [](RunConfig& c, const std::size_t& v) { c.top_k = v; });
        add<std::size_t>(app, "--levels", levels, "Encoder/decoder levels", [](RunConfig& c, const std::size_t& v) { c.network.levels = v; });
        add<std::size_t>(app, "--base-channels", base_channels, "Channels at level 0",
                         [](RunConfig& c, const std::size_t& v) { c.network.base_channels = v; });
        add<std::size_t>(app, "--target-depth", target_depth, "Depth after preprocessing",
                         [](RunConfig& c, const std::size_t& v) { c.preprocess.target_depth = v; });
        add<std::string>(app, "--zscore", zscore, "Z-score statistics: bscan|volume",
                         [](RunConfig& c, const std::string& v) { c.preprocess.zscore = zscore_from_string(v); });
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (config->count() > 0) {
            std::ifstream in(config_path);
            if (!in) throw IoError(fmt::format("cannot open config {}", config_path));
            try {
                cfg = nlohmann::json::parse(in).get<RunConfig>();
            } catch (const nlohmann::json::parse_error& e) {
                throw ConfigError(fmt::format("config {}: {}", config_path, e.what()));
            }
        }
        for (const auto& f : apply) f(cfg);
        return cfg;
    }
};

std::array<std::size_t, 3> parse_shape(const std::string& s) {
    static const std::regex re(R"((\d+)x(\d+)x(\d+))");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw ConfigError(fmt::format("--shape expects HxWxD, got '{}'", s));
    std::array<std::size_t, 3> out{};
    for (int i = 0; i < 3; ++i) {
        out[i] = std::stoul(m[i + 1].str());
        if (out[i] == 0) throw ConfigError(fmt::format("--shape dimensions must be positive, got '{}'", s));
    }
    return out;
}

void print_progress(const RunConfig& cfg, const EpochLog& row) {
    fmt::print("epoch {:>4}/{}  train_loss {:.6f}  val_{} {:.6f}\n", row.epoch + 1, cfg.epochs, row.train_loss,
               cfg.task == Task::segment ? "dice" : "nmssim", row.val_metric);
    std::fflush(stdout);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
    out << j.dump(2) << '\n';
}

EvalReport read_report(const fs::path& path) {
    const fs::path file = fs::is_directory(path) ? path / "report.json" : path;
    std::ifstream in(file);
    if (!in) throw IoError(fmt::format("cannot open report {}", file.string()));
    try {
        return nlohmann::json::parse(in).get<EvalReport>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}: {}", file.string(), e.what()));
    }
}

int run(int argc, char** argv) {
    CLI::App app{"3D->2D segmentation with inter-modal self-supervised pretraining on synthetic retina phantoms"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "projnet 0.1.0");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multimodal dataset");
    std::string gen_out, shape = "16x64x48", lesion = "ga";
    GeneratorConfig gcfg;
    gen->add_option("--out", gen_out, "Output dataset directory")->required();
    gen->add_option("--seed", gcfg.seed, "Master seed")->capture_default_str();
    gen->add_option("--patients", gcfg.patients, "Number of patients")->capture_default_str();
    gen->add_option("--per-patient", gcfg.samples_per_patient, "Samples per patient")->capture_default_str();
    gen->add_option("--shape", shape, "Volume shape HxWxD")->capture_default_str();
    gen->add_option("--lesion", lesion, "Lesion kind: ga|rpd")->capture_default_str();
    gen->add_option("--noise", gcfg.noise_sigma, "Gaussian noise on the en-face images")->capture_default_str();
    gen->add_option("--contrast", gcfg.lesion_contrast, "Lesion brightening in the SLO analog")->capture_default_str();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Self-supervised reconstruction of an en-face modality from the volume");
    std::string pre_data, pre_out, pre_target = "slo";
    RunFlags pre_flags;
    pre->add_option("--data", pre_data, "Dataset directory")->required();
    pre->add_option("--target", pre_target, "Reconstruction target: slo|faf (faf is inverted)")->capture_default_str();
    pre->add_option("--out", pre_out, "Run directory")->required();
    pre_flags.attach(pre);

    // finetune
    auto* fine = app.add_subcommand("finetune", "Train segmentation, optionally initialized from a pretraining run");
    std::string fine_data, fine_out, fine_init = "none";
    double fraction = 1.0;
    bool no_head_transfer = false;
    RunFlags fine_flags;
    fine->add_option("--data", fine_data, "Dataset directory")->required();
    fine->add_option("--init", fine_init, "Run directory to initialize from, or 'none'")->capture_default_str();
    auto* fraction_opt = fine->add_option("--fraction", fraction, "Fraction of training patients with labels, in (0, 1]")
                             ->capture_default_str();
    fine->add_flag("--no-head-transfer", no_head_transfer, "Keep the fresh output head when initializing");
    fine->add_option("--out", fine_out, "Run directory")->required();
    fine_flags.attach(fine);

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Score checkpoint-averaged predictions on a split");
    std::string eval_data, eval_run, eval_split = "test", eval_out, dump_dir;
    std::size_t eval_k = 5;
    bool eval_logits = false;
    eval->add_option("--data", eval_data, "Dataset directory")->required();
    eval->add_option("--run", eval_run, "Segmentation run directory")->required();
    eval->add_option("--split", eval_split, "Split: train|val|test")->capture_default_str();
    eval->add_option("--top-k", eval_k, "Number of best checkpoints to average")->capture_default_str();
    eval->add_flag("--average-logits", eval_logits, "Average logits instead of probabilities");
    eval->add_option("--out", eval_out, "Report path (default RUN/report.json)");
    eval->add_option("--dump", dump_dir, "Also write each sample's preprocessed input and probability map here");

    // compare
    auto* cmp = app.add_subcommand("compare", "Paired Wilcoxon signed-rank tests between two evaluated runs");
    std::string run_a, run_b, cmp_out;
    cmp->add_option("--run-a", run_a, "Run directory or report.json")->required();
    cmp->add_option("--run-b", run_b, "Run directory or report.json")->required();
    cmp->add_option("--out", cmp_out, "Write the comparison as JSON");

    // predict
    auto* pred = app.add_subcommand("predict", "Checkpoint-averaged probability map for one preprocessed volume");
    std::string pred_run, pred_volume, pred_out;
    std::size_t pred_k = 5;
    bool pred_logits = false;
    pred->add_option("--run", pred_run, "Segmentation run directory")->required();
    pred->add_option("--volume", pred_volume, "Preprocessed (1,1,H,W,D) NTEN volume")->required();
    pred->add_option("--out", pred_out, "Output NTEN path")->required();
    pred->add_option("--top-k", pred_k, "Number of best checkpoints to average")->capture_default_str();
    pred->add_flag("--average-logits", pred_logits, "Average logits instead of probabilities");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }

    if (*gen) {
        const auto [h, w, d] = parse_shape(shape);
        gcfg.height = h;
        gcfg.width = w;
        gcfg.depth = d;
        gcfg.lesion = lesion_from_string(lesion);
        const DatasetManifest m = generate_dataset(gcfg, gen_out);
        fmt::print("wrote {} samples from {} patients to {} (train {} / val {} / test {} patients)\n", m.samples.size(),
                   gcfg.patients, gen_out, m.patients(Split::train).size(), m.patients(Split::val).size(),
                   m.patients(Split::test).size());
        return kOk;
    }
    if (*pre) {
        RunConfig cfg = pre_flags.resolve();
        cfg.task = Task::reconstruct;
        cfg.target_modality = modality_from_string(pre_target);
        cfg.validate();
        const TrainResult r = train_from_dataset(cfg, pre_data, pre_out, [&](const EpochLog& row) { print_progress(cfg, row); });
        fmt::print("best epoch {}/{} val_nmssim {:.6f}\n", r.checkpoints.records().front().epoch + 1, cfg.epochs,
                   r.checkpoints.records().front().metric);
        return kOk;
    }
    if (*fine) {
        RunConfig cfg = fine_flags.resolve();
        cfg.task = Task::segment;
        if (fraction_opt->count() > 0) cfg.label_fraction = fraction;
        if (fine_init != "none") cfg.init_checkpoint = fine_init;
        if (fine->count("--init") > 0 && fine_init == "none") cfg.init_checkpoint.reset();
        if (no_head_transfer) cfg.transfer_head = false;
        cfg.validate();
        const TrainResult r = train_from_dataset(cfg, fine_data, fine_out, [&](const EpochLog& row) { print_progress(cfg, row); });
        fmt::print("best epoch {}/{} val_dice {:.6f}\n", r.checkpoints.records().front().epoch + 1, cfg.epochs,
                   r.checkpoints.records().front().metric);
        return kOk;
    }
    if (*eval) {
        const RunConfig cfg = load_run_config(eval_run);
        if (cfg.task != Task::segment) throw ConfigError(fmt::format("run {} is not a segmentation run", eval_run));
        const Split split = split_from_string(eval_split);
        const auto checkpoints = load_top_checkpoints(eval_run, eval_k);
        const DatasetManifest manifest = load_manifest(eval_data);
        const auto samples = prepare_samples(eval_data, manifest, split, cfg);
        std::map<std::string, Tensor> maps;
        EvalReport report = evaluate(checkpoints, samples, eval_logits || cfg.average_logits, dump_dir.empty() ? nullptr : &maps);
        report.split = eval_split;
        const fs::path out = eval_out.empty() ? fs::path(eval_run) / "report.json" : fs::path(eval_out);
        write_json(out, report);
        if (!dump_dir.empty()) {
            fs::create_directories(dump_dir);
            for (const auto& s : samples) {
                nten::save(fs::path(dump_dir) / (s.id + "_input.nten"), s.input);
                nten::save(fs::path(dump_dir) / (s.id + "_prob.nten"), maps.at(s.id));
            }
        }
        fmt::print("{} samples ({} split, top-{}): dice {:.4f} +- {:.4f}, area diff {:.4f} +- {:.4f} mm^2 -> {}\n",
                   report.samples.size(), eval_split, checkpoints.size(), report.dice_mean, report.dice_std,
                   report.area_diff_mean, report.area_diff_std, out.string());
        return kOk;
    }
    if (*cmp) {
        const EvalReport a = read_report(run_a), b = read_report(run_b);
        const Comparison c = compare_runs(a, b);
        fmt::print("{:<14} {:>10} {:>10} {:>10} {:>12} {}\n", "metric", "mean_a", "mean_b", "W", "p", "");
        for (const auto& row : c.rows) {
            if (row.test) {
                fmt::print("{:<14} {:>10.4f} {:>10.4f} {:>10.1f} {:>12.4g} {}\n", row.metric, row.mean_a, row.mean_b,
                           row.test->statistic, row.test->p_value, significance_stars(row.test->p_value));
            } else {
                fmt::print("{:<14} {:>10.4f} {:>10.4f} {:>10} {:>12} {}\n", row.metric, row.mean_a, row.mean_b, "-", "-",
                           row.note);
            }
        }
        fmt::print("n = {} paired samples; *: p<0.05, **: p<0.01, ***: p<0.001\n", c.n);
        if (!cmp_out.empty()) write_json(cmp_out, c);
        return kOk;
    }
    if (*pred) {
        const RunConfig cfg = load_run_config(pred_run);
        const auto checkpoints = load_top_checkpoints(pred_run, pred_k);
        const Tensor x = nten::load(pred_volume);
        const Tensor p = predict_averaged(checkpoints, x.to(default_dtype()), pred_logits || cfg.average_logits);
        nten::save(pred_out, p);
        fmt::print("wrote {} map to {}\n", shape_str(p.shape()), pred_out);
        return kOk;
    }
    return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const InsufficientData& e) {
        std::cerr << "notice: " << e.what() << "\n";
        return kRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
}
