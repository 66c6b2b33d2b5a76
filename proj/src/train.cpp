#include "projnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "projnet/losses.hpp"
#include "projnet/optim.hpp"

namespace projnet {

namespace fs = std::filesystem;

std::string to_string(Task task) { return task == Task::reconstruct ? "reconstruct" : "segment"; }

Task task_from_string(const std::string& s) {
    if (s == "reconstruct") return Task::reconstruct;
    if (s == "segment") return Task::segment;
    throw ConfigError(fmt::format("unknown task '{}' (expected reconstruct|segment)", s));
}

std::string to_string(Modality m) { return m == Modality::slo ? "slo" : "faf"; }

Modality modality_from_string(const std::string& s) {
    if (s == "slo") return Modality::slo;
    if (s == "faf") return Modality::faf;
    throw ConfigError(fmt::format("unknown target modality '{}' (expected slo|faf)", s));
}

// ---------------------------------------------------------------- RunConfig

std::size_t RunConfig::effective_batch_size() const {
    if (batch_size != 0) return batch_size;
    return task == Task::reconstruct ? 4 : 8;
}

NetworkSpec RunConfig::network_spec() const {
    NetworkSpec s = network;
    s.head = task == Task::reconstruct ? Head::reconstruction : Head::segmentation;
    s.input_depth = preprocess.target_depth;
    return s;
}

void RunConfig::validate() const {
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError(fmt::format("lr must be non-negative, got {}", lr));
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError(fmt::format("momentum must be in [0, 1), got {}", momentum));
    if (!(label_fraction > 0 && label_fraction <= 1)) {
        throw ConfigError(fmt::format("label fraction must be in (0, 1], got {}", label_fraction));
    }
    if (top_k == 0) throw ConfigError("top_k must be at least 1");
    if (preprocess.target_depth == 0) throw ConfigError("preprocess target depth must be positive");
    if (!(preprocess.anchor_fraction >= 0 && preprocess.anchor_fraction <= 1)) {
        throw ConfigError("preprocess anchor fraction must be in [0, 1]");
    }
    network_spec().validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"task", to_string(c.task)},
                       {"epochs", c.epochs},
                       {"lr", c.lr},
                       {"momentum", c.momentum},
                       {"batch_size", c.effective_batch_size()},
                       {"label_fraction", c.label_fraction},
                       {"seed", c.seed},
                       {"init_checkpoint", c.init_checkpoint ? nlohmann::json(*c.init_checkpoint) : nlohmann::json()},
                       {"target_modality", to_string(c.target_modality)},
                       {"top_k", c.top_k},
                       {"transfer_head", c.transfer_head},
                       {"average_logits", c.average_logits},
                       {"network", c.network_spec()},
                       {"preprocess", c.preprocess}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    static const std::set<std::string> known{"task",           "epochs",        "lr",             "momentum",
                                             "batch_size",     "label_fraction", "seed",          "init_checkpoint",
                                             "target_modality", "top_k",          "transfer_head", "average_logits",
                                             "network",        "preprocess"};
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError(fmt::format("run config: unknown field '{}'", key));
    }
    RunConfig d = c;
    try {
        if (j.contains("task")) d.task = task_from_string(j.at("task").get<std::string>());
        d.epochs = j.value("epochs", d.epochs);
        d.lr = j.value("lr", d.lr);
        d.momentum = j.value("momentum", d.momentum);
        d.batch_size = j.value("batch_size", d.batch_size);
        d.label_fraction = j.value("label_fraction", d.label_fraction);
        d.seed = j.value("seed", d.seed);
        if (j.contains("init_checkpoint")) {
            const auto& v = j.at("init_checkpoint");
            if (v.is_null()) {
                d.init_checkpoint.reset();
            } else {
                d.init_checkpoint = v.get<std::string>();
            }
        }
        if (j.contains("target_modality")) d.target_modality = modality_from_string(j.at("target_modality").get<std::string>());
        d.top_k = j.value("top_k", d.top_k);
        d.transfer_head = j.value("transfer_head", d.transfer_head);
        d.average_logits = j.value("average_logits", d.average_logits);
        if (j.contains("network")) d.network = j.at("network").get<NetworkSpec>();
        if (j.contains("preprocess")) d.preprocess = j.at("preprocess").get<PreprocessConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("run config: {}", e.what()));
    }
    c = d;
}

// --------------------------------------------------------- label subsetting

DatasetManifest subset_labels(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
    if (!(fraction > 0 && fraction <= 1)) throw ConfigError(fmt::format("label fraction must be in (0, 1], got {}", fraction));
    std::vector<std::string> patients = manifest.patients(Split::train);
    std::sort(patients.begin(), patients.end());
    std::mt19937_64 rng(derive_seed(seed, 0x1abe1, 0));
    std::shuffle(patients.begin(), patients.end(), rng);
    // the epsilon keeps products like 0.1 * 30 from rounding up past the exact count
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(patients.size()) - 1e-9));
    const std::set<std::string> kept(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(std::min(keep, patients.size())));
    DatasetManifest out;
    out.generator = manifest.generator;
    for (const auto& s : manifest.samples) {
        if (s.split != Split::train || kept.contains(s.patient_id)) out.samples.push_back(s);
    }
    return out;
}

// ------------------------------------------------------------ preparation

std::vector<PreparedSample> prepare_samples(const fs::path& data_dir, const DatasetManifest& manifest, Split split,
                                            const RunConfig& cfg, DType dtype) {
    std::vector<PreparedSample> out;
    for (const SampleEntry* e : manifest.entries(split)) {
        const Sample s = load_sample(data_dir, *e);
        PreparedSample p;
        p.id = s.id;
        p.patient_id = s.patient_id;
        p.spacing_mm = s.spacing_mm;
        p.input = preprocess_volume(s, cfg.preprocess, dtype);
        const std::size_t H = s.mask.dim(1), W = s.mask.dim(2);
        Tensor target;
        if (cfg.task == Task::segment) {
            target = s.mask;
        } else {
            target = cfg.target_modality == Modality::slo ? s.slo : invert(s.faf);
        }
        p.target = target.to(dtype).reshape({1, 1, H, W});
        p.mask = s.mask.to(dtype);
        out.push_back(std::move(p));
    }
    return out;
}

Tensor stack_batch(const std::vector<const Tensor*>& items) {
    if (items.empty()) throw InvalidArgument("stack_batch: no items");
    const Tensor& first = *items.front();
    if (first.rank() == 0 || first.dim(0) != 1) {
        throw InvalidArgument(fmt::format("stack_batch: items must have a leading axis of 1, got {}", shape_str(first.shape())));
    }
    Shape shape = first.shape();
    shape[0] = items.size();
    Tensor out(shape, first.dtype());
    dispatch(first.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dst = out.data<T>();
        std::size_t offset = 0;
        for (const Tensor* t : items) {
            if (t->shape() != first.shape()) {
                throw InvalidArgument(fmt::format("stack_batch: shape {} differs from {}", shape_str(t->shape()),
                                                  shape_str(first.shape())));
            }
            auto src = t->data<T>();
            std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(offset));
            offset += src.size();
        }
    });
    return out;
}

// ------------------------------------------------------------ checkpoints

CheckpointSet::CheckpointSet(bool higher_is_better, std::size_t top_k)
    : higher_is_better_(higher_is_better), top_k_(top_k) {
    if (top_k == 0) throw InvalidArgument("CheckpointSet: top_k must be at least 1");
}

bool CheckpointSet::better(double a, double b) const { return higher_is_better_ ? a > b : a < b; }

bool CheckpointSet::qualifies(double metric) const {
    if (std::isnan(metric)) return false;
    return records_.size() < top_k_ || better(metric, records_.back().metric);
}

bool CheckpointSet::offer(CheckpointRecord record, std::optional<CheckpointRecord>* evicted) {
    if (evicted) evicted->reset();
    if (!qualifies(record.metric)) return false;
    // insert after every record that is at least as good
    auto pos = std::find_if(records_.begin(), records_.end(),
                            [&](const CheckpointRecord& r) { return better(record.metric, r.metric); });
    records_.insert(pos, std::move(record));
    if (records_.size() > top_k_) {
        if (evicted) *evicted = records_.back();
        records_.pop_back();
    }
    return true;
}

bool CheckpointSet::well_ordered() const {
    if (records_.size() > top_k_) return false;
    for (std::size_t i = 1; i < records_.size(); ++i) {
        const auto& a = records_[i - 1];
        const auto& b = records_[i];
        if (better(b.metric, a.metric)) return false;
        if (a.metric == b.metric && a.epoch > b.epoch) return false;
    }
    return true;
}

void to_json(nlohmann::json& j, const CheckpointSet& set) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : set.records()) records.push_back({{"epoch", r.epoch}, {"metric", r.metric}, {"path", r.path}});
    j = nlohmann::json{{"higher_is_better", set.higher_is_better()}, {"top_k", set.top_k()}, {"records", records}};
}

CheckpointSet checkpoint_set_from_json(const nlohmann::json& j) {
    CheckpointSet set(j.at("higher_is_better").get<bool>(), j.at("top_k").get<std::size_t>());
    for (const auto& r : j.at("records")) {
        set.offer({r.at("epoch").get<std::size_t>(), r.at("metric").get<double>(), r.at("path").get<std::string>()});
    }
    return set;
}

// --------------------------------------------------------------- training

std::uint64_t init_seed(std::uint64_t run_seed) { return derive_seed(run_seed, 0x1417, 0); }

std::vector<std::size_t> epoch_order(std::uint64_t run_seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(run_seed, 0x5f1e, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

Var task_loss(const RunConfig& cfg, Tape& tape, const ParamBinding& params, const Tensor& input, const Tensor& target) {
    const NetworkSpec spec = cfg.network_spec();
    const ModelContext ctx{tape, spec, params, ops::NormMode::train};
    const ForwardResult r = forward(ctx, tape.constant(input));
    const Var t = tape.constant(target);
    return cfg.task == Task::segment ? seg_loss(r.output, t) : nmssim_loss(r.output, t);
}

namespace {

fs::path best_checkpoint_dir(const fs::path& run_dir) {
    const CheckpointSet set = load_checkpoint_set(run_dir);
    if (set.records().empty()) throw IoError(fmt::format("run {} has no checkpoints", run_dir.string()));
    return run_dir / set.records().front().path;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
    out << text;
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double acc = 0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

ParamStore initial_params(const RunConfig& cfg, TransferReport* report) {
    const NetworkSpec spec = cfg.network_spec();
    ParamStore params = build(spec, init_seed(cfg.seed));
    if (!cfg.init_checkpoint) return params;
    const fs::path init = *cfg.init_checkpoint;
    if (!fs::exists(init)) throw IoError(fmt::format("init checkpoint {} does not exist", init.string()));
    // either a run directory or a single checkpoint directory
    const fs::path dir = fs::exists(init / "checkpoints.json") ? best_checkpoint_dir(init) : init;
    const Checkpoint source = load_checkpoint(dir);
    std::vector<std::string> exclude;
    if (!cfg.transfer_head) exclude.push_back("head.");
    return transfer_weights(source.params.to(params.at(params.names().front()).dtype()), params, false, report, exclude);
}

double validation_metric(const RunConfig& cfg, const ParamStore& params, const std::vector<PreparedSample>& val) {
    if (val.empty()) throw ConfigError("validation set is empty");
    const NetworkSpec spec = cfg.network_spec();
    std::vector<double> scores;
    for (const auto& s : val) {
        const Tensor p = predict(spec, params, s.input);
        if (cfg.task == Task::segment) {
            scores.push_back(dice_score(binarize(p).reshape(s.mask.shape()), binarize(s.mask)));
        } else {
            const Tensor m = ssim_map(p, s.target);
            double acc = 0;
            for (std::size_t i = 0; i < m.numel(); ++i) acc += m.at(i);
            scores.push_back(-acc / static_cast<double>(m.numel()));
        }
    }
    return mean_of(scores);
}

TrainResult train(const RunConfig& cfg, const std::vector<PreparedSample>& train_set,
                  const std::vector<PreparedSample>& val_set, const fs::path& run_dir, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("training set is empty");
    if (val_set.empty()) throw ConfigError("validation set is empty");
    const NetworkSpec spec = cfg.network_spec();
    for (const auto* set : {&train_set, &val_set}) {
        for (const auto& s : *set) {
            try {
                check_input_shape(spec, s.input.shape());
            } catch (const InvalidArgument& e) {
                throw ConfigError(fmt::format("sample {}: {}", s.id, e.what()));
            }
        }
    }

    std::error_code ec;
    fs::create_directories(run_dir / "checkpoints", ec);
    if (ec) throw IoError(fmt::format("cannot create {}: {}", run_dir.string(), ec.message()));
    write_text(run_dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");

    TrainResult result;
    result.checkpoints = CheckpointSet(cfg.task == Task::segment, cfg.top_k);
    ParamStore params = initial_params(cfg);
    SgdState sgd(cfg.lr, cfg.momentum);
    const std::size_t batch = cfg.effective_batch_size();

    std::ofstream log(run_dir / "log.csv", std::ios::binary);
    if (!log) throw IoError(fmt::format("cannot write {}", (run_dir / "log.csv").string()));
    log << "epoch,train_loss,val_metric\n";

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(cfg.seed, epoch, train_set.size());
        double loss_sum = 0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<const Tensor*> xs, ts;
            for (std::size_t i = start; i < end; ++i) {
                xs.push_back(&train_set[order[i]].input);
                ts.push_back(&train_set[order[i]].target);
            }
            Tape tape;
            const ParamBinding binding(tape, params, true);
            const Var loss = task_loss(cfg, tape, binding, stack_batch(xs), stack_batch(ts));
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                throw Error(fmt::format("training diverged: loss is {} at epoch {} step {}", value, epoch, steps));
            }
            tape.backward(loss);
            for (const auto& [name, grad] : binding.grads()) sgd.step(name, params.at(name), grad);
            result.step_losses.push_back(value);
            loss_sum += value;
            ++steps;
        }
        const EpochLog row{epoch, loss_sum / static_cast<double>(steps), validation_metric(cfg, params, val_set)};
        result.log.push_back(row);
        log << fmt::format("{},{:.9g},{:.9g}\n", row.epoch, row.train_loss, row.val_metric);
        log.flush();

        const std::string rel = fmt::format("checkpoints/epoch{:03}", epoch);
        std::optional<CheckpointRecord> evicted;
        if (result.checkpoints.offer({epoch, row.val_metric, rel}, &evicted)) {
            save_checkpoint(run_dir / rel, {spec, params, epoch, row.val_metric});
            if (evicted) fs::remove_all(run_dir / evicted->path, ec);
        }
        write_text(run_dir / "checkpoints.json", nlohmann::json(result.checkpoints).dump(2) + "\n");
        if (on_epoch) on_epoch(row);
    }
    result.final_params = std::move(params);
    return result;
}

TrainResult train_from_dataset(const RunConfig& cfg, const fs::path& data_dir, const fs::path& run_dir,
                               const EpochCallback& on_epoch) {
    cfg.validate();
    DatasetManifest manifest = load_manifest(data_dir);
    if (cfg.task == Task::segment) manifest = subset_labels(manifest, cfg.label_fraction, cfg.seed);
    const auto train_set = prepare_samples(data_dir, manifest, Split::train, cfg);
    const auto val_set = prepare_samples(data_dir, manifest, Split::val, cfg);
    return train(cfg, train_set, val_set, run_dir, on_epoch);
}

RunConfig load_run_config(const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) throw IoError(fmt::format("run directory {} does not exist", run_dir.string()));
    return read_json(run_dir / "config.json").get<RunConfig>();
}

CheckpointSet load_checkpoint_set(const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) throw IoError(fmt::format("run directory {} does not exist", run_dir.string()));
    try {
        return checkpoint_set_from_json(read_json(run_dir / "checkpoints.json"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}: {}", (run_dir / "checkpoints.json").string(), e.what()));
    }
}

std::vector<Checkpoint> load_top_checkpoints(const fs::path& run_dir, std::size_t top_k) {
    if (top_k == 0) throw ConfigError("top-k must be at least 1");
    const CheckpointSet set = load_checkpoint_set(run_dir);
    std::vector<Checkpoint> out;
    for (const auto& r : set.records()) {
        if (out.size() == top_k) break;
        out.push_back(load_checkpoint(run_dir / r.path));
    }
    if (out.empty()) throw IoError(fmt::format("run {} has no checkpoints", run_dir.string()));
    return out;
}

// ------------------------------------------------------------- prediction

Tensor predict_averaged(const std::vector<Checkpoint>& checkpoints, const Tensor& x, bool average_logits) {
    if (checkpoints.empty()) throw InvalidArgument("predict_averaged: no checkpoints");
    std::vector<double> acc;
    Shape shape;
    for (const auto& c : checkpoints) {
        const ParamStore params = c.params.to(x.dtype());
        const Tensor p = average_logits ? predict_logits(c.spec, params, x) : predict(c.spec, params, x);
        if (acc.empty()) {
            acc.assign(p.numel(), 0.0);
            shape = p.shape();
        } else if (p.shape() != shape) {
            throw InvalidArgument("predict_averaged: checkpoints disagree on output shape");
        }
        for (std::size_t i = 0; i < p.numel(); ++i) acc[i] += p.at(i);
    }
    Tensor out(shape, x.dtype());
    const double k = static_cast<double>(checkpoints.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        const double m = acc[i] / k;
        out.set(i, average_logits ? 1.0 / (1.0 + std::exp(-m)) : m);
    }
    return out;
}

// ------------------------------------------------------------- evaluation

void to_json(nlohmann::json& j, const EvalReport& r) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : r.samples) {
        samples.push_back({{"id", s.id}, {"dice", s.dice}, {"area_diff_mm2", s.area_diff_mm2}});
    }
    j = nlohmann::json{{"split", r.split},
                       {"top_k", r.top_k},
                       {"n", r.samples.size()},
                       {"dice", {{"mean", r.dice_mean}, {"std", r.dice_std}}},
                       {"area_diff_mm2", {{"mean", r.area_diff_mean}, {"std", r.area_diff_std}}},
                       {"samples", samples}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
    r.split = j.value("split", std::string{});
    r.top_k = j.value("top_k", std::size_t{0});
    r.dice_mean = j.at("dice").at("mean").get<double>();
    r.dice_std = j.at("dice").at("std").get<double>();
    r.area_diff_mean = j.at("area_diff_mm2").at("mean").get<double>();
    r.area_diff_std = j.at("area_diff_mm2").at("std").get<double>();
    r.samples.clear();
    for (const auto& s : j.at("samples")) {
        r.samples.push_back({s.at("id").get<std::string>(), s.at("dice").get<double>(), s.at("area_diff_mm2").get<double>()});
    }
}

EvalReport evaluate(const std::vector<Checkpoint>& checkpoints, const std::vector<PreparedSample>& samples,
                    bool average_logits, std::map<std::string, Tensor>* maps) {
    EvalReport r;
    r.top_k = checkpoints.size();
    std::vector<double> dice, area;
    for (const auto& s : samples) {
        const Tensor prob = predict_averaged(checkpoints, s.input, average_logits);
        const Tensor pred = binarize(prob).reshape(s.mask.shape());
        const Tensor truth = binarize(s.mask);
        SampleScore score{s.id, dice_score(pred, truth), area_diff_mm2(pred, truth, s.spacing_mm)};
        dice.push_back(score.dice);
        area.push_back(score.area_diff_mm2);
        r.samples.push_back(std::move(score));
        if (maps) (*maps)[s.id] = prob;
    }
    r.dice_mean = mean_of(dice);
    r.dice_std = population_std(dice);
    r.area_diff_mean = mean_of(area);
    r.area_diff_std = population_std(area);
    return r;
}

Comparison compare_runs(const EvalReport& a, const EvalReport& b) {
    std::map<std::string, const SampleScore*> by_id;
    for (const auto& s : b.samples) by_id[s.id] = &s;
    std::vector<std::string> missing;
    std::vector<double> dice_a, dice_b, area_a, area_b;
    for (const auto& s : a.samples) {
        auto it = by_id.find(s.id);
        if (it == by_id.end()) {
            missing.push_back(s.id);
            continue;
        }
        dice_a.push_back(s.dice);
        dice_b.push_back(it->second->dice);
        area_a.push_back(s.area_diff_mm2);
        area_b.push_back(it->second->area_diff_mm2);
    }
    if (!missing.empty() || a.samples.size() != b.samples.size()) {
        throw PairingError(fmt::format("sample id sets differ ({} vs {} samples, {} of the first unmatched)",
                                       a.samples.size(), b.samples.size(), missing.size()));
    }
    Comparison c;
    c.n = dice_a.size();
    auto row = [](const char* name, const std::vector<double>& x, const std::vector<double>& y) {
        MetricComparison m;
        m.metric = name;
        m.mean_a = mean_of(x);
        m.mean_b = mean_of(y);
        try {
            m.test = wilcoxon_signed_rank(x, y);
        } catch (const InsufficientData& e) {
            m.note = e.what();
        }
        return m;
    };
    c.rows.push_back(row("dice", dice_a, dice_b));
    c.rows.push_back(row("area_diff_mm2", area_a, area_b));
    if (std::none_of(c.rows.begin(), c.rows.end(), [](const MetricComparison& m) { return m.test.has_value(); })) {
        throw InsufficientData(fmt::format("insufficient data: {}", c.rows.front().note));
    }
    return c;
}

void to_json(nlohmann::json& j, const Comparison& c) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& m : c.rows) {
        nlohmann::json r{{"metric", m.metric}, {"mean_a", m.mean_a}, {"mean_b", m.mean_b}};
        if (m.test) {
            r["statistic"] = m.test->statistic;
            r["p_value"] = m.test->p_value;
            r["n_nonzero"] = m.test->n;
            r["stars"] = significance_stars(m.test->p_value);
        } else {
            r["note"] = m.note;
        }
        rows.push_back(r);
    }
    j = nlohmann::json{{"n", c.n}, {"rows", rows}};
}

}  // namespace projnet
