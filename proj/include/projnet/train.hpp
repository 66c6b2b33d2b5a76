#pragma once

// Training runs (reconstruction pretraining and segmentation fine-tuning),
// top-k checkpoint ranking, checkpoint-averaged prediction and evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "projnet/data.hpp"
#include "projnet/metrics.hpp"
#include "projnet/model.hpp"

namespace projnet {

enum class Task { reconstruct, segment };
enum class Modality { slo, faf };

std::string to_string(Task task);
Task task_from_string(const std::string& s);
std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct RunConfig {
    Task task = Task::segment;
    std::size_t epochs = 60;
    double lr = 0.1;
    double momentum = 0.9;
    /// 0 picks the task default: 4 for reconstruction, 8 for segmentation.
    std::size_t batch_size = 0;
    double label_fraction = 1.0;
    std::uint64_t seed = 0;
    /// Run directory whose best checkpoint initializes this run.
    std::optional<std::string> init_checkpoint;
    Modality target_modality = Modality::slo;
    std::size_t top_k = 5;
    /// Copy the output head when initializing from another run.
    bool transfer_head = true;
    /// Average pre-sigmoid logits instead of probabilities across checkpoints.
    bool average_logits = false;
    NetworkSpec network;
    PreprocessConfig preprocess;

    std::size_t effective_batch_size() const;
    /// The network spec with head and input depth derived from the task and
    /// preprocessing.
    NetworkSpec network_spec() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& cfg);
/// Missing fields keep their defaults; unknown fields are rejected.
void from_json(const nlohmann::json& j, RunConfig& cfg);

/// Keeps ceil(fraction * n_train_patients) training patients (all their
/// samples). Patients are drawn from one seeded order, so smaller fractions
/// are subsets of larger ones. Validation and test entries are untouched.
DatasetManifest subset_labels(const DatasetManifest& manifest, double fraction, std::uint64_t seed);

/// A sample ready for the network.
struct PreparedSample {
    std::string id;
    std::string patient_id;
    std::array<double, 2> spacing_mm{};
    /// (1,1,H,W,D) preprocessed volume.
    Tensor input;
    /// (1,1,H,W) training target: mask, SLO, or inverted FAF.
    Tensor target;
    /// (1,H,W) lesion mask.
    Tensor mask;
};

std::vector<PreparedSample> prepare_samples(const std::filesystem::path& data_dir, const DatasetManifest& manifest,
                                            Split split, const RunConfig& cfg, DType dtype = default_dtype());

/// Stacks (1,...) tensors along the batch axis.
Tensor stack_batch(const std::vector<const Tensor*>& items);

struct CheckpointRecord {
    std::size_t epoch = 0;
    double metric = 0;
    std::string path;
};

/// Best-first list of at most top_k checkpoints. Equal metrics keep the
/// earlier epoch first.
class CheckpointSet {
public:
    CheckpointSet(bool higher_is_better, std::size_t top_k);

    /// True when (epoch, metric) would enter the current set.
    bool qualifies(double metric) const;
    /// Inserts the record when it qualifies; returns the evicted record, if
    /// any, through `evicted`.
    bool offer(CheckpointRecord record, std::optional<CheckpointRecord>* evicted = nullptr);

    const std::vector<CheckpointRecord>& records() const { return records_; }
    bool higher_is_better() const { return higher_is_better_; }
    std::size_t top_k() const { return top_k_; }
    /// True when the ordering invariant holds.
    bool well_ordered() const;

private:
    bool better(double a, double b) const;

    bool higher_is_better_;
    std::size_t top_k_;
    std::vector<CheckpointRecord> records_;
};

void to_json(nlohmann::json& j, const CheckpointSet& set);
CheckpointSet checkpoint_set_from_json(const nlohmann::json& j);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_metric = 0;
};

struct TrainResult {
    CheckpointSet checkpoints{true, 1};
    std::vector<EpochLog> log;
    /// Loss of every optimizer step, in order.
    std::vector<double> step_losses;
    ParamStore final_params;
};

/// Seed of the initial weights for a run.
std::uint64_t init_seed(std::uint64_t run_seed);
/// Sample order used in `epoch`.
std::vector<std::size_t> epoch_order(std::uint64_t run_seed, std::size_t epoch, std::size_t n);

/// Task loss of `params` on one batch, with train-mode batch norm. The
/// running statistics in `params` are updated as during training.
Var task_loss(const RunConfig& cfg, Tape& tape, const ParamBinding& params, const Tensor& input, const Tensor& target);

/// Initial weights: fresh He init, then the best checkpoint of
/// cfg.init_checkpoint transferred in when set.
ParamStore initial_params(const RunConfig& cfg, TransferReport* report = nullptr);

/// Validation metric: mean Dice (segmentation) or mean NMSSIM loss
/// (reconstruction).
double validation_metric(const RunConfig& cfg, const ParamStore& params, const std::vector<PreparedSample>& val);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Runs the full epoch loop and writes config.json, log.csv,
/// checkpoints.json and checkpoints/epochNNN/ under `run_dir`.
TrainResult train(const RunConfig& cfg, const std::vector<PreparedSample>& train_set,
                  const std::vector<PreparedSample>& val_set, const std::filesystem::path& run_dir,
                  const EpochCallback& on_epoch = {});

/// Loads the dataset, applies label subsetting (segmentation only) and trains.
TrainResult train_from_dataset(const RunConfig& cfg, const std::filesystem::path& data_dir,
                               const std::filesystem::path& run_dir, const EpochCallback& on_epoch = {});

RunConfig load_run_config(const std::filesystem::path& run_dir);
/// Ranked checkpoint records of a finished run.
CheckpointSet load_checkpoint_set(const std::filesystem::path& run_dir);
/// The best `top_k` checkpoints of a run, best first.
std::vector<Checkpoint> load_top_checkpoints(const std::filesystem::path& run_dir, std::size_t top_k);

/// Elementwise mean of the checkpoints' predictions for x (B,1,H,W,D);
/// returns (B,1,H,W) probabilities. With `average_logits` the logits are
/// averaged and passed through the sigmoid instead.
Tensor predict_averaged(const std::vector<Checkpoint>& checkpoints, const Tensor& x, bool average_logits = false);

struct SampleScore {
    std::string id;
    double dice = 0;
    double area_diff_mm2 = 0;
};

struct EvalReport {
    std::string split;
    std::size_t top_k = 0;
    std::vector<SampleScore> samples;
    double dice_mean = 0;
    double dice_std = 0;
    double area_diff_mean = 0;
    double area_diff_std = 0;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

/// Scores thresholded averaged predictions against each sample's mask.
/// Standard deviations are population (divide by n). When `maps` is given the
/// averaged probability map of every sample is stored under its id.
EvalReport evaluate(const std::vector<Checkpoint>& checkpoints, const std::vector<PreparedSample>& samples,
                    bool average_logits = false, std::map<std::string, Tensor>* maps = nullptr);

struct MetricComparison {
    std::string metric;
    double mean_a = 0;
    double mean_b = 0;
    /// Empty when the test had too few nonzero differences.
    std::optional<WilcoxonResult> test;
    std::string note;
};

struct Comparison {
    std::size_t n = 0;
    std::vector<MetricComparison> rows;
};

/// Paired Wilcoxon tests on per-sample Dice and area difference. Throws
/// PairingError when the sample id sets differ and InsufficientData when no
/// metric can be tested.
Comparison compare_runs(const EvalReport& a, const EvalReport& b);

void to_json(nlohmann::json& j, const Comparison& c);

}  // namespace projnet
