#pragma once

// 3D->2D segmentation network: a 3D residual encoder, feature projection
// blocks (FPBs) that collapse depth at every level, and a 2D residual decoder
// fed by the projected skips.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "projnet/autodiff.hpp"
#include "projnet/ops.hpp"

namespace projnet {

enum class Head { reconstruction, segmentation };
enum class Downsample { strided_conv, maxpool };

std::string to_string(Head head);
Head head_from_string(const std::string& s);

struct NetworkSpec {
    std::size_t levels = 4;
    std::size_t base_channels = 8;
    std::size_t channel_multiplier = 2;
    std::size_t fpb_target_depth = 8;
    Head head = Head::segmentation;
    std::size_t input_depth = 32;
    Downsample downsample = Downsample::strided_conv;
    double leaky_slope = 0.01;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    std::size_t channels(std::size_t level) const;
    /// Depth of the 3D features at `level`.
    std::size_t depth_at(std::size_t level) const;
    /// H and W must be multiples of this.
    std::size_t spatial_divisor() const;
    /// Throws ConfigError describing the first violated constraint.
    void validate() const;

    bool operator==(const NetworkSpec&) const = default;
};

void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

/// Number of strided 1x1x3 reductions an FPB applies at depth `depth`:
/// max(0, ceil(log2(depth / target))).
std::size_t fpb_reduction_count(std::size_t depth, std::size_t target);

/// Depth after each FPB stage: input, every strided 1x1x3 conv, the 1x1x4
/// conv, and the depth pooling. 32 with target 8 gives {32, 16, 8, 5, 1}.
std::vector<std::size_t> fpb_depth_trace(std::size_t depth, std::size_t target);

/// Named tensors of one network, kept in construction order. Batch-norm
/// running statistics live here as non-trainable buffers.
class ParamStore {
public:
    void add(const std::string& name, Tensor value, bool trainable = true);

    bool contains(const std::string& name) const { return index_.contains(name); }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool trainable(const std::string& name) const;

    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }
    /// Total scalar count over trainable entries.
    std::size_t parameter_count() const;

    ParamStore to(DType dtype) const;
    bool identical(const ParamStore& other) const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<bool> trainable_;
    std::map<std::string, std::size_t> index_;
};

/// Creates all parameters for `spec`: He-normal conv weights (std
/// sqrt(2 / fan_in)), zero biases, gamma = 1, beta = 0, running mean 0 and
/// running variance 1. Deterministic per seed.
ParamStore build(const NetworkSpec& spec, std::uint64_t seed, DType dtype = default_dtype());

/// Binds a ParamStore onto a tape as leaves. Training binds a mutable store
/// so batch-norm running statistics can be updated.
class ParamBinding {
public:
    ParamBinding(Tape& tape, ParamStore& store, bool track_grads);
    ParamBinding(Tape& tape, const ParamStore& store);

    Var var(const std::string& name) const;
    const Tensor& buffer(const std::string& name) const;
    /// Null for const bindings.
    ParamStore* mutable_store() const { return mutable_; }

    /// Gradient of every trainable parameter after Tape::backward. Parameters
    /// that received no gradient map to zeros.
    std::vector<std::pair<std::string, Tensor>> grads() const;

private:
    Tape& tape_;
    const ParamStore& store_;
    ParamStore* mutable_ = nullptr;
    std::map<std::string, Var> vars_;
};

struct ModelContext {
    Tape& tape;
    const NetworkSpec& spec;
    const ParamBinding& params;
    ops::NormMode mode;
};

/// Four residual units (8 convs) at `level`; shape preserving.
Var encoder_block(const ModelContext& ctx, std::size_t level, Var x);
/// Halves H, W and D and moves to level + 1 channels.
Var downsample_block(const ModelContext& ctx, std::size_t level, Var x);
/// Feature projection: (B,C,H,W,D_level) -> (B,C,H,W).
Var fpb(const ModelContext& ctx, std::size_t level, Var x);
/// Upsample x2, 1x1 channel reduction, concat with the level skip, then two
/// residual units (4 convs). Output has 2 * channels(level) channels.
Var decoder_block(const ModelContext& ctx, std::size_t level, Var x, Var skip);

struct ForwardResult {
    Var logits;
    /// sigmoid(logits), values in (0, 1).
    Var output;
};

/// Full network: (B,1,H,W,D) -> (B,1,H,W). Shape errors are raised before any
/// compute.
ForwardResult forward(const ModelContext& ctx, Var x);
/// Throws InvalidArgument if x cannot be fed to a network built from spec.
void check_input_shape(const NetworkSpec& spec, const Shape& x);

/// Eval-mode inference without gradient tracking.
Tensor predict(const NetworkSpec& spec, const ParamStore& params, const Tensor& x);
Tensor predict_logits(const NetworkSpec& spec, const ParamStore& params, const Tensor& x);

struct TransferReport {
    std::vector<std::string> copied;
    std::vector<std::string> skipped;
};

/// Copies every entry present in both stores with equal shape into a copy of
/// `target`. Names starting with an excluded prefix are skipped. Strict mode
/// throws TransferError listing every mismatching name.
ParamStore transfer_weights(const ParamStore& source, const ParamStore& target, bool strict,
                            TransferReport* report = nullptr,
                            const std::vector<std::string>& exclude_prefixes = {});

struct Checkpoint {
    NetworkSpec spec;
    ParamStore params;
    std::size_t epoch = 0;
    double validation_metric = 0.0;
};

/// Writes one NTEN file per entry plus manifest.json.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace projnet
