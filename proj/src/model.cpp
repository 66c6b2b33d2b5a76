#include "projnet/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "projnet/nten.hpp"

namespace projnet {

using ops::NormMode;

std::string to_string(Head head) { return head == Head::reconstruction ? "reconstruction" : "segmentation"; }

Head head_from_string(const std::string& s) {
    if (s == "reconstruction") return Head::reconstruction;
    if (s == "segmentation") return Head::segmentation;
    throw ConfigError(fmt::format("unknown head '{}'", s));
}

namespace {

std::string downsample_name(Downsample d) { return d == Downsample::maxpool ? "maxpool" : "strided_conv"; }

Downsample downsample_from_string(const std::string& s) {
    if (s == "maxpool") return Downsample::maxpool;
    if (s == "strided_conv") return Downsample::strided_conv;
    throw ConfigError(fmt::format("unknown downsample mode '{}'", s));
}

std::size_t pow2(std::size_t e) { return std::size_t{1} << e; }

}  // namespace

std::size_t NetworkSpec::channels(std::size_t level) const {
    std::size_t c = base_channels;
    for (std::size_t i = 0; i < level; ++i) c *= channel_multiplier;
    return c;
}

std::size_t NetworkSpec::depth_at(std::size_t level) const { return input_depth / pow2(level); }

std::size_t NetworkSpec::spatial_divisor() const { return pow2(levels - 1); }

void NetworkSpec::validate() const {
    if (levels < 2) throw ConfigError(fmt::format("network: levels must be >= 2, got {}", levels));
    if (levels > 8) throw ConfigError(fmt::format("network: levels must be <= 8, got {}", levels));
    if (base_channels < 1) throw ConfigError("network: base_channels must be >= 1");
    if (channel_multiplier < 1) throw ConfigError("network: channel_multiplier must be >= 1");
    if (fpb_target_depth < 1) throw ConfigError("network: fpb_target_depth must be >= 1");
    const std::size_t div = spatial_divisor();
    if (input_depth == 0 || input_depth % div != 0) {
        throw ConfigError(fmt::format("network: input_depth {} must be a multiple of 2^(levels-1) = {}",
                                      input_depth, div));
    }
    for (std::size_t l = 0; l < levels; ++l) {
        const auto trace = fpb_depth_trace(depth_at(l), fpb_target_depth);
        const std::size_t before_collapse = trace[trace.size() - 3];
        if (before_collapse < 4) {
            throw ConfigError(fmt::format(
                "network: FPB at level {} reaches depth {} before its 1x1x4 convolution (needs >= 4)", l,
                before_collapse));
        }
    }
    if (!(leaky_slope >= 0.0)) throw ConfigError("network: leaky_slope must be non-negative");
    if (!(bn_eps > 0.0)) throw ConfigError("network: bn_eps must be positive");
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw ConfigError("network: bn_momentum must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const NetworkSpec& spec) {
    j = nlohmann::json{{"levels", spec.levels},
                       {"base_channels", spec.base_channels},
                       {"channel_multiplier", spec.channel_multiplier},
                       {"fpb_target_depth", spec.fpb_target_depth},
                       {"head", to_string(spec.head)},
                       {"input_depth", spec.input_depth},
                       {"downsample", downsample_name(spec.downsample)},
                       {"leaky_slope", spec.leaky_slope},
                       {"bn_eps", spec.bn_eps},
                       {"bn_momentum", spec.bn_momentum}};
}

void from_json(const nlohmann::json& j, NetworkSpec& spec) {
    NetworkSpec d;
    try {
        d.levels = j.value("levels", d.levels);
        d.base_channels = j.value("base_channels", d.base_channels);
        d.channel_multiplier = j.value("channel_multiplier", d.channel_multiplier);
        d.fpb_target_depth = j.value("fpb_target_depth", d.fpb_target_depth);
        d.head = head_from_string(j.value("head", to_string(d.head)));
        d.input_depth = j.value("input_depth", d.input_depth);
        d.downsample = downsample_from_string(j.value("downsample", downsample_name(d.downsample)));
        d.leaky_slope = j.value("leaky_slope", d.leaky_slope);
        d.bn_eps = j.value("bn_eps", d.bn_eps);
        d.bn_momentum = j.value("bn_momentum", d.bn_momentum);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("network spec: {}", e.what()));
    }
    spec = d;
}

std::size_t fpb_reduction_count(std::size_t depth, std::size_t target) {
    std::size_t n = 0;
    // Smallest n with target * 2^n >= depth, i.e. ceil(log2(depth / target)).
    while (target * pow2(n) < depth) ++n;
    return n;
}

std::vector<std::size_t> fpb_depth_trace(std::size_t depth, std::size_t target) {
    std::vector<std::size_t> trace{depth};
    const std::size_t n = fpb_reduction_count(depth, target);
    std::size_t d = depth;
    for (std::size_t i = 0; i < n; ++i) {
        d = (d + 2 - 3) / 2 + 1;  // kernel 3, padding 1, stride 2
        trace.push_back(d);
    }
    trace.push_back(d >= 4 ? d - 3 : 0);
    trace.push_back(d >= 4 ? 1 : 0);
    return trace;
}

// ---------------------------------------------------------------- ParamStore

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (index_.contains(name)) throw ConfigError(fmt::format("duplicate parameter name '{}'", name));
    index_.emplace(name, names_.size());
    names_.push_back(name);
    value.set_requires_grad(false);
    values_.push_back(std::move(value));
    trainable_.push_back(trainable);
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument(fmt::format("unknown parameter '{}'", name));
    return values_[it->second];
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument(fmt::format("unknown parameter '{}'", name));
    return values_[it->second];
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument(fmt::format("unknown parameter '{}'", name));
    return trainable_[it->second];
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (trainable_[i]) n += values_[i].numel();
    }
    return n;
}

ParamStore ParamStore::to(DType dtype) const {
    ParamStore out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], values_[i].to(dtype), trainable_[i]);
    return out;
}

bool ParamStore::identical(const ParamStore& other) const {
    if (names_ != other.names_ || trainable_ != other.trainable_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!values_[i].identical(other.values_[i])) return false;
    }
    return true;
}

// --------------------------------------------------------------------- build

namespace {

struct Builder {
    ParamStore store;
    std::mt19937_64 rng;
    DType dtype;

    void conv(const std::string& prefix, Shape weight_shape) {
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < weight_shape.size(); ++i) fan_in *= weight_shape[i];
        const std::size_t cout = weight_shape[0];
        Tensor w(std::move(weight_shape), dtype);
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (std::size_t i = 0; i < w.numel(); ++i) w.set(i, normal(rng));
        store.add(prefix + ".weight", std::move(w));
        store.add(prefix + ".bias", Tensor::zeros({cout}, dtype));
    }
    void conv3(const std::string& prefix, std::size_t cout, std::size_t cin, kernels::Triple k) {
        conv(prefix, {cout, cin, k[0], k[1], k[2]});
    }
    void conv2(const std::string& prefix, std::size_t cout, std::size_t cin, std::size_t k) {
        conv(prefix, {cout, cin, k, k});
    }
    void bn(const std::string& prefix, std::size_t c) {
        store.add(prefix + ".gamma", Tensor::full({c}, 1.0, dtype));
        store.add(prefix + ".beta", Tensor::zeros({c}, dtype));
        store.add(prefix + ".running_mean", Tensor::zeros({c}, dtype), false);
        store.add(prefix + ".running_var", Tensor::full({c}, 1.0, dtype), false);
    }
};

std::string lvl(const char* part, std::size_t level) { return fmt::format("{}.L{}", part, level); }

constexpr std::size_t kEncoderUnits = 4;
constexpr std::size_t kDecoderUnits = 2;

}  // namespace

ParamStore build(const NetworkSpec& spec, std::uint64_t seed, DType dtype) {
    spec.validate();
    Builder b{ParamStore{}, std::mt19937_64(seed), dtype};
    const std::size_t L = spec.levels;

    b.conv3("enc.stem.conv", spec.channels(0), 1, {3, 3, 3});
    b.bn("enc.stem.bn", spec.channels(0));
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t c = spec.channels(l);
        if (l > 0) {
            const std::string p = fmt::format("enc.down{}", l - 1);
            const kernels::Triple k = spec.downsample == Downsample::strided_conv ? kernels::Triple{2, 2, 2}
                                                                                   : kernels::Triple{1, 1, 1};
            b.conv3(p + ".conv", c, spec.channels(l - 1), k);
            b.bn(p + ".bn", c);
        }
        for (std::size_t u = 0; u < kEncoderUnits; ++u) {
            const std::string p = fmt::format("{}.res{}", lvl("enc", l), u);
            b.conv3(p + ".conv1", c, c, {3, 3, 3});
            b.bn(p + ".bn1", c);
            b.conv3(p + ".conv2", c, c, {3, 3, 3});
            b.bn(p + ".bn2", c);
        }
    }
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t c = spec.channels(l);
        const std::size_t n = fpb_reduction_count(spec.depth_at(l), spec.fpb_target_depth);
        for (std::size_t i = 0; i < n; ++i) {
            const std::string p = fmt::format("{}.reduce{}", lvl("fpb", l), i);
            b.conv3(p + ".conv", c, c, {1, 1, 3});
            b.bn(p + ".bn", c);
        }
        b.conv3(lvl("fpb", l) + ".collapse.conv", c, c, {1, 1, 4});
        b.bn(lvl("fpb", l) + ".collapse.bn", c);
    }
    for (std::size_t l = L - 1; l-- > 0;) {
        const std::size_t c = spec.channels(l);
        const std::size_t in_c = l == L - 2 ? spec.channels(L - 1) : 2 * spec.channels(l + 1);
        b.conv2(lvl("dec", l) + ".reduce.conv", c, in_c, 1);
        for (std::size_t u = 0; u < kDecoderUnits; ++u) {
            const std::string p = fmt::format("{}.res{}", lvl("dec", l), u);
            b.conv2(p + ".conv1", 2 * c, 2 * c, 3);
            b.bn(p + ".bn1", 2 * c);
            b.conv2(p + ".conv2", 2 * c, 2 * c, 3);
            b.bn(p + ".bn2", 2 * c);
        }
    }
    b.conv2("head.conv", 1, 2 * spec.channels(0), 1);
    return std::move(b.store);
}

// ------------------------------------------------------------------- binding

ParamBinding::ParamBinding(Tape& tape, ParamStore& store, bool track_grads)
    : tape_(tape), store_(store), mutable_(&store) {
    for (const auto& name : store.names()) {
        Tensor v = store.at(name);
        v.set_requires_grad(track_grads && store.trainable(name));
        vars_.emplace(name, tape.leaf(std::move(v)));
    }
}

ParamBinding::ParamBinding(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {
    for (const auto& name : store.names()) vars_.emplace(name, tape.constant(store.at(name)));
}

Var ParamBinding::var(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw InvalidArgument(fmt::format("unknown parameter '{}'", name));
    return it->second;
}

const Tensor& ParamBinding::buffer(const std::string& name) const { return store_.at(name); }

std::vector<std::pair<std::string, Tensor>> ParamBinding::grads() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& name : store_.names()) {
        if (!store_.trainable(name)) continue;
        const Tensor& g = tape_.grad(var(name));
        const Tensor& p = store_.at(name);
        out.emplace_back(name, g.defined() ? g : Tensor::zeros(p.shape(), p.dtype()));
    }
    return out;
}

// ------------------------------------------------------------------- blocks

namespace {

Var conv3(const ModelContext& ctx, const std::string& prefix, Var x, const kernels::Conv3dGeometry& geom) {
    return ops::conv3d(x, ctx.params.var(prefix + ".weight"), ctx.params.var(prefix + ".bias"), geom);
}

Var conv2(const ModelContext& ctx, const std::string& prefix, Var x, const kernels::Conv2dGeometry& geom) {
    return ops::conv2d(x, ctx.params.var(prefix + ".weight"), ctx.params.var(prefix + ".bias"), geom);
}

Var norm(const ModelContext& ctx, const std::string& prefix, Var x) {
    const Var gamma = ctx.params.var(prefix + ".gamma");
    const Var beta = ctx.params.var(prefix + ".beta");
    ParamStore* store = ctx.params.mutable_store();
    if (ctx.mode == NormMode::train) {
        if (!store) throw InvalidArgument("train-mode forward requires a mutable parameter binding");
        return ops::batchnorm(x, gamma, beta, store->at(prefix + ".running_mean"),
                              store->at(prefix + ".running_var"), NormMode::train,
                              {ctx.spec.bn_eps, ctx.spec.bn_momentum});
    }
    return ops::batchnorm_eval(x, gamma, beta, ctx.params.buffer(prefix + ".running_mean"),
                               ctx.params.buffer(prefix + ".running_var"), ctx.spec.bn_eps);
}

Var act(const ModelContext& ctx, Var x) { return ops::leaky_relu(x, ctx.spec.leaky_slope); }

template <class ConvFn>
Var residual_unit(const ModelContext& ctx, const std::string& prefix, Var x, ConvFn conv) {
    Var h = act(ctx, norm(ctx, prefix + ".bn1", conv(prefix + ".conv1", x)));
    h = norm(ctx, prefix + ".bn2", conv(prefix + ".conv2", h));
    return act(ctx, ops::add(h, x));
}

}  // namespace

Var encoder_block(const ModelContext& ctx, std::size_t level, Var x) {
    const kernels::Conv3dGeometry same{{1, 1, 1}, {1, 1, 1}};
    auto conv = [&](const std::string& p, Var in) { return conv3(ctx, p, in, same); };
    for (std::size_t u = 0; u < kEncoderUnits; ++u) {
        x = residual_unit(ctx, fmt::format("{}.res{}", lvl("enc", level), u), x, conv);
    }
    return x;
}

Var downsample_block(const ModelContext& ctx, std::size_t level, Var x) {
    const std::string p = fmt::format("enc.down{}", level);
    Var h;
    if (ctx.spec.downsample == Downsample::strided_conv) {
        h = conv3(ctx, p + ".conv", x, {{2, 2, 2}, {0, 0, 0}});
    } else {
        h = conv3(ctx, p + ".conv", ops::maxpool3d(x), {});
    }
    return act(ctx, norm(ctx, p + ".bn", h));
}

Var fpb(const ModelContext& ctx, std::size_t level, Var x) {
    const std::size_t depth = x.value().dim(4);
    if (depth < 4) {
        throw ConfigError(fmt::format("FPB at level {} received depth {} (< 4)", level, depth));
    }
    const std::size_t n = fpb_reduction_count(depth, ctx.spec.fpb_target_depth);
    const std::string base = lvl("fpb", level);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string p = fmt::format("{}.reduce{}", base, i);
        x = act(ctx, norm(ctx, p + ".bn", conv3(ctx, p + ".conv", x, {{1, 1, 2}, {0, 0, 1}})));
    }
    x = act(ctx, norm(ctx, base + ".collapse.bn", conv3(ctx, base + ".collapse.conv", x, {})));
    return ops::adaptive_avgpool_depth1(x);
}

Var decoder_block(const ModelContext& ctx, std::size_t level, Var x, Var skip) {
    const std::string base = lvl("dec", level);
    Var h = conv2(ctx, base + ".reduce.conv", ops::upsample2d_nearest(x, 2), {});
    h = ops::concat_channels(h, skip);
    const kernels::Conv2dGeometry same{{1, 1}, {1, 1}};
    auto conv = [&](const std::string& p, Var in) { return conv2(ctx, p, in, same); };
    for (std::size_t u = 0; u < kDecoderUnits; ++u) {
        h = residual_unit(ctx, fmt::format("{}.res{}", base, u), h, conv);
    }
    return h;
}

void check_input_shape(const NetworkSpec& spec, const Shape& x) {
    if (x.size() != 5) {
        throw InvalidArgument(fmt::format("forward: expected input (B,1,H,W,D), got {}", shape_str(x)));
    }
    if (x[1] != 1) throw InvalidArgument(fmt::format("forward: expected 1 input channel, got {}", x[1]));
    const std::size_t div = spec.spatial_divisor();
    if (x[2] % div != 0) {
        throw InvalidArgument(fmt::format("forward: H = {} is not divisible by {}", x[2], div));
    }
    if (x[3] % div != 0) {
        throw InvalidArgument(fmt::format("forward: W = {} is not divisible by {}", x[3], div));
    }
    if (x[4] != spec.input_depth) {
        throw InvalidArgument(
            fmt::format("forward: depth D = {} does not match network input_depth {}", x[4], spec.input_depth));
    }
}

ForwardResult forward(const ModelContext& ctx, Var x) {
    check_input_shape(ctx.spec, x.value().shape());
    const std::size_t L = ctx.spec.levels;
    Var h = act(ctx, norm(ctx, "enc.stem.bn", conv3(ctx, "enc.stem.conv", x, {{1, 1, 1}, {1, 1, 1}})));
    std::vector<Var> skips;
    for (std::size_t l = 0; l < L; ++l) {
        if (l > 0) h = downsample_block(ctx, l - 1, h);
        h = encoder_block(ctx, l, h);
        skips.push_back(fpb(ctx, l, h));
    }
    Var d = skips[L - 1];
    for (std::size_t l = L - 1; l-- > 0;) d = decoder_block(ctx, l, d, skips[l]);
    Var logits = conv2(ctx, "head.conv", d, {});
    return {logits, ops::sigmoid(logits)};
}

Tensor predict(const NetworkSpec& spec, const ParamStore& params, const Tensor& x) {
    Tape tape;
    ParamBinding binding(tape, params);
    const ModelContext ctx{tape, spec, binding, NormMode::eval};
    auto r = forward(ctx, tape.constant(x));
    return r.output.value();
}

Tensor predict_logits(const NetworkSpec& spec, const ParamStore& params, const Tensor& x) {
    Tape tape;
    ParamBinding binding(tape, params);
    const ModelContext ctx{tape, spec, binding, NormMode::eval};
    auto r = forward(ctx, tape.constant(x));
    return r.logits.value();
}

// ----------------------------------------------------------------- transfer

ParamStore transfer_weights(const ParamStore& source, const ParamStore& target, bool strict,
                            TransferReport* report, const std::vector<std::string>& exclude_prefixes) {
    TransferReport local;
    ParamStore out = target;
    std::vector<std::string> mismatches;
    auto excluded = [&](const std::string& name) {
        for (const auto& p : exclude_prefixes) {
            if (name.rfind(p, 0) == 0) return true;
        }
        return false;
    };
    for (const auto& name : target.names()) {
        if (excluded(name)) {
            local.skipped.push_back(name);
            continue;
        }
        if (!source.contains(name)) {
            local.skipped.push_back(name);
            mismatches.push_back(name + " (missing in source)");
            continue;
        }
        const Tensor& src = source.at(name);
        if (src.shape() != target.at(name).shape()) {
            local.skipped.push_back(name);
            mismatches.push_back(fmt::format("{} (shape {} vs {})", name, shape_str(src.shape()),
                                             shape_str(target.at(name).shape())));
            continue;
        }
        out.at(name) = src.to(target.at(name).dtype());
        local.copied.push_back(name);
    }
    for (const auto& name : source.names()) {
        if (!target.contains(name) && !excluded(name)) {
            local.skipped.push_back(name);
            mismatches.push_back(name + " (missing in target)");
        }
    }
    if (strict && !mismatches.empty()) {
        std::string msg = "weight transfer mismatch:";
        for (const auto& m : mismatches) msg += "\n  " + m;
        throw TransferError(msg);
    }
    if (report) *report = std::move(local);
    return out;
}

// --------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
    nlohmann::json files = nlohmann::json::object();
    nlohmann::json trainable = nlohmann::json::object();
    for (const auto& name : ckpt.params.names()) {
        const std::string file = name + ".nten";
        nten::save(dir / file, ckpt.params.at(name));
        files[name] = file;
        trainable[name] = ckpt.params.trainable(name);
    }
    nlohmann::json manifest{{"spec", ckpt.spec},
                            {"files", files},
                            {"trainable", trainable},
                            {"order", ckpt.params.names()},
                            {"epoch", ckpt.epoch},
                            {"validation_metric", ckpt.validation_metric}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError(fmt::format("cannot write {}", (dir / "manifest.json").string()));
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError(fmt::format("cannot open checkpoint manifest in {}", dir.string()));
    Checkpoint ckpt;
    try {
        const auto manifest = nlohmann::json::parse(in);
        ckpt.spec = manifest.at("spec").get<NetworkSpec>();
        ckpt.epoch = manifest.at("epoch").get<std::size_t>();
        ckpt.validation_metric = manifest.at("validation_metric").get<double>();
        const auto& files = manifest.at("files");
        const auto& trainable = manifest.at("trainable");
        for (const auto& name : manifest.at("order")) {
            const auto n = name.get<std::string>();
            ckpt.params.add(n, nten::load(dir / files.at(n).get<std::string>()), trainable.at(n).get<bool>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("checkpoint manifest in {}: {}", dir.string(), e.what()));
    }
    return ckpt;
}

}  // namespace projnet
