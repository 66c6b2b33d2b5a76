// Python module _core: thin wrappers over the library. Configs and reports
// cross the boundary as JSON strings; the projnet package turns them into
// dicts. Arrays are copied in and out as numpy float32/float64.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "projnet/data.hpp"
#include "projnet/losses.hpp"
#include "projnet/metrics.hpp"
#include "projnet/train.hpp"

namespace py = pybind11;
using namespace projnet;

namespace {

using Array = py::array;

Tensor to_tensor(const Array& a) {
    const bool is64 = a.dtype().is(py::dtype::of<double>());
    const auto c = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(a);
    if (!c) throw InvalidArgument("expected a numeric array");
    Shape shape(c.shape(), c.shape() + c.ndim());
    return Tensor::from(shape, std::span<const double>(c.data(), static_cast<std::size_t>(c.size())),
                        is64 ? DType::f64 : DType::f32);
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    if (t.dtype() == DType::f64) {
        py::array_t<double> out(shape);
        std::copy_n(t.data<double>().data(), t.numel(), out.mutable_data());
        return out;
    }
    py::array_t<float> out(shape);
    std::copy_n(t.data<float>().data(), t.numel(), out.mutable_data());
    return out;
}

DType dtype_from(const std::string& s) {
    if (s == "float32") return DType::f32;
    if (s == "float64") return DType::f64;
    throw ConfigError("dtype must be float32 or float64, got " + s);
}

template <class T>
T parse(const std::string& json) {
    return nlohmann::json::parse(json).get<T>();
}

const SampleEntry& find_entry(const DatasetManifest& m, const std::string& id) {
    for (const auto& e : m.samples)
        if (e.id == id) return e;
    throw InvalidArgument("no sample with id " + id);
}

py::dict sample_dict(const Sample& s) {
    py::dict d;
    d["id"] = s.id;
    d["patient_id"] = s.patient_id;
    d["volume"] = to_array(s.volume);
    d["slo"] = to_array(s.slo);
    d["faf"] = to_array(s.faf);
    d["mask"] = to_array(s.mask);
    d["surface"] = to_array(s.surface);
    d["spacing_mm"] = py::make_tuple(s.spacing_mm[0], s.spacing_mm[1]);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "projnet native core";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", error);
    py::register_exception<ConfigError>(m, "ConfigError", error);
    py::register_exception<IoError>(m, "IoError", error);
    py::register_exception<FormatError>(m, "FormatError", error);
    py::register_exception<TransferError>(m, "TransferError", error);
    py::register_exception<InsufficientData>(m, "InsufficientData", error);
    py::register_exception<PairingError>(m, "PairingError", error);

    // data
    m.def("generate_dataset", [](const std::filesystem::path& out, const std::string& cfg) {
        py::gil_scoped_release release;
        return nlohmann::json(generate_dataset(parse<GeneratorConfig>(cfg), out)).dump();
    });
    m.def("generate_sample", [](const std::string& cfg, std::size_t patient, std::size_t index) {
        return sample_dict(generate_sample(parse<GeneratorConfig>(cfg), patient, index));
    });
    m.def("load_manifest", [](const std::filesystem::path& dir) { return nlohmann::json(load_manifest(dir)).dump(); });
    m.def("load_sample", [](const std::filesystem::path& dir, const std::string& id) {
        const DatasetManifest manifest = load_manifest(dir);
        return sample_dict(load_sample(dir, find_entry(manifest, id)));
    });
    m.def("preprocess", [](const Array& volume, const Array& surface, const std::string& cfg, const std::string& dtype) {
        Sample s;
        s.volume = to_tensor(volume);
        s.surface = to_tensor(surface);
        return to_array(preprocess_volume(s, parse<PreprocessConfig>(cfg), dtype_from(dtype)));
    });

    // network
    m.def("fpb_depth_trace", &fpb_depth_trace);
    m.def("build", [](const std::string& spec, std::uint64_t seed, const std::string& dtype) {
        const ParamStore p = build(parse<NetworkSpec>(spec), seed, dtype_from(dtype));
        py::dict d;
        for (const auto& name : p.names()) d[py::str(name)] = to_array(p.at(name));
        return d;
    });
    m.def("predict", [](const std::string& spec_json, const py::dict& params, const Array& x, bool logits) {
        const NetworkSpec spec = parse<NetworkSpec>(spec_json);
        const Tensor input = to_tensor(x);
        ParamStore store = build(spec, 0, input.dtype());
        for (const auto& name : store.names()) {
            if (!params.contains(name)) throw InvalidArgument("missing parameter " + name);
            const Tensor t = to_tensor(params[py::str(name)].cast<Array>()).to(input.dtype());
            if (t.shape() != store.at(name).shape())
                throw InvalidArgument("parameter " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                                      shape_str(store.at(name).shape()));
            store.at(name) = t;
        }
        Tensor out;
        {
            py::gil_scoped_release release;
            out = logits ? predict_logits(spec, store, input) : predict(spec, store, input);
        }
        return to_array(out);
    }, py::arg("spec"), py::arg("params"), py::arg("x"), py::arg("logits") = false);

    // training and evaluation
    m.def("train", [](const std::string& cfg, const std::filesystem::path& data, const std::filesystem::path& run) {
        TrainResult r;
        {
            py::gil_scoped_release release;
            r = train_from_dataset(parse<RunConfig>(cfg), data, run);
        }
        py::list log;
        for (const auto& row : r.log) log.append(py::make_tuple(row.epoch, row.train_loss, row.val_metric));
        return log;
    });
    m.def("evaluate", [](const std::filesystem::path& data, const std::filesystem::path& run, const std::string& split,
                         std::size_t top_k, bool average_logits) {
        py::gil_scoped_release release;
        const RunConfig cfg = load_run_config(run);
        if (cfg.task != Task::segment) throw ConfigError("run " + run.string() + " is not a segmentation run");
        const auto samples = prepare_samples(data, load_manifest(data), split_from_string(split), cfg);
        EvalReport report = evaluate(load_top_checkpoints(run, top_k), samples, average_logits || cfg.average_logits);
        report.split = split;
        return nlohmann::json(report).dump();
    });
    m.def("predict_run", [](const std::filesystem::path& run, const Array& x, std::size_t top_k, bool average_logits) {
        const Tensor input = to_tensor(x);
        Tensor out;
        {
            py::gil_scoped_release release;
            out = predict_averaged(load_top_checkpoints(run, top_k), input, average_logits);
        }
        return to_array(out);
    });
    m.def("compare", [](const std::string& a, const std::string& b) {
        return nlohmann::json(compare_runs(parse<EvalReport>(a), parse<EvalReport>(b))).dump();
    });

    // losses and metrics
    m.def("ssim_map", [](const Array& x, const Array& y) { return to_array(ssim_map(to_tensor(x), to_tensor(y))); });
    m.def("dice_score", [](const Array& p, const Array& t) { return dice_score(to_tensor(p), to_tensor(t)); });
    m.def("wilcoxon", [](const std::vector<double>& a, const std::vector<double>& b) {
        const WilcoxonResult r = wilcoxon_signed_rank(a, b);
        py::dict d;
        d["statistic"] = r.statistic;
        d["p_value"] = r.p_value;
        d["w_plus"] = r.w_plus;
        d["w_minus"] = r.w_minus;
        d["z"] = r.z;
        d["n"] = r.n;
        return d;
    });
}
