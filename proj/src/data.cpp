#include "projnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "projnet/nten.hpp"

namespace projnet {

namespace fs = std::filesystem;

std::string to_string(LesionKind kind) { return kind == LesionKind::ga ? "ga" : "rpd"; }

LesionKind lesion_from_string(const std::string& s) {
    if (s == "ga") return LesionKind::ga;
    if (s == "rpd") return LesionKind::rpd;
    throw ConfigError(fmt::format("unknown lesion kind '{}' (expected ga|rpd)", s));
}

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError(fmt::format("unknown split '{}' (expected train|val|test)", s));
}

void GeneratorConfig::validate() const {
    if (patients == 0) throw ConfigError("generator: patients must be positive");
    if (samples_per_patient == 0) throw ConfigError("generator: samples per patient must be positive");
    if (height == 0 || width == 0 || depth == 0) throw ConfigError("generator: dimensions must be positive");
    if (depth < 8) throw ConfigError(fmt::format("generator: depth {} too small for a layered phantom (need >= 8)", depth));
    if (!(noise_sigma >= 0) || !(volume_noise >= 0)) throw ConfigError("generator: noise levels must be non-negative");
    if (!(area_mm[0] > 0) || !(area_mm[1] > 0)) throw ConfigError("generator: area must be positive");
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = nlohmann::json{{"seed", c.seed},
                       {"patients", c.patients},
                       {"samples_per_patient", c.samples_per_patient},
                       {"shape", {c.height, c.width, c.depth}},
                       {"lesion", to_string(c.lesion)},
                       {"noise_sigma", c.noise_sigma},
                       {"lesion_contrast", c.lesion_contrast},
                       {"volume_noise", c.volume_noise},
                       {"area_mm", c.area_mm}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    const GeneratorConfig d;
    c.seed = j.value("seed", d.seed);
    c.patients = j.value("patients", d.patients);
    c.samples_per_patient = j.value("samples_per_patient", d.samples_per_patient);
    const auto shape = j.value("shape", std::vector<std::size_t>{d.height, d.width, d.depth});
    if (shape.size() != 3) throw FormatError("generator shape must have 3 entries");
    c.height = shape[0];
    c.width = shape[1];
    c.depth = shape[2];
    c.lesion = lesion_from_string(j.value("lesion", to_string(d.lesion)));
    c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    c.lesion_contrast = j.value("lesion_contrast", d.lesion_contrast);
    c.volume_noise = j.value("volume_noise", d.volume_noise);
    c.area_mm = j.value("area_mm", d.area_mm);
}

std::vector<std::string> DatasetManifest::patients(Split split) const {
    std::vector<std::string> out;
    for (const auto& s : samples) {
        if (s.split == split && std::find(out.begin(), out.end(), s.patient_id) == out.end()) {
            out.push_back(s.patient_id);
        }
    }
    return out;
}

std::vector<const SampleEntry*> DatasetManifest::entries(Split split) const {
    std::vector<const SampleEntry*> out;
    for (const auto& s : samples) {
        if (s.split == split) out.push_back(&s);
    }
    return out;
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : m.samples) {
        samples.push_back({{"id", s.id},
                           {"patient_id", s.patient_id},
                           {"split", to_string(s.split)},
                           {"spacing_mm", s.spacing_mm},
                           {"files", s.files}});
    }
    j = nlohmann::json{{"generator", m.generator}, {"seed", m.generator.seed}, {"samples", samples}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
    m.generator = j.at("generator").get<GeneratorConfig>();
    m.samples.clear();
    for (const auto& s : j.at("samples")) {
        SampleEntry e;
        e.id = s.at("id").get<std::string>();
        e.patient_id = s.at("patient_id").get<std::string>();
        e.split = split_from_string(s.at("split").get<std::string>());
        e.spacing_mm = s.at("spacing_mm").get<std::array<double, 2>>();
        e.files = s.at("files").get<std::map<std::string, std::string>>();
        m.samples.push_back(std::move(e));
    }
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a mixed key
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(master) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

// --------------------------------------------------------------- generation

namespace {

using Grid = std::vector<double>;  // H x W, row-major

Grid gaussian_blur(const Grid& in, std::size_t H, std::size_t W, double sigma_h, double sigma_w) {
    auto kernel = [](double sigma) {
        const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
        std::vector<double> k(2 * r + 1);
        double total = 0;
        for (int i = -r; i <= r; ++i) {
            k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
            total += k[i + r];
        }
        for (auto& v : k) v /= total;
        return k;
    };
    const auto kh = kernel(sigma_h), kw = kernel(sigma_w);
    const int rh = static_cast<int>(kh.size() / 2), rw = static_cast<int>(kw.size() / 2);
    Grid tmp(H * W, 0.0), out(H * W, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            double acc = 0;
            for (int k = -rw; k <= rw; ++k) {
                const auto ww = std::clamp<long>(static_cast<long>(w) + k, 0, static_cast<long>(W) - 1);
                acc += kw[k + rw] * in[h * W + ww];
            }
            tmp[h * W + w] = acc;
        }
    }
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            double acc = 0;
            for (int k = -rh; k <= rh; ++k) {
                const auto hh = std::clamp<long>(static_cast<long>(h) + k, 0, static_cast<long>(H) - 1);
                acc += kh[k + rh] * tmp[hh * W + w];
            }
            out[h * W + w] = acc;
        }
    }
    return out;
}

// Footprint as a union of ellipses in physical coordinates, smoothed and
// re-thresholded so the outline is not pixel-regular.
Grid lesion_footprint(const GeneratorConfig& cfg, const std::array<double, 2>& spacing, std::mt19937_64& rng) {
    const std::size_t H = cfg.height, W = cfg.width;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Grid raw(H * W, 0.0);
    struct Blob {
        double ch, cw, rh, rw, angle;
    };
    std::vector<Blob> blobs;
    const double ext_h = cfg.area_mm[0], ext_w = cfg.area_mm[1];
    if (cfg.lesion == LesionKind::ga) {
        const int count = 1 + static_cast<int>(u01(rng) * 4);  // 1..4
        for (int i = 0; i < count; ++i) {
            Blob b;
            b.ch = ext_h * (0.2 + 0.6 * u01(rng));
            b.cw = ext_w * (0.2 + 0.6 * u01(rng));
            b.rh = 0.5 + 1.0 * u01(rng);
            b.rw = 0.5 + 1.0 * u01(rng);
            b.angle = std::numbers::pi * u01(rng);
            blobs.push_back(b);
        }
    } else {
        const int count = 8 + static_cast<int>(u01(rng) * 13);  // 8..20
        for (int i = 0; i < count; ++i) {
            Blob b;
            b.ch = ext_h * (0.05 + 0.9 * u01(rng));
            b.cw = ext_w * (0.05 + 0.9 * u01(rng));
            // at least half an en-face row so deposits survive rasterization
            b.rh = std::max(0.6 * spacing[0], 0.2 + 0.2 * u01(rng));
            b.rw = b.rh;
            b.angle = 0;
            blobs.push_back(b);
        }
    }
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            const double y = (static_cast<double>(h) + 0.5) * spacing[0];
            const double x = (static_cast<double>(w) + 0.5) * spacing[1];
            for (const auto& b : blobs) {
                const double dy = y - b.ch, dx = x - b.cw;
                const double c = std::cos(b.angle), s = std::sin(b.angle);
                const double u = (c * dy + s * dx) / b.rh, v = (-s * dy + c * dx) / b.rw;
                if (u * u + v * v <= 1.0) raw[h * W + w] = 1.0;
            }
        }
    }
    if (cfg.lesion == LesionKind::ga) {
        // ~0.15 mm smoothing in both physical directions
        const Grid soft = gaussian_blur(raw, H, W, std::max(0.3, 0.15 / spacing[0]), std::max(0.3, 0.15 / spacing[1]));
        for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = soft[i] >= 0.5 ? 1.0 : 0.0;
    }
    return raw;
}

// Intensity of the layered retina at signed distance `above` (voxels above
// the surface; negative = below).
double layer_intensity(double above, double thickness) {
    if (above < 0) return 0.35 * std::exp(above / 6.0);  // choroid, fading with depth
    if (above > thickness) return 0.05;                   // vitreous
    const double f = above / thickness;
    if (above < 1.5) return 0.9;           // RPE band
    if (f < 0.25) return 0.3;              // photoreceptors
    if (f < 0.45) return 0.2;              // outer nuclear layer
    if (f < 0.6) return 0.6;               // plexiform
    if (f < 0.85) return 0.45;             // ganglion
    return 0.8;                            // nerve fibre layer
}

}  // namespace

Sample generate_sample(const GeneratorConfig& cfg, std::size_t patient, std::size_t index) {
    cfg.validate();
    const std::size_t H = cfg.height, W = cfg.width, D = cfg.depth;
    std::mt19937_64 patient_rng(derive_seed(cfg.seed, patient + 1, 0));
    std::mt19937_64 rng(derive_seed(cfg.seed, patient + 1, index + 1));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    Sample s;
    s.patient_id = fmt::format("p{:03}", patient);
    s.id = fmt::format("{}_s{:02}", s.patient_id, index);
    s.spacing_mm = {cfg.area_mm[0] / static_cast<double>(H), cfg.area_mm[1] / static_cast<double>(W)};

    // patient traits
    const double thickness = static_cast<double>(D) * (0.28 + 0.08 * u01(patient_rng));
    const double brightness = 0.9 + 0.2 * u01(patient_rng);

    // smooth surface
    const double base = static_cast<double>(D) * (0.6 + 0.1 * u01(rng));
    const double amp_w = static_cast<double>(D) * 0.06 * u01(rng), amp_h = static_cast<double>(D) * 0.04 * u01(rng);
    const double ph_w = u01(rng), ph_h = u01(rng), freq_w = 0.5 + u01(rng), freq_h = 0.3 + 0.7 * u01(rng);
    const double tilt = static_cast<double>(D) * 0.08 * (u01(rng) - 0.5);
    s.surface = Tensor({H, W}, DType::f32);
    const double lo = std::ceil(thickness + 2), hi = static_cast<double>(D) - 3;
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            const double fw = static_cast<double>(w) / static_cast<double>(W);
            const double fh = static_cast<double>(h) / static_cast<double>(H);
            double v = base + amp_w * std::sin(2 * std::numbers::pi * (freq_w * fw + ph_w)) +
                       amp_h * std::sin(2 * std::numbers::pi * (freq_h * fh + ph_h)) + tilt * (fw - 0.5);
            v = std::clamp(std::round(v), std::min(lo, hi), hi);
            s.surface.set(h * W + w, v);
        }
    }

    const Grid mask = lesion_footprint(cfg, s.spacing_mm, rng);

    // volume (noise-free first, projection taken before speckle)
    std::vector<double> clean(H * W * D);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            const std::size_t col = h * W + w;
            const double surf = s.surface.at(col);
            const bool lesion = mask[col] > 0.5;
            for (std::size_t d = 0; d < D; ++d) {
                // depth index grows away from the vitreous
                const double above = surf - static_cast<double>(d);
                double v = layer_intensity(above, thickness);
                if (lesion && cfg.lesion == LesionKind::ga) {
                    if (above >= 0 && above < 1.5) v = 0.3;                      // RPE loss
                    if (above >= 0 && above < 0.3 * thickness) v *= 0.6;         // outer retina thinning
                    if (above < 0) v += 0.5 * std::exp(above / 12.0);            // hypertransmission
                }
                if (lesion && cfg.lesion == LesionKind::rpd && above >= 1.5 && above < 4.5) {
                    v = 0.85 + 0.1 * u01(rng);  // granular subretinal deposit
                }
                clean[col * D + d] = v * brightness;
            }
        }
    }

    s.volume = Tensor({1, H, W, D}, DType::f32);
    for (std::size_t i = 0; i < clean.size(); ++i) s.volume.set(i, clean[i] + cfg.volume_noise * normal(rng));

    // en-face images
    s.slo = Tensor({1, H, W}, DType::f32);
    s.faf = Tensor({1, H, W}, DType::f32);
    s.mask = Tensor({1, H, W}, DType::f32);
    const double vig_h = 0.5 * (u01(rng) - 0.5), vig_w = 0.5 * (u01(rng) - 0.5);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            const std::size_t col = h * W + w;
            double proj = 0;
            for (std::size_t d = 0; d < D; ++d) proj += clean[col * D + d];
            proj /= static_cast<double>(D);
            const double rh = (static_cast<double>(h) + 0.5) / static_cast<double>(H) - 0.5 - vig_h;
            const double rw = (static_cast<double>(w) + 0.5) / static_cast<double>(W) - 0.5 - vig_w;
            const double illumination = 1.0 - 0.3 * (rh * rh + rw * rw);
            const double m = mask[col];
            const double slo = (0.15 + proj) * illumination + cfg.lesion_contrast * m + cfg.noise_sigma * normal(rng);
            const double faf = 0.55 * illumination + 0.05 * std::sin(2 * std::numbers::pi * (3.0 * rw + rh)) -
                               0.4 * m + cfg.noise_sigma * normal(rng);
            s.slo.set(col, std::clamp(slo, 0.0, 1.0));
            s.faf.set(col, std::clamp(faf, 0.0, 1.0));
            s.mask.set(col, m);
        }
    }
    return s;
}

std::map<std::string, Split> split_patients(const std::vector<std::string>& patient_ids, std::uint64_t seed) {
    std::vector<std::string> order = patient_ids;
    std::mt19937_64 rng(derive_seed(seed, 0x5eed, 0x51));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t P = order.size();
    std::size_t n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(P)));
    std::size_t n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(P)));
    if (P >= 3) {
        n_val = std::max<std::size_t>(n_val, 1);
        n_train = std::min(n_train, P - n_val - 1);
        n_train = std::max<std::size_t>(n_train, 1);
    }
    std::map<std::string, Split> out;
    for (std::size_t i = 0; i < P; ++i) {
        out[order[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    }
    return out;
}

void save_sample(const fs::path& dataset_dir, const Sample& sample, SampleEntry& entry) {
    const fs::path rel = sample.id;
    std::error_code ec;
    fs::create_directories(dataset_dir / rel, ec);
    if (ec) throw IoError(fmt::format("cannot create {}: {}", (dataset_dir / rel).string(), ec.message()));
    const std::pair<const char*, const Tensor*> fields[] = {{"volume", &sample.volume},
                                                            {"slo", &sample.slo},
                                                            {"faf", &sample.faf},
                                                            {"mask", &sample.mask},
                                                            {"surface", &sample.surface}};
    entry.id = sample.id;
    entry.patient_id = sample.patient_id;
    entry.spacing_mm = sample.spacing_mm;
    for (const auto& [name, tensor] : fields) {
        const std::string file = (rel / (std::string(name) + ".nten")).generic_string();
        nten::save(dataset_dir / file, *tensor);
        entry.files[name] = file;
    }
}

Sample load_sample(const fs::path& dataset_dir, const SampleEntry& entry) {
    auto field = [&](const char* name) {
        auto it = entry.files.find(name);
        if (it == entry.files.end()) throw FormatError(fmt::format("sample {} lists no '{}' file", entry.id, name));
        return nten::load(dataset_dir / it->second);
    };
    Sample s;
    s.id = entry.id;
    s.patient_id = entry.patient_id;
    s.spacing_mm = entry.spacing_mm;
    s.volume = field("volume");
    s.slo = field("slo");
    s.faf = field("faf");
    s.mask = field("mask");
    s.surface = field("surface");
    if (s.volume.rank() != 4 || s.surface.rank() != 2 || s.volume.dim(1) != s.surface.dim(0) ||
        s.volume.dim(2) != s.surface.dim(1)) {
        throw FormatError(fmt::format("sample {}: inconsistent volume {} / surface {} shapes", entry.id,
                                      shape_str(s.volume.shape()), shape_str(s.surface.shape())));
    }
    return s;
}

void save_manifest(const fs::path& dataset_dir, const DatasetManifest& manifest) {
    std::ofstream out(dataset_dir / "manifest.json");
    if (!out) throw IoError(fmt::format("cannot write {}", (dataset_dir / "manifest.json").string()));
    out << nlohmann::json(manifest).dump(2) << '\n';
}

DatasetManifest load_manifest(const fs::path& dataset_dir) {
    if (!fs::is_directory(dataset_dir)) throw IoError(fmt::format("dataset directory {} does not exist", dataset_dir.string()));
    std::ifstream in(dataset_dir / "manifest.json");
    if (!in) throw IoError(fmt::format("cannot open {}", (dataset_dir / "manifest.json").string()));
    try {
        return nlohmann::json::parse(in).get<DatasetManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}: {}", (dataset_dir / "manifest.json").string(), e.what()));
    }
}

DatasetManifest generate_dataset(const GeneratorConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));
    DatasetManifest m;
    m.generator = cfg;
    std::vector<std::string> patient_ids;
    for (std::size_t p = 0; p < cfg.patients; ++p) patient_ids.push_back(fmt::format("p{:03}", p));
    const auto splits = split_patients(patient_ids, cfg.seed);
    for (std::size_t p = 0; p < cfg.patients; ++p) {
        for (std::size_t k = 0; k < cfg.samples_per_patient; ++k) {
            const Sample s = generate_sample(cfg, p, k);
            SampleEntry e;
            save_sample(out_dir, s, e);
            e.split = splits.at(s.patient_id);
            m.samples.push_back(std::move(e));
        }
    }
    save_manifest(out_dir, m);
    return m;
}

// ------------------------------------------------------------ preprocessing

namespace {

struct VolumeView {
    std::size_t lead, H, W, D;
};

VolumeView volume_view(const Tensor& v, const char* op) {
    if (v.rank() < 3) throw InvalidArgument(fmt::format("{}: expected (..., H, W, D), got {}", op, shape_str(v.shape())));
    const std::size_t r = v.rank();
    const std::size_t H = v.dim(r - 3), W = v.dim(r - 2), D = v.dim(r - 1);
    return {v.numel() / (H * W * D), H, W, D};
}

}  // namespace

Tensor flatten(const Tensor& volume, const Tensor& surface, std::size_t anchor_index) {
    const auto v = volume_view(volume, "flatten");
    if (surface.rank() != 2 || surface.dim(0) != v.H || surface.dim(1) != v.W) {
        throw InvalidArgument(fmt::format("flatten: surface {} does not match volume en-face size ({},{})",
                                          shape_str(surface.shape()), v.H, v.W));
    }
    if (anchor_index >= v.D) throw InvalidArgument(fmt::format("flatten: anchor {} outside depth {}", anchor_index, v.D));
    Tensor out(volume.shape(), volume.dtype());
    const auto D = static_cast<std::ptrdiff_t>(v.D);
    for (std::size_t l = 0; l < v.lead; ++l) {
        for (std::size_t c = 0; c < v.H * v.W; ++c) {
            const auto shift = static_cast<std::ptrdiff_t>(std::llround(surface.at(c))) - static_cast<std::ptrdiff_t>(anchor_index);
            const std::size_t base = (l * v.H * v.W + c) * v.D;
            for (std::ptrdiff_t d = 0; d < D; ++d) {
                const std::ptrdiff_t src = d + shift;
                if (src >= 0 && src < D) out.set(base + static_cast<std::size_t>(d), volume.at(base + static_cast<std::size_t>(src)));
            }
        }
    }
    return out;
}

Tensor rescale_depth(const Tensor& volume, std::size_t target_depth) {
    const auto v = volume_view(volume, "rescale_depth");
    if (target_depth == 0) throw InvalidArgument("rescale_depth: target depth must be positive");
    Shape shape = volume.shape();
    shape.back() = target_depth;
    Tensor out(shape, volume.dtype());
    const std::size_t columns = v.lead * v.H * v.W;
    for (std::size_t c = 0; c < columns; ++c) {
        for (std::size_t t = 0; t < target_depth; ++t) {
            double value;
            if (v.D == 1) {
                value = volume.at(c);
            } else {
                const double pos = target_depth == 1
                                       ? 0.0
                                       : static_cast<double>(t) * static_cast<double>(v.D - 1) / static_cast<double>(target_depth - 1);
                const auto i0 = std::min(static_cast<std::size_t>(pos), v.D - 2);
                const double frac = pos - static_cast<double>(i0);
                value = (1 - frac) * volume.at(c * v.D + i0) + frac * volume.at(c * v.D + i0 + 1);
            }
            out.set(c * target_depth + t, value);
        }
    }
    return out;
}

std::string to_string(ZscoreMode mode) { return mode == ZscoreMode::bscan ? "bscan" : "volume"; }

ZscoreMode zscore_from_string(const std::string& s) {
    if (s == "bscan") return ZscoreMode::bscan;
    if (s == "volume") return ZscoreMode::volume;
    throw ConfigError(fmt::format("unknown zscore mode '{}' (expected bscan|volume)", s));
}

Tensor zscore_crosssection(const Tensor& volume, ZscoreMode mode) {
    const auto v = volume_view(volume, "zscore_crosssection");
    Tensor out(volume.shape(), volume.dtype());
    const std::size_t slice = mode == ZscoreMode::bscan ? v.W * v.D : v.H * v.W * v.D;
    const std::size_t slices = volume.numel() / slice;
    for (std::size_t s = 0; s < slices; ++s) {
        const std::size_t base = s * slice;
        double mean = 0;
        for (std::size_t i = 0; i < slice; ++i) mean += volume.at(base + i);
        mean /= static_cast<double>(slice);
        double var = 0;
        for (std::size_t i = 0; i < slice; ++i) {
            const double d = volume.at(base + i) - mean;
            var += d * d;
        }
        const double sd = std::max(std::sqrt(var / static_cast<double>(slice)), kStdFloor);
        for (std::size_t i = 0; i < slice; ++i) out.set(base + i, (volume.at(base + i) - mean) / sd);
    }
    return out;
}

Tensor invert(const Tensor& image) {
    Tensor out(image.shape(), image.dtype());
    for (std::size_t i = 0; i < image.numel(); ++i) out.set(i, 1.0 - image.at(i));
    return out;
}

std::size_t PreprocessConfig::anchor_index(std::size_t raw_depth) const {
    const double a = std::round(anchor_fraction * static_cast<double>(raw_depth - 1));
    return static_cast<std::size_t>(std::clamp(a, 0.0, static_cast<double>(raw_depth - 1)));
}

void to_json(nlohmann::json& j, const PreprocessConfig& c) {
    j = nlohmann::json{{"target_depth", c.target_depth}, {"anchor_fraction", c.anchor_fraction}, {"zscore", to_string(c.zscore)}};
}

void from_json(const nlohmann::json& j, PreprocessConfig& c) {
    PreprocessConfig d;
    c.target_depth = j.value("target_depth", d.target_depth);
    c.anchor_fraction = j.value("anchor_fraction", d.anchor_fraction);
    c.zscore = zscore_from_string(j.value("zscore", to_string(d.zscore)));
}

Tensor preprocess_volume(const Sample& sample, const PreprocessConfig& cfg, DType dtype) {
    const Tensor& vol = sample.volume;
    const std::size_t raw_depth = vol.dim(vol.rank() - 1);
    Tensor x = flatten(vol.to(DType::f64), sample.surface, cfg.anchor_index(raw_depth));
    x = rescale_depth(x, cfg.target_depth);
    x = zscore_crosssection(x, cfg.zscore);
    const Shape s = x.shape();
    return x.to(dtype).reshape({1, 1, s[s.size() - 3], s[s.size() - 2], s[s.size() - 1]});
}

}  // namespace projnet
