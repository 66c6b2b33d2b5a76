#pragma once

// Synthetic multimodal retina phantoms (OCT-like volume, SLO-like and
// FAF-like en-face images, lesion mask, Bruch's-membrane-like surface), the
// volume preprocessing chain, and dataset directory I/O.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "projnet/tensor.hpp"

namespace projnet {

enum class LesionKind { ga, rpd };
enum class Split { train, val, test };

std::string to_string(LesionKind kind);
LesionKind lesion_from_string(const std::string& s);
std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct GeneratorConfig {
    std::uint64_t seed = 0;
    std::size_t patients = 10;
    std::size_t samples_per_patient = 1;
    std::size_t height = 16;
    std::size_t width = 64;
    std::size_t depth = 48;
    LesionKind lesion = LesionKind::ga;
    /// Gaussian noise on the en-face images.
    double noise_sigma = 0.05;
    /// Brightening of the lesion footprint in the SLO-like projection.
    double lesion_contrast = 0.25;
    /// Gaussian speckle on the volume.
    double volume_noise = 0.1;
    /// Physical en-face extent (mm) of the scanned area.
    std::array<double, 2> area_mm{6.02, 6.03};

    void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& cfg);
void from_json(const nlohmann::json& j, GeneratorConfig& cfg);

struct Sample {
    std::string id;
    std::string patient_id;
    /// (1,H,W,D) OCT analog.
    Tensor volume;
    /// (1,H,W) SLO analog in [0,1], lesion brighter.
    Tensor slo;
    /// (1,H,W) FAF analog in [0,1], lesion darker (not yet inverted).
    Tensor faf;
    /// (1,H,W) binary lesion footprint.
    Tensor mask;
    /// (H,W) integer depth index of the surface.
    Tensor surface;
    std::array<double, 2> spacing_mm{};
};

struct SampleEntry {
    std::string id;
    std::string patient_id;
    Split split = Split::train;
    std::array<double, 2> spacing_mm{};
    /// field name ("volume", "slo", "faf", "mask", "surface") -> relative path.
    std::map<std::string, std::string> files;
};

struct DatasetManifest {
    GeneratorConfig generator;
    std::vector<SampleEntry> samples;

    std::vector<std::string> patients(Split split) const;
    std::vector<const SampleEntry*> entries(Split split) const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Derives an independent 64-bit stream seed from a master seed and indices.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

/// One phantom; deterministic in (cfg.seed, patient, index).
Sample generate_sample(const GeneratorConfig& cfg, std::size_t patient, std::size_t index);

/// Patient-wise 60/10/30 split; deterministic per seed.
std::map<std::string, Split> split_patients(const std::vector<std::string>& patient_ids, std::uint64_t seed);

/// Generates every sample and writes `manifest.json` plus one directory per
/// sample under `out_dir`.
DatasetManifest generate_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir);

void save_sample(const std::filesystem::path& dataset_dir, const Sample& sample, SampleEntry& entry);
Sample load_sample(const std::filesystem::path& dataset_dir, const SampleEntry& entry);
void save_manifest(const std::filesystem::path& dataset_dir, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

// ------------------------------------------------------------ preprocessing

/// Shifts each (h,w) depth column of a (..., H, W, D) volume so the surface
/// lands at `anchor_index`; voxels shifted in from outside are 0.
Tensor flatten(const Tensor& volume, const Tensor& surface, std::size_t anchor_index);

/// Linear interpolation along depth only, endpoints aligned.
Tensor rescale_depth(const Tensor& volume, std::size_t target_depth);

enum class ZscoreMode { bscan, volume };
std::string to_string(ZscoreMode mode);
ZscoreMode zscore_from_string(const std::string& s);

constexpr double kStdFloor = 1e-6;

/// Standardizes every (W,D) cross-sectional slice of a (..., H, W, D) volume
/// (or the whole volume in `volume` mode). The std is floored at 1e-6.
Tensor zscore_crosssection(const Tensor& volume, ZscoreMode mode = ZscoreMode::bscan);

/// 1 - image.
Tensor invert(const Tensor& image);

struct PreprocessConfig {
    std::size_t target_depth = 32;
    /// Surface anchor as a fraction of the raw depth range.
    double anchor_fraction = 0.7;
    ZscoreMode zscore = ZscoreMode::bscan;

    std::size_t anchor_index(std::size_t raw_depth) const;
};

void to_json(nlohmann::json& j, const PreprocessConfig& cfg);
void from_json(const nlohmann::json& j, PreprocessConfig& cfg);

/// flatten -> rescale_depth -> zscore, returned as a (1,1,H,W,D) network input.
Tensor preprocess_volume(const Sample& sample, const PreprocessConfig& cfg, DType dtype = default_dtype());

}  // namespace projnet
