#include <doctest.h>

#include <fstream>
#include <set>

#include "projnet/data.hpp"
#include "projnet/nten.hpp"
#include <fmt/format.h>

#include "support.hpp"

using namespace projnet;
using testing::random_tensor;

namespace {

GeneratorConfig small_gen(std::uint64_t seed = 1, LesionKind kind = LesionKind::ga) {
    GeneratorConfig g;
    g.seed = seed;
    g.patients = 10;
    g.height = 8;
    g.width = 32;
    g.depth = 24;
    g.lesion = kind;
    return g;
}

double mean_where(const Tensor& img, const Tensor& mask, bool inside) {
    double acc = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) {
        if ((mask.at(i) > 0.5) == inside) {
            acc += img.at(i);
            ++n;
        }
    }
    return n ? acc / static_cast<double>(n) : 0.0;
}

}  // namespace

TEST_CASE("generated samples satisfy their invariants") {
    for (LesionKind kind : {LesionKind::ga, LesionKind::rpd}) {
        const GeneratorConfig g = small_gen(3, kind);
        for (std::size_t p = 0; p < 4; ++p) {
            const Sample s = generate_sample(g, p, 0);
            CHECK(s.volume.shape() == Shape{1, 8, 32, 24});
            CHECK(s.slo.shape() == Shape{1, 8, 32});
            CHECK(s.surface.shape() == Shape{8, 32});
            double mask_sum = 0;
            for (std::size_t i = 0; i < s.mask.numel(); ++i) {
                const double m = s.mask.at(i);
                CHECK((m == 0.0 || m == 1.0));
                mask_sum += m;
                CHECK(s.slo.at(i) >= 0.0);
                CHECK(s.slo.at(i) <= 1.0);
                CHECK(s.faf.at(i) >= 0.0);
                CHECK(s.faf.at(i) <= 1.0);
            }
            CHECK(mask_sum > 0);
            for (std::size_t i = 0; i < s.surface.numel(); ++i) {
                const double v = s.surface.at(i);
                CHECK(v == std::round(v));
                CHECK(v >= 0);
                CHECK(v <= 23);
            }
            CHECK(s.spacing_mm[0] == doctest::Approx(6.02 / 8));
            CHECK(s.spacing_mm[1] == doctest::Approx(6.03 / 32));
        }
    }
}

TEST_CASE("generation is deterministic per seed") {
    const Sample a = generate_sample(small_gen(5), 2, 1), b = generate_sample(small_gen(5), 2, 1);
    CHECK(a.volume.identical(b.volume));
    CHECK(a.slo.identical(b.slo));
    CHECK(a.mask.identical(b.mask));
    CHECK(a.id == "p002_s01");
    CHECK(a.patient_id == "p002");
    const Sample c = generate_sample(small_gen(6), 2, 1);
    CHECK_FALSE(a.volume.identical(c.volume));
}

TEST_CASE("lesions brighten the SLO analog and darken the FAF analog") {
    // measured over a batch of ga samples: a directional property
    const GeneratorConfig g = small_gen(9);
    double slo_in = 0, slo_out = 0, faf_in = 0, faf_out = 0;
    for (std::size_t p = 0; p < 8; ++p) {
        const Sample s = generate_sample(g, p, 0);
        slo_in += mean_where(s.slo, s.mask, true);
        slo_out += mean_where(s.slo, s.mask, false);
        faf_in += mean_where(s.faf, s.mask, true);
        faf_out += mean_where(s.faf, s.mask, false);
        CHECK(mean_where(s.slo, s.mask, true) > mean_where(s.slo, s.mask, false));
    }
    CHECK(slo_in > slo_out);
    CHECK(faf_in < faf_out);
}

TEST_CASE("ga lesions brighten the signal below the surface") {
    const GeneratorConfig g = small_gen(4);
    const Sample s = generate_sample(g, 0, 0);
    double in = 0, out = 0;
    std::size_t n_in = 0, n_out = 0;
    const std::size_t D = 24;
    for (std::size_t c = 0; c < s.surface.numel(); ++c) {
        const auto surf = static_cast<std::size_t>(s.surface.at(c));
        for (std::size_t d = surf + 1; d < std::min(D, surf + 4); ++d) {
            (s.mask.at(c) > 0.5 ? in : out) += s.volume.at(c * D + d);
            ++(s.mask.at(c) > 0.5 ? n_in : n_out);
        }
    }
    REQUIRE(n_in > 0);
    CHECK(in / static_cast<double>(n_in) > out / static_cast<double>(n_out));
}

TEST_CASE("patient split is 60/10/30 and disjoint") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back(fmt::format("p{:03}", i));
    const auto split = split_patients(ids, 7);
    std::map<Split, int> counts;
    for (const auto& [id, s] : split) ++counts[s];
    CHECK(counts[Split::train] == 60);
    CHECK(counts[Split::val] == 10);
    CHECK(counts[Split::test] == 30);
    CHECK(split == split_patients(ids, 7));
    CHECK(split != split_patients(ids, 8));
    ids.resize(10);
    std::map<Split, int> small;
    for (const auto& [id, s] : split_patients(ids, 1)) ++small[s];
    CHECK(small[Split::train] == 6);
    CHECK(small[Split::val] == 1);
    CHECK(small[Split::test] == 3);
}

TEST_CASE("dataset round trip and manifest") {
    testing::TempDir dir("data");
    GeneratorConfig g = small_gen(2);
    g.samples_per_patient = 2;
    const DatasetManifest m = generate_dataset(g, dir.path());
    CHECK(m.samples.size() == 20);
    const DatasetManifest back = load_manifest(dir.path());
    CHECK(back.samples.size() == 20);
    CHECK(back.generator.seed == 2);
    std::map<std::string, Split> patient_split;
    for (const auto& e : back.samples) {
        auto [it, inserted] = patient_split.emplace(e.patient_id, e.split);
        CHECK(it->second == e.split);  // all samples of a patient share a split
        CHECK(e.files.size() == 5);
    }
    const Sample s = load_sample(dir.path(), back.samples[3]);
    const Sample fresh = generate_sample(g, 1, 1);
    CHECK(s.id == fresh.id);
    CHECK(s.volume.identical(fresh.volume));
    CHECK(s.faf.identical(fresh.faf));
    CHECK(s.surface.identical(fresh.surface));
    CHECK_THROWS_AS(load_manifest(dir / "nope"), IoError);

    // corrupting a file surfaces as a format error
    {
        std::ofstream f(dir.path() / back.samples[0].files.at("mask"), std::ios::binary | std::ios::trunc);
        f << "garbage";
    }
    CHECK_THROWS_AS(load_sample(dir.path(), back.samples[0]), FormatError);
}

TEST_CASE("generator config validation") {
    GeneratorConfig g;
    g.height = 0;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = GeneratorConfig{};
    g.patients = 0;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    CHECK_THROWS_AS(lesion_from_string("drusen"), ConfigError);
}

TEST_CASE("flatten shifts each column so the surface lands on the anchor") {
    ScopedDType f64(DType::f64);
    const std::size_t H = 2, W = 4, D = 6;
    const Tensor v = random_tensor({1, H, W, D}, 1);
    SUBCASE("constant surface at the anchor is the identity") {
        CHECK(flatten(v, Tensor::full({H, W}, 3.0), 3).identical(v));
    }
    SUBCASE("ramp surface shifts by one more per column") {
        Tensor surf({H, W});
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) surf.set(h * W + w, static_cast<double>(w + 1));
        const Tensor f = flatten(v, surf, 2);
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                const long shift = static_cast<long>(w + 1) - 2;
                for (std::size_t d = 0; d < D; ++d) {
                    const long src = static_cast<long>(d) + shift;
                    const double want = (src >= 0 && src < static_cast<long>(D)) ? v.at((h * W + w) * D + src) : 0.0;
                    CHECK(f.at((h * W + w) * D + d) == want);
                }
            }
        // idempotent once the surface is updated to the anchor
        CHECK(flatten(f, Tensor::full({H, W}, 2.0), 2).identical(f));
    }
    CHECK_THROWS_AS(flatten(v, Tensor({W, H}), 2), InvalidArgument);
    CHECK_THROWS_AS(flatten(v, Tensor({H, W}), D), InvalidArgument);
}

TEST_CASE("depth rescaling aligns endpoints") {
    ScopedDType f64(DType::f64);
    const Tensor two = Tensor::from({1, 1, 1, 2}, {0.0, 1.0});
    const Tensor four = rescale_depth(two, 4);
    CHECK(four.at(0) == 0.0);
    CHECK(four.at(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(four.at(2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(four.at(3) == 1.0);
    const Tensor v = random_tensor({1, 3, 2, 7}, 2);
    CHECK(testing::max_abs_diff(rescale_depth(v, 7), v) < 1e-6);
    const Tensor c = rescale_depth(Tensor::full({1, 2, 2, 5}, 0.3), 11);
    CHECK(c.shape() == Shape{1, 2, 2, 11});
    for (std::size_t i = 0; i < c.numel(); ++i) CHECK(c.at(i) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("cross-sectional z-score") {
    ScopedDType f64(DType::f64);
    const std::size_t H = 3, W = 4, D = 5;
    const Tensor v = random_tensor({1, H, W, D}, 3, DType::f64, -2, 7);
    const Tensor z = zscore_crosssection(v);
    for (std::size_t h = 0; h < H; ++h) {
        // two-pass oracle
        double mean = 0;
        for (std::size_t i = 0; i < W * D; ++i) mean += v.at(h * W * D + i);
        mean /= static_cast<double>(W * D);
        double var = 0;
        for (std::size_t i = 0; i < W * D; ++i) var += std::pow(v.at(h * W * D + i) - mean, 2);
        const double sd = std::sqrt(var / static_cast<double>(W * D));
        double zm = 0, zv = 0;
        for (std::size_t i = 0; i < W * D; ++i) {
            CHECK(z.at(h * W * D + i) == doctest::Approx((v.at(h * W * D + i) - mean) / sd).epsilon(1e-12));
            zm += z.at(h * W * D + i);
        }
        zm /= static_cast<double>(W * D);
        for (std::size_t i = 0; i < W * D; ++i) zv += std::pow(z.at(h * W * D + i) - zm, 2);
        CHECK(std::abs(zm) < 1e-12);
        CHECK(zv / static_cast<double>(W * D) == doctest::Approx(1.0).epsilon(1e-12));
    }
    const Tensor flat = zscore_crosssection(Tensor::full({1, 2, 3, 4}, 5.0));
    for (std::size_t i = 0; i < flat.numel(); ++i) CHECK(flat.at(i) == 0.0);
    const Tensor zv = zscore_crosssection(v, ZscoreMode::volume);
    double all = 0;
    for (std::size_t i = 0; i < zv.numel(); ++i) all += zv.at(i);
    CHECK(std::abs(all) < 1e-9);
}

TEST_CASE("invert") {
    ScopedDType f64(DType::f64);
    const Tensor x = random_tensor({1, 4, 4}, 4, DType::f64, 0, 1);
    CHECK(testing::max_abs_diff(invert(invert(x)), x) < 1e-15);
    CHECK(invert(Tensor::zeros({1})).at(0) == 1.0);
    double m = 0, mi = 0;
    const Tensor xi = invert(x);
    for (std::size_t i = 0; i < x.numel(); ++i) m += x.at(i), mi += xi.at(i);
    CHECK(mi / 16 == doctest::Approx(1.0 - m / 16).epsilon(1e-14));
}

TEST_CASE("preprocessing produces standardized network input at the target depth") {
    const Sample s = generate_sample(small_gen(1), 0, 0);
    PreprocessConfig cfg;
    cfg.target_depth = 16;
    CHECK(cfg.anchor_index(24) == 16);
    const Tensor x = preprocess_volume(s, cfg);
    CHECK(x.shape() == Shape{1, 1, 8, 32, 16});
    CHECK(x.dtype() == DType::f32);
    for (std::size_t h = 0; h < 8; ++h) {
        double m = 0;
        for (std::size_t i = 0; i < 32 * 16; ++i) m += x.at(h * 32 * 16 + i);
        CHECK(std::abs(m / (32 * 16)) < 1e-5);
    }
    CHECK(preprocess_volume(s, cfg).identical(x));
    const PreprocessConfig back = nlohmann::json(cfg).get<PreprocessConfig>();
    CHECK(back.target_depth == 16);
    CHECK(back.zscore == ZscoreMode::bscan);
}
