#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <unistd.h>
#include <map>

#include "eqemu/binary_io.hpp"
#include "eqemu/datagen.hpp"
#include "eqemu/error.hpp"
#include "test_support.hpp"

namespace eqemu {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("eqemu_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

TEST(InitialCondition, DeterministicPerSeed) {
    const Grid1D g;
    const auto a = make_initial_condition({5, 42, false}, g);
    const auto b = make_initial_condition({5, 42, false}, g);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, make_initial_condition({5, 43, false}, g));
}

TEST(InitialCondition, SingleModeIsUnitSinusoid) {
    const Grid1D g(64);
    const auto u = make_initial_condition({1, 9, false}, g);
    EXPECT_NEAR(testing::max_abs(u), 1.0, 1e-12);
    // A single mode with phase: u = A cos(2 pi x + phi); fit A, phi from two samples.
    const double amp = std::hypot(u[0], u[g.n() / 4]);
    EXPECT_NEAR(amp, 1.0, 1e-2);  // grid max is within (pi/32)^2/2 of the continuous peak
    for (std::size_t j = 0; j < g.n(); ++j) {
        const double x = g.x(j);
        const double expected = u[0] * std::cos(2 * std::numbers::pi * x) + u[g.n() / 4] * std::sin(2 * std::numbers::pi * x);
        EXPECT_NEAR(u[j], expected, 1e-12);
    }
}

TEST(InitialCondition, BandLimitedSpectrum) {
    const Grid1D g(160);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto u = make_initial_condition({5, seed, false}, g);
        std::vector<std::complex<double>> spec(g.num_modes());
        RealFft(g.n()).forward(u, spec);
        double low = 0.0, high = 0.0;
        for (std::size_t m = 0; m < spec.size(); ++m) (m <= 5 ? low : high) += std::norm(spec[m]);
        EXPECT_GT(low, 1.0);
        EXPECT_LT(high, 1e-20 * low);
        EXPECT_NEAR(testing::max_abs(u), 1.0, 1e-12);
    }
}

TEST(InitialCondition, UnitIntervalForFisher) {
    const Grid1D g;
    const auto u = make_initial_condition({5, 3, true}, g);
    const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
    EXPECT_NEAR(*lo, 0.0, 1e-12);
    EXPECT_NEAR(*hi, 1.0, 1e-12);
}

TEST(InitialCondition, RejectsAliasingModes) {
    EXPECT_THROW(make_initial_condition({11, 1, false}, Grid1D(32)), Error);
    EXPECT_NO_THROW(make_initial_condition({10, 1, false}, Grid1D(32)));
}

// Closed-form modal solution of u_t = a1 u_x + a2 u_xx computed by a direct
// O(n^2) DFT, independent of the FFT-based stepper.
std::vector<double> advection_diffusion_exact(std::span<const float> u0f, double a1, double a2, double t) {
    const std::size_t n = u0f.size();
    std::vector<double> out(n, 0.0);
    const double pi2 = 2 * std::numbers::pi;
    for (std::size_t m = 0; m <= n / 2; ++m) {
        double re = 0, im = 0;
        for (std::size_t j = 0; j < n; ++j) {
            re += u0f[j] * std::cos(pi2 * m * j / n);
            im -= u0f[j] * std::sin(pi2 * m * j / n);
        }
        const double k = pi2 * static_cast<double>(m);
        const double weight = (m == 0 || m == n / 2) ? 1.0 : 2.0;
        const double speed = (m == n / 2) ? 0.0 : a1;
        const double decay = std::exp(-a2 * k * k * t);
        for (std::size_t j = 0; j < n; ++j) {
            const double ph = k * (static_cast<double>(j) / n + speed * t);
            out[j] += weight / n * decay * (re * std::cos(ph) - im * std::sin(ph));
        }
    }
    return out;
}

TEST(GenerateSet, AdvectionDiffusionMatchesClosedForm) {
    const Grid1D g;
    GenerationOptions opt;
    opt.samples = 2;
    opt.steps = 5;
    const auto& fam = default_family(Family::AdvectionDiffusion);
    const auto set = generate_set(fam, {{"c", 2.0}, {"nu", 4.0}}, g, opt, 77, Split::Train);
    const auto a = to_physical(set.coeffs, g, 1.0);
    ASSERT_EQ(set.samples, 2u);
    ASSERT_EQ(set.times, 6u);
    for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t t = 1; t <= 5; ++t) {
            const auto exact = advection_diffusion_exact(set.state(s, 0), a[Term::Ux], a[Term::Uxx], static_cast<double>(t));
            const auto got = set.state(s, t);
            double err = 0;
            for (std::size_t j = 0; j < g.n(); ++j) err = std::max(err, std::abs(got[j] - exact[j]));
            EXPECT_LT(err, 1e-6) << s << " " << t;
        }
    }
}

TEST(GenerateSet, ZeroCoefficientsKeepInitialCondition) {
    const Grid1D g(64);
    GenerationOptions opt;
    opt.samples = 3;
    opt.steps = 4;
    const auto set = generate_set(default_family(Family::AdvectionDiffusion), {{"c", 0.0}, {"nu", 0.0}}, g, opt, 5,
                                  Split::Train);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t t = 1; t < set.times; ++t)
            EXPECT_TRUE(std::equal(set.state(s, t).begin(), set.state(s, t).end(), set.state(s, 0).begin()));
}

TEST(GenerateSet, KdVTrainingTupleIsFiniteAndConservesMean) {
    const Grid1D g;
    GenerationOptions opt;  // 50 samples x 50 steps
    const auto& fam = default_family(Family::KdV);
    const auto params = parameter_grid(fam, 2).front();
    const auto set = generate_set(fam, params, g, opt, 11, Split::Train);
    ASSERT_EQ(set.samples, 50u);
    ASSERT_EQ(set.times, 51u);
    for (std::size_t s = 0; s < set.samples; ++s) {
        double m0 = 0;
        for (float v : set.state(s, 0)) m0 += v;
        m0 /= g.n();
        for (std::size_t t = 0; t < set.times; ++t) {
            double m = 0;
            for (float v : set.state(s, t)) {
                ASSERT_TRUE(std::isfinite(v));
                m += v;
            }
            EXPECT_LT(std::abs(m / g.n() - m0), 1e-6);
        }
    }
}

TEST(GenerateSet, PersistentBlowUpRejectsTuple) {
    const Grid1D g(32);
    PdeFamily unstable = default_family(Family::ConservedKS);
    GenerationOptions opt;
    opt.samples = 1;
    opt.steps = 50;
    opt.max_mode = 3;
    opt.max_attempts = 3;
    opt.stepper = {1.0, 4, true};
    // Strong anti-diffusion without hyper-diffusion cannot stay finite.
    try {
        generate_set(unstable, {{"b", -1.0}, {"nu", -5000.0}, {"zeta", 0.0}}, g, opt, 1, Split::Train);
        FAIL() << "expected rejection";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::BlowUp);
        EXPECT_NE(std::string(e.what()).find("cks("), std::string::npos);
    }
}

TEST(TrajectoryFile, RoundTripIsBitwise) {
    const auto dir = temp_dir("roundtrip");
    TrajectorySet set;
    set.family = Family::Fisher;
    set.coeffs = encode(default_family(Family::Fisher), {{"r", 0.03}, {"nu", 1.0}});
    set.samples = 2;
    set.times = 3;
    set.points = 8;
    set.seed = 0xdeadbeefULL;
    set.split = Split::Val;
    set.sample_seeds = {1, 2};
    for (std::size_t i = 0; i < 48; ++i) set.states.push_back(static_cast<float>(i) * 0.37f - 3.0f);
    save_set(set, dir / "toy.traj");
    EXPECT_EQ(load_set(dir / "toy.traj"), set);
    fs::remove_all(dir);
}

TEST(TrajectoryFile, CorruptionIsStructuredError) {
    const auto dir = temp_dir("corrupt");
    const Grid1D g(32);
    GenerationOptions opt;
    opt.samples = 2;
    opt.steps = 2;
    const auto set = generate_set(default_family(Family::AdvectionDiffusion), {{"c", 1.0}, {"nu", 2.0}}, g, opt, 3,
                                  Split::Train);
    const auto path = dir / "set.traj";
    save_set(set, path);
    auto bytes = binio::Reader::from_file(path);
    (void)bytes;
    // Flip a byte inside the samples field (offset 8 magic + 4 version + 4 family + 56 coeffs).
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8 + 4 + 4 + 56);
        const char junk = 0x7f;
        f.write(&junk, 1);
    }
    try {
        load_set(path);
        FAIL() << "expected format error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Format);
    }
    // Truncation.
    save_set(set, path);
    fs::resize_file(path, fs::file_size(path) - 10);
    EXPECT_THROW(load_set(path), Error);
    // Wrong magic.
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTATRAJECTORY";
    }
    EXPECT_THROW(load_set(path), Error);
    fs::remove_all(dir);
}

TEST(TrajectoryFile, GridMismatchNamesBothSizes) {
    const auto dir = temp_dir("grid");
    GenerationOptions opt;
    opt.samples = 1;
    opt.steps = 1;
    const auto set = generate_set(default_family(Family::AdvectionDiffusion), {{"c", 1.0}, {"nu", 2.0}}, Grid1D(32),
                                  opt, 3, Split::Train);
    save_set(set, dir / "n32.traj");
    try {
        load_set(dir / "n32.traj", 160);
        FAIL();
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("expected 160"), std::string::npos) << msg;
        EXPECT_NE(msg.find("found 32"), std::string::npos) << msg;
    }
    fs::remove_all(dir);
}

CorpusConfig small_corpus() {
    CorpusConfig cfg;
    cfg.grid = Grid1D(32);
    cfg.samples = 10;
    cfg.steps = 3;
    cfg.max_mode = 3;
    cfg.stepper = {1.0, 16, true};
    return cfg;
}

TEST(Corpus, FourFamiliesTwoPointsGive24Tuples) {
    const auto corpus = build_training_corpus(small_corpus(), 1);
    EXPECT_EQ(corpus.train.size(), 24u);
    EXPECT_EQ(corpus.val.size(), 24u);
    std::map<Family, int> per_family;
    for (const auto& s : corpus.train) {
        ++per_family[s.family];
        EXPECT_EQ(s.samples, 9u);
        EXPECT_EQ(s.split, Split::Train);
    }
    EXPECT_EQ(per_family[Family::AdvectionDiffusion], 4);
    EXPECT_EQ(per_family[Family::Fisher], 4);
    EXPECT_EQ(per_family[Family::KdV], 8);
    EXPECT_EQ(per_family[Family::ConservedKS], 8);
    for (const auto& s : corpus.val) EXPECT_EQ(s.samples, 1u);
    EXPECT_NO_THROW(assert_not_in_training(corpus.manifest, Family::Burgers));
}

TEST(Corpus, ValidationCarvedBySampleIndex) {
    auto cfg = small_corpus();
    cfg.families = {Family::Fisher};
    cfg.points_per_axis = 1;
    cfg.samples = 20;
    const auto corpus = build_training_corpus(cfg, 4);
    ASSERT_EQ(corpus.val.size(), 1u);
    ASSERT_EQ(corpus.val[0].samples, 2u);
    GenerationOptions opt;
    opt.samples = 20;
    opt.steps = cfg.steps;
    opt.max_mode = cfg.max_mode;
    opt.stepper = cfg.stepper;
    const auto& fam = default_family(Family::Fisher);
    const auto full = generate_set(fam, parameter_grid(fam, 1)[0], cfg.grid, opt, corpus.val[0].seed, Split::Train);
    EXPECT_EQ(corpus.val[0].sample_seeds[0], full.sample_seeds[9]);
    EXPECT_EQ(corpus.val[0].sample_seeds[1], full.sample_seeds[19]);
    EXPECT_EQ(corpus.train[0].sample_seeds[9], full.sample_seeds[10]);
}

TEST(Corpus, BurgersInTrainingIsRefused) {
    auto cfg = small_corpus();
    cfg.families.push_back(Family::Burgers);
    try {
        build_training_corpus(cfg, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Contamination);
    }
}

TEST(Corpus, DeterministicManifestAndDiskRoundTrip) {
    auto cfg = small_corpus();
    cfg.families = {Family::AdvectionDiffusion, Family::KdV};
    auto a = build_training_corpus(cfg, 9);
    auto b = build_training_corpus(cfg, 9);
    EXPECT_EQ(a.manifest, b.manifest);
    EXPECT_EQ(a.train, b.train);
    const auto dir = temp_dir("corpus");
    write_corpus(a, dir);
    const auto loaded = read_corpus(dir);
    EXPECT_EQ(loaded.train, a.train);
    EXPECT_EQ(loaded.val, a.val);
    EXPECT_EQ(loaded.manifest, a.manifest);
    fs::remove_all(dir);
}

TEST(Corpus, ContaminatedManifestDetected) {
    nlohmann::json manifest = {{"entries", {{{"family", "burgers"}, {"split", "train"}, {"file", "x"}}}}};
    EXPECT_THROW(assert_not_in_training(manifest, Family::Burgers), Error);
    manifest["entries"][0]["split"] = "test";
    EXPECT_NO_THROW(assert_not_in_training(manifest, Family::Burgers));
}

}  // namespace
}  // namespace eqemu
