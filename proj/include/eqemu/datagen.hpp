#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqemu/encoding.hpp"
#include "eqemu/spectral.hpp"

namespace eqemu {

enum class Split : std::uint32_t { Train = 0, Val = 1, Test = 2 };

std::string_view split_name(Split split);
Split split_from_name(std::string_view name);

/// Random band-limited initial state. Fourier amplitudes of modes 1..max_mode
/// are standard complex Gaussians; the result is rescaled so max|u| = 1, or
/// affinely onto [0, 1] when `unit_interval` is set (Fisher's equation).
struct InitialConditionSpec {
    std::size_t max_mode = 5;
    std::uint64_t seed = 0;
    bool unit_interval = false;
};

std::vector<double> make_initial_condition(const InitialConditionSpec& spec, const Grid1D& grid);

/// Whether a family's states live on [0, 1] rather than [-1, 1].
bool uses_unit_interval(Family family);

/// 64-bit mixing used for all derived seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Rollouts of one equation from several initial conditions, stored f32.
struct TrajectorySet {
    Family family = Family::AdvectionDiffusion;
    EquationCoeffs coeffs;
    std::size_t samples = 0;
    std::size_t times = 0;  // steps + 1
    std::size_t points = 0;
    std::vector<float> states;  // [samples][times][points]
    std::uint64_t seed = 0;
    Split split = Split::Train;
    std::vector<std::uint64_t> sample_seeds;

    std::size_t steps() const { return times == 0 ? 0 : times - 1; }
    std::span<const float> state(std::size_t sample, std::size_t t) const {
        return std::span(states).subspan((sample * times + t) * points, points);
    }
    std::span<float> state(std::size_t sample, std::size_t t) {
        return std::span(states).subspan((sample * times + t) * points, points);
    }
    /// Keeps the listed samples only.
    TrajectorySet select(std::span<const std::size_t> sample_indices, Split new_split) const;

    bool operator==(const TrajectorySet&) const = default;
};

struct GenerationOptions {
    std::size_t samples = 50;
    std::size_t steps = 50;
    std::size_t max_mode = 5;
    std::size_t max_attempts = 10;
    StepperConfig stepper = StepperConfig::reference();
};

/// One initial condition per sample advanced by the reference stepper. The
/// IC is rounded to f32 before integration so that stored slice 0 is the
/// exact double state the trajectory started from. Blown-up samples are
/// redrawn with fresh seeds; after `max_attempts` the tuple is rejected.
TrajectorySet generate_set(const PdeFamily& family, const ParamMap& params, const Grid1D& grid,
                           const GenerationOptions& options, std::uint64_t seed, Split split);

/// Little-endian file: magic "EQEMTRAJ", u32 version, u32 family, 7 x f64
/// coefficients, 3 x u64 dims (samples, times, points), u64 seed, u32 split,
/// samples x u64 per-sample seeds, f32 payload, u32 CRC32 of all prior bytes.
void save_set(const TrajectorySet& set, const std::filesystem::path& path);
TrajectorySet load_set(const std::filesystem::path& path, std::optional<std::size_t> expected_points = std::nullopt);

struct CorpusConfig {
    std::vector<Family> families{Family::AdvectionDiffusion, Family::Fisher, Family::KdV, Family::ConservedKS};
    std::size_t points_per_axis = 2;
    std::size_t samples = 50;
    std::size_t steps = 50;
    std::size_t validation_every = 10;  // sample i goes to validation when i % validation_every == validation_every-1
    std::size_t max_mode = 5;
    Grid1D grid{};
    StepperConfig stepper = StepperConfig::reference();
    FamilyRegistry registry = FamilyRegistry::defaults();
};

struct CorpusEntry {
    std::string file;
    Family family{};
    ParamMap params;
    EquationCoeffs coeffs;
    Split split = Split::Train;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> sample_seeds;
    std::size_t samples = 0;
    std::size_t steps = 0;
};

struct Corpus {
    std::vector<TrajectorySet> train;
    std::vector<TrajectorySet> val;
    std::vector<CorpusEntry> entries;  // train entries then val entries, same order as the sets
    nlohmann::json manifest;
};

/// Train/val corpus over every parameter-grid tuple of the configured
/// families. Refuses held-out families.
Corpus build_training_corpus(const CorpusConfig& config, std::uint64_t seed);

/// Writes every set plus manifest.json under `dir`; fills in entry file names.
void write_corpus(Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

/// Throws ErrorKind::Contamination if any train/val entry of the manifest
/// belongs to `family`.
void assert_not_in_training(const nlohmann::json& manifest, Family family);

nlohmann::json to_json(const EquationCoeffs& c);
EquationCoeffs coeffs_from_json(const nlohmann::json& j);

}  // namespace eqemu
