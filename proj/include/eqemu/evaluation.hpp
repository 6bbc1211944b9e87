#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqemu/datagen.hpp"
#include "eqemu/models.hpp"
#include "eqemu/spectral.hpp"

namespace eqemu {

/// Anything that advances a batch of states [B][N] by one emulator step.
class Emulator {
public:
    virtual ~Emulator() = default;
    virtual std::vector<double> step(std::span<const double> u, std::span<const EquationCoeffs> c) const = 0;
    virtual std::string name() const = 0;
    virtual const Grid1D& grid() const = 0;
};

class ModelEmulator : public Emulator {
public:
    explicit ModelEmulator(const EmulatorModel& model) : model_(model) {}
    std::vector<double> step(std::span<const double> u, std::span<const EquationCoeffs> c) const override;
    std::string name() const override { return std::string(architecture_name(model_.config().arch)); }
    const Grid1D& grid() const override { return model_.grid(); }

private:
    const EmulatorModel& model_;
};

/// Wraps the spectral stepper; with the reference config this is the oracle.
class StepperEmulator : public Emulator {
public:
    StepperEmulator(Grid1D grid, StepperConfig config, double dt = 1.0, std::string name = "reference");
    static StepperEmulator reference(Grid1D grid) { return {grid, StepperConfig::reference(), 1.0, "reference"}; }
    static StepperEmulator coarse(Grid1D grid) { return {grid, StepperConfig::coarse(), 1.0, "coarse"}; }
    std::vector<double> step(std::span<const double> u, std::span<const EquationCoeffs> c) const override;
    std::string name() const override { return name_; }
    const Grid1D& grid() const override { return grid_; }

private:
    const EtdStepper& stepper(const EquationCoeffs& c) const;

    Grid1D grid_;
    StepperConfig config_;
    double dt_;
    std::string name_;
    struct Cache;
    std::shared_ptr<Cache> cache_;
};

/// u(t + dt) = u(t).
class PersistenceEmulator : public Emulator {
public:
    explicit PersistenceEmulator(Grid1D grid) : grid_(grid) {}
    std::vector<double> step(std::span<const double> u, std::span<const EquationCoeffs>) const override {
        return {u.begin(), u.end()};
    }
    std::string name() const override { return "persistence"; }
    const Grid1D& grid() const override { return grid_; }

private:
    Grid1D grid_;
};

struct Rollout {
    std::size_t points = 0;
    std::vector<double> states;  // [completed][points], predictions for steps 1..completed
    std::size_t completed = 0;
    bool truncated = false;  // stopped early on a non-finite state or stepper blow-up

    std::span<const double> state(std::size_t k) const { return std::span(states).subspan((k - 1) * points, points); }
};

/// Iterates the emulator T times from u0. Never throws on blow-up; the
/// rollout is cut short and marked truncated instead.
Rollout rollout(const Emulator& em, std::span<const double> u0, const EquationCoeffs& c, std::size_t steps);

/// Same, for several initial conditions [B][N] sharing one encoding. Rows are
/// advanced together while they stay finite.
std::vector<Rollout> rollout_batch(const Emulator& em, std::span<const double> u0, const EquationCoeffs& c,
                                   std::size_t steps);

/// ||pred - truth|| / ||truth||, or nullopt when truth has zero norm.
std::optional<double> nrmse(std::span<const double> pred, std::span<const double> truth);
std::optional<double> nrmse(std::span<const double> pred, std::span<const float> truth);

/// Per-sample nRMSE, then the arithmetic mean over samples. Rows are [B][N].
std::optional<double> mean_nrmse(std::span<const double> pred, std::span<const double> truth, std::size_t points);

struct GMean {
    double value = 0.0;
    bool clamped = false;     // some entry was zero and replaced by 1e-12
    std::size_t used = 0;     // finite entries that entered the mean
};

/// exp(mean(log x_t)) over the finite entries among the first `max_steps`.
GMean gmean_nrmse(std::span<const double> series, std::size_t max_steps = 100);

inline constexpr double kStabilityThreshold = 1.0;

struct RolloutReport {
    std::string emulator;
    std::string family;
    EquationCoeffs coeffs;
    ParamMap params;
    std::size_t steps = 0;
    std::size_t n_ic = 0;
    std::vector<double> mean;    // per step 1..steps; +inf once any sample is truncated
    std::vector<double> std_error;  // standard error over samples
    std::optional<std::size_t> stability_horizon;  // first step with mean > 1 or non-finite
    GMean gmean;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> sample_seeds;
};

/// Rolls the emulator out from slice 0 of every sample of `truth` and scores
/// steps 1..truth.steps().
RolloutReport evaluate_against(const Emulator& em, const TrajectorySet& truth);

struct EvalOptions {
    std::size_t n_ic = 30;
    std::size_t steps = 200;
    std::uint64_t seed = 0;
    std::size_t max_mode = 5;
};

/// Fresh test-split trajectories from the reference stepper.
TrajectorySet make_test_set(const PdeFamily& family, const ParamMap& params, const Grid1D& grid, const EvalOptions& opt);

RolloutReport evaluate(const Emulator& em, const PdeFamily& family, const ParamMap& params, const EvalOptions& opt);

struct IdOodReports {
    RolloutReport id;
    RolloutReport ood;
};
IdOodReports evaluate_id_ood(const Emulator& em, const PdeFamily& family, const ParamMap& id_params,
                             const ParamMap& ood_params, const EvalOptions& opt);

struct HeldoutResult {
    RolloutReport model;
    RolloutReport persistence;
    RolloutReport coarse;
};

/// Zero-shot Burgers protocol. Refuses to run (ErrorKind::Contamination) when
/// the training manifest lists any Burgers entry.
std::vector<HeldoutResult> evaluate_heldout_burgers(const Emulator& em, const nlohmann::json& training_manifest,
                                                    const std::vector<ParamMap>& grid_points, const EvalOptions& opt,
                                                    const FamilyRegistry& registry = FamilyRegistry::defaults());

struct SweepRow {
    double value = 0.0;
    double gmean = 0.0;
    bool in_training_band = false;
    std::optional<std::size_t> stability_horizon;
};

/// Varies one parameter over `values`, others held at their range midpoints.
std::vector<SweepRow> coefficient_sweep(const Emulator& em, const PdeFamily& family, const std::string& parameter,
                                        std::span<const double> values, const EvalOptions& opt);

/// step,mean_nrmse,stderr with %.9g; a sidecar <path>.json carries the metadata.
void emit_report(const RolloutReport& report, const std::filesystem::path& path);
RolloutReport read_report(const std::filesystem::path& path);
nlohmann::json report_summary(const RolloutReport& report);

void emit_sweep(std::span<const SweepRow> rows, const std::filesystem::path& path);
std::vector<SweepRow> read_sweep(const std::filesystem::path& path);

}  // namespace eqemu
