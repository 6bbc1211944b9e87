#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqemu/autodiff.hpp"
#include "eqemu/datagen.hpp"
#include "eqemu/models.hpp"

namespace eqemu {

struct TrainConfig {
    std::uint64_t steps = 5000;
    std::size_t batch = 16;
    double peak_lr = 1e-3;
    double warmup_fraction = 0.05;
    std::size_t unroll = 1;
    double lambda_max = 0.0;     // PDE residual weight, nonzero for Pino only
    double ramp_fraction = 0.5;  // lambda ramps linearly over this share of steps
    double clip_norm = 1.0;
    double divergence_threshold = 1e3;
    std::uint64_t val_every = 500;  // 0 disables periodic validation
    std::size_t val_time_stride = 10;
    std::uint64_t seed = 0;
    ScalePreset preset = ScalePreset::Desk;

    static TrainConfig make(Architecture arch, ScalePreset preset);
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// lambda(s) = lambda_max * min(1, s / (ramp_fraction * total)).
double pino_lambda(std::uint64_t step, std::uint64_t total_steps, double lambda_max, double ramp_fraction = 0.5);

/// Windows of m + 1 consecutive states per row: states [B][m + 1][N].
struct Batch {
    std::size_t size = 0;
    std::size_t points = 0;
    std::size_t unroll = 1;
    std::vector<float> states;
    std::vector<EquationCoeffs> coeffs;

    ad::Tensor<float> slice(std::size_t t) const;  // [B, N] at window offset t
};

/// Draws `batch` windows uniformly over (set, sample, start time); the
/// generator is derived from (seed, step) alone.
Batch sample_batch(std::span<const TrajectorySet> sets, std::size_t batch, std::size_t unroll, std::uint64_t seed,
                   std::uint64_t step);

struct LossTerms {
    ad::Tensor<float> total;
    double data = 0.0;
    double pde = 0.0;
    double lambda = 0.0;
};

/// MAE of the autoregressive predictions against the truth, averaged over the
/// unrolled steps. When `predictions` is non-null it receives each step's output.
ad::Tensor<float> data_loss(const EmulatorModel& model, const Batch& batch, std::size_t unroll,
                            std::vector<ad::Tensor<float>>* predictions = nullptr);

/// MAE of (u_next - u_t) / dt - rhs((u_t + u_next) / 2), rhs evaluated
/// spectrally with the encoding mapped onto solver coefficients.
ad::Tensor<float> pde_residual_loss(const ad::Tensor<float>& u_t, const ad::Tensor<float>& u_next,
                                    std::span<const EquationCoeffs> c, const Grid1D& grid, double dt);
double pde_residual(std::span<const double> u_t, std::span<const double> u_next, const EquationCoeffs& c,
                    const Grid1D& grid, double dt);

/// L_data + lambda(s) L_PDE. The PDE term is evaluated on consecutive
/// predicted states of the unroll, starting from the true u_t.
LossTerms total_loss(const EmulatorModel& model, const Batch& batch, const TrainConfig& config, std::uint64_t step);

/// One-step nRMSE averaged over every validation (sample, t) pair with
/// t % time_stride == 0. Each pair is computed independently, so the value
/// does not depend on `batch`.
double validation_nrmse(const EmulatorModel& model, std::span<const TrajectorySet> sets, std::size_t time_stride,
                        std::size_t batch = 32);

/// One-step MAE over the first `max_pairs` (sample, t) pairs of each set.
double dataset_mae(const EmulatorModel& model, std::span<const TrajectorySet> sets, std::size_t max_pairs = 20);

struct CurveRow {
    std::uint64_t step = 0;
    double data_loss = 0.0;
    double pde_loss = 0.0;
    double lambda = 0.0;
    std::optional<double> val_nrmse;
};

struct TrainOptions {
    std::optional<std::filesystem::path> out_dir;  // best.ckpt, last.ckpt, curve.csv
    std::optional<std::filesystem::path> resume;   // checkpoint holding optimizer state
    std::optional<std::uint64_t> stop_after;       // pause at this step; the schedule still spans config.steps
    nlohmann::json extra_config = nlohmann::json::object();
    std::function<void(const CurveRow&)> on_step;
};

struct TrainResult {
    std::vector<CurveRow> curve;
    std::optional<double> best_val_nrmse;
    std::uint64_t best_step = 0;
    std::uint64_t final_step = 0;
};

/// Adam with warmup/cosine schedule and global-norm clipping. Throws
/// ErrorKind::Divergence (after writing last_good.ckpt when out_dir is set)
/// if the loss is non-finite or exceeds the divergence threshold.
TrainResult train(EmulatorModel& model, std::span<const TrajectorySet> train_sets,
                  std::span<const TrajectorySet> val_sets, const TrainConfig& config, const TrainOptions& options = {});

void write_curve_csv(std::span<const CurveRow> curve, const std::filesystem::path& path);
std::vector<CurveRow> read_curve_csv(const std::filesystem::path& path);

}  // namespace eqemu
