#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqemu/autodiff.hpp"
#include "eqemu/encoding.hpp"
#include "eqemu/optim.hpp"
#include "eqemu/spectral.hpp"

namespace eqemu {

/// Finite-difference features [u, u^2, u_x, u u_x, u_xx, u_xxx, u_xxxx] on a
/// periodic grid. u_x and u_xx use 4th-order central stencils, u_xxx and
/// u_xxxx 2nd-order ones; all are 5 points wide.
std::array<std::vector<double>, kNumTerms> compute_features(std::span<const double> u, const Grid1D& grid);

/// Stencil taps at offsets -2..2 for derivative order 1..4, in units of h^-order.
const std::array<double, 5>& fd_stencil(std::size_t order);

enum class Architecture { PiFnoUnet, LscFno, Pino, Lc };
enum class ScalePreset { Paper, Desk };

std::string_view architecture_name(Architecture arch);
/// Accepts "m1".."m4" or the long names.
Architecture architecture_from_name(std::string_view name);
std::string_view preset_name(ScalePreset preset);
ScalePreset preset_from_name(std::string_view name);

struct ModelConfig {
    Architecture arch = Architecture::Lc;
    ScalePreset preset = ScalePreset::Desk;
    std::size_t n = 160;
    double length = 1.0;
    double dt = 1.0;
    std::size_t channels = 32;
    std::size_t blocks = 7;  // U-Net levels for PiFnoUnet
    std::size_t modes = 32;
    ad::Activation activation = ad::Activation::SiLU;
    std::size_t embed_width = 32;  // width of the coefficient MLP
    std::size_t rank = 4;          // dynamic spectral weights (PiFnoUnet)
    std::size_t tokens = 4;        // attention tokens built from c (LscFno)
    std::size_t heads = 4;
    bool use_film = true;
    bool dynamic_weights = true;
    bool spectral_gating = true;
    bool global_attention = true;
    bool zero_init_final = false;
    /// Coefficients are divided by these before entering any network.
    std::array<double, kNumTerms> coeff_scale{};

    static ModelConfig make(Architecture arch, ScalePreset preset, std::size_t n = 160);
    Grid1D grid() const { return Grid1D(n, length); }
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Largest |coefficient| per slot over the non-held-out training ranges (1 for
/// slots no family uses).
std::array<double, kNumTerms> default_coeff_scale(const FamilyRegistry& registry = FamilyRegistry::defaults());

/// One-step emulator u(t + dt) ~ M(u(t), c). All architectures are residual:
/// the network adds a correction to u, or to the coarse prediction for Lc.
class EmulatorModel {
public:
    EmulatorModel(const ModelConfig& config, std::uint64_t seed);
    EmulatorModel(const EmulatorModel&) = delete;
    EmulatorModel& operator=(const EmulatorModel&) = delete;

    const ModelConfig& config() const { return config_; }
    const Grid1D& grid() const { return grid_; }
    ad::ParameterStore& parameters() { return store_; }
    const ad::ParameterStore& parameters() const { return store_; }

    /// u [B, N], one coefficient vector per row. Builds a graph when any
    /// parameter requires gradients.
    ad::Tensor<float> forward(const ad::Tensor<float>& u, std::span<const EquationCoeffs> c) const;

    /// Graph-free batched step on double states laid out [B][N].
    std::vector<double> predict(std::span<const double> u, std::span<const EquationCoeffs> c) const;

    /// Coarse stepper output for Lc, [B][N].
    std::vector<double> coarse(std::span<const double> u, std::span<const EquationCoeffs> c) const;

    /// Zeroes the output projection so forward returns the residual base.
    void zero_final_layer();

private:
    struct FilmHead {
        ad::Tensor<float> wg, bg, wb, bb;
    };
    struct Block {
        std::size_t modes = 0;
        ad::Tensor<float> spec, pw, pb;
        FilmHead film;
        ad::Tensor<float> lp, lpb, lq, lqb, ls, lsb;  // low-rank heads
        ad::Tensor<float> gw, gb;                    // gate head
        ad::Tensor<float> aq, ak, akb, av, avb, ao;  // attention
    };

    Block make_block(const std::string& prefix, std::size_t modes, bool dynamic, bool lsc);
    FilmHead make_film(const std::string& prefix);
    ad::Tensor<float> param(const std::string& name, ad::Shape shape, ad::InitSpec init);
    ad::Tensor<float> embed(const ad::Tensor<float>& c_hat) const;
    ad::Tensor<float> apply_block(const Block& blk, const ad::Tensor<float>& h, const ad::Tensor<float>& e) const;
    ad::Tensor<float> features(const ad::Tensor<float>& u3) const;
    ad::Tensor<float> act(const ad::Tensor<float>& x) const { return ad::activate(x, config_.activation); }
    const EtdStepper& coarse_stepper(const EquationCoeffs& c) const;

    ModelConfig config_;
    Grid1D grid_;
    ad::ParameterStore store_;

    ad::Tensor<float> fd_w_;  // constant [4, 1, 5]
    ad::Tensor<float> e_w1_, e_b1_, e_w2_, e_b2_;
    ad::Tensor<float> lift_w_, lift_b_, head_w_, head_b_, out_w_, out_b_;
    ad::Tensor<float> cproj_w_, cproj_b_;                      // Pino
    ad::Tensor<float> enc1_w_, enc1_b_, enc2_w_, enc2_b_;      // LscFno
    ad::Tensor<float> dec1_w_, dec1_b_, dec2_w_, dec2_b_;      // LscFno
    std::vector<ad::Tensor<float>> down_w_, down_b_, up_w_, up_b_, merge_w_, merge_b_;  // PiFnoUnet
    std::vector<Block> blocks_;      // encoder path for PiFnoUnet
    std::vector<Block> dec_blocks_;  // PiFnoUnet decoder path

    mutable std::mutex coarse_mutex_;
    mutable std::map<std::array<double, kNumTerms>, std::unique_ptr<EtdStepper>> coarse_cache_;
};

/// Checkpoint with the model config embedded under "model"; `extra` is merged
/// into the top-level config object.
void save_model(const EmulatorModel& model, const std::filesystem::path& path, const ad::Adam* adam = nullptr,
                const nlohmann::json& extra = nlohmann::json::object());
std::unique_ptr<EmulatorModel> load_model(const std::filesystem::path& path);
std::unique_ptr<EmulatorModel> model_from_checkpoint(const ad::Checkpoint& ckpt);

}  // namespace eqemu
