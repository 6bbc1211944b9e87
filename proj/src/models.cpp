#include "eqemu/models.hpp"

#include <algorithm>
#include <cmath>

#include "eqemu/error.hpp"

namespace eqemu {

using ad::InitSpec;
using ad::Shape;
using Tf = ad::Tensor<float>;

namespace {

const std::array<std::array<double, 5>, 4> kStencils{{
    {1.0 / 12, -8.0 / 12, 0.0, 8.0 / 12, -1.0 / 12},
    {-1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12},
    {-0.5, 1.0, 0.0, -1.0, 0.5},
    {1.0, -4.0, 6.0, -4.0, 1.0},
}};

InitSpec normal_scaled(double gain, std::size_t fan) { return InitSpec::normal(gain / std::sqrt(static_cast<double>(fan))); }

}  // namespace

const std::array<double, 5>& fd_stencil(std::size_t order) {
    if (order < 1 || order > 4) throw invalid_argument("fd_stencil: derivative order must be 1..4");
    return kStencils[order - 1];
}

std::array<std::vector<double>, kNumTerms> compute_features(std::span<const double> u, const Grid1D& grid) {
    const std::size_t n = grid.n();
    if (u.size() != n) throw invalid_argument("compute_features: state length does not match grid");
    std::array<std::vector<double>, kNumTerms> f;
    for (auto& ch : f) ch.assign(n, 0.0);
    std::array<std::vector<double>, 4> d;
    for (std::size_t order = 1; order <= 4; ++order) {
        const auto& taps = fd_stencil(order);
        const double inv = std::pow(grid.dx(), -static_cast<double>(order));
        d[order - 1].assign(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 5; ++k) acc += taps[k] * u[(j + n + k - 2) % n];
            d[order - 1][j] = acc * inv;
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        f[0][j] = u[j];
        f[1][j] = u[j] * u[j];
        f[2][j] = d[0][j];
        f[3][j] = u[j] * d[0][j];
        f[4][j] = d[1][j];
        f[5][j] = d[2][j];
        f[6][j] = d[3][j];
    }
    return f;
}

std::string_view architecture_name(Architecture arch) {
    switch (arch) {
    case Architecture::PiFnoUnet: return "pi_fno_unet";
    case Architecture::LscFno: return "lsc_fno";
    case Architecture::Pino: return "pino";
    case Architecture::Lc: return "lc";
    }
    return "unknown";
}

Architecture architecture_from_name(std::string_view name) {
    if (name == "m1" || name == "pi_fno_unet") return Architecture::PiFnoUnet;
    if (name == "m2" || name == "lsc_fno") return Architecture::LscFno;
    if (name == "m3" || name == "pino") return Architecture::Pino;
    if (name == "m4" || name == "lc") return Architecture::Lc;
    throw invalid_argument("unknown architecture '" + std::string(name) + "' (expected m1, m2, m3 or m4)");
}

std::string_view preset_name(ScalePreset preset) { return preset == ScalePreset::Paper ? "paper" : "desk"; }

ScalePreset preset_from_name(std::string_view name) {
    if (name == "paper") return ScalePreset::Paper;
    if (name == "desk") return ScalePreset::Desk;
    throw invalid_argument("unknown preset '" + std::string(name) + "' (expected paper or desk)");
}

std::array<double, kNumTerms> default_coeff_scale(const FamilyRegistry& registry) {
    std::array<double, kNumTerms> s{};
    for (const auto& fam : registry.families()) {
        if (fam.held_out) continue;
        for (const auto& p : fam.parameters)
            for (const auto& sw : p.slots) {
                auto& v = s[static_cast<std::size_t>(sw.term)];
                v = std::max(v, std::abs(sw.weight) * std::max(std::abs(p.low), std::abs(p.high)));
            }
    }
    for (auto& v : s)
        if (v == 0.0) v = 1.0;
    return s;
}

ModelConfig ModelConfig::make(Architecture arch, ScalePreset preset, std::size_t n) {
    ModelConfig c;
    c.arch = arch;
    c.preset = preset;
    c.n = n;
    c.modes = std::max<std::size_t>(1, n / 5);
    c.coeff_scale = default_coeff_scale();
    const bool paper = preset == ScalePreset::Paper;
    c.embed_width = paper ? 128 : 32;
    switch (arch) {
    case Architecture::PiFnoUnet:
        c.channels = paper ? 128 : 16;
        c.blocks = 4;
        break;
    case Architecture::LscFno:
        c.channels = paper ? 128 : 32;
        c.blocks = paper ? 12 : 6;
        break;
    case Architecture::Pino:
        c.channels = paper ? 256 : 32;
        c.blocks = paper ? 6 : 3;
        break;
    case Architecture::Lc:
        c.channels = paper ? 160 : 32;
        c.blocks = paper ? 14 : 7;
        c.activation = ad::Activation::GeLU;
        break;
    }
    return c;
}

nlohmann::json ModelConfig::to_json() const {
    return {{"arch", architecture_name(arch)},
            {"preset", preset_name(preset)},
            {"n", n},
            {"length", length},
            {"dt", dt},
            {"channels", channels},
            {"blocks", blocks},
            {"modes", modes},
            {"activation", activation == ad::Activation::GeLU ? "gelu" : "silu"},
            {"embed_width", embed_width},
            {"rank", rank},
            {"tokens", tokens},
            {"heads", heads},
            {"use_film", use_film},
            {"dynamic_weights", dynamic_weights},
            {"spectral_gating", spectral_gating},
            {"global_attention", global_attention},
            {"zero_init_final", zero_init_final},
            {"coeff_scale", coeff_scale}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.arch = architecture_from_name(j.at("arch").get<std::string>());
        c.preset = preset_from_name(j.at("preset").get<std::string>());
        c.n = j.at("n").get<std::size_t>();
        c.length = j.at("length").get<double>();
        c.dt = j.at("dt").get<double>();
        c.channels = j.at("channels").get<std::size_t>();
        c.blocks = j.at("blocks").get<std::size_t>();
        c.modes = j.at("modes").get<std::size_t>();
        const auto act = j.at("activation").get<std::string>();
        if (act != "silu" && act != "gelu") throw invalid_argument("unknown activation '" + act + "'");
        c.activation = act == "gelu" ? ad::Activation::GeLU : ad::Activation::SiLU;
        c.embed_width = j.at("embed_width").get<std::size_t>();
        c.rank = j.at("rank").get<std::size_t>();
        c.tokens = j.at("tokens").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.use_film = j.at("use_film").get<bool>();
        c.dynamic_weights = j.at("dynamic_weights").get<bool>();
        c.spectral_gating = j.at("spectral_gating").get<bool>();
        c.global_attention = j.at("global_attention").get<bool>();
        c.zero_init_final = j.at("zero_init_final").get<bool>();
        c.coeff_scale = j.at("coeff_scale").get<std::array<double, kNumTerms>>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("model config: ") + e.what());
    } catch (const Error& e) {
        throw format_error(std::string("model config: ") + e.what());
    }
}

Tf EmulatorModel::param(const std::string& name, Shape shape, InitSpec init) {
    return store_.add(name, std::move(shape), init);
}

EmulatorModel::FilmHead EmulatorModel::make_film(const std::string& prefix) {
    const std::size_t C = config_.channels, E = config_.embed_width;
    FilmHead f;
    f.wg = param(prefix + ".film_gamma.w", {C, E}, normal_scaled(0.1, E));
    f.bg = param(prefix + ".film_gamma.b", {C}, InitSpec::zeros());
    f.wb = param(prefix + ".film_beta.w", {C, E}, normal_scaled(0.1, E));
    f.bb = param(prefix + ".film_beta.b", {C}, InitSpec::zeros());
    return f;
}

EmulatorModel::Block EmulatorModel::make_block(const std::string& prefix, std::size_t modes, bool dynamic, bool lsc) {
    const std::size_t C = config_.channels, E = config_.embed_width, R = config_.rank, T = config_.tokens;
    Block b;
    b.modes = modes;
    b.spec = param(prefix + ".spectral", {C, C, modes, 2}, normal_scaled(0.5, C));
    b.pw = param(prefix + ".pointwise.w", {C, C, 1}, normal_scaled(0.5, C));
    b.pb = param(prefix + ".pointwise.b", {C}, InitSpec::zeros());
    if (config_.use_film) b.film = make_film(prefix);
    if (dynamic) {
        b.lp = param(prefix + ".lowrank_p.w", {R * C, E}, normal_scaled(1.0, E));
        b.lpb = param(prefix + ".lowrank_p.b", {R * C}, InitSpec::zeros());
        b.lq = param(prefix + ".lowrank_q.w", {R * C, E}, normal_scaled(1.0, E));
        b.lqb = param(prefix + ".lowrank_q.b", {R * C}, InitSpec::zeros());
        b.ls = param(prefix + ".lowrank_s.w", {R * modes * 2, E}, normal_scaled(0.1, C * E * R));
        b.lsb = param(prefix + ".lowrank_s.b", {R * modes * 2}, InitSpec::zeros());
    }
    if (lsc && config_.spectral_gating) {
        b.gw = param(prefix + ".gate.w", {C * modes, E}, normal_scaled(0.1, E));
        b.gb = param(prefix + ".gate.b", {C * modes}, InitSpec::zeros());
    }
    if (lsc && config_.global_attention) {
        b.aq = param(prefix + ".attn_q.w", {C, C, 1}, normal_scaled(1.0, C));
        b.ak = param(prefix + ".attn_k.w", {T * C, E}, normal_scaled(1.0, E));
        b.akb = param(prefix + ".attn_k.b", {T * C}, InitSpec::zeros());
        b.av = param(prefix + ".attn_v.w", {T * C, E}, normal_scaled(0.5, E));
        b.avb = param(prefix + ".attn_v.b", {T * C}, InitSpec::zeros());
        b.ao = param(prefix + ".attn_out.w", {C, C, 1}, normal_scaled(0.5, C));
    }
    return b;
}

EmulatorModel::EmulatorModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), grid_(config.n, config.length), store_(seed) {
    const std::size_t C = config_.channels, E = config_.embed_width, N = config_.n, K = config_.modes;
    if (C == 0 || E == 0 || K == 0 || config_.blocks == 0) throw invalid_argument("model config: sizes must be positive");
    if (K > N / 2) throw invalid_argument("model config: modes must not exceed n/2");

    std::vector<float> fd(4 * 5);
    for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t k = 0; k < 5; ++k)
            // Derivative of order j scaled by h^j / 2^(j-1), the same per-cell
            // units the coefficient encoding uses.
            fd[o * 5 + k] = static_cast<float>(kStencils[o][k] / std::pow(2.0, static_cast<double>(o)));
    fd_w_ = Tf::constant({4, 1, 5}, std::move(fd));

    e_w1_ = param("embed.l1.w", {E, kNumTerms}, InitSpec::fan_in(kNumTerms));
    e_b1_ = param("embed.l1.b", {E}, InitSpec::zeros());
    e_w2_ = param("embed.l2.w", {E, E}, InitSpec::fan_in(E));
    e_b2_ = param("embed.l2.b", {E}, InitSpec::zeros());

    std::size_t out_in = C;
    switch (config_.arch) {
    case Architecture::PiFnoUnet: {
        const std::size_t levels = config_.blocks;
        if (N % (std::size_t(1) << (levels - 1)) != 0)
            throw invalid_argument("model config: n must be divisible by 2^(levels-1)");
        lift_w_ = param("lift.w", {C, kNumTerms, 1}, InitSpec::fan_in(kNumTerms));
        lift_b_ = param("lift.b", {C}, InitSpec::zeros());
        for (std::size_t l = 0; l < levels; ++l) {
            const std::size_t nl = N >> l;
            const std::size_t kl = std::min(K, nl / 2);
            if (kl == 0) throw invalid_argument("model config: too many U-Net levels for n");
            blocks_.push_back(make_block("enc" + std::to_string(l), kl, config_.dynamic_weights, false));
            if (l + 1 < levels) {
                down_w_.push_back(param("down" + std::to_string(l) + ".w", {C, C, 3}, InitSpec::fan_in(3 * C)));
                down_b_.push_back(param("down" + std::to_string(l) + ".b", {C}, InitSpec::zeros()));
            }
        }
        for (std::size_t l = 0; l + 1 < levels; ++l) {
            const std::size_t kl = std::min(K, (N >> l) / 2);
            up_w_.push_back(param("up" + std::to_string(l) + ".w", {C, C, 4}, InitSpec::fan_in(2 * C)));
            up_b_.push_back(param("up" + std::to_string(l) + ".b", {C}, InitSpec::zeros()));
            merge_w_.push_back(param("merge" + std::to_string(l) + ".w", {C, 2 * C, 1}, InitSpec::fan_in(2 * C)));
            merge_b_.push_back(param("merge" + std::to_string(l) + ".b", {C}, InitSpec::zeros()));
            dec_blocks_.push_back(make_block("dec" + std::to_string(l), kl, config_.dynamic_weights, false));
        }
        break;
    }
    case Architecture::LscFno: {
        if (C % 2 != 0 || N % 4 != 0) throw invalid_argument("model config: lsc_fno needs even channels and n % 4 == 0");
        if (C % config_.heads != 0) throw invalid_argument("model config: channels must be divisible by heads");
        const std::size_t H = C / 2;
        const std::size_t kl = std::min(K, N / 8);
        enc1_w_ = param("enc1.w", {H, kNumTerms, 3}, InitSpec::fan_in(3 * kNumTerms));
        enc1_b_ = param("enc1.b", {H}, InitSpec::zeros());
        enc2_w_ = param("enc2.w", {C, H, 3}, InitSpec::fan_in(3 * H));
        enc2_b_ = param("enc2.b", {C}, InitSpec::zeros());
        for (std::size_t b = 0; b < config_.blocks; ++b)
            blocks_.push_back(make_block("block" + std::to_string(b), kl, false, true));
        dec1_w_ = param("dec1.w", {C, H, 4}, InitSpec::fan_in(2 * C));
        dec1_b_ = param("dec1.b", {H}, InitSpec::zeros());
        dec2_w_ = param("dec2.w", {H, H, 4}, InitSpec::fan_in(2 * H));
        dec2_b_ = param("dec2.b", {H}, InitSpec::zeros());
        out_in = H + kNumTerms;
        break;
    }
    case Architecture::Pino:
    case Architecture::Lc: {
        std::size_t in = 3;
        if (config_.arch == Architecture::Pino) {
            cproj_w_ = param("coeff_proj.w", {2, kNumTerms}, InitSpec::fan_in(kNumTerms));
            cproj_b_ = param("coeff_proj.b", {2}, InitSpec::zeros());
        } else {
            in = 2 + 2 * kNumTerms;
        }
        lift_w_ = param("lift.w", {C, in, 1}, InitSpec::fan_in(in));
        lift_b_ = param("lift.b", {C}, InitSpec::zeros());
        for (std::size_t b = 0; b < config_.blocks; ++b)
            blocks_.push_back(make_block("block" + std::to_string(b), K, false, false));
        break;
    }
    }
    if (config_.arch != Architecture::LscFno) {
        head_w_ = param("head.w", {C, C, 1}, InitSpec::fan_in(C));
        head_b_ = param("head.b", {C}, InitSpec::zeros());
    }
    out_w_ = param("out.w", {1, out_in, 1}, config_.zero_init_final ? InitSpec::zeros() : InitSpec::fan_in(out_in));
    out_b_ = param("out.b", {1}, InitSpec::zeros());
}

void EmulatorModel::zero_final_layer() {
    for (auto* t : {&out_w_, &out_b_}) {
        auto d = t->mutable_data();
        std::fill(d.begin(), d.end(), 0.0f);
    }
}

Tf EmulatorModel::embed(const Tf& c_hat) const {
    return act(ad::linear(act(ad::linear(c_hat, e_w1_, e_b1_)), e_w2_, e_b2_));
}

Tf EmulatorModel::features(const Tf& u3) const {
    const auto d = ad::conv1d(u3, fd_w_, Tf{}, 1);
    const auto ux = ad::slice_channels(d, 0, 1);
    return ad::concat_channels<float>({u3, ad::mul(u3, u3), ux, ad::mul(u3, ux), ad::slice_channels(d, 1, 1),
                                       ad::slice_channels(d, 2, 1), ad::slice_channels(d, 3, 1)});
}

Tf EmulatorModel::apply_block(const Block& blk, const Tf& h, const Tf& e) const {
    const std::size_t B = h.dim(0), C = config_.channels, R = config_.rank, T = config_.tokens;
    Tf w = blk.spec;
    if (blk.lp.defined()) {
        const auto p = ad::reshape(ad::linear(e, blk.lp, blk.lpb), {B, R, C});
        const auto q = ad::reshape(ad::linear(e, blk.lq, blk.lqb), {B, R, C});
        const auto s = ad::reshape(ad::linear(e, blk.ls, blk.lsb), {B, R, blk.modes, 2});
        w = ad::lowrank_spectral_weights(blk.spec, p, q, s);
    }
    auto z = ad::spectral_conv(h, w);
    if (blk.gw.defined()) {
        const auto g = ad::add_scalar(ad::reshape(ad::linear(e, blk.gw, blk.gb), {B, C, blk.modes}), 1.0f);
        z = ad::spectral_gate(z, g);
    }
    z = ad::add(z, ad::conv1d(h, blk.pw, blk.pb, 1));
    if (blk.aq.defined()) {
        const auto k = ad::reshape(ad::linear(e, blk.ak, blk.akb), {B, T, C});
        const auto v = ad::reshape(ad::linear(e, blk.av, blk.avb), {B, T, C});
        const auto a = ad::attention(ad::conv1d(h, blk.aq, Tf{}, 1), k, v, config_.heads);
        z = ad::add(z, ad::conv1d(a, blk.ao, Tf{}, 1));
    }
    if (blk.film.wg.defined()) {
        const auto gamma = ad::add_scalar(ad::linear(e, blk.film.wg, blk.film.bg), 1.0f);
        const auto beta = ad::linear(e, blk.film.wb, blk.film.bb);
        z = ad::film(z, gamma, beta);
    }
    return ad::add(h, act(z));
}

const EtdStepper& EmulatorModel::coarse_stepper(const EquationCoeffs& c) const {
    std::lock_guard lock(coarse_mutex_);
    auto& slot = coarse_cache_[c.values];
    if (!slot) {
        if (coarse_cache_.size() > 4096) {
            auto keep = std::move(slot);
            coarse_cache_.clear();
            slot = std::move(keep);
        }
        slot = std::make_unique<EtdStepper>(grid_, to_physical(c, grid_, config_.dt), StepperConfig::coarse());
    }
    return *slot;
}

std::vector<double> EmulatorModel::coarse(std::span<const double> u, std::span<const EquationCoeffs> c) const {
    const std::size_t N = grid_.n();
    if (u.size() != c.size() * N) throw invalid_argument("coarse: state batch does not match coefficient count");
    std::vector<double> out(u.begin(), u.end());
    for (std::size_t b = 0; b < c.size(); ++b) coarse_stepper(c[b]).step(std::span(out).subspan(b * N, N));
    return out;
}

Tf EmulatorModel::forward(const Tf& u, std::span<const EquationCoeffs> c) const {
    if (u.rank() != 2 || u.dim(1) != grid_.n())
        throw invalid_argument("forward: expected state batch [B, " + std::to_string(grid_.n()) + "], got " +
                               ad::shape_string(u.shape()));
    const std::size_t B = u.dim(0), N = u.dim(1);
    if (c.size() != B) throw invalid_argument("forward: one coefficient vector per batch row required");

    std::vector<float> ch(B * kNumTerms);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < kNumTerms; ++j)
            ch[b * kNumTerms + j] = static_cast<float>(c[b][j] / config_.coeff_scale[j]);
    const auto c_hat = Tf::constant({B, kNumTerms}, std::move(ch));
    const auto e = embed(c_hat);
    const auto u3 = ad::reshape(u, {B, 1, N});
    Tf base = u3;
    Tf delta;

    const auto head = [&](const Tf& h) { return ad::conv1d(act(ad::conv1d(h, head_w_, head_b_, 1)), out_w_, out_b_, 1); };

    switch (config_.arch) {
    case Architecture::PiFnoUnet: {
        auto h = ad::conv1d(features(u3), lift_w_, lift_b_, 1);
        std::vector<Tf> skips;
        for (std::size_t l = 0; l < blocks_.size(); ++l) {
            h = apply_block(blocks_[l], h, e);
            if (l + 1 < blocks_.size()) {
                skips.push_back(h);
                h = act(ad::conv1d(h, down_w_[l], down_b_[l], 2));
            }
        }
        for (std::size_t l = skips.size(); l-- > 0;) {
            h = act(ad::conv_transpose1d(h, up_w_[l], up_b_[l], 2));
            h = act(ad::conv1d(ad::concat_channels<float>({h, skips[l]}), merge_w_[l], merge_b_[l], 1));
            h = apply_block(dec_blocks_[l], h, e);
        }
        delta = head(h);
        break;
    }
    case Architecture::LscFno: {
        const auto f = features(u3);
        auto h = act(ad::conv1d(f, enc1_w_, enc1_b_, 2));
        h = act(ad::conv1d(h, enc2_w_, enc2_b_, 2));
        for (const auto& blk : blocks_) h = apply_block(blk, h, e);
        h = act(ad::conv_transpose1d(h, dec1_w_, dec1_b_, 2));
        h = act(ad::conv_transpose1d(h, dec2_w_, dec2_b_, 2));
        delta = ad::conv1d(ad::concat_channels<float>({h, f}), out_w_, out_b_, 1);
        break;
    }
    case Architecture::Pino: {
        const auto proj = ad::broadcast_space(ad::linear(c_hat, cproj_w_, cproj_b_), N);
        auto h = ad::conv1d(ad::concat_channels<float>({u3, proj}), lift_w_, lift_b_, 1);
        for (const auto& blk : blocks_) h = apply_block(blk, h, e);
        delta = head(h);
        break;
    }
    case Architecture::Lc: {
        std::vector<double> ud(u.data().begin(), u.data().end());
        const auto coarse_d = coarse(ud, c);
        base = Tf::constant({B, 1, N}, std::vector<float>(coarse_d.begin(), coarse_d.end()));
        const auto x = ad::concat_channels<float>({u3, base, features(u3), ad::broadcast_space(c_hat, N)});
        auto h = ad::conv1d(x, lift_w_, lift_b_, 1);
        for (const auto& blk : blocks_) h = apply_block(blk, h, e);
        delta = head(h);
        break;
    }
    }
    return ad::reshape(ad::add(base, delta), {B, N});
}

std::vector<double> EmulatorModel::predict(std::span<const double> u, std::span<const EquationCoeffs> c) const {
    const std::size_t N = grid_.n();
    if (u.size() != c.size() * N) throw invalid_argument("predict: state batch does not match coefficient count");
    ad::NoGradGuard no_grad;
    const auto x = Tf::constant({c.size(), N}, std::vector<float>(u.begin(), u.end()));
    const auto y = forward(x, c);
    return std::vector<double>(y.data().begin(), y.data().end());
}

void save_model(const EmulatorModel& model, const std::filesystem::path& path, const ad::Adam* adam,
                const nlohmann::json& extra) {
    nlohmann::json cfg = extra.is_object() ? extra : nlohmann::json::object();
    cfg["model"] = model.config().to_json();
    ad::save_checkpoint(ad::snapshot(model.parameters(), cfg, adam), path);
}

std::unique_ptr<EmulatorModel> model_from_checkpoint(const ad::Checkpoint& ckpt) {
    if (!ckpt.config.contains("model")) throw format_error("checkpoint has no embedded model config");
    auto model = std::make_unique<EmulatorModel>(ModelConfig::from_json(ckpt.config.at("model")), 0);
    ad::restore_parameters(model->parameters(), ckpt);
    return model;
}

std::unique_ptr<EmulatorModel> load_model(const std::filesystem::path& path) {
    return model_from_checkpoint(ad::load_checkpoint(path));
}

}  // namespace eqemu
