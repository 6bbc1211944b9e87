#include "eqemu/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "eqemu/error.hpp"
#include "eqemu/optim.hpp"

namespace eqemu {

using Tf = ad::Tensor<float>;

TrainConfig TrainConfig::make(Architecture arch, ScalePreset preset) {
    TrainConfig t;
    t.preset = preset;
    const auto i = static_cast<std::size_t>(arch);
    if (preset == ScalePreset::Paper) {
        const std::size_t batches[] = {64, 128, 64, 128};
        const double lrs[] = {4e-4, 4e-4, 3e-4, 5e-4};
        t.steps = 100000;
        t.batch = batches[i];
        t.peak_lr = lrs[i];
        t.val_every = 5000;
    }
    if (arch == Architecture::Pino) {
        t.unroll = 5;
        t.lambda_max = 3e-3;
    }
    return t;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"steps", steps},
            {"batch", batch},
            {"peak_lr", peak_lr},
            {"warmup_fraction", warmup_fraction},
            {"unroll", unroll},
            {"lambda_max", lambda_max},
            {"ramp_fraction", ramp_fraction},
            {"clip_norm", clip_norm},
            {"divergence_threshold", divergence_threshold},
            {"val_every", val_every},
            {"val_time_stride", val_time_stride},
            {"seed", seed},
            {"preset", preset_name(preset)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    try {
        TrainConfig t;
        t.steps = j.at("steps").get<std::uint64_t>();
        t.batch = j.at("batch").get<std::size_t>();
        t.peak_lr = j.at("peak_lr").get<double>();
        t.warmup_fraction = j.at("warmup_fraction").get<double>();
        t.unroll = j.at("unroll").get<std::size_t>();
        t.lambda_max = j.at("lambda_max").get<double>();
        t.ramp_fraction = j.at("ramp_fraction").get<double>();
        t.clip_norm = j.at("clip_norm").get<double>();
        t.divergence_threshold = j.at("divergence_threshold").get<double>();
        t.val_every = j.at("val_every").get<std::uint64_t>();
        t.val_time_stride = j.at("val_time_stride").get<std::size_t>();
        t.seed = j.at("seed").get<std::uint64_t>();
        t.preset = preset_from_name(j.at("preset").get<std::string>());
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("train config: ") + e.what());
    }
}

double pino_lambda(std::uint64_t step, std::uint64_t total_steps, double lambda_max, double ramp_fraction) {
    const double ramp = ramp_fraction * static_cast<double>(total_steps);
    if (ramp <= 0.0) return lambda_max;
    return lambda_max * std::min(1.0, static_cast<double>(step) / ramp);
}

Tf Batch::slice(std::size_t t) const {
    std::vector<float> v(size * points);
    for (std::size_t b = 0; b < size; ++b) {
        const float* src = states.data() + (b * (unroll + 1) + t) * points;
        std::copy(src, src + points, v.begin() + static_cast<std::ptrdiff_t>(b * points));
    }
    return Tf::constant({size, points}, std::move(v));
}

Batch sample_batch(std::span<const TrajectorySet> sets, std::size_t batch, std::size_t unroll, std::uint64_t seed,
                   std::uint64_t step) {
    if (sets.empty()) throw invalid_argument("sample_batch: no training sets");
    for (const auto& s : sets)
        if (s.samples == 0 || s.steps() < unroll)
            throw invalid_argument("sample_batch: trajectories shorter than the unroll length " + std::to_string(unroll));
    std::mt19937_64 rng(mix_seed(seed, 0x7261696eULL, step));
    Batch b;
    b.size = batch;
    b.points = sets[0].points;
    b.unroll = unroll;
    b.states.reserve(batch * (unroll + 1) * b.points);
    for (std::size_t i = 0; i < batch; ++i) {
        const auto& set = sets[std::uniform_int_distribution<std::size_t>(0, sets.size() - 1)(rng)];
        if (set.points != b.points) throw invalid_argument("sample_batch: sets disagree on grid size");
        const auto sample = std::uniform_int_distribution<std::size_t>(0, set.samples - 1)(rng);
        const auto t0 = std::uniform_int_distribution<std::size_t>(0, set.steps() - unroll)(rng);
        for (std::size_t t = 0; t <= unroll; ++t) {
            const auto st = set.state(sample, t0 + t);
            b.states.insert(b.states.end(), st.begin(), st.end());
        }
        b.coeffs.push_back(set.coeffs);
    }
    return b;
}

Tf data_loss(const EmulatorModel& model, const Batch& batch, std::size_t unroll, std::vector<Tf>* predictions) {
    if (unroll == 0 || unroll > batch.unroll) throw invalid_argument("data_loss: unroll exceeds the batch window");
    Tf pred = batch.slice(0);
    Tf acc;
    for (std::size_t k = 1; k <= unroll; ++k) {
        pred = model.forward(pred, batch.coeffs);
        if (predictions) predictions->push_back(pred);
        const auto term = ad::mae(pred, batch.slice(k));
        acc = acc.defined() ? ad::add(acc, term) : term;
    }
    return ad::scale(acc, 1.0f / static_cast<float>(unroll));
}

Tf pde_residual_loss(const Tf& u_t, const Tf& u_next, std::span<const EquationCoeffs> c, const Grid1D& grid, double dt) {
    if (u_t.shape() != u_next.shape() || u_t.rank() != 2 || u_t.dim(1) != grid.n() || c.size() != u_t.dim(0))
        throw invalid_argument("pde_residual_loss: expected matching [B, n] states and one encoding per row");
    std::vector<std::array<double, 7>> a;
    for (const auto& ci : c) a.push_back(to_physical(ci, grid, dt).values);
    const auto mid = ad::scale(ad::add(u_t, u_next), 0.5f);
    const auto rate = ad::scale(ad::sub(u_next, u_t), static_cast<float>(1.0 / dt));
    const auto residual = ad::sub(rate, ad::pde_rhs(mid, a, grid.length()));
    return ad::mae(residual, Tf::zeros(residual.shape()));
}

double pde_residual(std::span<const double> u_t, std::span<const double> u_next, const EquationCoeffs& c,
                    const Grid1D& grid, double dt) {
    using Td = ad::Tensor<double>;
    const std::size_t n = grid.n();
    if (u_t.size() != n || u_next.size() != n) throw invalid_argument("pde_residual: state length does not match grid");
    const auto a = to_physical(c, grid, dt).values;
    std::vector<double> mid(n), rate(n);
    for (std::size_t j = 0; j < n; ++j) {
        mid[j] = 0.5 * (u_t[j] + u_next[j]);
        rate[j] = (u_next[j] - u_t[j]) / dt;
    }
    const auto rhs = ad::pde_rhs(Td::constant({1, n}, mid), {a}, grid.length());
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += std::abs(rate[j] - rhs.data()[j]);
    return acc / static_cast<double>(n);
}

LossTerms total_loss(const EmulatorModel& model, const Batch& batch, const TrainConfig& config, std::uint64_t step) {
    LossTerms out;
    std::vector<Tf> preds;
    const auto data = data_loss(model, batch, config.unroll, &preds);
    out.data = data.item();
    out.lambda = config.lambda_max > 0.0 ? pino_lambda(step, config.steps, config.lambda_max, config.ramp_fraction) : 0.0;
    out.total = data;
    if (config.lambda_max > 0.0) {
        Tf prev = batch.slice(0);
        Tf pde;
        for (const auto& p : preds) {
            const auto term = pde_residual_loss(prev, p, batch.coeffs, model.grid(), model.config().dt);
            pde = pde.defined() ? ad::add(pde, term) : term;
            prev = p;
        }
        pde = ad::scale(pde, 1.0f / static_cast<float>(preds.size()));
        out.pde = pde.item();
        if (out.lambda > 0.0) out.total = ad::add(data, ad::scale(pde, static_cast<float>(out.lambda)));
    }
    return out;
}

namespace {

struct Pair {
    const TrajectorySet* set;
    std::size_t sample;
    std::size_t t;
};

// Runs one-step predictions for `pairs` in chunks; fn(pair, prediction, truth).
template <class Fn>
void for_each_prediction(const EmulatorModel& model, const std::vector<Pair>& pairs, std::size_t batch, Fn&& fn) {
    const std::size_t n = model.grid().n();
    batch = std::max<std::size_t>(1, batch);
    for (std::size_t start = 0; start < pairs.size(); start += batch) {
        const std::size_t count = std::min(batch, pairs.size() - start);
        std::vector<double> u;
        std::vector<EquationCoeffs> c;
        for (std::size_t i = 0; i < count; ++i) {
            const auto& p = pairs[start + i];
            if (p.set->points != n) throw invalid_argument("evaluation set grid does not match the model");
            const auto s = p.set->state(p.sample, p.t);
            u.insert(u.end(), s.begin(), s.end());
            c.push_back(p.set->coeffs);
        }
        const auto y = model.predict(u, c);
        for (std::size_t i = 0; i < count; ++i) {
            const auto& p = pairs[start + i];
            fn(p, std::span<const double>(y).subspan(i * n, n), p.set->state(p.sample, p.t + 1));
        }
    }
}

}  // namespace

double validation_nrmse(const EmulatorModel& model, std::span<const TrajectorySet> sets, std::size_t time_stride,
                        std::size_t batch) {
    std::vector<Pair> pairs;
    time_stride = std::max<std::size_t>(1, time_stride);
    for (const auto& s : sets)
        for (std::size_t i = 0; i < s.samples; ++i)
            for (std::size_t t = 0; t < s.steps(); t += time_stride) pairs.push_back({&s, i, t});
    if (pairs.empty()) throw invalid_argument("validation_nrmse: no validation pairs");
    std::vector<double> values(pairs.size(), -1.0);
    std::size_t idx = 0;
    for_each_prediction(model, pairs, batch, [&](const Pair&, std::span<const double> pred, std::span<const float> truth) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < pred.size(); ++j) {
            const double d = pred[j] - truth[j];
            num += d * d;
            den += static_cast<double>(truth[j]) * truth[j];
        }
        values[idx++] = den > 0.0 ? std::sqrt(num / den) : -1.0;
    });
    double acc = 0.0;
    std::size_t count = 0;
    for (double v : values)
        if (v >= 0.0) {
            acc += v;
            ++count;
        }
    if (count == 0) throw invalid_argument("validation_nrmse: every validation state has zero norm");
    return acc / static_cast<double>(count);
}

double dataset_mae(const EmulatorModel& model, std::span<const TrajectorySet> sets, std::size_t max_pairs) {
    std::vector<Pair> pairs;
    for (const auto& s : sets) {
        if (s.samples == 0 || s.steps() == 0) continue;
        for (std::size_t k = 0; k < max_pairs; ++k) pairs.push_back({&s, k % s.samples, (k * 7) % s.steps()});
    }
    if (pairs.empty()) throw invalid_argument("dataset_mae: no pairs");
    double acc = 0.0;
    std::size_t count = 0;
    for_each_prediction(model, pairs, 32, [&](const Pair&, std::span<const double> pred, std::span<const float> truth) {
        for (std::size_t j = 0; j < pred.size(); ++j) acc += std::abs(pred[j] - truth[j]);
        count += pred.size();
    });
    return acc / static_cast<double>(count);
}

namespace {

std::string format_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

void write_curve_csv(std::span<const CurveRow> curve, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path.string());
    out << "step,data_loss,pde_loss,lambda,val_nrmse\n";
    for (const auto& r : curve)
        out << r.step << ',' << format_g(r.data_loss) << ',' << format_g(r.pde_loss) << ',' << format_g(r.lambda) << ','
            << (r.val_nrmse ? format_g(*r.val_nrmse) : std::string()) << '\n';
    if (!out) throw io_error("failed writing " + path.string());
}

std::vector<CurveRow> read_curve_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "step,data_loss,pde_loss,lambda,val_nrmse")
        throw format_error(path.string() + ": unexpected curve header");
    std::vector<CurveRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() == 4) f.emplace_back();
        if (f.size() != 5) throw format_error(path.string() + ": malformed curve row '" + line + "'");
        try {
            CurveRow r;
            r.step = std::stoull(f[0]);
            r.data_loss = std::stod(f[1]);
            r.pde_loss = std::stod(f[2]);
            r.lambda = std::stod(f[3]);
            if (!f[4].empty()) r.val_nrmse = std::stod(f[4]);
            rows.push_back(r);
        } catch (const std::exception&) {
            throw format_error(path.string() + ": malformed curve row '" + line + "'");
        }
    }
    return rows;
}

TrainResult train(EmulatorModel& model, std::span<const TrajectorySet> train_sets,
                  std::span<const TrajectorySet> val_sets, const TrainConfig& config, const TrainOptions& options) {
    auto& store = model.parameters();
    ad::Adam adam(store);
    TrainResult result;
    std::vector<CurveRow> previous;
    if (options.resume) {
        const auto ckpt = ad::load_checkpoint(*options.resume);
        ad::restore_parameters(store, ckpt);
        if (!ckpt.adam_t) throw format_error(options.resume->string() + ": checkpoint has no optimizer state to resume");
        adam.restore(*ckpt.adam_t, ckpt.adam_m, ckpt.adam_v);
        if (ckpt.config.contains("best_val_nrmse") && !ckpt.config["best_val_nrmse"].is_null()) {
            result.best_val_nrmse = ckpt.config["best_val_nrmse"].get<double>();
            result.best_step = ckpt.config.value("best_step", std::uint64_t{0});
        }
        if (options.out_dir && std::filesystem::exists(*options.out_dir / "curve.csv"))
            for (const auto& r : read_curve_csv(*options.out_dir / "curve.csv"))
                if (r.step < store.step) previous.push_back(r);
    }
    if (config.steps > store.step && train_sets.empty()) throw invalid_argument("train: empty training corpus");
    if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

    const auto meta = [&] {
        nlohmann::json j = options.extra_config.is_object() ? options.extra_config : nlohmann::json::object();
        j["train"] = config.to_json();
        j["best_val_nrmse"] = result.best_val_nrmse ? nlohmann::json(*result.best_val_nrmse) : nlohmann::json();
        j["best_step"] = result.best_step;
        return j;
    };

    const std::uint64_t end = options.stop_after ? std::min(*options.stop_after, config.steps) : config.steps;
    for (std::uint64_t s = store.step; s < end; ++s) {
        const auto batch = sample_batch(train_sets, config.batch, config.unroll, config.seed, s);
        store.zero_grad();
        const auto terms = total_loss(model, batch, config, s);
        const double loss = terms.total.item();
        if (!std::isfinite(loss) || loss > config.divergence_threshold) {
            if (options.out_dir) save_model(model, *options.out_dir / "last_good.ckpt", &adam, meta());
            std::ostringstream msg;
            msg << "training diverged at step " << s << ": loss " << loss << " (data " << terms.data << ", pde "
                << terms.pde << ", lambda " << terms.lambda << ")";
            throw Error(ErrorKind::Divergence, msg.str());
        }
        ad::backward(terms.total);
        store.clip_grad_norm(config.clip_norm);
        adam.step(ad::learning_rate(s, config.steps, config.peak_lr, config.warmup_fraction));

        CurveRow row{s, terms.data, terms.pde, terms.lambda, std::nullopt};
        const bool last = s + 1 == config.steps;
        if (!val_sets.empty() && config.val_every > 0 && ((s + 1) % config.val_every == 0 || last)) {
            const double v = validation_nrmse(model, val_sets, config.val_time_stride);
            row.val_nrmse = v;
            if (!result.best_val_nrmse || v < *result.best_val_nrmse) {
                result.best_val_nrmse = v;
                result.best_step = s + 1;
                if (options.out_dir) save_model(model, *options.out_dir / "best.ckpt", nullptr, meta());
            }
        }
        result.curve.push_back(row);
        if (options.on_step) options.on_step(row);
    }
    result.final_step = store.step;
    if (options.out_dir) {
        if (!std::filesystem::exists(*options.out_dir / "best.ckpt") || !result.best_val_nrmse)
            save_model(model, *options.out_dir / "best.ckpt", nullptr, meta());
        save_model(model, *options.out_dir / "last.ckpt", &adam, meta());
        previous.insert(previous.end(), result.curve.begin(), result.curve.end());
        write_curve_csv(previous, *options.out_dir / "curve.csv");
    }
    return result;
}

}  // namespace eqemu
