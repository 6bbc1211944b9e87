#include "eqemu/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>

#include "eqemu/error.hpp"
#include "eqemu/parallel.hpp"

namespace eqemu {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string format_g(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

double parse_double(const std::string& s) {
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::vector<double> ModelEmulator::step(std::span<const double> u, std::span<const EquationCoeffs> c) const {
    return model_.predict(u, c);
}

struct StepperEmulator::Cache {
    std::mutex mutex;
    std::map<std::array<double, kNumTerms>, std::unique_ptr<EtdStepper>> steppers;
};

StepperEmulator::StepperEmulator(Grid1D grid, StepperConfig config, double dt, std::string name)
    : grid_(grid), config_(config), dt_(dt), name_(std::move(name)), cache_(std::make_shared<Cache>()) {}

const EtdStepper& StepperEmulator::stepper(const EquationCoeffs& c) const {
    std::lock_guard lock(cache_->mutex);
    auto& slot = cache_->steppers[c.values];
    if (!slot) slot = std::make_unique<EtdStepper>(grid_, to_physical(c, grid_, dt_), config_);
    return *slot;
}

std::vector<double> StepperEmulator::step(std::span<const double> u, std::span<const EquationCoeffs> c) const {
    const std::size_t n = grid_.n();
    if (u.size() != c.size() * n) throw invalid_argument("stepper emulator: state batch does not match coefficients");
    std::vector<double> out(u.begin(), u.end());
    std::vector<const EtdStepper*> steppers;
    for (const auto& ci : c) steppers.push_back(&stepper(ci));
    parallel_for(c.size(), [&](std::size_t b) { steppers[b]->step(std::span(out).subspan(b * n, n)); });
    return out;
}

std::vector<Rollout> rollout_batch(const Emulator& em, std::span<const double> u0, const EquationCoeffs& c,
                                   std::size_t steps) {
    const std::size_t n = em.grid().n();
    if (u0.size() % n != 0 || u0.empty()) throw invalid_argument("rollout: initial states do not match the grid");
    const std::size_t rows = u0.size() / n;
    std::vector<Rollout> out(rows);
    std::vector<std::vector<double>> current(rows);
    std::vector<std::size_t> active;
    for (std::size_t r = 0; r < rows; ++r) {
        out[r].points = n;
        out[r].states.reserve(steps * n);
        current[r].assign(u0.begin() + static_cast<std::ptrdiff_t>(r * n), u0.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
        active.push_back(r);
    }
    const auto step_rows = [&](const std::vector<std::size_t>& idx) {
        std::vector<double> u;
        for (auto r : idx) u.insert(u.end(), current[r].begin(), current[r].end());
        return em.step(u, std::vector<EquationCoeffs>(idx.size(), c));
    };
    for (std::size_t k = 1; k <= steps && !active.empty(); ++k) {
        std::vector<std::optional<std::vector<double>>> next(active.size());
        try {
            const auto y = step_rows(active);
            for (std::size_t i = 0; i < active.size(); ++i) next[i] = std::vector<double>(y.begin() + static_cast<std::ptrdiff_t>(i * n), y.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::BlowUp) throw;
            // Isolate the rows that blew up.
            for (std::size_t i = 0; i < active.size(); ++i) {
                try {
                    next[i] = step_rows({active[i]});
                } catch (const Error& inner) {
                    if (inner.kind() != ErrorKind::BlowUp) throw;
                }
            }
        }
        std::vector<std::size_t> still;
        for (std::size_t i = 0; i < active.size(); ++i) {
            auto& ro = out[active[i]];
            if (!next[i] || !all_finite(*next[i])) {
                ro.truncated = true;
                continue;
            }
            current[active[i]] = std::move(*next[i]);
            ro.states.insert(ro.states.end(), current[active[i]].begin(), current[active[i]].end());
            ro.completed = k;
            still.push_back(active[i]);
        }
        active = std::move(still);
    }
    return out;
}

Rollout rollout(const Emulator& em, std::span<const double> u0, const EquationCoeffs& c, std::size_t steps) {
    return std::move(rollout_batch(em, u0, c, steps).front());
}

namespace {

template <class T>
std::optional<double> nrmse_impl(std::span<const double> pred, std::span<const T> truth) {
    if (pred.size() != truth.size()) throw invalid_argument("nrmse: length mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double t = truth[i];
        num += (pred[i] - t) * (pred[i] - t);
        den += t * t;
    }
    if (!(den > 0.0)) return std::nullopt;
    return std::sqrt(num / den);
}

}  // namespace

std::optional<double> nrmse(std::span<const double> pred, std::span<const double> truth) { return nrmse_impl(pred, truth); }
std::optional<double> nrmse(std::span<const double> pred, std::span<const float> truth) { return nrmse_impl(pred, truth); }

std::optional<double> mean_nrmse(std::span<const double> pred, std::span<const double> truth, std::size_t points) {
    if (points == 0 || pred.size() != truth.size() || pred.size() % points != 0)
        throw invalid_argument("mean_nrmse: batch layout mismatch");
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < pred.size() / points; ++b)
        if (const auto v = nrmse(pred.subspan(b * points, points), truth.subspan(b * points, points))) {
            acc += *v;
            ++count;
        }
    if (count == 0) return std::nullopt;
    return acc / static_cast<double>(count);
}

GMean gmean_nrmse(std::span<const double> series, std::size_t max_steps) {
    GMean g;
    double acc = 0.0;
    for (std::size_t i = 0; i < std::min(max_steps, series.size()); ++i) {
        double v = series[i];
        if (!std::isfinite(v) || v < 0.0) continue;
        if (v < 1e-12) {
            if (v == 0.0) g.clamped = true;
            v = 1e-12;
        }
        acc += std::log(v);
        ++g.used;
    }
    g.value = g.used ? std::exp(acc / static_cast<double>(g.used)) : std::numeric_limits<double>::quiet_NaN();
    return g;
}

RolloutReport evaluate_against(const Emulator& em, const TrajectorySet& truth) {
    const std::size_t n = em.grid().n();
    if (truth.points != n) throw invalid_argument("evaluate: test set grid does not match the emulator");
    RolloutReport rep;
    rep.emulator = em.name();
    rep.family = std::string(family_name(truth.family));
    rep.coeffs = truth.coeffs;
    rep.steps = truth.steps();
    rep.n_ic = truth.samples;
    rep.seed = truth.seed;
    rep.sample_seeds = truth.sample_seeds;

    std::vector<double> u0;
    for (std::size_t s = 0; s < truth.samples; ++s) {
        const auto st = truth.state(s, 0);
        u0.insert(u0.end(), st.begin(), st.end());
    }
    const auto rolls = rollout_batch(em, u0, truth.coeffs, rep.steps);
    for (std::size_t k = 1; k <= rep.steps; ++k) {
        std::vector<double> vals;
        bool lost = false;
        for (std::size_t s = 0; s < truth.samples; ++s) {
            if (rolls[s].completed < k) {
                lost = true;
                continue;
            }
            if (const auto v = nrmse(rolls[s].state(k), truth.state(s, k))) vals.push_back(*v);
        }
        if (lost) {
            rep.mean.push_back(kInf);
            rep.std_error.push_back(kInf);
            continue;
        }
        if (vals.empty()) {
            rep.mean.push_back(std::numeric_limits<double>::quiet_NaN());
            rep.std_error.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        double m = 0.0;
        for (double v : vals) m += v;
        m /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double v : vals) var += (v - m) * (v - m);
        const double se = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1) / static_cast<double>(vals.size())) : 0.0;
        rep.mean.push_back(m);
        rep.std_error.push_back(se);
    }
    for (std::size_t k = 0; k < rep.mean.size(); ++k)
        if (std::isinf(rep.mean[k]) || rep.mean[k] > kStabilityThreshold) {
            rep.stability_horizon = k + 1;
            break;
        }
    rep.gmean = gmean_nrmse(rep.mean, 100);
    return rep;
}

TrajectorySet make_test_set(const PdeFamily& family, const ParamMap& params, const Grid1D& grid, const EvalOptions& opt) {
    GenerationOptions gen;
    gen.samples = opt.n_ic;
    gen.steps = opt.steps;
    gen.max_mode = opt.max_mode;
    std::uint64_t tuple = 0;
    for (const auto& [name, value] : params) tuple = mix_seed(tuple, std::bit_cast<std::uint64_t>(value), name.size());
    const auto seed = mix_seed(opt.seed, static_cast<std::uint64_t>(family.id), tuple, static_cast<std::uint64_t>(Split::Test));
    return generate_set(family, params, grid, gen, seed, Split::Test);
}

RolloutReport evaluate(const Emulator& em, const PdeFamily& family, const ParamMap& params, const EvalOptions& opt) {
    auto rep = evaluate_against(em, make_test_set(family, params, em.grid(), opt));
    rep.params = params;
    return rep;
}

IdOodReports evaluate_id_ood(const Emulator& em, const PdeFamily& family, const ParamMap& id_params,
                             const ParamMap& ood_params, const EvalOptions& opt) {
    return {evaluate(em, family, id_params, opt), evaluate(em, family, ood_params, opt)};
}

std::vector<HeldoutResult> evaluate_heldout_burgers(const Emulator& em, const nlohmann::json& training_manifest,
                                                    const std::vector<ParamMap>& grid_points, const EvalOptions& opt,
                                                    const FamilyRegistry& registry) {
    assert_not_in_training(training_manifest, Family::Burgers);
    const auto& fam = registry.get(Family::Burgers);
    const PersistenceEmulator persistence(em.grid());
    const auto coarse = StepperEmulator::coarse(em.grid());
    std::vector<HeldoutResult> out;
    for (const auto& p : grid_points) {
        const auto truth = make_test_set(fam, p, em.grid(), opt);
        HeldoutResult r{evaluate_against(em, truth), evaluate_against(persistence, truth), evaluate_against(coarse, truth)};
        r.model.params = r.persistence.params = r.coarse.params = p;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<SweepRow> coefficient_sweep(const Emulator& em, const PdeFamily& family, const std::string& parameter,
                                        std::span<const double> values, const EvalOptions& opt) {
    if (!family.has_parameter(parameter))
        throw invalid_argument("family " + family.name + " has no parameter '" + parameter + "'");
    ParamMap base = parameter_grid(family, 1).front();
    std::vector<SweepRow> rows;
    for (double v : values) {
        auto p = base;
        p[parameter] = v;
        const auto rep = evaluate(em, family, p, opt);
        rows.push_back({v, rep.gmean.value, family.in_training_range(parameter, v), rep.stability_horizon});
    }
    return rows;
}

nlohmann::json report_summary(const RolloutReport& r) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [k, v] : r.params) params[k] = v;
    return {{"emulator", r.emulator},
            {"family", r.family},
            {"coefficients", to_json(r.coeffs)},
            {"params", params},
            {"steps", r.steps},
            {"n_ic", r.n_ic},
            {"stability_horizon", r.stability_horizon ? nlohmann::json(*r.stability_horizon) : nlohmann::json()},
            {"gmean_nrmse", format_g(r.gmean.value)},
            {"gmean_clamped", r.gmean.clamped},
            {"gmean_used", r.gmean.used},
            {"seed", r.seed},
            {"sample_seeds", r.sample_seeds}};
}

void emit_report(const RolloutReport& r, const std::filesystem::path& path) {
    if (r.mean.size() != r.std_error.size()) throw invalid_argument("emit_report: inconsistent report");
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw io_error("cannot write " + path.string());
        out << "step,mean_nrmse,stderr\n";
        for (std::size_t k = 0; k < r.mean.size(); ++k)
            out << k + 1 << ',' << format_g(r.mean[k]) << ',' << format_g(r.std_error[k]) << '\n';
        if (!out) throw io_error("failed writing " + path.string());
    }
    std::ofstream side(path.string() + ".json", std::ios::binary);
    if (!side) throw io_error("cannot write " + path.string() + ".json");
    side << report_summary(r).dump(2) << '\n';
}

RolloutReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "step,mean_nrmse,stderr")
        throw format_error(path.string() + ": unexpected report header");
    RolloutReport r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        try {
            if (f.size() != 3 || std::stoull(f[0]) != r.mean.size() + 1) throw std::invalid_argument(line);
            r.mean.push_back(parse_double(f[1]));
            r.std_error.push_back(parse_double(f[2]));
        } catch (const std::exception&) {
            throw format_error(path.string() + ": malformed report row '" + line + "'");
        }
    }
    std::ifstream side(path.string() + ".json");
    if (side) {
        try {
            const auto j = nlohmann::json::parse(side);
            r.emulator = j.at("emulator").get<std::string>();
            r.family = j.at("family").get<std::string>();
            r.coeffs = coeffs_from_json(j.at("coefficients"));
            for (const auto& [k, v] : j.at("params").items()) r.params[k] = v.get<double>();
            r.steps = j.at("steps").get<std::size_t>();
            r.n_ic = j.at("n_ic").get<std::size_t>();
            if (!j.at("stability_horizon").is_null()) r.stability_horizon = j.at("stability_horizon").get<std::size_t>();
            r.gmean.value = parse_double(j.at("gmean_nrmse").get<std::string>());
            r.gmean.clamped = j.at("gmean_clamped").get<bool>();
            r.gmean.used = j.at("gmean_used").get<std::size_t>();
            r.seed = j.at("seed").get<std::uint64_t>();
            r.sample_seeds = j.at("sample_seeds").get<std::vector<std::uint64_t>>();
        } catch (const std::exception& e) {
            throw format_error(path.string() + ".json: " + e.what());
        }
    } else {
        r.steps = r.mean.size();
    }
    return r;
}

void emit_sweep(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path.string());
    out << "coefficient,gmean,in_training_band,stability_horizon\n";
    for (const auto& r : rows)
        out << format_g(r.value) << ',' << format_g(r.gmean) << ',' << (r.in_training_band ? 1 : 0) << ','
            << (r.stability_horizon ? std::to_string(*r.stability_horizon) : std::string()) << '\n';
    if (!out) throw io_error("failed writing " + path.string());
}

std::vector<SweepRow> read_sweep(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "coefficient,gmean,in_training_band,stability_horizon")
        throw format_error(path.string() + ": unexpected sweep header");
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        try {
            if (f.size() != 4 || (f[2] != "0" && f[2] != "1")) throw std::invalid_argument(line);
            SweepRow r{parse_double(f[0]), parse_double(f[1]), f[2] == "1", std::nullopt};
            if (!f[3].empty()) r.stability_horizon = std::stoull(f[3]);
            rows.push_back(r);
        } catch (const std::exception&) {
            throw format_error(path.string() + ": malformed sweep row '" + line + "'");
        }
    }
    return rows;
}

}  // namespace eqemu
